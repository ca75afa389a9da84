//! Cross-fitted orthogonal estimation.
//!
//! For each fold, the regressions and debiasing functions are trained on
//! out-of-fold rows and the moment `m(W, gamma) + sum_j alpha_j(X_j)
//! rho_j(W, gamma_j)` is evaluated in-fold. The estimate is the sample
//! mean of that moment, its variance the mean squared influence value.
//! Enumeration helpers compute the same moments exactly over a weighted
//! finite support, which is what the structural checks (orthogonality
//! scaling, alpha robustness, double robustness) are defined against.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::funcspace::{FunctionClass, ParamFunction, RegressorFn, Scratch};
use crate::problems::{ProblemCore, ResidualFamily, ShiftedFn};
use crate::riesz::{learn_alpha_multi, AlphaLearnerConfig};
use crate::train::{train, LossSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub class: FunctionClass,
    #[serde(default)]
    pub train: TrainConfig,
}

impl LearnerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.class.violations();
        out.extend(self.train.violations());
        out
    }
}

/// Where each fold's regressions come from: trained per fold, or a fixed
/// function reused everywhere (perfect-learner and robustness studies).
pub enum GammaSource<'a> {
    Learn(&'a LearnerConfig),
    Fixed(&'a [ParamFunction]),
}

pub enum AlphaSource<'a> {
    Learn(&'a AlphaLearnerConfig),
    Fixed(&'a [ParamFunction]),
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldFit {
    pub fold: usize,
    pub gammas: Vec<ParamFunction>,
    pub alphas: Vec<ParamFunction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub rows: usize,
    pub mean_m: f64,
    pub mean_correction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta_hat: f64,
    #[serde(rename = "V_hat")]
    pub v_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub seeds: BTreeMap<String, u64>,
    pub psi_values: Vec<f64>,
    pub per_fold: Vec<FoldSummary>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct CrossfitResult {
    pub report: EstimateReport,
    pub fits: Vec<FoldFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Warn when the share of nonzero indicator rows falls below this.
    pub min_weight_share: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            min_weight_share: 0.05,
        }
    }
}

pub fn crossfit_estimate(
    ds: &Dataset,
    problem: &ProblemCore,
    plan: &FoldPlan,
    gamma_cfg: &LearnerConfig,
    alpha_cfg: &AlphaLearnerConfig,
    level: f64,
) -> Result<CrossfitResult> {
    crossfit_estimate_with(
        ds,
        problem,
        plan,
        &GammaSource::Learn(gamma_cfg),
        &AlphaSource::Learn(alpha_cfg),
        level,
    )
}

pub fn crossfit_estimate_with(
    ds: &Dataset,
    problem: &ProblemCore,
    plan: &FoldPlan,
    gamma: &GammaSource,
    alpha: &AlphaSource,
    level: f64,
) -> Result<CrossfitResult> {
    let n = ds.n();
    let j_count = problem.j_count();
    let mut violations = problem.violations(ds.width());
    if plan.assignment.len() != n {
        violations.push(format!(
            "fold plan covers {} rows but the dataset has {n}",
            plan.assignment.len()
        ));
    }
    if n < 2 * plan.l {
        violations.push(format!("n = {n} is below 2L = {}", 2 * plan.l));
    }
    if !(level > 0.0 && level < 1.0) {
        violations.push(format!("confidence level must lie in (0, 1), got {level}"));
    }
    match gamma {
        GammaSource::Learn(cfg) => violations.extend(cfg.violations()),
        GammaSource::Fixed(fs) if fs.len() != j_count => violations.push(format!(
            "{} fixed regressions supplied but the functional involves {j_count}",
            fs.len()
        )),
        _ => {}
    }
    match alpha {
        AlphaSource::Learn(cfg) => violations.extend(cfg.violations()),
        AlphaSource::Fixed(fs) if fs.len() != j_count => violations.push(format!(
            "{} fixed debiasing functions supplied but the functional involves {j_count}",
            fs.len()
        )),
        _ => {}
    }
    if !violations.is_empty() {
        return Err(Error::config(violations));
    }

    let fits: Vec<FoldFit> = (0..plan.l)
        .into_par_iter()
        .map(|fold| fit_fold(ds, problem, plan, gamma, alpha, fold))
        .collect::<Result<Vec<_>>>()?;

    let gamma_refs: Vec<Vec<&dyn RegressorFn>> = fits
        .iter()
        .map(|f| f.gammas.iter().map(|g| g as &dyn RegressorFn).collect())
        .collect();

    let mut m_vals = Vec::with_capacity(n);
    let mut contribs = Vec::with_capacity(n);
    let mut scratch = Scratch::new();
    let mut diag = DiagAccum::new();
    for i in 0..n {
        let fold = plan.assignment[i];
        let row = ds.row(i);
        let fit = &fits[fold];
        let m_i = problem.m_eval(row, &gamma_refs[fold]);
        let mut corr = 0.0;
        for j in 0..j_count {
            let spec = &problem.residuals[j];
            let x = spec.x_vec(row);
            let g = fit.gammas[j].value_scratch(&x, &mut scratch);
            let a = fit.alphas[j].value_scratch(&x, &mut scratch);
            corr += a * spec.rho(row, g);
            diag.update(spec, row, g, a);
        }
        m_vals.push(m_i);
        contribs.push(m_i + corr);
    }

    let theta_hat = contribs.iter().sum::<f64>() / n as f64;
    let psi_values: Vec<f64> = contribs.iter().map(|c| c - theta_hat).collect();
    let v_hat = psi_values.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let se = (v_hat / n as f64).sqrt();
    let z = normal_quantile(0.5 + level / 2.0);
    let ci = (theta_hat - z * se, theta_hat + z * se);

    let per_fold = (0..plan.l)
        .map(|fold| {
            let rows = plan.fold_rows(fold);
            let inv = 1.0 / rows.len() as f64;
            FoldSummary {
                fold,
                rows: rows.len(),
                mean_m: rows.iter().map(|&i| m_vals[i]).sum::<f64>() * inv,
                mean_correction: rows.iter().map(|&i| contribs[i] - m_vals[i]).sum::<f64>()
                    * inv,
            }
        })
        .collect();

    let mut seeds = BTreeMap::new();
    if let GammaSource::Learn(cfg) = gamma {
        seeds.insert("gamma_train_base".to_string(), cfg.train.seed);
    }
    if let AlphaSource::Learn(cfg) = alpha {
        seeds.insert("alpha_train_base".to_string(), cfg.train.seed);
    }

    let (diagnostics, warnings) = diag.finish(&DiagnosticsConfig::default());
    let report = EstimateReport {
        theta_hat,
        v_hat,
        se,
        ci,
        level,
        n,
        l: plan.l,
        seeds,
        psi_values,
        per_fold,
        diagnostics,
        warnings,
    };
    Ok(CrossfitResult { report, fits })
}

fn fit_fold(
    ds: &Dataset,
    problem: &ProblemCore,
    plan: &FoldPlan,
    gamma: &GammaSource,
    alpha: &AlphaSource,
    fold: usize,
) -> Result<FoldFit> {
    let gamma_rows = plan.gamma_train_rows(fold);
    let alpha_rows = plan.alpha_train_rows(fold);
    debug_assert!(gamma_rows.iter().all(|&r| plan.assignment[r] != fold));
    debug_assert!(alpha_rows.iter().all(|&r| plan.assignment[r] != fold));

    let gammas = match gamma {
        GammaSource::Fixed(fs) => fs.to_vec(),
        GammaSource::Learn(cfg) => {
            let mut out = Vec::with_capacity(problem.j_count());
            for j in 0..problem.j_count() {
                let spec = &problem.residuals[j];
                let inputs: Vec<Vec<f64>> =
                    gamma_rows.iter().map(|&i| spec.x_vec(ds.row(i))).collect();
                let seed = derive_seed(cfg.train.seed, &[fold as u64, j as u64, 1]);
                let init = cfg
                    .class
                    .instantiate(spec.regressors.len(), &inputs, seed)
                    .map_err(|e| e.with_fold(fold))?;
                let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
                let (f, _) = train(init, &LossSpec::Regression(spec), ds, &gamma_rows, &train_cfg)
                    .map_err(|e| e.with_fold(fold))?;
                out.push(f);
            }
            out
        }
    };

    let alphas = match alpha {
        AlphaSource::Fixed(fs) => fs.to_vec(),
        AlphaSource::Learn(cfg) => {
            let train_cfg = TrainConfig {
                seed: derive_seed(cfg.train.seed, &[fold as u64, 2]),
                ..cfg.train.clone()
            };
            let fold_cfg = AlphaLearnerConfig {
                class: cfg.class.clone(),
                train: train_cfg,
                gateaux_step: cfg.gateaux_step,
            };
            learn_alpha_multi(problem, ds, &alpha_rows, &gammas, &fold_cfg)
                .map_err(|e| e.with_fold(fold))?
                .into_iter()
                .map(|(f, _)| f)
                .collect()
        }
    };

    Ok(FoldFit { fold, gammas, alphas })
}

/// Gaussian quantile by Acklam's rational approximation (absolute error
/// below 1.2e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile of p outside (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        -normal_quantile(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Exact expectation of m over a weighted finite support. Points are full
/// data rows with randomized coordinates replaced by conditional means,
/// valid because every moment piece is multilinear in those coordinates.
pub fn expected_m(
    points: &[(Vec<f64>, f64)],
    problem: &ProblemCore,
    gammas: &[&dyn RegressorFn],
) -> f64 {
    points
        .iter()
        .map(|(row, p)| p * problem.m_eval(row, gammas))
        .sum()
}

/// Exact expectation of the correction term `sum_j alpha_j rho_j`.
pub fn expected_correction(
    points: &[(Vec<f64>, f64)],
    problem: &ProblemCore,
    gammas: &[&dyn RegressorFn],
    alphas: &[&dyn RegressorFn],
) -> f64 {
    points
        .iter()
        .map(|(row, p)| {
            let mut corr = 0.0;
            for (j, spec) in problem.residuals.iter().enumerate() {
                let x = spec.x_vec(row);
                corr += alphas[j].value_at(&x) * spec.rho(row, gammas[j].value_at(&x));
            }
            p * corr
        })
        .sum()
}

/// Exact expectation of the orthogonal moment at (gammas, alphas, theta).
pub fn expected_psi(
    points: &[(Vec<f64>, f64)],
    problem: &ProblemCore,
    gammas: &[&dyn RegressorFn],
    alphas: &[&dyn RegressorFn],
    theta: f64,
) -> f64 {
    expected_m(points, problem, gammas) + expected_correction(points, problem, gammas, alphas)
        - theta
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalityRow {
    pub tau: f64,
    pub delta: f64,
    /// delta / tau, 0 at tau = 0
    pub ratio_tau: f64,
    /// delta / tau^2, 0 at tau = 0
    pub ratio_tau_sq: f64,
}

/// Expected moment drift under the perturbation `gamma_j + tau * delta`,
/// holding the debiasing functions at their supplied values. An affine
/// residual makes every row exactly zero; a curved one scales as tau^2.
pub fn orthogonality_check(
    problem: &ProblemCore,
    points: &[(Vec<f64>, f64)],
    gamma0: &[&dyn RegressorFn],
    alpha0: &[&dyn RegressorFn],
    delta: &dyn RegressorFn,
    perturb_j: usize,
    theta0: f64,
    tau_grid: &[f64],
) -> Vec<OrthogonalityRow> {
    assert!(perturb_j < problem.j_count(), "regression index out of range");
    tau_grid
        .iter()
        .map(|&tau| {
            let shifted = ShiftedFn {
                base: gamma0[perturb_j],
                dir: delta,
                tau,
            };
            let mut gammas: Vec<&dyn RegressorFn> = gamma0.to_vec();
            gammas[perturb_j] = &shifted;
            let d = expected_psi(points, problem, &gammas, alpha0, theta0);
            OrthogonalityRow {
                tau,
                delta: d,
                ratio_tau: if tau == 0.0 { 0.0 } else { d / tau },
                ratio_tau_sq: if tau == 0.0 { 0.0 } else { d / (tau * tau) },
            }
        })
        .collect()
}

/// Expected moment at the true regressions with an arbitrary debiasing
/// function; zero for every alpha because the residual at the truth is
/// orthogonal to any function of the regressors.
pub fn alpha_robustness_check(
    problem: &ProblemCore,
    points: &[(Vec<f64>, f64)],
    gamma0: &[&dyn RegressorFn],
    alpha: &[&dyn RegressorFn],
    theta0: f64,
) -> f64 {
    expected_psi(points, problem, gamma0, alpha, theta0)
}

struct DiagAccum {
    min_neg_vrho: f64,
    sup_alpha: f64,
    sup_gamma: f64,
    implied_p_min: f64,
    implied_p_max: f64,
    ipw_rows: usize,
    ipw_nonzero: usize,
}

impl DiagAccum {
    fn new() -> Self {
        DiagAccum {
            min_neg_vrho: f64::INFINITY,
            sup_alpha: 0.0,
            sup_gamma: 0.0,
            implied_p_min: f64::INFINITY,
            implied_p_max: f64::NEG_INFINITY,
            ipw_rows: 0,
            ipw_nonzero: 0,
        }
    }

    fn update(&mut self, spec: &crate::problems::ResidualSpec, row: &[f64], g: f64, a: f64) {
        self.min_neg_vrho = self.min_neg_vrho.min(-spec.v_rho(row, g));
        self.sup_alpha = self.sup_alpha.max(a.abs());
        self.sup_gamma = self.sup_gamma.max(g.abs());
        if matches!(spec.family, ResidualFamily::Ipw) {
            self.ipw_rows += 1;
            if row[spec.indicator.expect("indicator")] != 0.0 {
                self.ipw_nonzero += 1;
            }
            // The ipw regression estimates the inverse selection
            // probability, so its reciprocal is the implied overlap.
            if g > 0.0 {
                self.implied_p_min = self.implied_p_min.min(1.0 / g);
                self.implied_p_max = self.implied_p_max.max(1.0 / g);
            }
        }
    }

    fn finish(self, cfg: &DiagnosticsConfig) -> (BTreeMap<String, f64>, Vec<String>) {
        let mut out = BTreeMap::new();
        let mut warnings = Vec::new();
        out.insert("min_neg_vrho".to_string(), self.min_neg_vrho);
        out.insert("sup_abs_alpha".to_string(), self.sup_alpha);
        out.insert("sup_abs_gamma".to_string(), self.sup_gamma);
        if self.ipw_rows > 0 {
            let share = self.ipw_nonzero as f64 / self.ipw_rows as f64;
            out.insert("indicator_share".to_string(), share);
            if share < cfg.min_weight_share {
                warnings.push(format!(
                    "indicator share {share:.4} below {}; weight mass is thin",
                    cfg.min_weight_share
                ));
            }
            if self.implied_p_min.is_finite() {
                out.insert("implied_p_min".to_string(), self.implied_p_min);
                out.insert("implied_p_max".to_string(), self.implied_p_max);
            }
        }
        if self.min_neg_vrho < crate::train::WEIGHT_GUARD {
            warnings.push(format!(
                "min(-vrho) = {} is near zero; the debiasing weight is close to degenerate",
                self.min_neg_vrho
            ));
        }
        (out, warnings)
    }
}

/// Sample diagnostics for one set of fitted learners.
pub fn assumption_diagnostics(
    ds: &Dataset,
    rows: &[usize],
    problem: &ProblemCore,
    gammas: &[ParamFunction],
    alphas: &[ParamFunction],
    cfg: &DiagnosticsConfig,
) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut acc = DiagAccum::new();
    let mut scratch = Scratch::new();
    for &i in rows {
        let row = ds.row(i);
        for (j, spec) in problem.residuals.iter().enumerate() {
            let x = spec.x_vec(row);
            let g = gammas[j].value_scratch(&x, &mut scratch);
            let a = alphas[j].value_scratch(&x, &mut scratch);
            acc.update(spec, row, g, a);
        }
    }
    acc.finish(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_folds, Schema};
    use crate::funcspace::{BasisFn, DictionaryFunction};
    use crate::problems::{Functional, ResidualSpec};
    use crate::train::Optimizer;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn const_fn(c: f64) -> ParamFunction {
        ParamFunction::Dictionary(DictionaryFunction::constant(c))
    }

    fn indicator_fn(values: [f64; 2]) -> ParamFunction {
        ParamFunction::Dictionary(
            DictionaryFunction::new(
                vec![
                    BasisFn::Indicator { pos: 0, value: 0.0 },
                    BasisFn::Indicator { pos: 0, value: 1.0 },
                ],
                values.to_vec(),
            )
            .unwrap(),
        )
    }

    fn ipw_problem() -> ProblemCore {
        ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::Ipw,
                regressors: vec![2],
                outcome: None,
                indicator: Some(0),
            }],
            functional: Functional::IpwMean { aux_col: 1 },
        }
    }

    fn ipw_sample(n: usize, seed: u64) -> Dataset {
        // x uniform on {0,1}; P = (0.5, 0.8); u ~ N(Ubar(x), 0.5)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let x = f64::from(rng.gen_bool(0.5));
                let p = if x == 0.0 { 0.5 } else { 0.8 };
                let d = f64::from(rng.gen_bool(p));
                let ubar = if x == 0.0 { 1.0 } else { 2.0 };
                let u = ubar + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                vec![d, u, x]
            })
            .collect();
        Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            rows,
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap()
    }

    fn dict_learners() -> (LearnerConfig, AlphaLearnerConfig) {
        let class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: None,
        };
        let train = TrainConfig {
            epochs: 300,
            batch_size: usize::MAX,
            learning_rate: 0.5,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        (
            LearnerConfig { class: class.clone(), train: train.clone() },
            AlphaLearnerConfig { class, train, gateaux_step: 1e-4 },
        )
    }

    #[test]
    fn report_invariants_hold() {
        let ds = ipw_sample(300, 11);
        let problem = ipw_problem();
        let plan = make_folds(ds.n(), 5, 21, false).unwrap();
        let (gcfg, acfg) = dict_learners();
        let res = crossfit_estimate(&ds, &problem, &plan, &gcfg, &acfg, 0.95).unwrap();
        let r = &res.report;
        assert_eq!(r.n, 300);
        assert_eq!(r.psi_values.len(), 300);
        let mean_psi = r.psi_values.iter().sum::<f64>() / r.n as f64;
        assert!(mean_psi.abs() < 1e-10, "mean psi {mean_psi}");
        let v = r.psi_values.iter().map(|p| p * p).sum::<f64>() / r.n as f64;
        assert_eq!(v.to_bits(), r.v_hat.to_bits());
        assert_eq!(r.se.to_bits(), (r.v_hat / r.n as f64).sqrt().to_bits());
        let (lo, hi) = r.ci;
        assert!(((r.theta_hat - lo) - (hi - r.theta_hat)).abs() < 1e-12);
        assert!(lo < r.theta_hat && r.theta_hat < hi);
        // theta equals the mean of per-fold means weighted by fold size
        let recon: f64 = r
            .per_fold
            .iter()
            .map(|f| (f.mean_m + f.mean_correction) * f.rows as f64)
            .sum::<f64>()
            / r.n as f64;
        assert!((recon - r.theta_hat).abs() < 1e-10);
        assert_eq!(res.fits.len(), 5);
        // estimate lands near the enumerated truth on this easy design
        assert!((r.theta_hat - 1.5).abs() < 6.0 * r.se);
    }

    #[test]
    fn degenerate_selection_is_exactly_the_sample_mean() {
        // All rows selected and gamma fixed at 1: the correction term is
        // alpha * (1 - 1) = 0, so theta is the sample mean of u exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                let x = f64::from(rng.gen_bool(0.5));
                let u = 1.0 + x + rng.sample::<f64, _>(rand_distr::StandardNormal);
                vec![1.0, u, x]
            })
            .collect();
        let u: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let ds = Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            rows,
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ipw_problem();
        let plan = make_folds(ds.n(), 4, 9, false).unwrap();
        let gamma = [const_fn(1.0)];
        let alpha = [const_fn(7.0)];
        let res = crossfit_estimate_with(
            &ds,
            &problem,
            &plan,
            &GammaSource::Fixed(&gamma),
            &AlphaSource::Fixed(&alpha),
            0.95,
        )
        .unwrap();
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        assert_eq!(res.report.theta_hat.to_bits(), mean.to_bits());
        let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_eq!(res.report.v_hat.to_bits(), var.to_bits());
    }

    #[test]
    fn config_violations_are_collected_together() {
        let ds = ipw_sample(8, 1);
        let problem = ipw_problem();
        let plan = make_folds(8, 5, 2, false).unwrap();
        let (gcfg, acfg) = dict_learners();
        // n < 2L and level out of range at once
        let err = crossfit_estimate(&ds, &problem, &plan, &gcfg, &acfg, 1.5).unwrap_err();
        match err {
            Error::Config { violations } => {
                assert!(violations.len() >= 2, "{violations:?}");
                assert!(violations.iter().any(|v| v.contains("below 2L")));
                assert!(violations.iter().any(|v| v.contains("level")));
            }
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn training_failure_names_the_fold() {
        // No treated rows at all: every fold's riesz fit hits the
        // degenerate-weight guard.
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![0.0, 1.0, (i % 2) as f64]).collect();
        let ds = Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            rows,
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ipw_problem();
        let plan = make_folds(12, 2, 4, false).unwrap();
        let (gcfg, acfg) = dict_learners();
        let err = crossfit_estimate(&ds, &problem, &plan, &gcfg, &acfg, 0.95).unwrap_err();
        assert!(err.to_string().contains("fold"), "{err}");
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-8);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-8);
        assert!((normal_quantile(0.995) - 2.5758293035489004).abs() < 1e-8);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        // antisymmetry, including a tail value
        for p in [0.025, 0.31, 0.001] {
            assert!((normal_quantile(p) + normal_quantile(1.0 - p)).abs() < 1e-9);
        }
    }

    /// Population support of the two-point ipw design, rows (d, u, x) with
    /// randomized coordinates at their conditional means.
    fn ipw_points() -> Vec<(Vec<f64>, f64)> {
        vec![
            (vec![0.5, 1.0, 0.0], 0.5),
            (vec![0.8, 2.0, 1.0], 0.5),
        ]
    }

    #[test]
    fn affine_residual_moment_is_flat_in_gamma() {
        let problem = ipw_problem();
        let points = ipw_points();
        let gamma0 = indicator_fn([2.0, 1.25]);
        let alpha0 = indicator_fn([1.0, 2.0]);
        let delta = indicator_fn([0.7, -0.4]);
        let rows = orthogonality_check(
            &problem,
            &points,
            &[&gamma0],
            &[&alpha0],
            &delta,
            0,
            1.5,
            &[0.0, 0.05, 0.1],
        );
        for row in rows {
            assert!(row.delta.abs() < 1e-12, "tau {} drift {}", row.tau, row.delta);
        }
    }

    #[test]
    fn alpha_robustness_zero_for_arbitrary_alpha() {
        let problem = ipw_problem();
        let points = ipw_points();
        let gamma0 = indicator_fn([2.0, 1.25]);
        let seven = const_fn(7.0);
        let v = alpha_robustness_check(&problem, &points, &[&gamma0], &[&seven], 1.5);
        assert!(v.abs() < 1e-12, "{v}");
        let alpha0 = indicator_fn([1.0, 2.0]);
        let v0 = alpha_robustness_check(&problem, &points, &[&gamma0], &[&alpha0], 1.5);
        assert!(v0.abs() < 1e-12, "{v0}");
    }

    #[test]
    fn thin_weight_mass_raises_warning() {
        let mut rows: Vec<Vec<f64>> = (0..99).map(|i| vec![0.0, 1.0, (i % 2) as f64]).collect();
        rows.push(vec![1.0, 1.0, 0.0]);
        let ds = Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            rows,
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ipw_problem();
        let all: Vec<usize> = (0..ds.n()).collect();
        let (diag, warnings) = assumption_diagnostics(
            &ds,
            &all,
            &problem,
            &[indicator_fn([2.0, 1.25])],
            &[indicator_fn([1.0, 2.0])],
            &DiagnosticsConfig::default(),
        );
        assert_eq!(diag["indicator_share"], 0.01);
        assert!(warnings.iter().any(|w| w.contains("weight mass")));
        assert_eq!(diag["min_neg_vrho"], 0.0);
        assert_eq!(diag["sup_abs_alpha"], 2.0);
        assert!((diag["implied_p_min"] - 0.5).abs() < 1e-12);
        assert!((diag["implied_p_max"] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn all_selected_rows_give_clean_diagnostics() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, 1.0, (i % 2) as f64]).collect();
        let ds = Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            rows,
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ipw_problem();
        let all: Vec<usize> = (0..ds.n()).collect();
        let (diag, warnings) = assumption_diagnostics(
            &ds,
            &all,
            &problem,
            &[const_fn(1.0)],
            &[const_fn(1.0)],
            &DiagnosticsConfig::default(),
        );
        assert_eq!(diag["min_neg_vrho"], 1.0);
        assert_eq!(diag["indicator_share"], 1.0);
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn double_crossfit_plan_accepted() {
        let ds = ipw_sample(120, 5);
        let problem = ipw_problem();
        let plan = make_folds(ds.n(), 3, 8, true).unwrap();
        let (gcfg, acfg) = dict_learners();
        let res = crossfit_estimate(&ds, &problem, &plan, &gcfg, &acfg, 0.95).unwrap();
        assert!((res.report.theta_hat - 1.5).abs() < 1.0);
    }
}

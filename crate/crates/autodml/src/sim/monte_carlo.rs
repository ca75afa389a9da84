//! Replication harness: repeated sampling and estimation against a known
//! design, plus the fit-quality sweep across sample sizes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, make_folds};
use crate::error::{Error, Result};
use crate::estimator::{crossfit_estimate, LearnerConfig};
use crate::funcspace::ParamFunction;
use crate::riesz::{learn_alpha_multi, AlphaLearnerConfig};
use crate::sim::DiscreteDgp;
use crate::train::{train, LossSpec, TrainConfig};

fn default_l() -> usize {
    5
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub gamma: LearnerConfig,
    pub alpha: AlphaLearnerConfig,
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub double_crossfit: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub theta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub dgp: String,
    pub n: usize,
    pub reps_requested: usize,
    pub reps_succeeded: usize,
    pub failures: Vec<String>,
    pub theta0: f64,
    pub level: f64,
    pub bias: f64,
    pub rmse: f64,
    pub mean_se: f64,
    pub sd_theta: f64,
    pub coverage: f64,
}

/// Runs `reps` independent sample-and-estimate replications. Replicate r
/// samples with seed `master_seed + r`; training seeds derive from it.
/// Individual failures are recorded and excluded; the run errors only
/// when fewer than 90% of replicates succeed.
pub fn monte_carlo(
    dgp: &DiscreteDgp,
    n: usize,
    reps: usize,
    cfg: &McConfig,
    master_seed: u64,
) -> Result<(Vec<RepRecord>, McSummary)> {
    if reps < 1 {
        return Err(Error::config_one("need at least one replicate".to_string()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::config_one(format!(
            "confidence level must lie in (0, 1), got {}",
            cfg.level
        )));
    }
    let theta0 = dgp.enumerate_oracles()?.theta0;

    let outcomes: Vec<std::result::Result<RepRecord, String>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = master_seed.wrapping_add(rep as u64);
            run_replicate(dgp, n, cfg, rep, seed, theta0).map_err(|e| format!("rep {rep}: {e}"))
        })
        .collect();

    let mut records = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(msg) => failures.push(msg),
        }
    }
    let succeeded = records.len();
    if succeeded * 10 < reps * 9 {
        return Err(Error::numerical(format!(
            "only {succeeded}/{reps} replicates succeeded; first failure: {}",
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }

    let k = succeeded as f64;
    let mean_theta = records.iter().map(|r| r.theta_hat).sum::<f64>() / k;
    let bias = mean_theta - theta0;
    let rmse = (records
        .iter()
        .map(|r| (r.theta_hat - theta0) * (r.theta_hat - theta0))
        .sum::<f64>()
        / k)
        .sqrt();
    let mean_se = records.iter().map(|r| r.se).sum::<f64>() / k;
    let sd_theta = if succeeded > 1 {
        (records
            .iter()
            .map(|r| (r.theta_hat - mean_theta) * (r.theta_hat - mean_theta))
            .sum::<f64>()
            / (k - 1.0))
            .sqrt()
    } else {
        0.0
    };
    let coverage = records.iter().filter(|r| r.covered).count() as f64 / k;

    let summary = McSummary {
        dgp: dgp.name.clone(),
        n,
        reps_requested: reps,
        reps_succeeded: succeeded,
        failures,
        theta0,
        level: cfg.level,
        bias,
        rmse,
        mean_se,
        sd_theta,
        coverage,
    };
    Ok((records, summary))
}

fn run_replicate(
    dgp: &DiscreteDgp,
    n: usize,
    cfg: &McConfig,
    rep: usize,
    seed: u64,
    theta0: f64,
) -> Result<RepRecord> {
    let ds = dgp.sample(n, seed)?;
    let plan = make_folds(n, cfg.l, derive_seed(seed, &[11]), cfg.double_crossfit)?;
    let gamma_cfg = LearnerConfig {
        class: cfg.gamma.class.clone(),
        train: TrainConfig {
            seed: derive_seed(seed, &[12]),
            ..cfg.gamma.train.clone()
        },
    };
    let alpha_cfg = AlphaLearnerConfig {
        class: cfg.alpha.class.clone(),
        train: TrainConfig {
            seed: derive_seed(seed, &[13]),
            ..cfg.alpha.train.clone()
        },
        gateaux_step: cfg.alpha.gateaux_step,
    };
    let res = crossfit_estimate(&ds, &dgp.problem, &plan, &gamma_cfg, &alpha_cfg, cfg.level)?;
    let r = res.report;
    Ok(RepRecord {
        rep,
        seed,
        theta_hat: r.theta_hat,
        se: r.se,
        ci_lo: r.ci.0,
        ci_hi: r.ci.1,
        covered: r.ci.0 <= theta0 && theta0 <= r.ci.1,
    })
}

pub fn write_replications_csv(path: impl AsRef<Path>, records: &[RepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::data(format!("cannot write replications: {e}")))?;
    w.write_record(["rep", "seed", "theta_hat", "se", "ci_lo", "ci_hi", "covered"])
        .map_err(|e| Error::data(format!("replication write: {e}")))?;
    for r in records {
        w.write_record([
            r.rep.to_string(),
            r.seed.to_string(),
            format!("{}", r.theta_hat),
            format!("{}", r.se),
            format!("{}", r.ci_lo),
            format!("{}", r.ci_hi),
            (u8::from(r.covered)).to_string(),
        ])
        .map_err(|e| Error::data(format!("replication write: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("replication write: {e}")))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    /// Median over seeds of the pmf-weighted L2 error of the fitted
    /// regressions (summed over regressions).
    pub gamma_err: f64,
    /// Same for the debiasing functions.
    pub alpha_err: f64,
}

/// Full-sample fit quality against the oracle tables across sample sizes.
pub fn convergence_sweep(
    dgp: &DiscreteDgp,
    n_grid: &[usize],
    seeds: &[u64],
    gamma_cfg: &LearnerConfig,
    alpha_cfg: &AlphaLearnerConfig,
) -> Result<Vec<SweepRow>> {
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(Error::config_one(
            "sweep needs at least one sample size and one seed".to_string(),
        ));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config_one(
            "sweep sample sizes must be strictly increasing".to_string(),
        ));
    }
    let bundle = dgp.enumerate_oracles()?;
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let errs: Vec<(f64, f64)> = seeds
            .par_iter()
            .map(|&seed| sweep_cell(dgp, n, seed, gamma_cfg, alpha_cfg, &bundle))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SweepRow {
            n,
            gamma_err: median(errs.iter().map(|e| e.0)),
            alpha_err: median(errs.iter().map(|e| e.1)),
        });
    }
    Ok(rows)
}

fn sweep_cell(
    dgp: &DiscreteDgp,
    n: usize,
    seed: u64,
    gamma_cfg: &LearnerConfig,
    alpha_cfg: &AlphaLearnerConfig,
    bundle: &crate::sim::OracleBundle,
) -> Result<(f64, f64)> {
    let ds = dgp.sample(n, seed)?;
    let rows: Vec<usize> = (0..n).collect();
    let mut gammas: Vec<ParamFunction> = Vec::with_capacity(dgp.problem.j_count());
    for j in 0..dgp.problem.j_count() {
        let spec = &dgp.problem.residuals[j];
        let inputs: Vec<Vec<f64>> = rows.iter().map(|&i| spec.x_vec(ds.row(i))).collect();
        let train_seed = derive_seed(seed, &[21, j as u64]);
        let init = gamma_cfg
            .class
            .instantiate(spec.regressors.len(), &inputs, train_seed)?;
        let cfg = TrainConfig {
            seed: train_seed,
            ..gamma_cfg.train.clone()
        };
        let (f, _) = train(init, &LossSpec::Regression(spec), &ds, &rows, &cfg)?;
        gammas.push(f);
    }
    let alpha_fold_cfg = AlphaLearnerConfig {
        class: alpha_cfg.class.clone(),
        train: TrainConfig {
            seed: derive_seed(seed, &[22]),
            ..alpha_cfg.train.clone()
        },
        gateaux_step: alpha_cfg.gateaux_step,
    };
    let alphas = learn_alpha_multi(&dgp.problem, &ds, &rows, &gammas, &alpha_fold_cfg)?;
    let gamma_err: f64 = gammas
        .iter()
        .enumerate()
        .map(|(j, g)| bundle.gamma0[j].l2_distance(g))
        .sum();
    let alpha_err: f64 = alphas
        .iter()
        .enumerate()
        .map(|(j, (a, _))| bundle.alpha0[j].l2_distance(a))
        .sum();
    Ok((gamma_err, alpha_err))
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::data(format!("cannot write sweep: {e}")))?;
    w.write_record(["n", "gamma_err", "alpha_err"])
        .map_err(|e| Error::data(format!("sweep write: {e}")))?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            format!("{}", r.gamma_err),
            format!("{}", r.alpha_err),
        ])
        .map_err(|e| Error::data(format!("sweep write: {e}")))?;
    }
    w.flush().map_err(|e| Error::data(format!("sweep write: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::FunctionClass;
    use crate::sim::{glm_discrete, ipw_discrete};
    use crate::train::Optimizer;

    fn fast_cfg() -> McConfig {
        let class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: None,
        };
        let train = TrainConfig {
            epochs: 250,
            batch_size: usize::MAX,
            learning_rate: 0.5,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        McConfig {
            gamma: LearnerConfig {
                class: class.clone(),
                train: train.clone(),
            },
            alpha: AlphaLearnerConfig {
                class,
                train,
                gateaux_step: 1e-4,
            },
            l: 5,
            double_crossfit: false,
            level: 0.95,
        }
    }

    #[test]
    fn single_replicate_summary_echoes_the_replicate() {
        let dgp = ipw_discrete();
        let (records, summary) = monte_carlo(&dgp, 200, 1, &fast_cfg(), 77).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert_eq!(summary.reps_succeeded, 1);
        assert!((summary.bias - (r.theta_hat - summary.theta0)).abs() < 1e-15);
        assert!((summary.rmse - (r.theta_hat - summary.theta0).abs()).abs() < 1e-15);
        assert_eq!(summary.mean_se, r.se);
        assert_eq!(summary.sd_theta, 0.0);
        assert_eq!(summary.coverage, f64::from(u8::from(r.covered)));
        assert_eq!(r.seed, 77);
    }

    #[test]
    fn replications_are_deterministic() {
        let dgp = glm_discrete();
        let run = || monte_carlo(&dgp, 150, 4, &fast_cfg(), 5).unwrap();
        let (a, _) = run();
        let (b, _) = run();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.theta_hat.to_bits(), y.theta_hat.to_bits());
            assert_eq!(x.se.to_bits(), y.se.to_bits());
        }
    }

    #[test]
    fn csv_writers_produce_expected_headers() {
        let dgp = ipw_discrete();
        let (records, _) = monte_carlo(&dgp, 120, 2, &fast_cfg(), 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_replications_csv(f.path(), &records).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("rep,seed,theta_hat,se,ci_lo,ci_hi,covered"));
        assert_eq!(text.lines().count(), 3);

        let rows = vec![
            SweepRow { n: 100, gamma_err: 0.5, alpha_err: 0.25 },
            SweepRow { n: 200, gamma_err: 0.4, alpha_err: 0.2 },
        ];
        let g = tempfile::NamedTempFile::new().unwrap();
        write_sweep_csv(g.path(), &rows).unwrap();
        let text = std::fs::read_to_string(g.path()).unwrap();
        assert!(text.starts_with("n,gamma_err,alpha_err"));
    }

    #[test]
    fn oracle_seeded_dictionary_sweep_is_exact() {
        let dgp = ipw_discrete();
        let bundle = dgp.enumerate_oracles().unwrap();
        // Indicator features are enumerated per sorted distinct value, so
        // coefficients align with the table values at x = 0 and x = 1.
        let gamma_class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: Some(bundle.gamma0[0].values.clone()),
        };
        let alpha_class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: Some(bundle.alpha0[0].values.clone()),
        };
        let frozen = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let rows = convergence_sweep(
            &dgp,
            &[60, 120],
            &[1, 2],
            &LearnerConfig {
                class: gamma_class,
                train: frozen.clone(),
            },
            &AlphaLearnerConfig {
                class: alpha_class,
                train: frozen,
                gateaux_step: 1e-4,
            },
        )
        .unwrap();
        for row in rows {
            assert!(row.gamma_err < 1e-6, "gamma err {}", row.gamma_err);
            assert!(row.alpha_err < 1e-6, "alpha err {}", row.alpha_err);
        }
    }

    #[test]
    fn sweep_rejects_non_increasing_grid() {
        let dgp = ipw_discrete();
        let cfg = fast_cfg();
        let err =
            convergence_sweep(&dgp, &[200, 100], &[1], &cfg.gamma, &cfg.alpha).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn different_seeds_give_different_errors() {
        let dgp = ipw_discrete();
        let cfg = fast_cfg();
        let oracle = dgp.enumerate_oracles().unwrap();
        let a = sweep_cell(&dgp, 100, 1, &cfg.gamma, &cfg.alpha, &oracle).unwrap();
        let b = sweep_cell(&dgp, 100, 2, &cfg.gamma, &cfg.alpha, &oracle).unwrap();
        assert_ne!(a.1.to_bits(), b.1.to_bits());
    }
}

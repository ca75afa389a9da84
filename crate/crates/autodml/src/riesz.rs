//! Learning the debiasing functions.
//!
//! The minimizer of `E[-2 D_j(w, a) - vrho_j(w) a(x_j)^2]` over functions
//! of `x_j` is `alpha_j`, the function whose inner product with any
//! regression direction reproduces the functional's derivative. Training
//! this loss therefore recovers the debiasing weight without knowing its
//! closed form.

use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::funcspace::{FunctionClass, ParamFunction, RegressorFn};
use crate::problems::ProblemCore;
use crate::train::{train, LossSpec, TrainConfig, TrainTrace};

fn default_gateaux_step() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaLearnerConfig {
    pub class: FunctionClass,
    #[serde(default)]
    pub train: TrainConfig,
    /// Step for numeric functional derivatives. The built-in functionals
    /// are linear in each regression, so the analytic path is taken and
    /// this stays unused; it is validated and carried for parity with
    /// numeric cross-checks.
    #[serde(default = "default_gateaux_step")]
    pub gateaux_step: f64,
}

impl AlphaLearnerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.class.violations();
        out.extend(self.train.violations());
        if !(self.gateaux_step > 0.0) {
            out.push(format!("gateaux_step must be positive, got {}", self.gateaux_step));
        }
        out
    }
}

/// Per-regression seed so the two debiasing fits of a product functional
/// do not share initializations.
fn alpha_seed(base: u64, j: usize) -> u64 {
    derive_seed(base, &[0xa1f4, j as u64])
}

/// Trains one debiasing function per regression. `gammas[j]` supplies the
/// fitted regression where the residual derivative or the product
/// functional needs it.
pub fn learn_alpha_multi(
    problem: &ProblemCore,
    ds: &Dataset,
    rows: &[usize],
    gammas: &[ParamFunction],
    cfg: &AlphaLearnerConfig,
) -> Result<Vec<(ParamFunction, TrainTrace)>> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::config(v));
    }
    if gammas.len() != problem.j_count() {
        return Err(Error::config_one(format!(
            "{} fitted regressions supplied but the functional involves {}",
            gammas.len(),
            problem.j_count()
        )));
    }
    let mut out = Vec::with_capacity(problem.j_count());
    for j in 0..problem.j_count() {
        let spec = &problem.residuals[j];
        let inputs: Vec<Vec<f64>> = rows.iter().map(|&i| spec.x_vec(ds.row(i))).collect();
        let seed = alpha_seed(cfg.train.seed, j);
        let init = cfg.class.instantiate(spec.regressors.len(), &inputs, seed)?;
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        let loss = LossSpec::Riesz { problem, j, gammas };
        out.push(train(init, &loss, ds, rows, &train_cfg)?);
    }
    Ok(out)
}

/// Single-regression case; delegates to the multi-regression path so the
/// two entry points cannot drift apart.
pub fn learn_alpha_single(
    problem: &ProblemCore,
    ds: &Dataset,
    rows: &[usize],
    gamma_hat: &ParamFunction,
    cfg: &AlphaLearnerConfig,
) -> Result<(ParamFunction, TrainTrace)> {
    if problem.j_count() != 1 {
        return Err(Error::config_one(format!(
            "learn_alpha_single requires a single regression, functional has {}",
            problem.j_count()
        )));
    }
    let mut fits = learn_alpha_multi(problem, ds, rows, std::slice::from_ref(gamma_hat), cfg)?;
    Ok(fits.pop().expect("one fit per regression"))
}

/// Residual derivative evaluated at the fitted regression.
pub fn vrho_hat(problem: &ProblemCore, j: usize, gamma_j: &dyn RegressorFn, row: &[f64]) -> f64 {
    problem.vrho_at(row, j, gamma_j)
}

/// Exact minimizer of the Riesz loss over a dictionary span: solves the
/// normal equations `G c = a` with `G = mean(-vrho b b^T)` and
/// `a = mean(D_j(w, b))`. Used as a convexity oracle against gradient
/// training and as a fast learner on discrete designs.
pub fn dictionary_riesz_closed_form(
    problem: &ProblemCore,
    ds: &Dataset,
    rows: &[usize],
    gammas: &[ParamFunction],
    j: usize,
    class: &FunctionClass,
    seed: u64,
) -> Result<ParamFunction> {
    if rows.is_empty() {
        return Err(Error::config_one("closed form over empty rows".to_string()));
    }
    if gammas.len() != problem.j_count() {
        return Err(Error::config_one(format!(
            "{} fitted regressions supplied but the functional involves {}",
            gammas.len(),
            problem.j_count()
        )));
    }
    let spec = &problem.residuals[j];
    let inputs: Vec<Vec<f64>> = rows.iter().map(|&i| spec.x_vec(ds.row(i))).collect();
    let mut f = class.instantiate(spec.regressors.len(), &inputs, seed)?;
    let p = match f.as_dictionary() {
        Some(d) => d.param_count(),
        None => {
            return Err(Error::config_one(
                "closed-form debiasing requires a dictionary class".to_string(),
            ))
        }
    };
    let gamma_refs: Vec<&dyn RegressorFn> = gammas.iter().map(|g| g as &dyn RegressorFn).collect();

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut feat = vec![0.0; p];
    let inv_n = 1.0 / rows.len() as f64;
    for &i in rows {
        let row = ds.row(i);
        let dict = f.as_dictionary().expect("checked above");
        let x = spec.x_vec(row);
        dict.features_into(&x, &mut feat);
        let w = -problem.vrho_at(row, j, &gammas[j]);
        for r in 0..p {
            let wr = inv_n * w * feat[r];
            for c in 0..p {
                gram[r * p + c] += wr * feat[c];
            }
        }
        for t in problem.gateaux_terms(row, j, &gamma_refs) {
            if t.coeff == 0.0 {
                continue;
            }
            dict.features_into(&t.input, &mut feat);
            for r in 0..p {
                rhs[r] += inv_n * t.coeff * feat[r];
            }
        }
    }
    let coeffs = solve_linear(gram, p, rhs)?;
    f.set_params(&coeffs);
    Ok(f)
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_linear(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .abs()
                    .partial_cmp(&a[s * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * n + col].abs() <= 1e-12 * scale {
            return Err(Error::numerical(
                "normal equations are singular (rank-deficient dictionary on this sample)"
                    .to_string(),
            ));
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use crate::funcspace::{BasisFn, DictionaryFunction};
    use crate::problems::{Functional, ResidualFamily, ResidualSpec};
    use crate::train::Optimizer;

    fn const_fn(c: f64) -> ParamFunction {
        ParamFunction::Dictionary(DictionaryFunction::constant(c))
    }

    fn indicator_class() -> FunctionClass {
        FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: None,
        }
    }

    fn ipw_mean_problem() -> ProblemCore {
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

    fn ipw_mean_data() -> Dataset {
        // cols d, u, x; u among treated: x=0 -> {1, 3}, x=1 -> {5}
        Dataset::from_rows(
            vec!["d".into(), "u".into(), "x".into()],
            vec![
                vec![1.0, 1.0, 0.0],
                vec![1.0, 3.0, 0.0],
                vec![1.0, 5.0, 1.0],
                vec![0.0, 9.0, 0.0],
                vec![0.0, 9.0, 1.0],
            ],
            Schema {
                indicator: vec![0],
                aux_outcomes: vec![1],
                regressors: vec![2],
                ..Schema::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn closed_form_recovers_treated_group_means() {
        let ds = ipw_mean_data();
        let problem = ipw_mean_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        let alpha = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &[const_fn(1.0)],
            0,
            &indicator_class(),
            0,
        )
        .unwrap();
        // Riesz fit under the ipw weight is the regression of u on x among
        // the treated rows.
        assert!((alpha.value(&[0.0]) - 2.0).abs() < 1e-12);
        assert!((alpha.value(&[1.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_training_matches_closed_form() {
        let ds = ipw_mean_data();
        let problem = ipw_mean_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        let gammas = vec![const_fn(1.0)];
        let oracle = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &gammas,
            0,
            &indicator_class(),
            0,
        )
        .unwrap();
        let cfg = AlphaLearnerConfig {
            class: indicator_class(),
            train: TrainConfig {
                epochs: 800,
                batch_size: usize::MAX,
                learning_rate: 1.0,
                optimizer: Optimizer::Sgd,
                ..TrainConfig::default()
            },
            gateaux_step: 1e-4,
        };
        let (alpha, _) = learn_alpha_single(&problem, &ds, &rows, &gammas[0], &cfg).unwrap();
        for x in [0.0, 1.0] {
            let (got, want) = (alpha.value(&[x]), oracle.value(&[x]));
            assert!(
                (got - want).abs() < 1e-4 * want.abs().max(1.0),
                "alpha({x}) = {got}, closed form {want}"
            );
        }
    }

    #[test]
    fn zero_functional_drives_alpha_to_zero() {
        // Weight column is identically zero, so the target inner product
        // vanishes and the loss minimizer is the zero function.
        let ds = Dataset::from_rows(
            vec!["y".into(), "x".into(), "w".into()],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![2.0, 1.0, 0.0],
                vec![3.0, 0.0, 0.0],
            ],
            Schema {
                outcome: vec![0],
                regressors: vec![1],
                covariates: vec![2],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::Linear,
                regressors: vec![1],
                outcome: Some(0),
                indicator: None,
            }],
            functional: Functional::PluginLinear { weight_col: Some(2) },
        };
        let rows: Vec<usize> = (0..ds.n()).collect();
        let closed = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &[const_fn(0.0)],
            0,
            &indicator_class(),
            0,
        )
        .unwrap();
        assert_eq!(closed.value(&[0.0]), 0.0);
        assert_eq!(closed.value(&[1.0]), 0.0);

        let cfg = AlphaLearnerConfig {
            class: FunctionClass::Dictionary {
                monomial_degree: None,
                indicators: true,
                init_coeffs: Some(vec![1.0, 1.0]),
            },
            train: TrainConfig {
                epochs: 400,
                batch_size: usize::MAX,
                learning_rate: 0.8,
                optimizer: Optimizer::Sgd,
                ..TrainConfig::default()
            },
            gateaux_step: 1e-4,
        };
        let (alpha, _) = learn_alpha_single(&problem, &ds, &rows, &const_fn(0.0), &cfg).unwrap();
        assert!(alpha.value(&[0.0]).abs() < 1e-4);
        assert!(alpha.value(&[1.0]).abs() < 1e-4);
    }

    #[test]
    fn single_and_multi_entry_points_are_bit_identical() {
        let ds = ipw_mean_data();
        let problem = ipw_mean_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        let gammas = vec![const_fn(1.0)];
        let cfg = AlphaLearnerConfig {
            class: FunctionClass::Mlp {
                depth: 1,
                width: 4,
                init_scale: 1.0,
                output_clip: None,
            },
            train: TrainConfig {
                epochs: 20,
                batch_size: 2,
                seed: 7,
                ..TrainConfig::default()
            },
            gateaux_step: 1e-4,
        };
        let (single, _) = learn_alpha_single(&problem, &ds, &rows, &gammas[0], &cfg).unwrap();
        let multi = learn_alpha_multi(&problem, &ds, &rows, &gammas, &cfg).unwrap();
        let (a, b) = (single.params_vec(), multi[0].0.params_vec());
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            assert_eq!(a[i].to_bits(), b[i].to_bits(), "param {i}");
        }
    }

    fn product_problem() -> (Dataset, ProblemCore) {
        // cols y1, x1, y2, x2 with binary x's
        let ds = Dataset::from_rows(
            vec!["y1".into(), "x1".into(), "y2".into(), "x2".into()],
            vec![
                vec![1.0, 0.0, 2.0, 0.0],
                vec![2.0, 1.0, 3.0, 1.0],
                vec![1.5, 0.0, 2.5, 1.0],
                vec![2.5, 1.0, 1.5, 0.0],
            ],
            Schema {
                outcome: vec![0],
                aux_outcomes: vec![2],
                regressors: vec![1, 3],
                ..Schema::default()
            },
        )
        .unwrap();
        let problem = ProblemCore {
            residuals: vec![
                ResidualSpec {
                    family: ResidualFamily::Linear,
                    regressors: vec![1],
                    outcome: Some(0),
                    indicator: None,
                },
                ResidualSpec {
                    family: ResidualFamily::Linear,
                    regressors: vec![3],
                    outcome: Some(2),
                    indicator: None,
                },
            ],
            functional: Functional::MultiProduct,
        };
        (ds, problem)
    }

    #[test]
    fn product_functional_alpha_projects_other_regression() {
        let (ds, problem) = product_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        // gamma_2 constant 2: D_1 has coefficient 2 everywhere, so alpha_1
        // is the projection of the constant 2 onto functions of x1.
        let gammas = vec![const_fn(1.0), const_fn(2.0)];
        let alpha1 = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &gammas,
            0,
            &indicator_class(),
            0,
        )
        .unwrap();
        assert!((alpha1.value(&[0.0]) - 2.0).abs() < 1e-12);
        assert!((alpha1.value(&[1.0]) - 2.0).abs() < 1e-12);
        let alpha2 = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &gammas,
            1,
            &indicator_class(),
            0,
        )
        .unwrap();
        assert!((alpha2.value(&[0.0]) - 1.0).abs() < 1e-12);
        assert!((alpha2.value(&[1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_reported_as_numerical() {
        // Monomial degree 1 plus indicators on a binary regressor makes the
        // feature set linearly dependent.
        let ds = ipw_mean_data();
        let problem = ipw_mean_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        let class = FunctionClass::Dictionary {
            monomial_degree: Some(1),
            indicators: true,
            init_coeffs: None,
        };
        let err = dictionary_riesz_closed_form(
            &problem,
            &ds,
            &rows,
            &[const_fn(1.0)],
            0,
            &class,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn gamma_count_mismatch_rejected() {
        let ds = ipw_mean_data();
        let problem = ipw_mean_problem();
        let rows: Vec<usize> = (0..ds.n()).collect();
        let cfg = AlphaLearnerConfig {
            class: indicator_class(),
            train: TrainConfig::default(),
            gateaux_step: 1e-4,
        };
        let err = learn_alpha_multi(&problem, &ds, &rows, &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn solve_linear_known_system() {
        // [[2, 1], [1, 3]] x = [5, 10] -> x = (1, 3)
        let x = solve_linear(vec![2.0, 1.0, 1.0, 3.0], 2, vec![5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }
}

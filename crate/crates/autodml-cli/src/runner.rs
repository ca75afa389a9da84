//! Command dispatch: validates the run config, produces the artifacts,
//! and returns the list of files written. Every JSON document embeds the
//! resolved config and the seeds actually used, so a run can be repeated
//! exactly from its own output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use autodml::data::{derive_seed, make_folds, Dataset};
use autodml::error::{Error, Result};
use autodml::estimator::{
    alpha_robustness_check, assumption_diagnostics, crossfit_estimate, orthogonality_check,
    DiagnosticsConfig, LearnerConfig,
};
use autodml::funcspace::{DictionaryFunction, ParamFunction, RegressorFn};
use autodml::problems::ProblemCore;
use autodml::riesz::{learn_alpha_multi, AlphaLearnerConfig};
use autodml::sim::{
    convergence_sweep, monte_carlo, write_replications_csv, write_sweep_csv, BuiltinDgp,
    DiscreteDgp, McConfig,
};
use autodml::train::{train, LossSpec, TrainConfig};

use crate::config::{Command, RunConfig};

pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::config(v));
    }
    std::fs::create_dir_all(out).map_err(|e| {
        Error::data(format!(
            "cannot create output directory '{}': {e}",
            out.display()
        ))
    })?;
    if let Some(t) = cfg.threads {
        // Fails only when a global pool already exists; keep that one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cfg.command {
        Command::Estimate => estimate(cfg, out),
        Command::Simulate => simulate(cfg, out),
        Command::Coverage => coverage(cfg, out),
        Command::Diagnose => diagnose(cfg, out),
        Command::Sweep => sweep(cfg, out),
    }
}

fn builtin(cfg: &RunConfig) -> BuiltinDgp {
    BuiltinDgp::by_name(cfg.data.dgp.as_deref().expect("validated")).expect("validated")
}

fn discrete(cfg: &RunConfig) -> DiscreteDgp {
    match builtin(cfg) {
        BuiltinDgp::Discrete(d) => d,
        BuiltinDgp::Gaussian(_) => unreachable!("validated"),
    }
}

fn resolved(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn write_json(path: &Path, doc: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| Error::data(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::data(format!("cannot write '{}': {e}", path.display())))
}

/// Training configs for one run, with the seeds the run will use spliced
/// in so the estimator's own derivations start from recorded values.
fn learner_configs(
    cfg: &RunConfig,
    gamma_seed: u64,
    alpha_seed: u64,
) -> (LearnerConfig, AlphaLearnerConfig) {
    (
        LearnerConfig {
            class: cfg.gamma.class.clone(),
            train: TrainConfig {
                seed: gamma_seed,
                ..cfg.gamma.train.clone()
            },
        },
        AlphaLearnerConfig {
            class: cfg.alpha.class.clone(),
            train: TrainConfig {
                seed: alpha_seed,
                ..cfg.alpha.train.clone()
            },
            gateaux_step: cfg.alpha.gateaux_step,
        },
    )
}

fn estimate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut seeds = BTreeMap::new();
    seeds.insert("config_seed".to_string(), cfg.seed);
    let (ds, problem) = if cfg.data.dgp.is_some() {
        let d = builtin(cfg);
        let sample_seed = derive_seed(cfg.seed, &[1]);
        seeds.insert("sample".to_string(), sample_seed);
        (d.sample(cfg.data.n.expect("validated"), sample_seed)?, d.problem())
    } else {
        let schema = cfg.data.schema.clone().expect("validated");
        let path = cfg.data.path.as_ref().expect("validated");
        (Dataset::load_csv(path, schema)?, cfg.problem.clone().expect("validated"))
    };
    let fold_seed = derive_seed(cfg.seed, &[2]);
    let gamma_seed = derive_seed(cfg.seed, &[3]);
    let alpha_seed = derive_seed(cfg.seed, &[4]);
    seeds.insert("folds".to_string(), fold_seed);
    seeds.insert("gamma_train".to_string(), gamma_seed);
    seeds.insert("alpha_train".to_string(), alpha_seed);

    let plan = make_folds(ds.n(), cfg.folds.l, fold_seed, cfg.folds.double_crossfit)?;
    let (gamma_cfg, alpha_cfg) = learner_configs(cfg, gamma_seed, alpha_seed);
    let res = crossfit_estimate(&ds, &problem, &plan, &gamma_cfg, &alpha_cfg, cfg.level)?;

    let report_path = out.join("report.json");
    write_json(
        &report_path,
        &json!({
            "config": resolved(cfg),
            "seeds": seeds,
            "report": res.report,
        }),
    )?;
    let mut files = vec![report_path];
    if cfg.psi_csv {
        let psi_path = out.join("psi.csv");
        let mut buf = String::from("row,psi\n");
        for (i, p) in res.report.psi_values.iter().enumerate() {
            buf.push_str(&format!("{i},{p}\n"));
        }
        std::fs::write(&psi_path, buf)
            .map_err(|e| Error::data(format!("cannot write '{}': {e}", psi_path.display())))?;
        files.push(psi_path);
    }
    Ok(files)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let d = builtin(cfg);
    let sample_seed = derive_seed(cfg.seed, &[1]);
    let ds = d.sample(cfg.data.n.expect("validated"), sample_seed)?;
    let data_path = out.join("dataset.csv");
    ds.write_csv(&data_path)?;
    let oracle_path = out.join("oracle.json");
    write_json(
        &oracle_path,
        &json!({
            "config": resolved(cfg),
            "seeds": { "config_seed": cfg.seed, "sample": sample_seed },
            "oracle": d.oracle_json()?,
        }),
    )?;
    Ok(vec![data_path, oracle_path])
}

fn coverage(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let d = discrete(cfg);
    let mc = McConfig {
        gamma: cfg.gamma.clone(),
        alpha: cfg.alpha.clone(),
        l: cfg.folds.l,
        double_crossfit: cfg.folds.double_crossfit,
        level: cfg.level,
    };
    let (records, summary) =
        monte_carlo(&d, cfg.data.n.expect("validated"), cfg.reps, &mc, cfg.seed)?;
    let rep_path = out.join("replications.csv");
    write_replications_csv(&rep_path, &records)?;

    let mut doc = serde_json::to_value(&summary).expect("summary serializes");
    let map = doc.as_object_mut().expect("summary is an object");
    map.insert("config".to_string(), resolved(cfg));
    map.insert(
        "seeds".to_string(),
        json!({ "config_seed": cfg.seed, "master": cfg.seed }),
    );
    let sum_path = out.join("summary.json");
    write_json(&sum_path, &doc)?;
    Ok(vec![rep_path, sum_path])
}

/// Fits one regression per residual and the debiasing functions on the
/// full sample; the diagnose command inspects these fits directly.
fn fit_full_sample(
    problem: &ProblemCore,
    ds: &Dataset,
    gamma_cfg: &LearnerConfig,
    alpha_cfg: &AlphaLearnerConfig,
) -> Result<(Vec<ParamFunction>, Vec<ParamFunction>)> {
    let rows: Vec<usize> = (0..ds.n()).collect();
    let mut gammas = Vec::with_capacity(problem.j_count());
    for (j, spec) in problem.residuals.iter().enumerate() {
        let inputs: Vec<Vec<f64>> = rows.iter().map(|&i| spec.x_vec(ds.row(i))).collect();
        let seed = derive_seed(gamma_cfg.train.seed, &[j as u64]);
        let init = gamma_cfg.class.instantiate(spec.regressors.len(), &inputs, seed)?;
        let train_cfg = TrainConfig {
            seed,
            ..gamma_cfg.train.clone()
        };
        let (f, _) = train(init, &LossSpec::Regression(spec), ds, &rows, &train_cfg)?;
        gammas.push(f);
    }
    let alphas = learn_alpha_multi(problem, ds, &rows, &gammas, alpha_cfg)?
        .into_iter()
        .map(|(f, _)| f)
        .collect();
    Ok((gammas, alphas))
}

fn diagnose(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let d = discrete(cfg);
    let bundle = d.enumerate_oracles()?;
    let points = d.population_rows();
    let gamma_refs: Vec<&dyn RegressorFn> =
        bundle.gamma0.iter().map(|t| t as &dyn RegressorFn).collect();
    let alpha_refs: Vec<&dyn RegressorFn> =
        bundle.alpha0.iter().map(|t| t as &dyn RegressorFn).collect();
    let delta = ParamFunction::Dictionary(DictionaryFunction::constant(1.0));

    let orthogonality: Vec<serde_json::Value> = (0..d.problem.j_count())
        .map(|j| {
            let rows = orthogonality_check(
                &d.problem,
                &points,
                &gamma_refs,
                &alpha_refs,
                &delta,
                j,
                bundle.theta0,
                &cfg.tau_grid,
            );
            json!({ "regression": j, "direction": "constant 1", "rows": rows })
        })
        .collect();

    let mut robustness = Vec::new();
    for (name, value) in [("zero", 0.0), ("one", 1.0), ("seven", 7.0)] {
        let consts: Vec<ParamFunction> = (0..d.problem.j_count())
            .map(|_| ParamFunction::Dictionary(DictionaryFunction::constant(value)))
            .collect();
        let refs: Vec<&dyn RegressorFn> =
            consts.iter().map(|f| f as &dyn RegressorFn).collect();
        let drift =
            alpha_robustness_check(&d.problem, &points, &gamma_refs, &refs, bundle.theta0);
        robustness.push(json!({ "alpha": format!("constant {name}"), "expected_psi": drift }));
    }
    let oracle_drift =
        alpha_robustness_check(&d.problem, &points, &gamma_refs, &alpha_refs, bundle.theta0);
    robustness.push(json!({ "alpha": "oracle", "expected_psi": oracle_drift }));

    let sample_seed = derive_seed(cfg.seed, &[1]);
    let gamma_seed = derive_seed(cfg.seed, &[3]);
    let alpha_seed = derive_seed(cfg.seed, &[4]);
    let ds = d.sample(cfg.data.n.expect("validated"), sample_seed)?;
    let (gamma_cfg, alpha_cfg) = learner_configs(cfg, gamma_seed, alpha_seed);
    let (gammas, alphas) = fit_full_sample(&d.problem, &ds, &gamma_cfg, &alpha_cfg)?;
    let rows: Vec<usize> = (0..ds.n()).collect();
    let (assumptions, warnings) = assumption_diagnostics(
        &ds,
        &rows,
        &d.problem,
        &gammas,
        &alphas,
        &DiagnosticsConfig::default(),
    );

    let path = out.join("diagnostics.json");
    write_json(
        &path,
        &json!({
            "config": resolved(cfg),
            "seeds": {
                "config_seed": cfg.seed,
                "sample": sample_seed,
                "gamma_train": gamma_seed,
                "alpha_train": alpha_seed,
            },
            "theta0": bundle.theta0,
            "orthogonality": orthogonality,
            "alpha_robustness": robustness,
            "assumptions": assumptions,
            "warnings": warnings,
        }),
    )?;
    Ok(vec![path])
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let d = discrete(cfg);
    let rows = convergence_sweep(&d, &cfg.n_grid, &cfg.sweep_seeds, &cfg.gamma, &cfg.alpha)?;
    let csv_path = out.join("sweep.csv");
    write_sweep_csv(&csv_path, &rows)?;
    let sum_path = out.join("sweep_summary.json");
    write_json(
        &sum_path,
        &json!({
            "config": resolved(cfg),
            "seeds": { "config_seed": cfg.seed, "sweep_seeds": cfg.sweep_seeds },
            "rows": rows,
        }),
    )?;
    Ok(vec![csv_path, sum_path])
}

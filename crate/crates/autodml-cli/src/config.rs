//! Run configuration: one JSON document describing the command, the data
//! source, the learners, and every knob needed to reproduce the run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use autodml::data::Schema;
use autodml::estimator::LearnerConfig;
use autodml::funcspace::FunctionClass;
use autodml::problems::ProblemCore;
use autodml::riesz::AlphaLearnerConfig;
use autodml::sim::{BuiltinDgp, BUILTIN_DGP_NAMES};
use autodml::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Estimate,
    Simulate,
    Coverage,
    Diagnose,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Simulate => "simulate",
            Command::Coverage => "coverage",
            Command::Diagnose => "diagnose",
            Command::Sweep => "sweep",
        }
    }
}

/// Exactly one source: a built-in design by name (sampled at `n` where
/// the command needs data) or a CSV file read under a column-role schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub double_crossfit: bool,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            l: default_l(),
            double_crossfit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub data: DataConfig,
    /// Required for CSV sources; built-in designs carry their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemCore>,
    #[serde(default = "default_gamma")]
    pub gamma: LearnerConfig,
    #[serde(default = "default_alpha")]
    pub alpha: AlphaLearnerConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Replicates for the coverage command.
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Sample sizes for the sweep command, strictly increasing.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// One full sweep is run per seed; the table reports medians.
    #[serde(default)]
    pub sweep_seeds: Vec<u64>,
    /// Perturbation sizes for the diagnose command.
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    /// Worker threads; defaults to all available cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Also write per-observation moment values next to the report.
    #[serde(default)]
    pub psi_csv: bool,
}

fn default_l() -> usize {
    5
}

fn default_level() -> f64 {
    0.95
}

fn default_reps() -> usize {
    500
}

fn default_tau_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1]
}

fn default_class() -> FunctionClass {
    FunctionClass::Dictionary {
        monomial_degree: Some(2),
        indicators: true,
        init_coeffs: None,
    }
}

fn default_gamma() -> LearnerConfig {
    LearnerConfig {
        class: default_class(),
        train: TrainConfig::default(),
    }
}

fn default_alpha() -> AlphaLearnerConfig {
    AlphaLearnerConfig {
        class: default_class(),
        train: TrainConfig::default(),
        gateaux_step: 1e-4,
    }
}

impl RunConfig {
    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cmd = self.command.name();
        let has_dgp = self.data.dgp.is_some();
        let has_path = self.data.path.is_some();
        if has_dgp && has_path {
            out.push("data names both a built-in design and a csv path; pick one".to_string());
        }
        if !has_dgp && !has_path {
            out.push("data needs a source: a built-in design name or a csv path".to_string());
        }

        let mut builtin = None;
        if let Some(name) = &self.data.dgp {
            match BuiltinDgp::by_name(name) {
                Some(d) => builtin = Some(d),
                None => out.push(format!(
                    "unknown design '{name}'; built-ins: {}",
                    BUILTIN_DGP_NAMES.join(", ")
                )),
            }
            if self.problem.is_some() {
                out.push(
                    "built-in designs carry their own problem; drop the problem field".to_string(),
                );
            }
            let needs_n = !matches!(self.command, Command::Sweep);
            if needs_n && self.data.n.map_or(true, |n| n == 0) {
                out.push(format!("the {cmd} command needs a positive sample size data.n"));
            }
        }
        if has_path {
            if self.data.schema.is_none() {
                out.push("csv data needs a schema".to_string());
            }
            if self.problem.is_none() {
                out.push("csv data needs a problem spec".to_string());
            }
            if !matches!(self.command, Command::Estimate) {
                out.push(format!("the {cmd} command runs on built-in designs only"));
            }
        }
        if matches!(self.command, Command::Coverage | Command::Diagnose | Command::Sweep) {
            if let Some(BuiltinDgp::Gaussian(_)) = &builtin {
                out.push(format!(
                    "the {cmd} command needs a design with an enumerable support; \
                     'gaussian_avg_deriv' has none"
                ));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            out.push(format!("level must lie in (0, 1), got {}", self.level));
        }
        if self.folds.l < 2 {
            out.push(format!("folds.l must be at least 2, got {}", self.folds.l));
        }
        if matches!(self.command, Command::Coverage) && self.reps == 0 {
            out.push("coverage needs reps >= 1".to_string());
        }
        if matches!(self.command, Command::Sweep) {
            if self.n_grid.is_empty() {
                out.push("sweep needs a nonempty n_grid".to_string());
            } else if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
                out.push("n_grid must be strictly increasing".to_string());
            }
            if self.sweep_seeds.is_empty() {
                out.push("sweep needs at least one seed in sweep_seeds".to_string());
            }
        }
        if matches!(self.command, Command::Diagnose) {
            if self.tau_grid.is_empty() {
                out.push("diagnose needs a nonempty tau_grid".to_string());
            }
            if self.tau_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
                out.push("tau_grid entries must be finite and nonnegative".to_string());
            }
        }
        if self.threads == Some(0) {
            out.push("threads must be positive when set".to_string());
        }
        for v in self.gamma.violations() {
            out.push(format!("gamma: {v}"));
        }
        for v in self.alpha.violations() {
            out.push(format!("alpha: {v}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(command: &str) -> RunConfig {
        serde_json::from_str(&format!(
            r#"{{ "command": "{command}", "data": {{ "dgp": "ipw_discrete", "n": 100 }} }}"#
        ))
        .unwrap()
    }

    #[test]
    fn minimal_estimate_config_is_valid() {
        let cfg = minimal("estimate");
        assert!(cfg.violations().is_empty(), "{:?}", cfg.violations());
        assert_eq!(cfg.level, 0.95);
        assert_eq!(cfg.folds.l, 5);
        assert_eq!(cfg.reps, 500);
    }

    #[test]
    fn violations_are_all_collected() {
        let mut cfg = minimal("coverage");
        cfg.data.dgp = Some("nonexistent".to_string());
        cfg.level = 2.0;
        cfg.folds.l = 1;
        cfg.reps = 0;
        cfg.threads = Some(0);
        let v = cfg.violations();
        assert!(v.len() >= 5, "{v:?}");
        assert!(v.iter().any(|m| m.contains("nonexistent")));
        assert!(v.iter().any(|m| m.contains("level")));
        assert!(v.iter().any(|m| m.contains("folds.l")));
        assert!(v.iter().any(|m| m.contains("reps")));
        assert!(v.iter().any(|m| m.contains("threads")));
    }

    #[test]
    fn both_sources_rejected() {
        let mut cfg = minimal("estimate");
        cfg.data.path = Some(PathBuf::from("x.csv"));
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("pick one")), "{v:?}");
    }

    #[test]
    fn csv_source_needs_schema_and_problem() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{ "command": "estimate", "data": { "path": "x.csv" } }"#,
        )
        .unwrap();
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("schema")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("problem")), "{v:?}");
    }

    #[test]
    fn enumeration_commands_reject_the_gaussian_design() {
        for cmd in ["coverage", "diagnose", "sweep"] {
            let mut cfg = minimal(cmd);
            cfg.data.dgp = Some("gaussian_avg_deriv".to_string());
            cfg.n_grid = vec![100, 200];
            cfg.sweep_seeds = vec![1];
            let v = cfg.violations();
            assert!(v.iter().any(|m| m.contains("enumerable")), "{cmd}: {v:?}");
        }
    }

    #[test]
    fn unknown_field_rejected_at_parse() {
        let err = serde_json::from_str::<RunConfig>(
            r#"{ "command": "estimate", "data": { "dgp": "ipw_discrete", "n": 10 }, "lvl": 0.9 }"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("lvl"));
    }

    #[test]
    fn sweep_grid_must_increase() {
        let mut cfg = minimal("sweep");
        cfg.data.n = None;
        cfg.n_grid = vec![500, 500];
        cfg.sweep_seeds = vec![1, 2];
        let v = cfg.violations();
        assert!(v.iter().any(|m| m.contains("strictly increasing")), "{v:?}");
    }
}

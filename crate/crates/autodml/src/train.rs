//! First-order minibatch training for the function classes, under the
//! regression losses (whose stationarity conditions reproduce the
//! orthogonality of the residual to the class) and the Riesz loss
//! `-2 m(w, alpha) - vrho_hat(w) alpha(x)^2`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::funcspace::{ParamFunction, RegressorFn, Scratch};
use crate::problems::{expit, LinearTerm, ProblemCore, ResidualFamily, ResidualSpec};

/// Weights with |mean residual derivative| below this are treated as a
/// degenerate problem (e.g. ipw with almost no treated rows).
pub const WEIGHT_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    AdaptiveMoment { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdaptiveMoment {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub val_fraction: f64,
    pub patience: usize,
}

fn default_epochs() -> usize {
    200
}

fn default_batch() -> usize {
    64
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: Optimizer::default(),
            weight_decay: 0.0,
            early_stop: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            out.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 1 {
            out.push("batch_size must be >= 1".to_string());
        }
        if let Optimizer::AdaptiveMoment { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                out.push(format!("adaptive-moment betas must lie in [0, 1), got ({beta1}, {beta2})"));
            }
            if !(eps > 0.0) {
                out.push(format!("adaptive-moment eps must be positive, got {eps}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            out.push(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if let Some(es) = &self.early_stop {
            if !(es.val_fraction > 0.0 && es.val_fraction < 1.0) {
                out.push(format!("early_stop.val_fraction must lie in (0, 1), got {}", es.val_fraction));
            }
            if es.patience < 1 {
                out.push("early_stop.patience must be >= 1".to_string());
            }
        }
        out
    }
}

/// What objective a training run minimizes.
pub enum LossSpec<'a> {
    /// Per-sample regression loss of the residual family:
    /// linear `(y - g)^2 / 2`, ipw `-2g + d g^2`,
    /// glm_logistic `log(1 + e^g) - y g`.
    Regression(&'a ResidualSpec),
    /// Riesz loss for regression `j`:
    /// `-2 D_j(w, alpha) - vrho_hat_j(w) alpha(x_j)^2` where the Gateaux
    /// derivative terms come from the functional and `vrho_hat` is the
    /// analytic residual derivative plugged in at `gammas[j]`.
    Riesz {
        problem: &'a ProblemCore,
        j: usize,
        gammas: &'a [ParamFunction],
    },
}

enum Prepared {
    Reg {
        x: Vec<f64>,
        target: RegTarget,
    },
    Riesz {
        terms: Vec<LinearTerm>,
        x: Vec<f64>,
        vrho: f64,
    },
}

#[derive(Clone, Copy)]
enum RegTarget {
    Linear { y: f64 },
    Ipw { d: f64 },
    Glm { y: f64 },
}

fn prepare(loss: &LossSpec, ds: &Dataset, rows: &[usize]) -> Result<Vec<Prepared>> {
    match loss {
        LossSpec::Regression(spec) => {
            let mut out = Vec::with_capacity(rows.len());
            let mut d_sum = 0.0;
            for &i in rows {
                let row = ds.row(i);
                let x = spec.x_vec(row);
                let target = match spec.family {
                    ResidualFamily::Linear => RegTarget::Linear {
                        y: row[spec.outcome.expect("outcome")],
                    },
                    ResidualFamily::GlmLogistic => RegTarget::Glm {
                        y: row[spec.outcome.expect("outcome")],
                    },
                    ResidualFamily::Ipw => {
                        let d = row[spec.indicator.expect("indicator")];
                        d_sum += d;
                        RegTarget::Ipw { d }
                    }
                };
                out.push(Prepared::Reg { x, target });
            }
            let d_mean = d_sum / rows.len() as f64;
            if matches!(spec.family, ResidualFamily::Ipw) && d_mean < WEIGHT_GUARD {
                return Err(Error::numerical(format!(
                    "degenerate ipw regression: mean indicator {d_mean} below {WEIGHT_GUARD}"
                )));
            }
            Ok(out)
        }
        LossSpec::Riesz { problem, j, gammas } => {
            let j = *j;
            assert_eq!(gammas.len(), problem.j_count(), "gamma count mismatch");
            let gamma_refs: Vec<&dyn RegressorFn> =
                gammas.iter().map(|g| g as &dyn RegressorFn).collect();
            let spec = &problem.residuals[j];
            let mut out = Vec::with_capacity(rows.len());
            let mut weight_sum = 0.0;
            for &i in rows {
                let row = ds.row(i);
                let mut terms = problem.gateaux_terms(row, j, &gamma_refs);
                terms.retain(|t| t.coeff != 0.0);
                let x = spec.x_vec(row);
                let vrho = problem.vrho_at(row, j, &gammas[j]);
                weight_sum += -vrho;
                out.push(Prepared::Riesz { terms, x, vrho });
            }
            let w_mean = weight_sum / rows.len() as f64;
            if w_mean < WEIGHT_GUARD {
                return Err(Error::numerical(format!(
                    "degenerate residual-derivative weight: mean(-vrho) {w_mean} below {WEIGHT_GUARD}"
                )));
            }
            Ok(out)
        }
    }
}

fn sample_loss(f: &ParamFunction, s: &Prepared, scratch: &mut Scratch) -> f64 {
    match s {
        Prepared::Reg { x, target } => {
            let g = f.value_scratch(x, scratch);
            match *target {
                RegTarget::Linear { y } => 0.5 * (y - g) * (y - g),
                RegTarget::Ipw { d } => -2.0 * g + d * g * g,
                RegTarget::Glm { y } => g.max(0.0) + (-g.abs()).exp().ln_1p() - y * g,
            }
        }
        Prepared::Riesz { terms, x, vrho } => {
            let a = f.value_scratch(x, scratch);
            let m: f64 = terms
                .iter()
                .map(|t| t.coeff * f.value_scratch(&t.input, scratch))
                .sum();
            -2.0 * m - vrho * a * a
        }
    }
}

/// Accumulates `scale * d(loss)/d(params)` into `grad`; returns the
/// number of clip-saturated evaluations (their gradient contribution is
/// zero and they are reported, not failed).
fn accum_grad(
    f: &ParamFunction,
    s: &Prepared,
    scale: f64,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> usize {
    let mut saturated = 0;
    match s {
        Prepared::Reg { x, target } => {
            let g = f.value_scratch(x, scratch);
            let dl_dg = match *target {
                RegTarget::Linear { y } => g - y,
                RegTarget::Ipw { d } => -2.0 + 2.0 * d * g,
                RegTarget::Glm { y } => expit(g) - y,
            };
            let (_, sat) = f.eval_grad_accum(x, scale * dl_dg, grad, scratch);
            saturated += sat as usize;
        }
        Prepared::Riesz { terms, x, vrho } => {
            let a = f.value_scratch(x, scratch);
            let (_, sat) = f.eval_grad_accum(x, scale * (-2.0 * vrho * a), grad, scratch);
            saturated += sat as usize;
            for t in terms {
                let (_, sat) = f.eval_grad_accum(&t.input, scale * (-2.0 * t.coeff), grad, scratch);
                saturated += sat as usize;
            }
        }
    }
    saturated
}

fn mean_loss(f: &ParamFunction, samples: &[Prepared], scratch: &mut Scratch) -> f64 {
    samples.iter().map(|s| sample_loss(f, s, scratch)).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clip_saturations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub stats: Vec<EpochStat>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::data(format!("cannot write trace: {e}")))?;
        w.write_record(["epoch", "loss", "grad_norm", "clip_saturations"])
            .map_err(|e| Error::data(format!("trace write: {e}")))?;
        for s in &self.stats {
            w.write_record([
                s.epoch.to_string(),
                format!("{}", s.loss),
                format!("{}", s.grad_norm),
                s.clip_saturations.to_string(),
            ])
            .map_err(|e| Error::data(format!("trace write: {e}")))?;
        }
        w.flush().map_err(|e| Error::data(format!("trace write: {e}")))?;
        Ok(())
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

/// Minimizes the loss over `rows` and returns the parameter vector with
/// the lowest epoch-end loss over the full row set, initialization
/// included. Fully deterministic given the config seed.
pub fn train(
    mut f: ParamFunction,
    loss: &LossSpec,
    ds: &Dataset,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<(ParamFunction, TrainTrace)> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::config(v));
    }
    if rows.is_empty() {
        return Err(Error::config_one("training row set is empty".to_string()));
    }
    let samples = prepare(loss, ds, rows)?;
    let mut scratch = Scratch::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Optional holdout for early stopping; best-iterate selection always
    // uses the full row set.
    let mut train_idx: Vec<usize> = (0..samples.len()).collect();
    let mut val_idx: Vec<usize> = Vec::new();
    if let Some(es) = &cfg.early_stop {
        train_idx.shuffle(&mut rng);
        let n_val = ((samples.len() as f64 * es.val_fraction).round() as usize).max(1);
        if n_val >= samples.len() {
            return Err(Error::config_one(format!(
                "early_stop.val_fraction {} leaves no training rows",
                es.val_fraction
            )));
        }
        val_idx = train_idx.split_off(samples.len() - n_val);
    }

    let mut params = f.params_vec();
    let p = params.len();
    let mut grad = vec![0.0; p];
    let mut adam = AdamState {
        m: vec![0.0; p],
        v: vec![0.0; p],
        t: 0,
    };

    let init_loss = mean_loss(&f, &samples, &mut scratch);
    if !init_loss.is_finite() {
        return Err(Error::numerical(format!(
            "loss at initialization is not finite ({init_loss})"
        )));
    }
    let mut best_loss = init_loss;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut trace = TrainTrace {
        stats: vec![EpochStat {
            epoch: 0,
            loss: init_loss,
            grad_norm: 0.0,
            clip_saturations: 0,
        }],
        best_epoch: 0,
        best_loss: init_loss,
    };

    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 1..=cfg.epochs {
        if cfg.batch_size < train_idx.len() {
            train_idx.shuffle(&mut rng);
        }
        let mut last_grad_norm = 0.0;
        let mut saturations = 0usize;
        for batch in train_idx.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &si in batch {
                saturations += accum_grad(&f, &samples[si], scale, &mut grad, &mut scratch);
            }
            if cfg.weight_decay > 0.0 {
                for (g, w) in grad.iter_mut().zip(params.iter()) {
                    *g += cfg.weight_decay * w;
                }
            }
            last_grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (w, g) in params.iter_mut().zip(grad.iter()) {
                        *w -= cfg.learning_rate * g;
                    }
                }
                Optimizer::AdaptiveMoment { beta1, beta2, eps } => {
                    adam.t += 1;
                    let bc1 = 1.0 - beta1.powi(adam.t as i32);
                    let bc2 = 1.0 - beta2.powi(adam.t as i32);
                    for i in 0..p {
                        adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * grad[i];
                        adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                        let m_hat = adam.m[i] / bc1;
                        let v_hat = adam.v[i] / bc2;
                        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            f.set_params(&params);
        }

        let epoch_loss = mean_loss(&f, &samples, &mut scratch);
        trace.stats.push(EpochStat {
            epoch,
            loss: epoch_loss,
            grad_norm: last_grad_norm,
            clip_saturations: saturations,
        });
        if !epoch_loss.is_finite() {
            return Err(Error::numerical(format!(
                "training diverged: loss {epoch_loss} at epoch {epoch} (last finite loss {best_loss})"
            )));
        }
        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
        }
        if cfg.early_stop.is_some() {
            let val_loss = val_idx
                .iter()
                .map(|&si| sample_loss(&f, &samples[si], &mut scratch))
                .sum::<f64>()
                / val_idx.len() as f64;
            if val_loss < best_val {
                best_val = val_loss;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= cfg.early_stop.as_ref().unwrap().patience {
                    break;
                }
            }
        }
    }

    f.set_params(&best_params);
    trace.best_epoch = best_epoch;
    trace.best_loss = best_loss;
    Ok((f, trace))
}

/// Mean per-sample loss over `rows`.
pub fn empirical_loss(
    f: &ParamFunction,
    loss: &LossSpec,
    ds: &Dataset,
    rows: &[usize],
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::config_one("empirical_loss over empty rows".to_string()));
    }
    let samples = prepare(loss, ds, rows)?;
    Ok(mean_loss(f, &samples, &mut Scratch::new()))
}

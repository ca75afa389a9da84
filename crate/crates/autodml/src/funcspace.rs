//! Trainable real-valued function classes over regressor vectors.
//!
//! Three classes: a ReLU multilayer perceptron, a partially-linear
//! composite `base(x1) + sum_j x2[j] * slope_j(x1)`, and a linear
//! dictionary over monomial/indicator features. All expose a flat
//! parameter vector and exact reverse-mode parameter gradients, so one
//! optimizer drives every class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything evaluable on a regressor vector. Tabulated oracle functions
/// implement this alongside the trainable classes.
pub trait RegressorFn {
    fn value_at(&self, x: &[f64]) -> f64;
}

/// Reusable buffers for MLP forward/backward passes.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    acts: Vec<f64>,
    buf: Vec<f64>,
    deltas: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Scratch {
        Scratch::default()
    }
}

/// Fully-connected ReLU network `d -> width -> ... -> width -> 1` with an
/// optional symmetric output clip. Parameters are stored flat, layer by
/// layer, weights before biases; the output layer is a single linear unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFunction {
    input_dim: usize,
    depth: usize,
    width: usize,
    init_seed: u64,
    output_clip: Option<f64>,
    params: Vec<f64>,
}

/// Glorot-style uniform init: weights i.i.d. on [-s, s] with
/// `s = init_scale * sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_mlp(
    input_dim: usize,
    depth: usize,
    width: usize,
    seed: u64,
    init_scale: f64,
    output_clip: Option<f64>,
) -> Result<MlpFunction> {
    if input_dim < 1 || depth < 1 || width < 1 {
        return Err(Error::config_one(format!(
            "mlp dimensions must be positive (input_dim={input_dim}, depth={depth}, width={width})"
        )));
    }
    if !(init_scale >= 0.0) || !init_scale.is_finite() {
        return Err(Error::config_one(format!(
            "mlp init_scale must be a finite nonnegative real, got {init_scale}"
        )));
    }
    if let Some(b) = output_clip {
        if !(b > 0.0) {
            return Err(Error::config_one(format!(
                "mlp output_clip must be positive, got {b}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(mlp_param_count(input_dim, depth, width));
    let mut layer =
        |fan_in: usize, fan_out: usize, n_units: usize, params: &mut Vec<f64>| {
            let s = init_scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..n_units * fan_in {
                params.push(if s == 0.0 { 0.0 } else { rng.gen_range(-s..=s) });
            }
            for _ in 0..n_units {
                params.push(0.0);
            }
        };
    layer(input_dim, width, width, &mut params);
    for _ in 1..depth {
        layer(width, width, width, &mut params);
    }
    layer(width, 1, 1, &mut params);
    Ok(MlpFunction {
        input_dim,
        depth,
        width,
        init_seed: seed,
        output_clip,
        params,
    })
}

fn mlp_param_count(input_dim: usize, depth: usize, width: usize) -> usize {
    (input_dim * width + width) + (depth - 1) * (width * width + width) + width + 1
}

impl MlpFunction {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn output_clip(&self) -> Option<f64> {
        self.output_clip
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_dims(&self, l: usize) -> (usize, usize) {
        if l == 0 {
            (self.input_dim, self.width)
        } else {
            (self.width, self.width)
        }
    }

    /// Offset of hidden layer `l`'s weight block; biases follow weights.
    fn layer_offset(&self, l: usize) -> usize {
        if l == 0 {
            0
        } else {
            (self.input_dim * self.width + self.width)
                + (l - 1) * (self.width * self.width + self.width)
        }
    }

    fn out_offset(&self) -> usize {
        self.layer_offset(self.depth)
    }

    /// Forward pass storing post-activations for each hidden layer in
    /// `scratch.acts`; returns the pre-clip linear output.
    fn forward(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        assert_eq!(x.len(), self.input_dim, "mlp input dimension mismatch");
        let w = self.width;
        scratch.acts.resize(self.depth * w, 0.0);
        for l in 0..self.depth {
            let (fan_in, _) = self.layer_dims(l);
            let off = self.layer_offset(l);
            let bias_off = off + fan_in * w;
            let (prev_start, acts) = if l == 0 {
                (0, &mut scratch.acts[..])
            } else {
                ((l - 1) * w, &mut scratch.acts[..])
            };
            for k in 0..w {
                let row = &self.params[off + k * fan_in..off + (k + 1) * fan_in];
                let mut pre = self.params[bias_off + k];
                if l == 0 {
                    for (wi, xi) in row.iter().zip(x.iter()) {
                        pre += wi * xi;
                    }
                } else {
                    for j in 0..fan_in {
                        pre += row[j] * acts[prev_start + j];
                    }
                }
                acts[l * w + k] = if pre > 0.0 { pre } else { 0.0 };
            }
        }
        let off = self.out_offset();
        let mut out = self.params[off + w];
        let last = &scratch.acts[(self.depth - 1) * w..self.depth * w];
        for k in 0..w {
            out += self.params[off + k] * last[k];
        }
        out
    }

    fn clip(&self, z: f64) -> (f64, bool) {
        match self.output_clip {
            Some(b) if z > b => (b, true),
            Some(b) if z < -b => (-b, true),
            _ => (z, false),
        }
    }

    pub fn value_scratch(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        self.clip(self.forward(x, scratch)).0
    }

    /// Accumulates the gradient of `upstream * f(x)` into `grad`; returns
    /// the clipped value and whether the clip saturated (saturation means
    /// zero gradient, which callers report rather than treat as an error).
    pub fn eval_grad_accum(
        &self,
        x: &[f64],
        upstream: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> (f64, bool) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size mismatch");
        let z = self.forward(x, scratch);
        let (value, saturated) = self.clip(z);
        if saturated || upstream == 0.0 {
            return (value, saturated);
        }
        let w = self.width;
        let off = self.out_offset();
        grad[off + w] += upstream;
        scratch.deltas.resize(w, 0.0);
        scratch.buf.resize(w, 0.0);
        {
            let last = &scratch.acts[(self.depth - 1) * w..self.depth * w];
            for k in 0..w {
                grad[off + k] += upstream * last[k];
                scratch.deltas[k] = if last[k] > 0.0 {
                    upstream * self.params[off + k]
                } else {
                    0.0
                };
            }
        }
        for l in (0..self.depth).rev() {
            let (fan_in, _) = self.layer_dims(l);
            let loff = self.layer_offset(l);
            let bias_off = loff + fan_in * w;
            for k in 0..w {
                let d = scratch.deltas[k];
                if d == 0.0 {
                    continue;
                }
                grad[bias_off + k] += d;
                let row = loff + k * fan_in;
                if l == 0 {
                    for j in 0..fan_in {
                        grad[row + j] += d * x[j];
                    }
                } else {
                    let prev = &scratch.acts[(l - 1) * w..l * w];
                    for j in 0..fan_in {
                        grad[row + j] += d * prev[j];
                    }
                }
            }
            if l > 0 {
                let prev_start = (l - 1) * w;
                for j in 0..w {
                    let mut acc = 0.0;
                    if scratch.acts[prev_start + j] > 0.0 {
                        for k in 0..w {
                            acc += scratch.deltas[k] * self.params[loff + k * fan_in + j];
                        }
                    }
                    scratch.buf[j] = acc;
                }
                std::mem::swap(&mut scratch.deltas, &mut scratch.buf);
            }
        }
        (value, saturated)
    }

    /// Smallest |pre-activation| over all hidden units at `x`; inputs with
    /// a small value sit near a ReLU kink where finite differences of the
    /// gradient are unreliable.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        let mut scratch = Scratch::new();
        self.forward(x, &mut scratch);
        let w = self.width;
        let mut min_abs = f64::INFINITY;
        // Recompute pre-activations from stored post-activations: a zero
        // activation hides the magnitude of a negative pre-activation, so
        // redo the affine maps.
        let mut prev: Vec<f64> = x.to_vec();
        for l in 0..self.depth {
            let (fan_in, _) = self.layer_dims(l);
            let off = self.layer_offset(l);
            let bias_off = off + fan_in * w;
            let mut cur = vec![0.0; w];
            for k in 0..w {
                let mut pre = self.params[bias_off + k];
                for j in 0..fan_in {
                    pre += self.params[off + k * fan_in + j] * prev[j];
                }
                min_abs = min_abs.min(pre.abs());
                cur[k] = pre.max(0.0);
            }
            prev = cur;
        }
        min_abs
    }
}

/// `base(x1) + sum_j x2[j] * slope_j(x1)` where the input splits as
/// `x = [x1, x2]` and every component network shares the `x1` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartiallyLinearFunction {
    base: MlpFunction,
    slopes: Vec<MlpFunction>,
    x1_len: usize,
}

impl PartiallyLinearFunction {
    pub fn new(base: MlpFunction, slopes: Vec<MlpFunction>, x1_len: usize) -> Result<Self> {
        if base.input_dim() != x1_len || slopes.iter().any(|s| s.input_dim() != x1_len) {
            return Err(Error::config_one(
                "partially-linear components must take the x1 block as input".to_string(),
            ));
        }
        if slopes.is_empty() {
            return Err(Error::config_one(
                "partially-linear class needs at least one x2 column".to_string(),
            ));
        }
        Ok(PartiallyLinearFunction { base, slopes, x1_len })
    }

    pub fn input_dim(&self) -> usize {
        self.x1_len + self.slopes.len()
    }

    pub fn param_count(&self) -> usize {
        self.base.param_count() + self.slopes.iter().map(MlpFunction::param_count).sum::<usize>()
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        assert_eq!(x.len(), self.input_dim(), "partially-linear input dimension mismatch");
        x.split_at(self.x1_len)
    }

    pub fn value_scratch(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        let (x1, x2) = self.split(x);
        let mut v = self.base.value_scratch(x1, scratch);
        for (s, &c) in self.slopes.iter().zip(x2.iter()) {
            v += c * s.value_scratch(x1, scratch);
        }
        v
    }

    pub fn eval_grad_accum(
        &self,
        x: &[f64],
        upstream: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> (f64, bool) {
        let (x1, x2) = self.split(x);
        let mut off = self.base.param_count();
        let (mut v, mut saturated) =
            self.base
                .eval_grad_accum(x1, upstream, &mut grad[..off], scratch);
        for (s, &c) in self.slopes.iter().zip(x2.iter()) {
            let cnt = s.param_count();
            let (sv, ss) =
                s.eval_grad_accum(x1, upstream * c, &mut grad[off..off + cnt], scratch);
            v += c * sv;
            saturated |= ss;
            off += cnt;
        }
        (v, saturated)
    }
}

/// One feature map over a regressor vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum BasisFn {
    Constant,
    /// Product of `x[pos]^pow` over the listed terms.
    Monomial { terms: Vec<(usize, u32)> },
    /// 1 when `x[pos]` equals `value` exactly, else 0.
    Indicator { pos: usize, value: f64 },
}

impl BasisFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BasisFn::Constant => 1.0,
            BasisFn::Monomial { terms } => terms
                .iter()
                .map(|&(pos, pow)| x[pos].powi(pow as i32))
                .product(),
            BasisFn::Indicator { pos, value } => {
                if x[*pos] == *value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn max_pos(&self) -> usize {
        match self {
            BasisFn::Constant => 0,
            BasisFn::Monomial { terms } => {
                terms.iter().map(|&(p, _)| p + 1).max().unwrap_or(0)
            }
            BasisFn::Indicator { pos, .. } => pos + 1,
        }
    }
}

/// Linear combination of dictionary features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFunction {
    basis: Vec<BasisFn>,
    coeffs: Vec<f64>,
    min_input_dim: usize,
}

impl DictionaryFunction {
    pub fn new(basis: Vec<BasisFn>, coeffs: Vec<f64>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::config_one("dictionary basis is empty".to_string()));
        }
        if basis.len() != coeffs.len() {
            return Err(Error::config_one(format!(
                "dictionary has {} basis functions but {} coefficients",
                basis.len(),
                coeffs.len()
            )));
        }
        let min_input_dim = basis.iter().map(BasisFn::max_pos).max().unwrap_or(0);
        Ok(DictionaryFunction {
            basis,
            coeffs,
            min_input_dim,
        })
    }

    pub fn constant(c: f64) -> Self {
        DictionaryFunction {
            basis: vec![BasisFn::Constant],
            coeffs: vec![c],
            min_input_dim: 0,
        }
    }

    pub fn basis(&self) -> &[BasisFn] {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn param_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        assert!(x.len() >= self.min_input_dim, "dictionary input too short");
        for (o, b) in out.iter_mut().zip(self.basis.iter()) {
            *o = b.eval(x);
        }
    }

    pub fn value_at_x(&self, x: &[f64]) -> f64 {
        assert!(x.len() >= self.min_input_dim, "dictionary input too short");
        self.basis
            .iter()
            .zip(self.coeffs.iter())
            .map(|(b, c)| c * b.eval(x))
            .sum()
    }

    pub fn eval_grad_accum(&self, x: &[f64], upstream: f64, grad: &mut [f64]) -> f64 {
        assert!(x.len() >= self.min_input_dim, "dictionary input too short");
        let mut v = 0.0;
        for ((b, c), g) in self.basis.iter().zip(self.coeffs.iter()).zip(grad.iter_mut()) {
            let f = b.eval(x);
            v += c * f;
            *g += upstream * f;
        }
        v
    }
}

/// A trainable function of one of the three classes. Serialization is a
/// tagged JSON document carrying type, dimensions, seed, clip, and the
/// flat parameter vector; round-trips are bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamFunction {
    Mlp(MlpFunction),
    PartiallyLinear(PartiallyLinearFunction),
    Dictionary(DictionaryFunction),
}

impl ParamFunction {
    pub fn param_count(&self) -> usize {
        match self {
            ParamFunction::Mlp(f) => f.param_count(),
            ParamFunction::PartiallyLinear(f) => f.param_count(),
            ParamFunction::Dictionary(f) => f.param_count(),
        }
    }

    pub fn params_vec(&self) -> Vec<f64> {
        match self {
            ParamFunction::Mlp(f) => f.params.clone(),
            ParamFunction::PartiallyLinear(f) => {
                let mut v = f.base.params.clone();
                for s in &f.slopes {
                    v.extend_from_slice(&s.params);
                }
                v
            }
            ParamFunction::Dictionary(f) => f.coeffs.clone(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector size mismatch");
        match self {
            ParamFunction::Mlp(f) => f.params.copy_from_slice(params),
            ParamFunction::PartiallyLinear(f) => {
                let mut off = f.base.param_count();
                f.base.params.copy_from_slice(&params[..off]);
                for s in &mut f.slopes {
                    let cnt = s.param_count();
                    s.params.copy_from_slice(&params[off..off + cnt]);
                    off += cnt;
                }
            }
            ParamFunction::Dictionary(f) => f.coeffs.copy_from_slice(params),
        }
    }

    pub fn value_scratch(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        match self {
            ParamFunction::Mlp(f) => f.value_scratch(x, scratch),
            ParamFunction::PartiallyLinear(f) => f.value_scratch(x, scratch),
            ParamFunction::Dictionary(f) => f.value_at_x(x),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_scratch(x, &mut Scratch::new())
    }

    /// Accumulates `d(upstream * f(x))/d(params)` into `grad` and returns
    /// `(f(x), clip_saturated)`.
    pub fn eval_grad_accum(
        &self,
        x: &[f64],
        upstream: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> (f64, bool) {
        match self {
            ParamFunction::Mlp(f) => f.eval_grad_accum(x, upstream, grad, scratch),
            ParamFunction::PartiallyLinear(f) => f.eval_grad_accum(x, upstream, grad, scratch),
            ParamFunction::Dictionary(f) => (f.eval_grad_accum(x, upstream, grad), false),
        }
    }

    pub fn as_dictionary(&self) -> Option<&DictionaryFunction> {
        match self {
            ParamFunction::Dictionary(f) => Some(f),
            _ => None,
        }
    }
}

impl RegressorFn for ParamFunction {
    fn value_at(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_degree() -> Option<u32> {
    Some(2)
}

fn default_true() -> bool {
    true
}

/// Declarative class spec; `instantiate` produces a fresh function for a
/// given input dimension. Dictionary instantiation scans sample inputs to
/// build indicator features for discrete positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum FunctionClass {
    Mlp {
        depth: usize,
        width: usize,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
        #[serde(default)]
        output_clip: Option<f64>,
    },
    PartiallyLinear {
        x1_len: usize,
        depth: usize,
        width: usize,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
        #[serde(default)]
        output_clip: Option<f64>,
    },
    Dictionary {
        /// Include all monomials of total degree up to this bound
        /// (`None` drops the monomial block entirely, constant included
        /// at degree 0).
        #[serde(default = "default_degree")]
        monomial_degree: Option<u32>,
        /// Add an indicator feature per distinct value of every position
        /// that takes at most twelve distinct values in the sample.
        #[serde(default = "default_true")]
        indicators: bool,
        #[serde(default)]
        init_coeffs: Option<Vec<f64>>,
    },
}

/// Distinct-value cap above which a position is treated as continuous.
const MAX_INDICATOR_VALUES: usize = 12;

impl FunctionClass {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            FunctionClass::Mlp {
                depth,
                width,
                init_scale,
                output_clip,
            }
            | FunctionClass::PartiallyLinear {
                depth,
                width,
                init_scale,
                output_clip,
                ..
            } => {
                if *depth < 1 || *width < 1 {
                    out.push(format!("mlp depth/width must be >= 1, got {depth}/{width}"));
                }
                if !(*init_scale >= 0.0) || !init_scale.is_finite() {
                    out.push(format!("init_scale must be finite and >= 0, got {init_scale}"));
                }
                if let Some(b) = output_clip {
                    if !(*b > 0.0) {
                        out.push(format!("output_clip must be positive, got {b}"));
                    }
                }
                if let FunctionClass::PartiallyLinear { x1_len, .. } = self {
                    if *x1_len < 1 {
                        out.push("partially_linear x1_len must be >= 1".to_string());
                    }
                }
            }
            FunctionClass::Dictionary {
                monomial_degree,
                indicators,
                ..
            } => {
                if let Some(d) = monomial_degree {
                    if *d > 8 {
                        out.push(format!("dictionary monomial_degree {d} too large (max 8)"));
                    }
                } else if !indicators {
                    out.push("dictionary with no monomials and no indicators is empty".to_string());
                }
            }
        }
        out
    }

    pub fn instantiate(
        &self,
        input_dim: usize,
        sample_inputs: &[Vec<f64>],
        seed: u64,
    ) -> Result<ParamFunction> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::config(v));
        }
        match self {
            FunctionClass::Mlp {
                depth,
                width,
                init_scale,
                output_clip,
            } => Ok(ParamFunction::Mlp(init_mlp(
                input_dim,
                *depth,
                *width,
                seed,
                *init_scale,
                *output_clip,
            )?)),
            FunctionClass::PartiallyLinear {
                x1_len,
                depth,
                width,
                init_scale,
                output_clip,
            } => {
                if *x1_len >= input_dim {
                    return Err(Error::config_one(format!(
                        "partially_linear x1_len={x1_len} leaves no x2 columns (input_dim={input_dim})"
                    )));
                }
                let base = init_mlp(*x1_len, *depth, *width, seed, *init_scale, *output_clip)?;
                let slopes = (0..input_dim - x1_len)
                    .map(|j| {
                        init_mlp(
                            *x1_len,
                            *depth,
                            *width,
                            crate::data::derive_seed(seed, &[1, j as u64]),
                            *init_scale,
                            *output_clip,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ParamFunction::PartiallyLinear(PartiallyLinearFunction::new(
                    base, slopes, *x1_len,
                )?))
            }
            FunctionClass::Dictionary {
                monomial_degree,
                indicators,
                init_coeffs,
            } => {
                let mut basis = Vec::new();
                if let Some(deg) = monomial_degree {
                    basis.push(BasisFn::Constant);
                    for d in 1..=*deg {
                        push_monomials(&mut basis, input_dim, d);
                    }
                }
                if *indicators {
                    for pos in 0..input_dim {
                        if let Some(values) = distinct_values(sample_inputs, pos) {
                            for value in values {
                                basis.push(BasisFn::Indicator { pos, value });
                            }
                        }
                    }
                }
                if basis.is_empty() {
                    return Err(Error::config_one(
                        "dictionary instantiation produced no features; supply sample inputs with discrete positions or enable monomials".to_string(),
                    ));
                }
                let coeffs = match init_coeffs {
                    Some(c) => {
                        if c.len() != basis.len() {
                            return Err(Error::config_one(format!(
                                "init_coeffs has {} entries but the dictionary has {} features",
                                c.len(),
                                basis.len()
                            )));
                        }
                        c.clone()
                    }
                    None => vec![0.0; basis.len()],
                };
                Ok(ParamFunction::Dictionary(DictionaryFunction::new(basis, coeffs)?))
            }
        }
    }
}

/// All monomials of total degree exactly `degree` over `dim` positions,
/// in lexicographic position order.
fn push_monomials(basis: &mut Vec<BasisFn>, dim: usize, degree: u32) {
    fn rec(basis: &mut Vec<BasisFn>, dim: usize, start: usize, left: u32, cur: &mut Vec<(usize, u32)>) {
        if left == 0 {
            basis.push(BasisFn::Monomial { terms: cur.clone() });
            return;
        }
        for pos in start..dim {
            match cur.last_mut() {
                Some(last) if last.0 == pos => last.1 += 1,
                _ => cur.push((pos, 1)),
            }
            rec(basis, dim, pos, left - 1, cur);
            match cur.last_mut() {
                Some(last) if last.1 > 1 => last.1 -= 1,
                _ => {
                    cur.pop();
                }
            }
        }
    }
    rec(basis, dim, 0, degree, &mut Vec::new());
}

fn distinct_values(sample_inputs: &[Vec<f64>], pos: usize) -> Option<Vec<f64>> {
    let mut values: Vec<f64> = Vec::new();
    for row in sample_inputs {
        let v = row[pos];
        if !values.iter().any(|&u| u == v) {
            if values.len() >= MAX_INDICATOR_VALUES {
                return None;
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_shapes_and_count() {
        let f = init_mlp(2, 2, 8, 0, 1.0, None).unwrap();
        assert_eq!(f.param_count(), (2 * 8 + 8) + (8 * 8 + 8) + 8 + 1);
    }

    #[test]
    fn zero_scale_gives_zero_function() {
        let f = init_mlp(3, 2, 4, 5, 0.0, None).unwrap();
        assert_eq!(f.value_scratch(&[1.0, -2.0, 0.5], &mut Scratch::new()), 0.0);
    }

    #[test]
    fn init_deterministic_per_seed() {
        let a = init_mlp(2, 2, 8, 42, 1.0, None).unwrap();
        let b = init_mlp(2, 2, 8, 42, 1.0, None).unwrap();
        assert_eq!(a.params, b.params);
        let c = init_mlp(2, 2, 8, 43, 1.0, None).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn bad_dims_rejected() {
        assert!(init_mlp(0, 1, 1, 0, 1.0, None).is_err());
        assert!(init_mlp(1, 0, 1, 0, 1.0, None).is_err());
        assert!(init_mlp(1, 1, 0, 0, 1.0, None).is_err());
    }

    /// Width-2 single-hidden-layer net computing relu(x) - relu(-x) = x.
    fn identity_net() -> ParamFunction {
        let mut f = ParamFunction::Mlp(init_mlp(1, 1, 2, 0, 0.0, None).unwrap());
        // layout: W0 (2x1), b0 (2), w_out (2), b_out (1)
        f.set_params(&[1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        f
    }

    #[test]
    fn relu_identity_construction() {
        let f = identity_net();
        assert_eq!(f.value(&[3.0]), 3.0);
        assert_eq!(f.value(&[-3.0]), -3.0);
    }

    #[test]
    fn partially_linear_formula() {
        let mut base = init_mlp(1, 1, 2, 0, 0.0, None).unwrap();
        base.params[6] = 1.0; // output bias: base == 1
        let mut slope = init_mlp(1, 1, 2, 0, 0.0, None).unwrap();
        slope.params[6] = 2.0; // slope == 2
        let f = ParamFunction::PartiallyLinear(
            PartiallyLinearFunction::new(base, vec![slope], 1).unwrap(),
        );
        assert_eq!(f.value(&[0.3, 5.0]), 11.0);
    }

    #[test]
    fn zero_net_grad_hits_only_output_bias() {
        let f = ParamFunction::Mlp(init_mlp(2, 2, 3, 0, 0.0, None).unwrap());
        let mut grad = vec![0.0; f.param_count()];
        let (v, sat) = f.eval_grad_accum(&[1.0, 2.0], 1.0, &mut grad, &mut Scratch::new());
        assert_eq!(v, 0.0);
        assert!(!sat);
        let bias_idx = grad.len() - 1;
        for (i, g) in grad.iter().enumerate() {
            if i == bias_idx {
                assert_eq!(*g, 1.0);
            } else {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn zero_upstream_zero_grad() {
        let f = ParamFunction::Mlp(init_mlp(2, 2, 4, 9, 1.0, None).unwrap());
        let mut grad = vec![0.0; f.param_count()];
        f.eval_grad_accum(&[0.4, -0.7], 0.0, &mut grad, &mut Scratch::new());
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clip_saturation_reports_and_zeroes_grad() {
        let mut f = ParamFunction::Mlp(init_mlp(1, 1, 2, 0, 0.0, Some(1.0)).unwrap());
        let mut p = f.params_vec();
        *p.last_mut().unwrap() = 3.0; // output bias pushes past the clip
        f.set_params(&p);
        let mut grad = vec![0.0; f.param_count()];
        let (v, sat) = f.eval_grad_accum(&[0.0], 1.0, &mut grad, &mut Scratch::new());
        assert_eq!(v, 1.0);
        assert!(sat);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    fn central_diff(f: &mut ParamFunction, x: &[f64], i: usize, h: f64) -> f64 {
        let mut p = f.params_vec();
        let orig = p[i];
        p[i] = orig + h;
        f.set_params(&p);
        let up = f.value(x);
        p[i] = orig - h;
        f.set_params(&p);
        let down = f.value(x);
        p[i] = orig;
        f.set_params(&p);
        (up - down) / (2.0 * h)
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 12 {
            let dims = 1 + (rng.gen::<u64>() % 3) as usize;
            let depth = 1 + (rng.gen::<u64>() % 2) as usize;
            let width = 2 + (rng.gen::<u64>() % 4) as usize;
            let mut f = ParamFunction::Mlp(
                init_mlp(dims, depth, width, rng.gen(), 1.0, None).unwrap(),
            );
            let x: Vec<f64> = (0..dims).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if let ParamFunction::Mlp(m) = &f {
                if m.min_abs_preactivation(&x) <= 1e-3 {
                    continue;
                }
            }
            let mut grad = vec![0.0; f.param_count()];
            f.eval_grad_accum(&x, 1.0, &mut grad, &mut Scratch::new());
            for i in 0..grad.len() {
                let fd = central_diff(&mut f, &x, i, 1e-5);
                let denom = grad[i].abs().max(fd.abs());
                if denom < 1e-10 {
                    continue;
                }
                let rel = (grad[i] - fd).abs() / denom;
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
            }
            checked += 1;
        }
    }

    #[test]
    fn partially_linear_grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = init_mlp(2, 1, 3, 1, 1.0, None).unwrap();
        let slopes = vec![
            init_mlp(2, 1, 3, 2, 1.0, None).unwrap(),
            init_mlp(2, 1, 3, 3, 1.0, None).unwrap(),
        ];
        let mut f = ParamFunction::PartiallyLinear(
            PartiallyLinearFunction::new(base, slopes, 2).unwrap(),
        );
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..1.5)).collect();
        let mut grad = vec![0.0; f.param_count()];
        f.eval_grad_accum(&x, 1.3, &mut grad, &mut Scratch::new());
        for i in 0..grad.len() {
            let fd = 1.3 * central_diff(&mut f, &x, i, 1e-5);
            let denom = grad[i].abs().max(fd.abs());
            if denom < 1e-8 {
                continue;
            }
            assert!((grad[i] - fd).abs() / denom < 1e-4, "param {i}");
        }
    }

    #[test]
    fn first_layer_positive_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = init_mlp(3, 2, 4, 17, 1.0, None).unwrap();
        let mut scaled = f.clone();
        let c = 2.5;
        let first = 3 * 4 + 4;
        for p in scaled.params[..first].iter_mut() {
            *p *= c;
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut s1 = Scratch::new();
            let mut s2 = Scratch::new();
            f.forward(&x, &mut s1);
            scaled.forward(&x, &mut s2);
            for k in 0..4 {
                let (a, b) = (s1.acts[k], s2.acts[k]);
                assert!((b - c * a).abs() <= 1e-12 * (1.0 + a.abs()), "unit {k}: {b} vs {}", c * a);
            }
        }
    }

    #[test]
    fn dictionary_instantiation_builds_expected_features() {
        let class = FunctionClass::Dictionary {
            monomial_degree: Some(2),
            indicators: true,
            init_coeffs: None,
        };
        let inputs = vec![vec![0.0, 1.5], vec![1.0, 2.5], vec![0.0, 3.5], vec![1.0, 4.5]];
        // x[1] takes 4 distinct values here, still under the cap, so it
        // gets indicators too.
        let f = class.instantiate(2, &inputs, 0).unwrap();
        let d = f.as_dictionary().unwrap();
        // 1, x0, x1, x0^2, x0*x1, x1^2, then 2 + 4 indicators
        assert_eq!(d.basis().len(), 6 + 2 + 4);
        let mut feats = vec![0.0; d.basis().len()];
        d.features_into(&[1.0, 2.5], &mut feats);
        assert_eq!(&feats[..6], &[1.0, 1.0, 2.5, 1.0, 2.5, 6.25]);
        assert_eq!(feats[6], 0.0); // x0 == 0 indicator
        assert_eq!(feats[7], 1.0); // x0 == 1 indicator
    }

    #[test]
    fn continuous_position_gets_no_indicators() {
        let class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: None,
        };
        let inputs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.37, (i % 2) as f64]).collect();
        let f = class.instantiate(2, &inputs, 0).unwrap();
        let d = f.as_dictionary().unwrap();
        assert_eq!(d.basis().len(), 2);
        assert!(matches!(d.basis()[0], BasisFn::Indicator { pos: 1, .. }));
    }

    #[test]
    fn oracle_init_coeffs_respected() {
        let class = FunctionClass::Dictionary {
            monomial_degree: None,
            indicators: true,
            init_coeffs: Some(vec![1.0, 2.0]),
        };
        let inputs = vec![vec![0.0], vec![1.0]];
        let f = class.instantiate(1, &inputs, 0).unwrap();
        assert_eq!(f.value(&[0.0]), 1.0);
        assert_eq!(f.value(&[1.0]), 2.0);
    }

    proptest! {
        #[test]
        fn serde_round_trip_is_bit_exact(seed in 0u64..500, dims in 1usize..4, depth in 1usize..3, width in 1usize..5) {
            let f = ParamFunction::Mlp(init_mlp(dims, depth, width, seed, 1.0, Some(2.0)).unwrap());
            let json = serde_json::to_string(&f).unwrap();
            let back: ParamFunction = serde_json::from_str(&json).unwrap();
            let (a, b) = (f.params_vec(), back.params_vec());
            prop_assert_eq!(a.len(), b.len());
            for i in 0..a.len() {
                prop_assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
            prop_assert_eq!(f, back);
        }

        #[test]
        fn dictionary_serde_round_trip(coeffs in proptest::collection::vec(-1e6f64..1e6, 3)) {
            let basis = vec![
                BasisFn::Constant,
                BasisFn::Monomial { terms: vec![(0, 2)] },
                BasisFn::Indicator { pos: 0, value: 1.0 },
            ];
            let f = ParamFunction::Dictionary(DictionaryFunction::new(basis, coeffs).unwrap());
            let json = serde_json::to_string(&f).unwrap();
            let back: ParamFunction = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(f, back);
        }
    }
}

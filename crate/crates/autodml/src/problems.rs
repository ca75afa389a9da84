//! Statistical problem encoding: residual families with analytic
//! derivatives, the target functional m(w, gamma), and Gateaux
//! derivatives for multi-regression functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::RegressorFn;

/// Numerically stable logistic function.
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualFamily {
    Linear,
    Ipw,
    GlmLogistic,
}

/// One conditional-moment residual rho_j(w, g) with its regressor block.
/// `v_rho` is the exact derivative of rho in g, always nonpositive here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub family: ResidualFamily,
    /// Columns forming the input x_j of gamma_j, in order.
    pub regressors: Vec<usize>,
    #[serde(default)]
    pub outcome: Option<usize>,
    #[serde(default)]
    pub indicator: Option<usize>,
}

impl ResidualSpec {
    pub fn violations(&self, width: usize, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.regressors.is_empty() {
            out.push(format!("{label}: regressor block is empty"));
        }
        for &c in &self.regressors {
            if c >= width {
                out.push(format!("{label}: regressor column {c} out of range (width {width})"));
            }
        }
        match self.family {
            ResidualFamily::Linear | ResidualFamily::GlmLogistic => match self.outcome {
                None => out.push(format!("{label}: family needs an outcome column")),
                Some(c) if c >= width => {
                    out.push(format!("{label}: outcome column {c} out of range"))
                }
                _ => {}
            },
            ResidualFamily::Ipw => match self.indicator {
                None => out.push(format!("{label}: ipw family needs an indicator column")),
                Some(c) if c >= width => {
                    out.push(format!("{label}: indicator column {c} out of range"))
                }
                _ => {}
            },
        }
        out
    }

    pub fn x_into(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.regressors.iter().map(|&c| row[c]));
    }

    pub fn x_vec(&self, row: &[f64]) -> Vec<f64> {
        self.regressors.iter().map(|&c| row[c]).collect()
    }

    pub fn rho(&self, row: &[f64], g: f64) -> f64 {
        match self.family {
            ResidualFamily::Linear => row[self.outcome.expect("outcome")] - g,
            ResidualFamily::Ipw => 1.0 - row[self.indicator.expect("indicator")] * g,
            ResidualFamily::GlmLogistic => row[self.outcome.expect("outcome")] - expit(g),
        }
    }

    /// d rho(w, g + a) / d a at a = 0.
    pub fn v_rho(&self, row: &[f64], g: f64) -> f64 {
        match self.family {
            ResidualFamily::Linear => -1.0,
            ResidualFamily::Ipw => -row[self.indicator.expect("indicator")],
            ResidualFamily::GlmLogistic => {
                let p = expit(g);
                -p * (1.0 - p)
            }
        }
    }
}

/// Analytic score density for the average-derivative functional; S is the
/// negative derivative of log omega.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDensity {
    Gaussian { mean: f64, sd: f64 },
    Uniform,
}

impl ScoreDensity {
    pub fn score(&self, u: f64) -> f64 {
        match self {
            ScoreDensity::Gaussian { mean, sd } => (u - mean) / (sd * sd),
            ScoreDensity::Uniform => 0.0,
        }
    }

    pub fn pdf(&self, u: f64) -> Option<f64> {
        match self {
            ScoreDensity::Gaussian { mean, sd } => {
                let z = (u - mean) / sd;
                Some((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            }
            ScoreDensity::Uniform => None,
        }
    }
}

/// The object of interest theta = E[m(W, gamma)]. For every kind except
/// `MultiProduct` the functional is linear in the single regression; the
/// multi-product kind is bilinear over J = 2 regressions.
///
/// Input conventions: `Ate` and `AvgDerivative` treat the first entry of
/// the regressor block as the variable being switched or differentiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// m = S(u) * gamma(u, rest); u comes from an independent simulated
    /// draw column and replaces the first regressor slot.
    AvgDerivative { score: ScoreDensity, draw_col: usize },
    /// m = gamma(1, rest) - gamma(0, rest).
    Ate,
    /// m = d * u * gamma(x).
    IpwMean { aux_col: usize },
    /// m = weight * gamma(x); weight 1 when no column is given.
    PluginLinear {
        #[serde(default)]
        weight_col: Option<usize>,
    },
    /// m = gamma_1(x_1) * gamma_2(x_2), J = 2.
    MultiProduct,
}

impl Functional {
    pub fn expected_j(&self) -> usize {
        match self {
            Functional::MultiProduct => 2,
            _ => 1,
        }
    }
}

/// The full problem without any ground-truth attachments: J residual
/// specs and the functional. Learners consume this type alone, so the
/// debiasing function can never peek at an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemCore {
    pub residuals: Vec<ResidualSpec>,
    pub functional: Functional,
}

/// One linearization term: m (or its Gateaux derivative in direction
/// alpha_j) equals the sum of `coeff * alpha_j(input)` over the terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTerm {
    pub coeff: f64,
    pub input: Vec<f64>,
}

impl ProblemCore {
    pub fn j_count(&self) -> usize {
        self.residuals.len()
    }

    pub fn violations(&self, width: usize) -> Vec<String> {
        let mut out = Vec::new();
        let expected = self.functional.expected_j();
        if self.residuals.len() != expected {
            out.push(format!(
                "functional expects {expected} regression(s), got {}",
                self.residuals.len()
            ));
        }
        for (j, r) in self.residuals.iter().enumerate() {
            out.extend(r.violations(width, &format!("regression {j}")));
        }
        match &self.functional {
            Functional::AvgDerivative { draw_col, score } => {
                if *draw_col >= width {
                    out.push(format!("avg_derivative draw column {draw_col} out of range"));
                }
                if let ScoreDensity::Gaussian { sd, .. } = score {
                    if !(*sd > 0.0) {
                        out.push(format!("avg_derivative gaussian sd must be positive, got {sd}"));
                    }
                }
            }
            Functional::IpwMean { aux_col } => {
                if *aux_col >= width {
                    out.push(format!("ipw_mean auxiliary column {aux_col} out of range"));
                }
                if let Some(r) = self.residuals.first() {
                    if r.indicator.is_none() {
                        out.push("ipw_mean requires the residual's indicator column".to_string());
                    }
                }
            }
            Functional::PluginLinear { weight_col: Some(c) } if *c >= width => {
                out.push(format!("plugin_linear weight column {c} out of range"));
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let v = self.violations(width);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v))
        }
    }

    /// m(w, gamma) for fitted candidates.
    pub fn m_eval(&self, row: &[f64], gammas: &[&dyn RegressorFn]) -> f64 {
        assert_eq!(gammas.len(), self.j_count(), "gamma count mismatch");
        match &self.functional {
            Functional::MultiProduct => {
                let x1 = self.residuals[0].x_vec(row);
                let x2 = self.residuals[1].x_vec(row);
                gammas[0].value_at(&x1) * gammas[1].value_at(&x2)
            }
            _ => self
                .linear_terms(row, 0)
                .iter()
                .map(|t| t.coeff * gammas[0].value_at(&t.input))
                .sum(),
        }
    }

    /// Linearization of m in the single regression (J = 1 kinds only).
    /// These terms drive both the Riesz loss and the analytic Gateaux
    /// derivative, so the two code paths share one arithmetic.
    pub fn linear_terms(&self, row: &[f64], j: usize) -> Vec<LinearTerm> {
        assert_eq!(j, 0, "linear_terms is for single-regression functionals");
        let r = &self.residuals[0];
        match &self.functional {
            Functional::AvgDerivative { score, draw_col } => {
                let u = row[*draw_col];
                let mut input = r.x_vec(row);
                input[0] = u;
                vec![LinearTerm {
                    coeff: score.score(u),
                    input,
                }]
            }
            Functional::Ate => {
                let mut treated = r.x_vec(row);
                treated[0] = 1.0;
                let mut control = r.x_vec(row);
                control[0] = 0.0;
                vec![
                    LinearTerm { coeff: 1.0, input: treated },
                    LinearTerm { coeff: -1.0, input: control },
                ]
            }
            Functional::IpwMean { aux_col } => {
                let d = row[r.indicator.expect("indicator")];
                vec![LinearTerm {
                    coeff: d * row[*aux_col],
                    input: r.x_vec(row),
                }]
            }
            Functional::PluginLinear { weight_col } => vec![LinearTerm {
                coeff: weight_col.map_or(1.0, |c| row[c]),
                input: r.x_vec(row),
            }],
            Functional::MultiProduct => {
                unreachable!("multi_product terms need fitted gammas; use gateaux_terms")
            }
        }
    }

    /// Linearization of the Gateaux derivative D_j: for functionals linear
    /// in gamma_j this is just `linear_terms`; for the bilinear product it
    /// fixes the other regression at its fitted value.
    pub fn gateaux_terms(
        &self,
        row: &[f64],
        j: usize,
        gammas: &[&dyn RegressorFn],
    ) -> Vec<LinearTerm> {
        match &self.functional {
            Functional::MultiProduct => {
                assert!(j < 2, "multi_product has two regressions");
                let other = 1 - j;
                let x_other = self.residuals[other].x_vec(row);
                vec![LinearTerm {
                    coeff: gammas[other].value_at(&x_other),
                    input: self.residuals[j].x_vec(row),
                }]
            }
            _ => self.linear_terms(row, j),
        }
    }

    /// Analytic Gateaux derivative of m at gammas in direction alpha_j:
    /// evaluates m with gamma_j replaced by alpha_j.
    pub fn gateaux(
        &self,
        row: &[f64],
        gammas: &[&dyn RegressorFn],
        j: usize,
        alpha_j: &dyn RegressorFn,
    ) -> f64 {
        self.gateaux_terms(row, j, gammas)
            .iter()
            .map(|t| t.coeff * alpha_j.value_at(&t.input))
            .sum()
    }

    /// Central-difference Gateaux derivative,
    /// `[m(gamma + tau e_j alpha) - m(gamma - tau e_j alpha)] / (2 tau)`.
    pub fn gateaux_numeric(
        &self,
        row: &[f64],
        gammas: &[&dyn RegressorFn],
        j: usize,
        alpha_j: &dyn RegressorFn,
        step: f64,
    ) -> f64 {
        assert!(step > 0.0, "gateaux step must be positive");
        assert!(j < self.j_count(), "regression index out of range");
        let plus = ShiftedFn { base: gammas[j], dir: alpha_j, tau: step };
        let minus = ShiftedFn { base: gammas[j], dir: alpha_j, tau: -step };
        let mut shifted: Vec<&dyn RegressorFn> = gammas.to_vec();
        shifted[j] = &plus;
        let up = self.m_eval(row, &shifted);
        shifted[j] = &minus;
        let down = self.m_eval(row, &shifted);
        (up - down) / (2.0 * step)
    }

    /// Residual derivative at the fitted regression, `v_rho(w, gamma_j(x_j))`.
    /// Only the logistic family actually evaluates gamma_j.
    pub fn vrho_at(&self, row: &[f64], j: usize, gamma_j: &dyn RegressorFn) -> f64 {
        let r = &self.residuals[j];
        match r.family {
            ResidualFamily::Linear | ResidualFamily::Ipw => r.v_rho(row, 0.0),
            ResidualFamily::GlmLogistic => {
                let g = gamma_j.value_at(&r.x_vec(row));
                r.v_rho(row, g)
            }
        }
    }
}

/// `base + tau * dir` as a function of the regressor vector.
pub struct ShiftedFn<'a> {
    pub base: &'a dyn RegressorFn,
    pub dir: &'a dyn RegressorFn,
    pub tau: f64,
}

impl RegressorFn for ShiftedFn<'_> {
    fn value_at(&self, x: &[f64]) -> f64 {
        self.base.value_at(x) + self.tau * self.dir.value_at(x)
    }
}

/// A function tabulated on a finite support, with point weights (the pmf
/// of the support under the sampling design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnTable {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FnTable {
    pub fn lookup(&self, x: &[f64]) -> Option<f64> {
        self.points
            .iter()
            .position(|p| p.as_slice() == x)
            .map(|i| self.values[i])
    }

    /// Weighted L2 distance between this table and another function.
    pub fn l2_distance(&self, f: &dyn RegressorFn) -> f64 {
        self.points
            .iter()
            .zip(self.values.iter())
            .zip(self.weights.iter())
            .map(|((p, v), w)| {
                let d = f.value_at(p) - v;
                w * d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl RegressorFn for FnTable {
    fn value_at(&self, x: &[f64]) -> f64 {
        self.lookup(x)
            .unwrap_or_else(|| panic!("point {x:?} not in tabulated support"))
    }
}

/// Nuisance inputs for the closed-form Riesz representer of each
/// functional kind.
pub enum VmNuisances<'a> {
    /// Propensity pi0 tabulated on the covariate part of the support
    /// (the regressor block minus its leading indicator slot).
    Ate { pi0: &'a FnTable },
    /// P(x) = Pr(D=1 | x) and the conditional mean of U among D = 1.
    IpwMean { p: &'a FnTable, ubar: &'a FnTable },
    /// Conditional density f(d | z) tabulated on the support points.
    AvgDerivative { density: &'a FnTable },
}

/// Tabulates the Riesz representer v_m on a discrete support:
/// ate -> d/pi0 - (1-d)/(1-pi0); ipw_mean -> P * Ubar;
/// avg_derivative -> omega(d) S(d) / f(d|z).
///
/// Probabilities sitting at 0 or 1 (and zero densities) make the
/// representer unbounded, except that P = 1 is harmless for ipw_mean
/// where P never appears in a denominator.
pub fn oracle_vm(
    functional: &Functional,
    support: &[(Vec<f64>, f64)],
    nuisances: &VmNuisances,
) -> Result<FnTable> {
    let mut table = FnTable {
        points: Vec::with_capacity(support.len()),
        values: Vec::with_capacity(support.len()),
        weights: Vec::with_capacity(support.len()),
    };
    for (x, w) in support {
        let v = match (functional, nuisances) {
            (Functional::Ate, VmNuisances::Ate { pi0 }) => {
                let z = &x[1..];
                let pi = pi0.value_at(z);
                if pi <= 0.0 || pi >= 1.0 {
                    return Err(Error::numerical(format!(
                        "ate representer unbounded: pi0 = {pi} at z = {z:?}"
                    )));
                }
                let d = x[0];
                d / pi - (1.0 - d) / (1.0 - pi)
            }
            (Functional::IpwMean { .. }, VmNuisances::IpwMean { p, ubar }) => {
                let pv = p.value_at(x);
                if pv <= 0.0 {
                    return Err(Error::numerical(format!(
                        "ipw representer needs P > 0, got {pv} at x = {x:?}"
                    )));
                }
                pv * ubar.value_at(x)
            }
            (Functional::AvgDerivative { score, .. }, VmNuisances::AvgDerivative { density }) => {
                let d = x[0];
                let s = score.score(d);
                if s == 0.0 {
                    0.0
                } else {
                    let f = density.value_at(x);
                    if f <= 0.0 {
                        return Err(Error::numerical(format!(
                            "avg_derivative representer needs f(d|z) > 0, got {f} at {x:?}"
                        )));
                    }
                    let omega = score
                        .pdf(d)
                        .ok_or_else(|| Error::numerical("score density has no pdf".to_string()))?;
                    omega * s / f
                }
            }
            _ => {
                return Err(Error::config_one(
                    "nuisance inputs do not match the functional kind".to_string(),
                ))
            }
        };
        table.points.push(x.clone());
        table.values.push(v);
        table.weights.push(*w);
    }
    Ok(table)
}

//! Synthetic designs with known ground truth.
//!
//! Discrete designs enumerate their support exactly, which turns every
//! population quantity (true regressions, representers, debiasing
//! functions, the target itself) into a finite weighted sum. The one
//! continuous design keeps a linear truth so the target is analytic, with
//! quadrature oracles as an independent numeric route.

pub mod monte_carlo;
pub mod quadrature;

pub use monte_carlo::{
    convergence_sweep, monte_carlo, write_replications_csv, write_sweep_csv, McConfig, McSummary,
    RepRecord, SweepRow,
};

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, Dataset, DrawDensity, DrawSpec, Schema};
use crate::error::{Error, Result};
use crate::funcspace::RegressorFn;
use crate::problems::{
    expit, FnTable, Functional, ProblemCore, ResidualFamily, ResidualSpec, ScoreDensity,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CellLaw {
    PointMass { value: f64 },
    Bernoulli { p: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl CellLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            CellLaw::PointMass { value } => value,
            CellLaw::Bernoulli { p } => p,
            CellLaw::Gaussian { mean, .. } => mean,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CellLaw::PointMass { value } => value,
            CellLaw::Bernoulli { p } => f64::from(rng.gen::<f64>() < p),
            CellLaw::Gaussian { mean, sd } => {
                mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
        }
    }

    fn violations(&self, label: &str) -> Vec<String> {
        match *self {
            CellLaw::PointMass { value } if !value.is_finite() => {
                vec![format!("{label}: point mass must be finite")]
            }
            CellLaw::Bernoulli { p } if !(p > 0.0 && p < 1.0) => {
                vec![format!("{label}: Bernoulli p must lie in (0, 1), got {p}")]
            }
            CellLaw::Gaussian { mean, sd } if !(sd > 0.0) || !mean.is_finite() => {
                vec![format!("{label}: Gaussian needs finite mean and sd > 0")]
            }
            _ => Vec::new(),
        }
    }
}

/// One cell of the finite design: a probability and an independent law
/// per column. Dependence between columns is expressed by enumerating
/// the dependent coordinates into the support itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub prob: f64,
    pub cells: Vec<CellLaw>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub name: String,
    pub columns: Vec<String>,
    pub schema: Schema,
    pub problem: ProblemCore,
    pub points: Vec<SupportPoint>,
}

/// Exact population tables for a discrete design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleBundle {
    pub gamma0: Vec<FnTable>,
    pub v_m: Vec<FnTable>,
    pub alpha0: Vec<FnTable>,
    pub theta0: f64,
}

impl OracleBundle {
    /// The target recovered through the representer route
    /// `E[v_m(X_j) gamma_j0(X_j)]`; agrees with `theta0` (the moment
    /// route) on a correct bundle.
    pub fn theta0_via_representer(&self, j: usize) -> f64 {
        self.v_m[j]
            .values
            .iter()
            .zip(self.gamma0[j].values.iter())
            .zip(self.v_m[j].weights.iter())
            .map(|((v, g), w)| w * v * g)
            .sum()
    }
}

impl DiscreteDgp {
    pub fn violations(&self) -> Vec<String> {
        let width = self.columns.len();
        let mut out = Vec::new();
        if self.points.is_empty() {
            out.push("design has no support points".to_string());
        }
        let total: f64 = self.points.iter().map(|p| p.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            out.push(format!("support probabilities sum to {total}, not 1"));
        }
        for (i, pt) in self.points.iter().enumerate() {
            if !(pt.prob > 0.0) {
                out.push(format!("support point {i}: probability must be positive"));
            }
            if pt.cells.len() != width {
                out.push(format!(
                    "support point {i}: {} cells for {width} columns",
                    pt.cells.len()
                ));
            }
            for (c, cell) in pt.cells.iter().enumerate() {
                out.extend(cell.violations(&format!("support point {i}, column {c}")));
            }
        }
        out.extend(self.schema.violations(width, &self.columns));
        out.extend(self.problem.violations(width));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v))
        }
    }

    /// I.i.d. draws from the design, deterministic per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        if n < 1 {
            return Err(Error::config_one("sample size must be at least 1".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.gen::<f64>();
            let mut chosen = self.points.len() - 1;
            for (i, pt) in self.points.iter().enumerate() {
                if u < pt.prob {
                    chosen = i;
                    break;
                }
                u -= pt.prob;
            }
            rows.push(
                self.points[chosen]
                    .cells
                    .iter()
                    .map(|c| c.sample(&mut rng))
                    .collect(),
            );
        }
        Dataset::from_rows(self.columns.clone(), rows, self.schema.clone())
    }

    /// The support as full data rows with every randomized coordinate at
    /// its conditional mean. Expectations of the moment function over the
    /// design equal weighted sums over these rows because each moment
    /// piece is multilinear in the replaced coordinates.
    pub fn population_rows(&self) -> Vec<(Vec<f64>, f64)> {
        self.points
            .iter()
            .map(|pt| (pt.cells.iter().map(CellLaw::mean).collect(), pt.prob))
            .collect()
    }

    /// Exact population tables: true regressions per residual family,
    /// representers per functional, debiasing functions as their ratio,
    /// and the target by enumeration of the moment.
    pub fn enumerate_oracles(&self) -> Result<OracleBundle> {
        self.validate()?;
        let pts = self.population_rows();
        let j_count = self.problem.j_count();

        // Per-regression support of x_j with conditional means of the
        // columns each family and functional needs.
        let mut gamma0 = Vec::with_capacity(j_count);
        let mut neg_vbar = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let spec = &self.problem.residuals[j];
            let groups = group_by_x(&pts, spec);
            let mut values = Vec::with_capacity(groups.len());
            let mut weights = Vec::with_capacity(groups.len());
            let mut points = Vec::with_capacity(groups.len());
            let mut vbar = Vec::with_capacity(groups.len());
            for g in &groups {
                let (value, w) = match spec.family {
                    ResidualFamily::Linear => {
                        (g.mean_col(&pts, spec.outcome.expect("outcome")), -1.0)
                    }
                    ResidualFamily::Ipw => {
                        let p = g.mean_col(&pts, spec.indicator.expect("indicator"));
                        if p <= 0.0 || p >= 1.0 {
                            return Err(Error::numerical(format!(
                                "selection probability P(x) = {p} at support x = {:?}; \
                                 the inverse-probability truth is undefined there",
                                g.x
                            )));
                        }
                        (1.0 / p, -p)
                    }
                    ResidualFamily::GlmLogistic => {
                        let q = g.mean_col(&pts, spec.outcome.expect("outcome"));
                        if q <= 0.0 || q >= 1.0 {
                            return Err(Error::numerical(format!(
                                "conditional success rate {q} at support x = {:?}; \
                                 the log-odds truth is undefined there",
                                g.x
                            )));
                        }
                        ((q / (1.0 - q)).ln(), -q * (1.0 - q))
                    }
                };
                values.push(value);
                vbar.push(w);
                weights.push(g.prob);
                points.push(g.x.clone());
            }
            gamma0.push(FnTable {
                points,
                values,
                weights,
            });
            neg_vbar.push(vbar);
        }

        let mut v_m = Vec::with_capacity(j_count);
        for j in 0..j_count {
            v_m.push(self.representer_table(j, &pts, &gamma0)?);
        }

        let alpha0 = (0..j_count)
            .map(|j| {
                let mut t = v_m[j].clone();
                for (v, w) in t.values.iter_mut().zip(neg_vbar[j].iter()) {
                    *v /= -w;
                }
                t
            })
            .collect();

        let gamma_refs: Vec<&dyn RegressorFn> =
            gamma0.iter().map(|t| t as &dyn RegressorFn).collect();
        let theta0 = pts
            .iter()
            .map(|(row, p)| p * self.problem.m_eval(row, &gamma_refs))
            .sum();

        Ok(OracleBundle {
            gamma0,
            v_m,
            alpha0,
            theta0,
        })
    }

    fn representer_table(
        &self,
        j: usize,
        pts: &[(Vec<f64>, f64)],
        gamma0: &[FnTable],
    ) -> Result<FnTable> {
        let spec = &self.problem.residuals[j];
        let groups = group_by_x(pts, spec);
        let mut values = Vec::with_capacity(groups.len());
        match &self.problem.functional {
            Functional::IpwMean { aux_col } => {
                let d_col = spec.indicator.expect("indicator");
                for g in &groups {
                    // E[D U | x]; cells are independent within a point so
                    // the product of means is exact.
                    let du = g
                        .members
                        .iter()
                        .map(|&i| pts[i].1 * pts[i].0[d_col] * pts[i].0[*aux_col])
                        .sum::<f64>()
                        / g.prob;
                    values.push(du);
                }
            }
            Functional::PluginLinear { weight_col } => {
                for g in &groups {
                    values.push(weight_col.map_or(1.0, |c| g.mean_col(pts, c)));
                }
            }
            Functional::Ate => {
                // x = (d, z); the propensity is the conditional mean of
                // the first regressor given the rest.
                for g in &groups {
                    let z = &g.x[1..];
                    let (mut mass, mut treated) = (0.0, 0.0);
                    for (row, p) in pts {
                        let xz: Vec<f64> = spec.regressors[1..].iter().map(|&c| row[c]).collect();
                        if xz == z {
                            mass += p;
                            treated += p * row[spec.regressors[0]];
                        }
                    }
                    let pi = treated / mass;
                    if pi <= 0.0 || pi >= 1.0 {
                        return Err(Error::numerical(format!(
                            "propensity pi(z) = {pi} at support z = {z:?}; \
                             the switch representer is undefined there"
                        )));
                    }
                    let d = g.x[0];
                    values.push(d / pi - (1.0 - d) / (1.0 - pi));
                }
            }
            Functional::MultiProduct => {
                let other = 1 - j;
                let other_spec = &self.problem.residuals[other];
                for g in &groups {
                    let mut acc = 0.0;
                    for &i in &g.members {
                        let x_other = other_spec.x_vec(&pts[i].0);
                        acc += pts[i].1 * gamma0[other].value_at(&x_other);
                    }
                    values.push(acc / g.prob);
                }
            }
            Functional::AvgDerivative { .. } => {
                return Err(Error::config_one(
                    "the average-derivative functional needs a continuous design; \
                     use the gaussian design instead"
                        .to_string(),
                ));
            }
        }
        Ok(FnTable {
            points: groups.iter().map(|g| g.x.clone()).collect(),
            values,
            weights: groups.iter().map(|g| g.prob).collect(),
        })
    }
}

struct XGroup {
    x: Vec<f64>,
    prob: f64,
    members: Vec<usize>,
}

impl XGroup {
    fn mean_col(&self, pts: &[(Vec<f64>, f64)], col: usize) -> f64 {
        self.members
            .iter()
            .map(|&i| pts[i].1 * pts[i].0[col])
            .sum::<f64>()
            / self.prob
    }
}

/// Groups support rows by their regressor projection, in first-seen order.
/// Exact float equality is the right notion here: projections of the same
/// cell reuse identical literals.
fn group_by_x(pts: &[(Vec<f64>, f64)], spec: &ResidualSpec) -> Vec<XGroup> {
    let mut groups: Vec<XGroup> = Vec::new();
    for (i, (row, p)) in pts.iter().enumerate() {
        let x = spec.x_vec(row);
        match groups.iter_mut().find(|g| g.x == x) {
            Some(g) => {
                g.prob += p;
                g.members.push(i);
            }
            None => groups.push(XGroup {
                x,
                prob: *p,
                members: vec![i],
            }),
        }
    }
    groups
}

fn pm(value: f64) -> CellLaw {
    CellLaw::PointMass { value }
}

fn gauss(mean: f64, sd: f64) -> CellLaw {
    CellLaw::Gaussian { mean, sd }
}

/// Inverse-probability design: x uniform on {0, 1}, selection rates
/// P = (0.5, 0.8), selected-outcome means Ubar = (1, 2). Truths:
/// gamma0 = 1/P = (2, 1.25), alpha0 = Ubar = (1, 2), theta0 = 1.5.
pub fn ipw_discrete() -> DiscreteDgp {
    let point = |prob: f64, d: f64, ubar: f64, x: f64| SupportPoint {
        prob,
        cells: vec![pm(d), gauss(ubar, 0.5), pm(x)],
    };
    DiscreteDgp {
        name: "ipw_discrete".to_string(),
        columns: vec!["d".into(), "u".into(), "x".into()],
        schema: Schema {
            indicator: vec![0],
            aux_outcomes: vec![1],
            regressors: vec![2],
            ..Schema::default()
        },
        problem: ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::Ipw,
                regressors: vec![2],
                outcome: None,
                indicator: Some(0),
            }],
            functional: Functional::IpwMean { aux_col: 1 },
        },
        points: vec![
            point(0.25, 0.0, 1.0, 0.0),
            point(0.25, 1.0, 1.0, 0.0),
            point(0.10, 0.0, 2.0, 1.0),
            point(0.40, 1.0, 2.0, 1.0),
        ],
    }
}

/// Everyone selected (P identically 1). The true inverse probability is
/// the constant 1 and the correction term vanishes; enumeration refuses
/// this design because the representer is degenerate at P = 1.
pub fn ipw_degenerate_p1() -> DiscreteDgp {
    let mut dgp = ipw_discrete();
    dgp.name = "ipw_degenerate_p1".to_string();
    dgp.points = vec![
        SupportPoint {
            prob: 0.5,
            cells: vec![pm(1.0), gauss(1.0, 0.5), pm(0.0)],
        },
        SupportPoint {
            prob: 0.5,
            cells: vec![pm(1.0), gauss(2.0, 0.5), pm(1.0)],
        },
    ];
    dgp
}

fn ate_dgp(name: &str, pi: [f64; 2], mu: impl Fn(f64, f64) -> f64) -> DiscreteDgp {
    let mut points = Vec::new();
    for (z, pi_z) in [(0.0, pi[0]), (1.0, pi[1])] {
        for d in [0.0, 1.0] {
            let prob = 0.5 * if d == 1.0 { pi_z } else { 1.0 - pi_z };
            points.push(SupportPoint {
                prob,
                cells: vec![gauss(mu(d, z), 0.5), pm(d), pm(z)],
            });
        }
    }
    DiscreteDgp {
        name: name.to_string(),
        columns: vec!["y".into(), "d".into(), "z".into()],
        schema: Schema {
            outcome: vec![0],
            regressors: vec![1, 2],
            ..Schema::default()
        },
        problem: ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::Linear,
                regressors: vec![1, 2],
                outcome: Some(0),
                indicator: None,
            }],
            functional: Functional::Ate,
        },
        points,
    }
}

/// Treatment-effect design: z uniform on {0, 1}, logistic propensity
/// pi(z) = expit(-0.4 + 0.8 z), outcome mean d + 0.5 z + 0.25 d z.
/// theta0 = E[1 + 0.25 z] = 1.125.
pub fn ate_discrete() -> DiscreteDgp {
    ate_dgp(
        "ate_discrete",
        [expit(-0.4), expit(0.4)],
        |d, z| d + 0.5 * z + 0.25 * d * z,
    )
}

/// Balanced variant: pi identically 1/2 and outcome mean exactly d, so
/// theta0 = 1 and the representer is +-2.
pub fn ate_discrete_balanced() -> DiscreteDgp {
    ate_dgp("ate_discrete_balanced", [0.5, 0.5], |d, _| d)
}

/// Binary-outcome design: x uniform on {0, 1}, success rates
/// q = (0.65, 0.8), functional the mean of the log-odds regression.
/// alpha0 = 1/(q(1-q)) and theta0 = mean of logit(q).
pub fn glm_discrete() -> DiscreteDgp {
    DiscreteDgp {
        name: "glm_discrete".to_string(),
        columns: vec!["y".into(), "x".into()],
        schema: Schema {
            outcome: vec![0],
            regressors: vec![1],
            ..Schema::default()
        },
        problem: ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::GlmLogistic,
                regressors: vec![1],
                outcome: Some(0),
                indicator: None,
            }],
            functional: Functional::PluginLinear { weight_col: None },
        },
        points: vec![
            SupportPoint {
                prob: 0.5,
                cells: vec![CellLaw::Bernoulli { p: 0.65 }, pm(0.0)],
            },
            SupportPoint {
                prob: 0.5,
                cells: vec![CellLaw::Bernoulli { p: 0.8 }, pm(1.0)],
            },
        ],
    }
}

/// Product-of-regressions design on a dependent 2x2 support:
/// E[Y1|x1] = (1, 2), E[Y2|x2] = (0.5, 1.5),
/// Pr{(x1,x2)} = (0.3, 0.2, 0.2, 0.3). theta0 = E[g1(x1) g2(x2)] = 1.55,
/// alpha_10 = (0.9, 1.1), alpha_20 = (1.4, 1.6).
pub fn multi_2x2() -> DiscreteDgp {
    let g1 = |x1: f64| 1.0 + x1;
    let g2 = |x2: f64| 0.5 + x2;
    let mut points = Vec::new();
    for (x1, x2, prob) in [
        (0.0, 0.0, 0.3),
        (0.0, 1.0, 0.2),
        (1.0, 0.0, 0.2),
        (1.0, 1.0, 0.3),
    ] {
        points.push(SupportPoint {
            prob,
            cells: vec![gauss(g1(x1), 0.3), pm(x1), gauss(g2(x2), 0.3), pm(x2)],
        });
    }
    DiscreteDgp {
        name: "multi_2x2".to_string(),
        columns: vec!["y1".into(), "x1".into(), "y2".into(), "x2".into()],
        schema: Schema {
            outcome: vec![0],
            aux_outcomes: vec![2],
            regressors: vec![1, 3],
            ..Schema::default()
        },
        problem: ProblemCore {
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
        },
        points,
    }
}

pub fn builtin_discrete_dgps() -> Vec<DiscreteDgp> {
    vec![
        ipw_discrete(),
        ate_discrete(),
        ate_discrete_balanced(),
        glm_discrete(),
        multi_2x2(),
    ]
}

/// Continuous design for the weighted average derivative:
/// z standard normal, d = d_on_z * z + noise, y = beta_d * d + beta_z * z
/// + noise. The regression truth is linear, so the omega-weighted average
/// derivative in d is beta_d for any weight density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianAvgDerivDgp {
    pub beta_d: f64,
    pub beta_z: f64,
    pub d_on_z: f64,
    pub d_sd: f64,
    pub y_sd: f64,
}

pub fn gaussian_avg_deriv() -> GaussianAvgDerivDgp {
    GaussianAvgDerivDgp {
        beta_d: 1.0,
        beta_z: 0.5,
        d_on_z: 0.5,
        d_sd: 1.0,
        y_sd: 0.5,
    }
}

impl GaussianAvgDerivDgp {
    pub fn theta0(&self) -> f64 {
        self.beta_d
    }

    pub fn draw_spec(&self) -> DrawSpec {
        DrawSpec {
            name: "u_draw".to_string(),
            density: DrawDensity::Gaussian { mean: 0.0, sd: 1.0 },
        }
    }

    /// Columns y, d, z plus the attached weight draw.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 1 {
            return Err(Error::config_one("sample size must be at least 1".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || rng.sample::<f64, _>(rand_distr::StandardNormal);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z = normal();
                let d = self.d_on_z * z + self.d_sd * normal();
                let y = self.beta_d * d + self.beta_z * z + self.y_sd * normal();
                vec![y, d, z]
            })
            .collect();
        let ds = Dataset::from_rows(
            vec!["y".into(), "d".into(), "z".into()],
            rows,
            Schema {
                outcome: vec![0],
                regressors: vec![1, 2],
                ..Schema::default()
            },
        )?;
        ds.attach_simulated_draws(&self.draw_spec(), derive_seed(seed, &[7]))
    }

    pub fn problem(&self) -> ProblemCore {
        ProblemCore {
            residuals: vec![ResidualSpec {
                family: ResidualFamily::Linear,
                regressors: vec![1, 2],
                outcome: Some(0),
                indicator: None,
            }],
            functional: Functional::AvgDerivative {
                score: ScoreDensity::Gaussian { mean: 0.0, sd: 1.0 },
                draw_col: 3,
            },
        }
    }

    fn gamma0(&self, d: f64, z: f64) -> f64 {
        self.beta_d * d + self.beta_z * z
    }

    /// Target through the moment route, `E[S(u) gamma0(u, z)]` with u
    /// drawn from the weight density independently of z.
    pub fn theta0_moment_quadrature(&self, nodes: usize) -> f64 {
        let grid = quadrature::gauss_hermite_normal(nodes);
        let mut acc = 0.0;
        for &(z, pz) in &grid {
            for &(u, pu) in &grid {
                acc += pz * pu * u * self.gamma0(u, z);
            }
        }
        acc
    }

    /// Target through the representer route,
    /// `E[omega(D) S(D) / f(D|Z) * gamma0(D, Z)]`, integrated in the
    /// independent coordinates (z, e) with d = d_on_z z + e.
    pub fn theta0_representer_quadrature(&self, nodes: usize) -> f64 {
        let grid = quadrature::gauss_hermite_normal(nodes);
        let norm = 1.0 / (self.d_sd * (2.0 * std::f64::consts::PI).sqrt());
        let omega = |d: f64| (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = 0.0;
        for &(z, pz) in &grid {
            for &(e0, pe) in &grid {
                let e = self.d_sd * e0;
                let d = self.d_on_z * z + e;
                let f_cond = norm * (-0.5 * (e / self.d_sd) * (e / self.d_sd)).exp();
                acc += pz * pe * omega(d) * d / f_cond * self.gamma0(d, z);
            }
        }
        acc
    }
}

/// Built-in designs addressable by name from configuration.
#[derive(Debug, Clone)]
pub enum BuiltinDgp {
    Discrete(DiscreteDgp),
    Gaussian(GaussianAvgDerivDgp),
}

pub const BUILTIN_DGP_NAMES: [&str; 7] = [
    "ipw_discrete",
    "ipw_degenerate_p1",
    "ate_discrete",
    "ate_discrete_balanced",
    "glm_discrete",
    "multi_2x2",
    "gaussian_avg_deriv",
];

impl BuiltinDgp {
    pub fn by_name(name: &str) -> Option<BuiltinDgp> {
        match name {
            "ipw_discrete" => Some(BuiltinDgp::Discrete(ipw_discrete())),
            "ipw_degenerate_p1" => Some(BuiltinDgp::Discrete(ipw_degenerate_p1())),
            "ate_discrete" => Some(BuiltinDgp::Discrete(ate_discrete())),
            "ate_discrete_balanced" => Some(BuiltinDgp::Discrete(ate_discrete_balanced())),
            "glm_discrete" => Some(BuiltinDgp::Discrete(glm_discrete())),
            "multi_2x2" => Some(BuiltinDgp::Discrete(multi_2x2())),
            "gaussian_avg_deriv" => Some(BuiltinDgp::Gaussian(gaussian_avg_deriv())),
            _ => None,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            BuiltinDgp::Discrete(d) => d.sample(n, seed),
            BuiltinDgp::Gaussian(g) => g.sample(n, seed),
        }
    }

    pub fn problem(&self) -> ProblemCore {
        match self {
            BuiltinDgp::Discrete(d) => d.problem.clone(),
            BuiltinDgp::Gaussian(g) => g.problem(),
        }
    }

    pub fn theta0(&self) -> Result<f64> {
        match self {
            BuiltinDgp::Discrete(d) => Ok(d.enumerate_oracles()?.theta0),
            BuiltinDgp::Gaussian(g) => Ok(g.theta0()),
        }
    }

    /// Ground-truth document for the simulate command.
    pub fn oracle_json(&self) -> Result<serde_json::Value> {
        match self {
            BuiltinDgp::Discrete(d) => {
                let bundle = d.enumerate_oracles()?;
                Ok(serde_json::json!({
                    "dgp": d.name,
                    "oracles": bundle,
                }))
            }
            BuiltinDgp::Gaussian(g) => Ok(serde_json::json!({
                "dgp": "gaussian_avg_deriv",
                "theta0": g.theta0(),
            })),
        }
    }
}

//! Dataset loading, role schema, fold planning, and simulated-draw columns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Maps semantic roles to column indices. A column may carry at most one
/// role; problem specs reference columns directly and may combine roles
/// (e.g. a regressor block containing the treatment indicator).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub outcome: Vec<usize>,
    #[serde(default)]
    pub indicator: Vec<usize>,
    #[serde(default)]
    pub regressors: Vec<usize>,
    #[serde(default)]
    pub covariates: Vec<usize>,
    #[serde(default)]
    pub aux_outcomes: Vec<usize>,
    #[serde(default)]
    pub sim_draws: Vec<usize>,
}

impl Schema {
    fn roles(&self) -> [(&'static str, &[usize]); 6] {
        [
            ("outcome", &self.outcome),
            ("indicator", &self.indicator),
            ("regressors", &self.regressors),
            ("covariates", &self.covariates),
            ("aux_outcomes", &self.aux_outcomes),
            ("sim_draws", &self.sim_draws),
        ]
    }

    /// Returns every violation against a table with `width` columns.
    pub fn violations(&self, width: usize, names: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen: Vec<Option<&'static str>> = vec![None; width];
        for (role, cols) in self.roles() {
            for &c in cols {
                if c >= width {
                    out.push(format!(
                        "schema role '{role}' references column index {c}, but the table has only {width} columns"
                    ));
                    continue;
                }
                match seen[c] {
                    Some(prev) => out.push(format!(
                        "column '{}' (index {c}) assigned to both '{prev}' and '{role}'",
                        names.get(c).map(String::as_str).unwrap_or("?")
                    )),
                    None => seen[c] = Some(role),
                }
            }
        }
        out
    }

    pub fn validate(&self, width: usize, names: &[String]) -> Result<()> {
        let v = self.violations(width, names);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::data(v.join("; ")))
        }
    }
}

/// Immutable numeric table. All cells are finite; construction rejects
/// NaN and infinities.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    values: Vec<f64>,
    n: usize,
    width: usize,
    schema: Schema,
}

impl Dataset {
    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>, schema: Schema) -> Result<Dataset> {
        let width = names.len();
        let n = rows.len();
        let mut values = Vec::with_capacity(n * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::data(format!(
                    "row {} has {} values, expected {width}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "non-finite value {v} at row {}, column '{}' (index {j})",
                        i + 1,
                        names[j]
                    )));
                }
                values.push(v);
            }
        }
        schema.validate(width, &names)?;
        Ok(Dataset {
            names,
            values,
            n,
            width,
            schema,
        })
    }

    /// Loads a comma-separated file with a header row; every cell must
    /// parse as a finite real. Errors name the offending row and column.
    pub fn load_csv(path: impl AsRef<Path>, schema: Schema) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::data(format!("cannot read '{}': {e}", path.display())))?;
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| Error::data(format!("bad header in '{}': {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let width = names.len();
        let mut values = Vec::new();
        let mut n = 0;
        for (i, record) in reader.records().enumerate() {
            let record =
                record.map_err(|e| Error::data(format!("row {}: {e}", i + 1)))?;
            if record.len() != width {
                return Err(Error::data(format!(
                    "row {} has {} cells, expected {width}",
                    i + 1,
                    record.len()
                )));
            }
            for (j, cell) in record.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::data(format!(
                        "row {}, column '{}' (index {j}): cannot parse '{cell}' as a number",
                        i + 1,
                        names[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::data(format!(
                        "row {}, column '{}' (index {j}): non-finite value '{cell}'",
                        i + 1,
                        names[j]
                    )));
                }
                values.push(v);
            }
            n += 1;
        }
        schema.validate(width, &names)?;
        Ok(Dataset {
            names,
            values,
            n,
            width,
            schema,
        })
    }

    /// Writes the table back out; f64 formatting is shortest round-trip,
    /// so load/write/load is lossless.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::data(format!("cannot write csv: {e}")))?;
        writer
            .write_record(&self.names)
            .map_err(|e| Error::data(format!("csv write: {e}")))?;
        for i in 0..self.n {
            let row = self.row(i);
            writer
                .write_record(row.iter().map(|v| format!("{v}")))
                .map_err(|e| Error::data(format!("csv write: {e}")))?;
        }
        writer
            .flush()
            .map_err(|e| Error::data(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Returns a new dataset with one appended column of i.i.d. draws from
    /// the given density, tagged with the simulated-draw role. The column
    /// is materialized once; folds later reuse it unchanged.
    pub fn attach_simulated_draws(&self, spec: &DrawSpec, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = match spec.density {
            DrawDensity::Gaussian { mean, sd } => {
                if !(sd > 0.0) {
                    return Err(Error::config_one(format!(
                        "simulated-draw density: sd must be positive, got {sd}"
                    )));
                }
                let normal = Normal::new(mean, sd)
                    .map_err(|e| Error::config_one(format!("simulated-draw density: {e}")))?;
                (0..self.n).map(|_| normal.sample(&mut rng)).collect()
            }
            DrawDensity::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::config_one(format!(
                        "simulated-draw density: need lo < hi, got [{lo}, {hi})"
                    )));
                }
                (0..self.n).map(|_| rng.gen_range(lo..hi)).collect()
            }
        };
        let mut names = self.names.clone();
        names.push(spec.name.clone());
        let mut schema = self.schema.clone();
        schema.sim_draws.push(self.width);
        let mut values = Vec::with_capacity(self.n * (self.width + 1));
        for i in 0..self.n {
            values.extend_from_slice(self.row(i));
            values.push(draws[i]);
        }
        Ok(Dataset {
            names,
            values,
            n: self.n,
            width: self.width + 1,
            schema,
        })
    }
}

/// A one-dimensional density for simulated-draw columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSpec {
    pub name: String,
    pub density: DrawDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrawDensity {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Half {
    A,
    B,
}

/// L-fold partition of row indices, with an optional half split used for
/// double cross-fitting: the regression trains on the A half of a fold's
/// complement and the debiasing function on the B half.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub l: usize,
    /// Fold id per row, values in 0..l.
    pub assignment: Vec<usize>,
    pub double_crossfit: bool,
    pub half_assignment: Option<Vec<Half>>,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Rows inside fold `fold` (the evaluation set).
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    /// Rows outside fold `fold`.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    fn complement_half(&self, fold: usize, half: Half) -> Vec<usize> {
        let halves = self.half_assignment.as_ref().expect("double_crossfit plan");
        (0..self.n())
            .filter(|&i| self.assignment[i] != fold && halves[i] == half)
            .collect()
    }

    /// Training rows for the regression at this fold.
    pub fn gamma_train_rows(&self, fold: usize) -> Vec<usize> {
        if self.double_crossfit {
            self.complement_half(fold, Half::A)
        } else {
            self.complement_rows(fold)
        }
    }

    /// Training rows for the debiasing function at this fold.
    pub fn alpha_train_rows(&self, fold: usize) -> Vec<usize> {
        if self.double_crossfit {
            self.complement_half(fold, Half::B)
        } else {
            self.complement_rows(fold)
        }
    }
}

/// Shuffles indices with a seeded generator and deals them round-robin,
/// so fold sizes differ by at most one. Under double cross-fitting the
/// deal round alternates each member's half (offset by fold id), which
/// keeps every complement's A/B split near-equal.
pub fn make_folds(n: usize, l: usize, seed: u64, double_crossfit: bool) -> Result<FoldPlan> {
    if l < 2 || l > n {
        return Err(Error::config_one(format!(
            "fold count L={l} must satisfy 2 <= L <= n (n={n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut assignment = vec![0usize; n];
    let mut halves = vec![Half::A; n];
    for (t, &row) in order.iter().enumerate() {
        let fold = t % l;
        let round = t / l;
        assignment[row] = fold;
        halves[row] = if (round + fold) % 2 == 0 { Half::A } else { Half::B };
    }
    Ok(FoldPlan {
        l,
        assignment,
        double_crossfit,
        half_assignment: if double_crossfit { Some(halves) } else { None },
    })
}

/// Mixes a base seed with stream tags into an independent child seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut s = splitmix(base ^ 0x5851_F42D_4C95_7F2D);
    for &t in tags {
        s = splitmix(s ^ t.wrapping_mul(0x2545_F491_4F6C_DD1D));
    }
    s
}

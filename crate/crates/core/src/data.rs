//! Right-censored survival data: loading, standardization and dipole labeling.
//!
//! A dipole is a pair of observations. Pairs whose smaller observed time is an
//! event are *right-comparable*; their absolute time differences form the
//! vector `delta_t`. Two percentile cutoffs of that vector decide which pairs
//! are *pure* (close survival times, should stay together) and which are
//! *mixed* (far apart, should be separated).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ZETA1: f64 = 0.3;
pub const DEFAULT_ZETA2: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub covariates: Vec<f64>,
    pub time: f64,
    /// `true` when the event was observed (uncensored).
    pub event: bool,
}

impl Observation {
    pub fn new(covariates: Vec<f64>, time: f64, event: bool) -> Self {
        Self {
            covariates,
            time,
            event,
        }
    }

    pub fn status(&self) -> u8 {
        u8::from(self.event)
    }
}

/// Per-covariate affine map applied at load time and reused at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    pub fn identity(columns: Vec<String>) -> Self {
        let p = columns.len();
        Self {
            columns,
            means: vec![0.0; p],
            sds: vec![1.0; p],
        }
    }

    /// Column means and sample standard deviations (n - 1 denominator).
    /// Constant columns, and single-row inputs, get sd 1.
    pub fn fit(columns: Vec<String>, rows: &[Vec<f64>]) -> Self {
        let p = columns.len();
        let n = rows.len();
        let mut means = vec![0.0; p];
        for row in rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        if n > 0 {
            means.iter_mut().for_each(|m| *m /= n as f64);
        }
        let mut sds = vec![1.0; p];
        if n > 1 {
            for (q, sd) in sds.iter_mut().enumerate() {
                let ss: f64 = rows.iter().map(|r| (r[q] - means[q]).powi(2)).sum();
                let s = (ss / (n - 1) as f64).sqrt();
                *sd = if s > 0.0 && s.is_finite() { s } else { 1.0 };
            }
        }
        Self { columns, means, sds }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
    standardization: Standardization,
}

impl Dataset {
    /// Builds a dataset from already-prepared observations (no rescaling).
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let p = observations.first().map_or(0, |o| o.covariates.len());
        let columns = (1..=p).map(|q| format!("x{q}")).collect();
        Self::with_standardization(observations, Standardization::identity(columns))
    }

    pub fn with_standardization(
        observations: Vec<Observation>,
        standardization: Standardization,
    ) -> Result<Self> {
        let p = standardization.dim();
        for (i, o) in observations.iter().enumerate() {
            if o.covariates.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: o.covariates.len(),
                });
            }
            if !(o.time > 0.0 && o.time.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "observation {i}: time must be positive and finite, got {}",
                    o.time
                )));
            }
            if o.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "observation {i}: non-finite covariate"
                )));
            }
        }
        Ok(Self {
            observations,
            p,
            standardization,
        })
    }

    /// Standardizes raw covariates (sample sd) and keeps the parameters.
    pub fn standardized(columns: Vec<String>, raw: Vec<Observation>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = raw.iter().map(|o| o.covariates.clone()).collect();
        if rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::Schema("covariate count differs from header".into()));
        }
        let st = Standardization::fit(columns, &rows);
        let obs = raw
            .into_iter()
            .map(|o| Ok(Observation::new(st.apply(&o.covariates)?, o.time, o.event)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_standardization(obs, st)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.observations[i].covariates
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.event).collect()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.observations.iter().filter(|o| !o.event).count() as f64 / self.n() as f64
    }

    /// Rows at `indices`, in that order, sharing this dataset's standardization.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
            p: self.p,
            standardization: self.standardization.clone(),
        }
    }

    /// Same rows with survival times mapped through `f`.
    pub fn map_times(&self, f: impl Fn(f64) -> f64) -> Result<Dataset> {
        let obs = self
            .observations
            .iter()
            .map(|o| Observation::new(o.covariates.clone(), f(o.time), o.event))
            .collect();
        Self::with_standardization(obs, self.standardization.clone())
    }
}

/// Column mapping for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_col: String,
    pub status_col: String,
    /// Columns that are neither outcome nor covariate.
    pub exclude: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            time_col: "time".into(),
            status_col: "status".into(),
            exclude: Vec::new(),
        }
    }
}

struct RawTable {
    covariate_names: Vec<String>,
    rows: Vec<Observation>,
}

fn read_table(path: &Path, schema: &CsvSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    };
    let time_idx = find(&schema.time_col)?;
    let status_idx = find(&schema.status_col)?;
    for ex in &schema.exclude {
        find(ex)?;
    }
    let cov_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != time_idx && i != status_idx && !schema.exclude.contains(&headers[i]))
        .collect();
    if cov_idx.is_empty() {
        return Err(Error::Schema("no covariate columns".into()));
    }

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Cell {
                    row: r + 1,
                    column: headers[i].clone(),
                    message: "missing value".into(),
                });
            }
            raw.parse::<f64>().map_err(|_| Error::Cell {
                row: r + 1,
                column: headers[i].clone(),
                message: format!("not a number: `{raw}`"),
            })
        };
        let time = cell(time_idx)?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::Cell {
                row: r + 1,
                column: headers[time_idx].clone(),
                message: format!("time must be positive, got {time}"),
            });
        }
        let status = cell(status_idx)?;
        let event = if status == 1.0 {
            true
        } else if status == 0.0 {
            false
        } else {
            return Err(Error::Cell {
                row: r + 1,
                column: headers[status_idx].clone(),
                message: format!("status must be 0 or 1, got {status}"),
            });
        };
        let covariates = cov_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>>>()?;
        if let Some(q) = covariates.iter().position(|x| !x.is_finite()) {
            return Err(Error::Cell {
                row: r + 1,
                column: headers[cov_idx[q]].clone(),
                message: "non-finite value".into(),
            });
        }
        rows.push(Observation::new(covariates, time, event));
    }
    Ok(RawTable {
        covariate_names: cov_idx.iter().map(|&i| headers[i].clone()).collect(),
        rows,
    })
}

/// Loads a CSV and standardizes every covariate to mean 0, sample sd 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let table = read_table(path.as_ref(), schema)?;
    Dataset::standardized(table.covariate_names, table.rows)
}

/// Loads a CSV and applies an existing standardization (prediction time).
/// Covariate columns are matched by name.
pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    standardization: &Standardization,
) -> Result<Dataset> {
    let table = read_table(path.as_ref(), schema)?;
    let order = standardization
        .columns
        .iter()
        .map(|c| {
            table
                .covariate_names
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Schema(format!("model covariate `{c}` not found")))
        })
        .collect::<Result<Vec<_>>>()?;
    if table.covariate_names.len() != order.len() {
        return Err(Error::DimensionMismatch {
            expected: order.len(),
            got: table.covariate_names.len(),
        });
    }
    let obs = table
        .rows
        .into_iter()
        .map(|o| {
            let raw: Vec<f64> = order.iter().map(|&i| o.covariates[i]).collect();
            Ok(Observation::new(standardization.apply(&raw)?, o.time, o.event))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_standardization(obs, standardization.clone())
}

/// Writes rows with their original (unstandardized) covariate scale.
pub fn write_csv(path: impl AsRef<Path>, d: &Dataset, schema: &CsvSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let st = d.standardization();
    let mut header: Vec<String> = st.columns.clone();
    header.push(schema.time_col.clone());
    header.push(schema.status_col.clone());
    w.write_record(&header)?;
    for o in d.observations() {
        let mut rec: Vec<String> = o
            .covariates
            .iter()
            .zip(st.means.iter().zip(&st.sds))
            .map(|(z, (m, s))| format!("{}", z * s + m))
            .collect();
        rec.push(format!("{}", o.time));
        rec.push(o.status().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs `(i, j)`, `i < j`, whose smaller observed time is an event.
/// On tied times the pair counts when either observation is an event.
pub fn right_comparable_pairs(d: &Dataset) -> Vec<(usize, usize)> {
    let obs = d.observations();
    let mut pairs = Vec::new();
    for i in 0..obs.len() {
        for j in (i + 1)..obs.len() {
            if is_right_comparable(&obs[i], &obs[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn is_right_comparable(a: &Observation, b: &Observation) -> bool {
    if a.time < b.time {
        a.event
    } else if b.time < a.time {
        b.event
    } else {
        a.event || b.event
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleLabels {
    pub pure: Vec<(usize, usize)>,
    pub mixed: Vec<(usize, usize)>,
    pub zeta1: f64,
    pub zeta2: f64,
    /// `|t_i - t_j|` over the right-comparable pairs, in pair order.
    pub delta_t: Vec<f64>,
}

impl DipoleLabels {
    pub fn is_empty(&self) -> bool {
        self.pure.is_empty() && self.mixed.is_empty()
    }
}

/// 1-based order statistic index `floor(zeta * l)` clamped to `[1, l]`.
fn order_index(zeta: f64, l: usize) -> usize {
    ((zeta * l as f64 + 1e-9).floor() as usize).clamp(1, l)
}

pub fn validate_zetas(zeta1: f64, zeta2: f64) -> Result<()> {
    if !(0.0 < zeta1 && zeta1 < zeta2 && zeta2 < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < zeta1 < zeta2 < 1, got zeta1={zeta1}, zeta2={zeta2}"
        )));
    }
    Ok(())
}

pub fn label_dipoles(d: &Dataset, zeta1: f64, zeta2: f64) -> Result<DipoleLabels> {
    validate_zetas(zeta1, zeta2)?;
    let obs = d.observations();
    let comparable = right_comparable_pairs(d);
    if comparable.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let delta_t: Vec<f64> = comparable
        .iter()
        .map(|&(i, j)| (obs[i].time - obs[j].time).abs())
        .collect();
    let mut sorted = delta_t.clone();
    sorted.sort_by(f64::total_cmp);
    let l = sorted.len();
    let pure_cut = sorted[order_index(zeta1, l) - 1];
    let mixed_cut = sorted[order_index(zeta2, l) - 1];

    let mut pure = Vec::new();
    let mut mixed = Vec::new();
    for (&(i, j), &dt) in comparable.iter().zip(&delta_t) {
        if obs[i].event && obs[j].event && dt < pure_cut {
            pure.push((i, j));
        } else if dt >= mixed_cut {
            mixed.push((i, j));
        }
    }
    Ok(DipoleLabels {
        pure,
        mixed,
        zeta1,
        zeta2,
        delta_t,
    })
}

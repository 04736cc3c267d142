//! Kernel functions for the splitting surface.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Gaussian { variance: f64 },
}

impl KernelSpec {
    pub fn quadratic() -> Self {
        KernelSpec::Polynomial {
            degree: 2,
            offset: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 || !(offset >= 0.0 && offset.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "polynomial kernel needs degree >= 1 and offset >= 0, got d={degree}, c={offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Gaussian { variance } => {
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian kernel needs variance > 0, got {variance}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Unchecked evaluation; callers guarantee equal lengths.
    #[inline]
    pub fn apply(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(u, v),
            KernelSpec::Polynomial { degree, offset } => (dot(u, v) + offset).powi(degree as i32),
            KernelSpec::Gaussian { variance } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * variance)).exp()
            }
        }
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        Ok(self.apply(u, v))
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:{degree},{offset}"),
            KernelSpec::Gaussian { variance } => write!(f, "gauss:{variance}"),
        }
    }
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Kernel as selected on the command line; a Gaussian variance may be left
/// open and filled in from the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    Fixed(KernelSpec),
    GaussianDefault,
}

impl KernelChoice {
    pub fn resolve(&self, train: &Dataset) -> KernelSpec {
        match *self {
            KernelChoice::Fixed(spec) => spec,
            KernelChoice::GaussianDefault => KernelSpec::Gaussian {
                variance: default_gaussian_variance(train),
            },
        }
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    /// `linear | quad | poly:d,c | gauss[:sigma2]`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unrecognized kernel `{s}`"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let choice = match (name, arg) {
            ("linear", None) => KernelChoice::Fixed(KernelSpec::Linear),
            ("quad", None) => KernelChoice::Fixed(KernelSpec::quadratic()),
            ("poly", Some(a)) => {
                let (d, c) = a.split_once(',').ok_or_else(bad)?;
                KernelChoice::Fixed(KernelSpec::Polynomial {
                    degree: d.trim().parse().map_err(|_| bad())?,
                    offset: c.trim().parse().map_err(|_| bad())?,
                })
            }
            ("gauss", None) => KernelChoice::GaussianDefault,
            ("gauss", Some(a)) => KernelChoice::Fixed(KernelSpec::Gaussian {
                variance: a.trim().parse().map_err(|_| bad())?,
            }),
            _ => return Err(bad()),
        };
        if let KernelChoice::Fixed(spec) = choice {
            spec.validate()?;
        }
        Ok(choice)
    }
}

/// Symmetric Gram matrix over `points`.
pub fn gram_matrix(spec: &KernelSpec, points: &[&[f64]]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(Error::InvalidParameter("gram matrix of no points".into()));
    };
    if let Some(bad) = points.iter().find(|p| p.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            got: bad.len(),
        });
    }
    let m = points.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = spec.apply(points[i], points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Mean squared distance to the centroid; 1 when every point coincides.
pub fn default_gaussian_variance(d: &Dataset) -> f64 {
    let n = d.n();
    let p = d.p();
    if n == 0 {
        return 1.0;
    }
    let mut mean = vec![0.0; p];
    for o in d.observations() {
        for (m, x) in mean.iter_mut().zip(&o.covariates) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let s: f64 = d
        .observations()
        .iter()
        .map(|o| o.covariates.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

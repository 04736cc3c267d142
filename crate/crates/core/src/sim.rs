//! Right-censored data with hazards linear in a quadratic feature map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};

/// Redraws allowed per subject before a non-positive rate is an error.
pub const MAX_REDRAWS: usize = 100;
pub const WEIBULL_SHAPE: f64 = 1.5;
/// Censoring share the presets are calibrated to.
pub const TARGET_CENSORING: f64 = 0.12;
pub const PRESETS: [&str; 5] = ["planar", "parabolic", "elliptical", "hyperbolic", "weibull-elliptical"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HazardFamily {
    ConstantRate,
    /// Cumulative hazard `(rate * t)^shape`.
    Weibull { shape: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub beta0: f64,
    /// Coefficients over `feature_map`.
    pub beta: Vec<f64>,
    /// Log censoring rate; `None` disables random censoring.
    pub alpha0: Option<f64>,
    pub follow_up: f64,
    pub family: HazardFamily,
}

impl HazardSpec {
    pub fn rate(&self, x: &[f64]) -> f64 {
        self.beta0 + feature_map(x).iter().zip(&self.beta).map(|(f, b)| f * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub name: String,
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major `p x p` covariance.
    pub cov: Vec<Vec<f64>>,
    pub seed: u64,
    pub hazard: HazardSpec,
}

impl SimConfig {
    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::InvalidParameter("simulation needs at least one covariate".into()));
        }
        if self.cov.len() != p || self.cov.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidParameter(format!("covariance must be {p} x {p}")));
        }
        if self.hazard.beta.len() != feature_dim(p) {
            return Err(Error::DimensionMismatch { expected: feature_dim(p), got: self.hazard.beta.len() });
        }
        if !(self.hazard.follow_up > 0.0) {
            return Err(Error::InvalidParameter("follow-up must be positive".into()));
        }
        if let HazardFamily::Weibull { shape } = self.hazard.family {
            if !(shape > 0.0) {
                return Err(Error::InvalidParameter("Weibull shape must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `(x_1..x_p, x_i x_j for i < j, x_1^2..x_p^2)`.
pub fn feature_map(x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let mut f = Vec::with_capacity(feature_dim(p));
    f.extend_from_slice(x);
    for i in 0..p {
        for j in i + 1..p {
            f.push(x[i] * x[j]);
        }
    }
    f.extend(x.iter().map(|v| v * v));
    f
}

pub fn feature_dim(p: usize) -> usize {
    2 * p + p * (p.saturating_sub(1)) / 2
}

/// Gaussian sampler `mean + L z` with `L L^T = cov` from the eigen split,
/// so semidefinite covariances work too.
struct Mvn {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl Mvn {
    fn new(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self> {
        let p = mean.len();
        let c = DMatrix::from_fn(p, p, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
        let eig = SymmetricEigen::new(c);
        let scale = eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidParameter("covariance is not positive semidefinite".into()));
        }
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        Ok(Self { mean: DVector::from_column_slice(mean), factor: &eig.eigenvectors * root })
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.factor * z).iter().copied().collect()
    }
}

/// One subject's covariates, rate and latent event time.
struct Draw {
    x: Vec<f64>,
    t0: f64,
}

fn draw_subject(mvn: &Mvn, h: &HazardSpec, rng: &mut impl Rng) -> Result<Draw> {
    for _ in 0..MAX_REDRAWS {
        let x = mvn.sample(rng);
        let rate = h.rate(&x);
        if rate > 0.0 && rate.is_finite() {
            let e: f64 = Exp1.sample(rng);
            let t0 = match h.family {
                HazardFamily::ConstantRate => e / rate,
                HazardFamily::Weibull { shape } => e.powf(1.0 / shape) / rate,
            };
            return Ok(Draw { x, t0 });
        }
    }
    Err(Error::Simulation(format!("rate stayed non-positive after {MAX_REDRAWS} redraws")))
}

/// Draws `cfg.n` subjects. Censoring is independent of covariates and
/// event times; `t = min(T0, C, follow_up)`.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mvn = Mvn::new(&cfg.mean, &cfg.cov)?;
    let h = &cfg.hazard;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut obs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let Draw { x, t0 } = draw_subject(&mvn, h, &mut rng)?;
        let e: f64 = Exp1.sample(&mut rng);
        let c = h.alpha0.map_or(f64::INFINITY, |a| e / a.exp());
        let stop = c.min(h.follow_up);
        let time = t0.min(stop);
        obs.push(Observation::new(x, time.max(f64::MIN_POSITIVE), t0 <= stop));
    }
    Dataset::new(obs)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

/// Sets `follow_up` near the 99th percentile of event times, then solves
/// for the censoring rate that brings the total censored share to `target`
/// on a fixed pilot sample.
fn calibrate(cfg: &mut SimConfig, target: f64) -> Result<()> {
    const PILOT: usize = 4000;
    let mvn = Mvn::new(&cfg.mean, &cfg.cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut t0 = Vec::with_capacity(PILOT);
    let mut e = Vec::with_capacity(PILOT);
    for _ in 0..PILOT {
        t0.push(draw_subject(&mvn, &cfg.hazard, &mut rng)?.t0);
        e.push(rng.sample::<f64, _>(Exp1));
    }
    let mut sorted = t0.clone();
    sorted.sort_by(f64::total_cmp);
    let follow_up = quantile(&sorted, 0.99);

    let censored = |alpha0: f64| {
        let c = alpha0.exp();
        t0.iter().zip(&e).filter(|&(&t, &ei)| t > (ei / c).min(follow_up)).count() as f64 / PILOT as f64
    };
    // censored share is increasing in alpha0
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if censored(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cfg.hazard.alpha0 = Some(0.5 * (lo + hi));
    cfg.hazard.follow_up = follow_up;
    Ok(())
}

/// Named geometries for the level sets of the rate over standard normal
/// covariates. The quadratic shapes live in the first two coordinates,
/// except `elliptical`, whose form is positive definite in all of them.
pub fn preset(name: &str, p: usize) -> Result<SimConfig> {
    if ![2, 4, 7].contains(&p) {
        return Err(Error::InvalidParameter(format!("presets support p in {{2, 4, 7}}, got {p}")));
    }
    let lin = |i: usize| i;
    let sq = |i: usize| p + p * (p - 1) / 2 + i;
    let mut beta = vec![0.0; feature_dim(p)];
    let mut family = HazardFamily::ConstantRate;
    let beta0 = match name {
        "planar" => {
            for i in 0..p {
                beta[lin(i)] = 1.0 / (p as f64).sqrt();
            }
            2.5
        }
        "parabolic" => {
            beta[lin(1)] = 1.0;
            beta[sq(0)] = 1.0;
            1.5
        }
        "elliptical" | "weibull-elliptical" => {
            for i in 0..p {
                beta[sq(i)] = if i % 2 == 0 { 1.0 } else { 0.4 };
            }
            if name == "weibull-elliptical" {
                family = HazardFamily::Weibull { shape: WEIBULL_SHAPE };
            }
            0.1
        }
        "hyperbolic" => {
            beta[sq(0)] = 1.0;
            beta[sq(1)] = -0.5;
            2.0
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    let mut cfg = SimConfig {
        name: name.to_string(),
        n: 180,
        mean: vec![0.0; p],
        cov: (0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        seed: 0,
        hazard: HazardSpec { beta0, beta, alpha0: None, follow_up: f64::MAX, family },
    };
    calibrate(&mut cfg, TARGET_CENSORING)?;
    Ok(cfg)
}

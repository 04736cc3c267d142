use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

use super::orient::BetaWeights;

/// A decision function `f(x) = intercept + <omega, phi(x)>` together with the
/// squared norm of `omega`.
pub trait Surface {
    fn value(&self, x: &[f64]) -> f64;
    fn norm_sq(&self) -> f64;
}

/// Explicit hyperplane in covariate coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl Surface for Hyperplane {
    fn value(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Slopes only; the intercept is not penalized.
    fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Standardized covariates.
    pub x: Vec<f64>,
    /// `mu_plus - mu_minus`
    pub coef: f64,
}

/// One node's fitted splitting surface, expressed through its support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub support: Vec<SupportPoint>,
    pub intercept: f64,
    pub kernel: KernelSpec,
    pub kappa: f64,
    pub epsilon: f64,
    /// Regularized criterion at the final orientation.
    pub objective: f64,
}

impl SplitModel {
    pub fn dim(&self) -> Option<usize> {
        self.support.first().map(|s| s.x.len())
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if let Some(p) = self.dim() {
            if p != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: x.len(),
                });
            }
        }
        Ok(self.value(x))
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.support.iter().map(|s| s.coef).sum()
    }
}

impl Surface for SplitModel {
    fn value(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .support
                .iter()
                .map(|s| s.coef * self.kernel.apply(&s.x, x))
                .sum::<f64>()
    }

    fn norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for (i, a) in self.support.iter().enumerate() {
            total += a.coef * a.coef * self.kernel.apply(&a.x, &a.x);
            for b in &self.support[..i] {
                total += 2.0 * a.coef * b.coef * self.kernel.apply(&a.x, &b.x);
            }
        }
        total.max(0.0)
    }
}

/// `phi_plus = max(0, eps - v), phi_minus = max(0, eps + v)`
pub fn hinge_pair(value: f64, epsilon: f64) -> (f64, f64) {
    ((epsilon - value).max(0.0), (epsilon + value).max(0.0))
}

/// Ridge-regularized dipole criterion from precomputed decision values:
/// `1/2 |omega|^2 + kappa * sum_j (b+_j phi+_j + b-_j phi-_j)`.
pub fn criterion_from_values(
    norm_sq: f64,
    values: &[f64],
    betas: &BetaWeights,
    kappa: f64,
    epsilon: f64,
) -> f64 {
    let hinge: f64 = values
        .iter()
        .zip(betas.plus.iter().zip(&betas.minus))
        .map(|(&v, (&bp, &bm))| {
            let (fp, fm) = hinge_pair(v, epsilon);
            bp * fp + bm * fm
        })
        .sum();
    0.5 * norm_sq + kappa * hinge
}

pub fn regularized_criterion(
    surface: &impl Surface,
    betas: &BetaWeights,
    kappa: f64,
    epsilon: f64,
    points: &[&[f64]],
) -> f64 {
    let values: Vec<f64> = points.iter().map(|x| surface.value(x)).collect();
    criterion_from_values(surface.norm_sq(), &values, betas, kappa, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_model() -> SplitModel {
        SplitModel {
            support: vec![
                SupportPoint { x: vec![1.0], coef: 0.5 },
                SupportPoint { x: vec![-1.0], coef: -0.5 },
            ],
            intercept: 0.0,
            kernel: KernelSpec::Linear,
            kappa: 10.0,
            epsilon: 1.0,
            objective: 0.5,
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge_pair(0.0, 1.0), (1.0, 1.0));
        assert_eq!(hinge_pair(2.0, 1.0), (0.0, 3.0));
        assert_eq!(hinge_pair(-1.0, 0.5), (1.5, 0.0));
    }

    #[test]
    fn criterion_cases() {
        let h = Hyperplane { intercept: 0.3, weights: vec![1.0, 2.0] };
        let zero = BetaWeights { plus: vec![0.0; 2], minus: vec![0.0; 2] };
        let pts: [&[f64]; 2] = [&[1.0, 1.0], &[-2.0, 0.5]];
        assert_eq!(regularized_criterion(&h, &zero, 3.0, 1.0, &pts), 2.5);

        let flat = Hyperplane { intercept: 0.0, weights: vec![0.0] };
        let b = BetaWeights { plus: vec![1.0], minus: vec![0.0] };
        assert_eq!(regularized_criterion(&flat, &b, 2.0, 1.0, &[&[0.4]]), 2.0);

        let m = worked_model();
        let b = BetaWeights { plus: vec![1.0, 0.0], minus: vec![0.0, 1.0] };
        let c = regularized_criterion(&m, &b, 10.0, 1.0, &[&[1.0], &[-1.0]]);
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decision_values() {
        let m = worked_model();
        assert!((m.decision_value(&[1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.decision_value(&[0.0]).unwrap(), 0.0);
        assert!(m.decision_value(&[0.0, 1.0]).is_err());
        let constant = SplitModel { support: vec![], intercept: 0.7, ..m };
        assert_eq!(constant.decision_value(&[5.0, -3.0]).unwrap(), 0.7);
        assert_eq!(constant.norm_sq(), 0.0);
    }
}

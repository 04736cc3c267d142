use serde::{Deserialize, Serialize};

use crate::data::DipoleLabels;

/// Side assignment of every labeled dipole relative to a surface.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationAssignment {
    pub pure_pos: Vec<(usize, usize)>,
    pub pure_neg: Vec<(usize, usize)>,
    pub mixed_pos: Vec<(usize, usize)>,
    pub mixed_neg: Vec<(usize, usize)>,
}

/// Orients dipoles against decision values `values[j] = f(x_j)`.
///
/// A pure dipole `(j, k)` is positive when `f(x_j) + f(x_k) >= 0`, a mixed one
/// when `f(x_j) - f(x_k) >= 0`.
pub fn orient_dipoles(labels: &DipoleLabels, values: &[f64]) -> OrientationAssignment {
    let mut out = OrientationAssignment::default();
    for &(j, k) in &labels.pure {
        if values[j] + values[k] >= 0.0 {
            out.pure_pos.push((j, k));
        } else {
            out.pure_neg.push((j, k));
        }
    }
    for &(j, k) in &labels.mixed {
        if values[j] - values[k] >= 0.0 {
            out.mixed_pos.push((j, k));
        } else {
            out.mixed_neg.push((j, k));
        }
    }
    out
}

/// Per-point weights of the two hinge losses after expanding the oriented
/// dipole penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaWeights {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl BetaWeights {
    pub fn total(&self) -> f64 {
        self.plus.iter().chain(&self.minus).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(|&b| b == 0.0)
    }
}

/// Expands the oriented criterion into `sum_j b+_j phi+_j + b-_j phi-_j`.
///
/// `price(j, k)` is the weight of dipole `(j, k)`.
pub fn beta_weights_priced(
    assign: &OrientationAssignment,
    n: usize,
    price: impl Fn(usize, usize) -> f64,
) -> BetaWeights {
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for &(j, k) in &assign.pure_pos {
        let a = price(j, k);
        plus[j] += a;
        plus[k] += a;
    }
    for &(j, k) in &assign.pure_neg {
        let a = price(j, k);
        minus[j] += a;
        minus[k] += a;
    }
    // phi_m+ = phi+_j + phi-_k
    for &(j, k) in &assign.mixed_pos {
        let a = price(j, k);
        plus[j] += a;
        minus[k] += a;
    }
    // phi_m- = phi-_j + phi+_k
    for &(j, k) in &assign.mixed_neg {
        let a = price(j, k);
        minus[j] += a;
        plus[k] += a;
    }
    BetaWeights { plus, minus }
}

/// Unit price factors for every dipole.
pub fn beta_weights(assign: &OrientationAssignment, n: usize) -> BetaWeights {
    beta_weights_priced(assign, n, |_, _| 1.0)
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{QpProblem, QpSolution};

use super::orient::BetaWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Which `(point, sign)` each QP variable stands for. Variables whose upper
/// bound `kappa * beta` is zero are left out of the QP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualLayout {
    pub vars: Vec<(usize, Sign)>,
    pub n_points: usize,
}

impl DualLayout {
    /// Per-point coefficients `c_j = mu+_j - mu-_j`.
    pub fn coefficients(&self, mu: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.n_points];
        for (&(j, s), &m) in self.vars.iter().zip(mu) {
            c[j] += s.value() * m;
        }
        c
    }
}

/// Builds the kernelized dual over the stacked `(mu+, mu-)` variables.
pub fn assemble_dual(
    betas: &BetaWeights,
    gram: &DMatrix<f64>,
    kappa: f64,
    epsilon: f64,
) -> Result<(QpProblem, DualLayout)> {
    let n = betas.plus.len();
    if gram.nrows() != n || gram.ncols() != n || betas.minus.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gram.nrows(),
        });
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if betas.is_zero() {
        return Err(Error::DegenerateSplit);
    }
    let mut vars = Vec::new();
    let mut upper = Vec::new();
    for (sign, weights) in [(Sign::Plus, &betas.plus), (Sign::Minus, &betas.minus)] {
        for (j, &b) in weights.iter().enumerate() {
            if b > 0.0 {
                vars.push((j, sign));
                upper.push(kappa * b);
            }
        }
    }
    let m = vars.len();
    let p = DMatrix::from_fn(m, m, |r, c| {
        let (j, s) = vars[r];
        let (k, t) = vars[c];
        s.value() * t.value() * gram[(j, k)]
    });
    let problem = QpProblem {
        p,
        q: vec![epsilon; m],
        a: vars.iter().map(|&(_, s)| s.value()).collect(),
        lower: vec![0.0; m],
        upper,
    };
    Ok((problem, DualLayout { vars, n_points: n }))
}

/// Intercept from the KKT conditions: the mean over free variables of the
/// value that puts the point exactly on its margin, or the midpoint of the
/// interval implied by the bound-active variables when none is free.
pub fn recover_intercept(
    sol: &QpSolution,
    layout: &DualLayout,
    problem: &QpProblem,
    gram: &DMatrix<f64>,
    epsilon: f64,
) -> f64 {
    let c = DVector::from_vec(layout.coefficients(&sol.mu));
    let g = gram * &c;

    let mut candidates = Vec::new();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (v, &(j, s)) in layout.vars.iter().enumerate() {
        let mu = sol.mu[v];
        let ub = problem.upper[v];
        let tol = 1e-9 * ub.max(1.0);
        // f(x_j) = eps on the + margin, -eps on the - margin
        let on_margin = s.value() * epsilon - g[j];
        if mu > tol && mu < ub - tol {
            candidates.push(on_margin);
        } else {
            let at_upper = mu >= ub - tol;
            // +: mu = 0 => f >= eps ; mu = ub => f <= eps
            // -: mu = 0 => f <= -eps ; mu = ub => f >= -eps
            match (s, at_upper) {
                (Sign::Plus, false) | (Sign::Minus, true) => lo = lo.max(on_margin),
                (Sign::Plus, true) | (Sign::Minus, false) => hi = hi.min(on_margin),
            }
        }
    }
    if !candidates.is_empty() {
        return candidates.iter().sum::<f64>() / candidates.len() as f64;
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

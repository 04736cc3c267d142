use std::collections::HashMap;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DipoleLabels};
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, KernelSpec};
use crate::qp::{solve_warm, QpStatus, SolverConfig, WarmStart};

use super::dual::{assemble_dual, recover_intercept, DualLayout, Sign};
use super::orient::{beta_weights, orient_dipoles, OrientationAssignment};
use super::surface::{criterion_from_values, Hyperplane, SplitModel, Surface, SupportPoint};

pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 1e-5;
pub const DEFAULT_MAX_ROUNDS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub kappa: f64,
    pub epsilon: f64,
    /// Stopping tolerance relative to the initial criterion.
    pub tau: f64,
    pub max_rounds: usize,
    pub qp: SolverConfig,
}

impl SplitParams {
    pub fn new(kappa: f64) -> Self {
        Self {
            kappa,
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            max_rounds: DEFAULT_MAX_ROUNDS,
            qp: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tau >= 0.0) || self.max_rounds == 0 {
            return Err(Error::InvalidParameter("tau must be >= 0 and max_rounds >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitFit {
    pub model: SplitModel,
    pub initial: Hyperplane,
    pub initial_criterion: f64,
    /// Criterion of each solved round, oriented against that round's own surface.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl SplitFit {
    pub fn rounds(&self) -> usize {
        self.history.len()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Best axis-parallel hyperplane through a covariate median; ties go to the
/// lowest covariate index.
pub fn initial_hyperplane(
    d: &Dataset,
    labels: &DipoleLabels,
    kappa: f64,
    epsilon: f64,
) -> Result<(Hyperplane, f64)> {
    let p = d.p();
    if p == 0 || d.is_empty() {
        return Err(Error::InvalidData("initial hyperplane needs points with covariates".into()));
    }
    let mut best: Option<(Hyperplane, f64)> = None;
    for q in 0..p {
        let mut col: Vec<f64> = (0..d.n()).map(|i| d.covariates(i)[q]).collect();
        let mut weights = vec![0.0; p];
        weights[q] = 1.0;
        let h = Hyperplane { intercept: -median(&mut col), weights };
        let values: Vec<f64> = (0..d.n()).map(|i| h.value(d.covariates(i))).collect();
        let betas = beta_weights(&orient_dipoles(labels, &values), d.n());
        let crit = criterion_from_values(h.norm_sq(), &values, &betas, kappa, epsilon);
        if best.as_ref().is_none_or(|(_, c)| crit < *c) {
            best = Some((h, crit));
        }
    }
    Ok(best.expect("p >= 1"))
}

/// Warm start carried across rounds, keyed by `(point, sign)` since the set
/// of QP variables changes with the orientation.
fn remap_warm(prev: &HashMap<(usize, Sign), (f64, f64)>, layout: &DualLayout) -> WarmStart {
    let (z, u) = layout
        .vars
        .iter()
        .map(|v| prev.get(v).copied().unwrap_or((0.0, 0.0)))
        .unzip();
    WarmStart { z, u }
}

/// Orientation that puts the shorter-lived end of every mixed dipole on the
/// positive side, and pure dipoles by whether their mean time is below the
/// node median.
pub fn time_orientation(d: &Dataset, labels: &DipoleLabels) -> OrientationAssignment {
    let mut times = d.times();
    let med = median(&mut times);
    let t = |i: usize| d.get(i).time;
    let mut out = OrientationAssignment::default();
    for &(j, k) in &labels.pure {
        if 0.5 * (t(j) + t(k)) <= med {
            out.pure_pos.push((j, k));
        } else {
            out.pure_neg.push((j, k));
        }
    }
    for &(j, k) in &labels.mixed {
        if t(j) <= t(k) {
            out.mixed_pos.push((j, k));
        } else {
            out.mixed_neg.push((j, k));
        }
    }
    out
}

struct Run {
    coef: Vec<f64>,
    intercept: f64,
    criterion: f64,
    history: Vec<f64>,
    converged: bool,
}

/// Recursive reorientation from a given orientation: solve the dual, reorient
/// against the new surface, repeat until the criterion settles.
fn reorient_loop(
    labels: &DipoleLabels,
    gram: &nalgebra::DMatrix<f64>,
    mut assign: OrientationAssignment,
    mut prev: f64,
    stop: f64,
    params: &SplitParams,
) -> Result<Run> {
    let n = gram.nrows();
    let (kappa, eps) = (params.kappa, params.epsilon);
    let mut warm: HashMap<(usize, Sign), (f64, f64)> = HashMap::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut current: Option<(Vec<f64>, f64)> = None;

    for _ in 0..params.max_rounds {
        let betas = beta_weights(&assign, n);
        let (qp, layout) = assemble_dual(&betas, gram, kappa, eps)?;
        let start = remap_warm(&warm, &layout);
        let sol = solve_warm(&qp, &params.qp, Some(&start))?;
        match sol.status {
            QpStatus::Solved => {}
            QpStatus::MaxIter => warn!(
                "dual QP hit the iteration limit ({} iterations); using the best iterate",
                sol.iterations
            ),
            QpStatus::Infeasible => return Err(Error::Qp("dual QP reported infeasible".into())),
        }
        warm = layout
            .vars
            .iter()
            .enumerate()
            .map(|(v, &key)| (key, (sol.warm.z[v], sol.warm.u[v])))
            .collect();

        let c = layout.coefficients(&sol.mu);
        let w0 = recover_intercept(&sol, &layout, &qp, gram, eps);
        let cv = DVector::from_column_slice(&c);
        let kc = gram * &cv;
        let norm_sq = cv.dot(&kc).max(0.0);
        let values: Vec<f64> = kc.iter().map(|g| w0 + g).collect();

        let next = orient_dipoles(labels, &values);
        let crit = criterion_from_values(norm_sq, &values, &beta_weights(&next, n), kappa, eps);
        history.push(crit);
        current = Some((c, w0));

        let settled = (crit - prev).abs() <= stop || next == assign;
        prev = crit;
        assign = next;
        if settled {
            converged = true;
            break;
        }
    }
    let (coef, intercept) = current.expect("max_rounds >= 1");
    Ok(Run {
        coef,
        intercept,
        criterion: prev,
        history,
        converged,
    })
}

/// Fits one node's splitting surface.
///
/// The reorientation loop is a descent method on a nonconvex criterion, so it
/// runs from two starts: the best median hyperplane, and the orientation
/// implied by survival times. The run with the lower final criterion wins,
/// ties going to the hyperplane start.
pub fn fit_split(
    d: &Dataset,
    labels: &DipoleLabels,
    spec: &KernelSpec,
    params: &SplitParams,
) -> Result<SplitFit> {
    params.validate()?;
    spec.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let n = d.n();
    let (kappa, eps) = (params.kappa, params.epsilon);
    let (initial, initial_criterion) = initial_hyperplane(d, labels, kappa, eps)?;

    let points: Vec<&[f64]> = (0..n).map(|i| d.covariates(i)).collect();
    let gram = gram_matrix(spec, &points)?;
    let stop = params.tau * initial_criterion.abs();

    let init_values: Vec<f64> = points.iter().map(|x| initial.value(x)).collect();
    let from_plane = orient_dipoles(labels, &init_values);
    let from_times = time_orientation(d, labels);

    let mut best = reorient_loop(labels, &gram, from_plane.clone(), initial_criterion, stop, params)?;
    if from_times != from_plane {
        let alt = reorient_loop(labels, &gram, from_times, f64::INFINITY, stop, params)?;
        if alt.criterion < best.criterion {
            best = alt;
        }
    }

    let support = best
        .coef
        .iter()
        .enumerate()
        .filter(|(_, &cj)| cj != 0.0)
        .map(|(j, &cj)| SupportPoint { x: points[j].to_vec(), coef: cj })
        .collect();
    let model = SplitModel {
        support,
        intercept: best.intercept,
        kernel: *spec,
        kappa,
        epsilon: eps,
        objective: best.criterion,
    };
    Ok(SplitFit {
        model,
        initial,
        initial_criterion,
        history: best.history,
        converged: best.converged,
    })
}

/// Decision values of `model` at every row of `d`.
pub fn decision_values(model: &SplitModel, d: &Dataset) -> Result<Vec<f64>> {
    (0..d.n()).map(|i| model.decision_value(d.covariates(i))).collect()
}

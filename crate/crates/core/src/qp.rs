//! Dense ADMM solver for
//!
//! ```text
//! maximize    q'x - 1/2 x'Px
//! subject to  a'x = 0,  lower <= x <= upper
//! ```
//!
//! with `P` symmetric positive semi-definite. The splitting is `x = z` where
//! the `x` step is an unconstrained quadratic (one Cholesky factorization of
//! `P + rho I`) and the `z` step projects onto the box intersected with the
//! hyperplane. That projection is computed exactly: it is a clip of
//! `v - lambda a` where the scalar `lambda` is the root of a monotone
//! piecewise-linear function.
//!
//! Whenever the set of variables sitting on a bound stays unchanged for a few
//! iterations, the solver tries to *polish*: it solves the equality-constrained
//! KKT system on the free variables and accepts the result if it satisfies all
//! KKT conditions. This turns the moderately accurate ADMM iterate into a
//! solution accurate to round-off.
//!
//! The default method is SMO instead: two variables move per step along the
//! equality constraint, chosen by second-order working-set selection. Each
//! step costs O(n), which suits these duals, where most variables end on a
//! bound and `P` is often far from full rank. Once the free set settles, a
//! dense step on that set (Newton, or a null-space ray when `P` is singular
//! there) replaces the slow tail, and the same polish finishes it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let px = &self.p * &xv;
        dot(&self.q, x) - 0.5 * xv.dot(&px)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.p.nrows() != n
            || self.p.ncols() != n
            || self.a.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
        {
            return Err(Error::Qp(format!(
                "inconsistent dimensions: P {}x{}, q {}, a {}, bounds {}/{}",
                self.p.nrows(),
                self.p.ncols(),
                n,
                self.a.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.p.as_slice()) || !finite(&self.q) || !finite(&self.a) {
            return Err(Error::Qp("non-finite input".into()));
        }
        if self.lower.iter().chain(&self.upper).any(|x| x.is_nan()) {
            return Err(Error::Qp("NaN bound".into()));
        }
        let scale = self.p.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Qp(format!("P is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Whether the box meets the hyperplane at all.
    fn is_feasible(&self) -> bool {
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return false;
        }
        let (mut lo, mut hi) = (0.0, 0.0);
        for i in 0..self.dim() {
            let (x, y) = (self.a[i] * self.lower[i], self.a[i] * self.upper[i]);
            lo += x.min(y);
            hi += x.max(y);
        }
        let slack = 1e-12 * (lo.abs() + hi.abs()).max(1.0);
        lo <= slack && hi >= -slack
    }
}

const POLISH_INTERVAL: usize = 50;
/// SMO pair updates allowed per ADMM iteration of `max_iter`.
const SMO_ITER_FACTOR: usize = 50;
const SMO_CHECK_MIN: usize = 64;
/// Largest free set handed to the dense subspace step.
const SUBSPACE_MAX: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    /// Pairwise coordinate ascent; needs `a` entries in `{-1, 1}` and falls
    /// back to ADMM otherwise.
    Smo,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: QpMethod,
    pub tol: f64,
    /// ADMM iterations; SMO gets `SMO_ITER_FACTOR` times as many O(n) steps.
    pub max_iter: usize,
    pub rho: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: QpMethod::Smo,
            tol: 1e-6,
            max_iter: 20_000,
            rho: 1.0,
            alpha: 1.6,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub mu: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Multiplier of the equality constraint (stationarity: `q - Px = nu a`
    /// on free variables).
    pub nu: f64,
    pub polished: bool,
    pub warm: WarmStart,
}

/// ADMM state carried between related solves.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn solve(problem: &QpProblem, cfg: &SolverConfig) -> Result<QpSolution> {
    solve_warm(problem, cfg, None)
}

pub fn solve_warm(
    problem: &QpProblem,
    cfg: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<QpSolution> {
    problem.validate()?;
    if !(cfg.rho > 0.0 && cfg.alpha > 0.0 && cfg.alpha < 2.0 && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("bad solver config {cfg:?}")));
    }
    let n = problem.dim();
    if !problem.is_feasible() {
        let mu = vec![0.0; n];
        return Ok(QpSolution {
            objective: f64::NAN,
            mu,
            iterations: 0,
            status: QpStatus::Infeasible,
            nu: 0.0,
            polished: false,
            warm: WarmStart::default(),
        });
    }
    if n == 0 {
        return Ok(QpSolution {
            mu: Vec::new(),
            objective: 0.0,
            iterations: 0,
            status: QpStatus::Solved,
            nu: 0.0,
            polished: false,
            warm: WarmStart::default(),
        });
    }

    let signed = problem.a.iter().all(|&a| a == 1.0 || a == -1.0);
    match cfg.method {
        QpMethod::Smo if signed => Ok(smo(problem, cfg, warm)),
        _ => admm(problem, cfg, warm),
    }
}

fn admm(problem: &QpProblem, cfg: &SolverConfig, warm: Option<&WarmStart>) -> Result<QpSolution> {
    let n = problem.dim();
    let rho = cfg.rho;
    let jitter = 1e-10 * problem.p.trace().abs() / n as f64;
    let mut m = problem.p.clone();
    for i in 0..n {
        m[(i, i)] += rho + jitter;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Qp("P + rho I is not positive definite".into()))?;

    let q = DVector::from_column_slice(&problem.q);
    let (mut z, mut u) = match warm {
        Some(w) if w.z.len() == n && w.u.len() == n => {
            (DVector::from_column_slice(&w.z), DVector::from_column_slice(&w.u))
        }
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };
    z = DVector::from_vec(project(problem, z.as_slice()));

    let mut active = active_set(problem, z.as_slice());
    let mut stable = 0usize;
    let mut next_polish = 5usize;
    let mut last_tried = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        let rhs = &q + (&z - &u) * rho;
        let x = chol.solve(&rhs);
        let x_hat = &x * cfg.alpha + &z * (1.0 - cfg.alpha);
        let v = &x_hat + &u;
        let z_new = DVector::from_vec(project(problem, v.as_slice()));
        u += &x_hat - &z_new;

        let r_prim = (&x - &z_new).amax();
        let r_dual = rho * (&z_new - &z).amax();
        z = z_new;

        let scale_prim = x.amax().max(z.amax());
        let scale_dual = q.amax().max(rho * u.amax());
        converged = r_prim <= cfg.tol * (1.0 + scale_prim) && r_dual <= cfg.tol * (1.0 + scale_dual);

        let now = active_set(problem, z.as_slice());
        if now == active {
            stable += 1;
        } else {
            active = now;
            stable = 0;
            next_polish = 5;
        }
        // also retry periodically with whatever bound pattern is current
        let periodic = iterations % POLISH_INTERVAL == 0 && active != last_tried;
        if cfg.polish && (converged || stable == next_polish || periodic) {
            if stable == next_polish {
                next_polish *= 4;
            }
            last_tried = active.clone();
            if let Some((mu, nu)) = polish(problem, &active, z.as_slice(), cfg.tol) {
                log::debug!("qp: dim {n}, polished after {iterations} iterations");
                return Ok(finish(problem, mu, nu, iterations, true, &z, &u));
            }
        }
        if converged {
            break;
        }
    }

    log::debug!("qp: dim {n}, {iterations} iterations, converged {converged}");
    let mu: Vec<f64> = z.iter().copied().collect();
    let nu = estimate_nu(problem, &mu, &active);
    let mut sol = finish(problem, mu, nu, iterations, false, &z, &u);
    if !converged {
        sol.status = QpStatus::MaxIter;
    }
    Ok(sol)
}

/// SMO on `min 1/2 x'Px - q'x` with `a` in `{-1, 1}`. `g = Px - q` is kept
/// current; each step moves one pair along the hyperplane by the exact line
/// minimizer clipped to the box.
///
/// With a low-rank `P` plain SMO crawls along flat directions once the free
/// set has settled, so every `n` steps a settled free set gets a subspace step
/// followed by a polish attempt.
fn smo(problem: &QpProblem, cfg: &SolverConfig, warm: Option<&WarmStart>) -> QpSolution {
    let n = problem.dim();
    let (p, y, l, u) = (&problem.p, &problem.a, &problem.lower, &problem.upper);
    let mut x = match warm {
        Some(w) if w.z.len() == n => project(problem, &w.z),
        _ => project(problem, &vec![0.0; n]),
    };
    let mut g: Vec<f64> = (0..n)
        .map(|t| (0..n).map(|k| p[(t, k)] * x[k]).sum::<f64>() - problem.q[t])
        .collect();

    let cap = cfg.max_iter.saturating_mul(SMO_ITER_FACTOR);
    let check_every = n.max(SMO_CHECK_MIN);
    // gap is measured against the size of Px and q; polish restores full accuracy
    let mut rel = cfg.tol;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_free: Vec<usize> = Vec::new();
    for _round in 0..2 {
        converged = false;
        let scale = (0..n).fold(1.0f64, |m, t| m.max(problem.q[t].abs()).max((g[t] + problem.q[t]).abs()));
        let tol = rel * scale;
        while iterations < cap {
            // up: x_t may move by +y_t; low: by -y_t
            let up = |t: usize| (y[t] > 0.0 && x[t] < u[t]) || (y[t] < 0.0 && x[t] > l[t]);
            let low = |t: usize| (y[t] > 0.0 && x[t] > l[t]) || (y[t] < 0.0 && x[t] < u[t]);
            let mut i = usize::MAX;
            let mut g_max = f64::NEG_INFINITY;
            for t in 0..n {
                if up(t) && -y[t] * g[t] > g_max {
                    g_max = -y[t] * g[t];
                    i = t;
                }
            }
            if i == usize::MAX {
                converged = true;
                break;
            }
            let mut j = usize::MAX;
            let mut g_min = f64::INFINITY;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !low(t) {
                    continue;
                }
                let s = -y[t] * g[t];
                g_min = g_min.min(s);
                let b = g_max - s;
                if b > 0.0 {
                    let curv = p[(i, i)] + p[(t, t)] - 2.0 * y[i] * y[t] * p[(i, t)];
                    let gain = -b * b / if curv > 0.0 { curv } else { 1e-12 };
                    if gain < best {
                        best = gain;
                        j = t;
                    }
                }
            }
            if g_max - g_min <= tol || j == usize::MAX {
                converged = true;
                break;
            }
            iterations += 1;

            if iterations % check_every == 0 {
                let free: Vec<usize> = (0..n).filter(|&t| x[t] > l[t] && x[t] < u[t]).collect();
                if free == last_free && !free.is_empty() && free.len() <= SUBSPACE_MAX {
                    let full = subspace_step(problem, &mut x, &mut g, &free);
                    if full && cfg.polish {
                        let active = active_set(problem, &x);
                        if let Some((mu, nu)) = polish(problem, &active, &x, cfg.tol) {
                            log::debug!("qp: dim {n}, smo polished after {iterations} steps");
                            let z = DVector::from_column_slice(&mu);
                            return finish(problem, mu, nu, iterations, true, &z, &DVector::zeros(n));
                        }
                    }
                    last_free.clear();
                    continue;
                }
                last_free = free;
            }

            let curv = p[(i, i)] + p[(j, j)] - 2.0 * y[i] * y[j] * p[(i, j)];
            let b = g_max + y[j] * g[j];
            let mut d = if curv > 0.0 { b / curv } else { f64::INFINITY };
            let room_i = if y[i] > 0.0 { u[i] - x[i] } else { x[i] - l[i] };
            let room_j = if y[j] > 0.0 { x[j] - l[j] } else { u[j] - x[j] };
            d = d.min(room_i).min(room_j);
            if !(d > 0.0 && d.is_finite()) {
                // unbounded descent cannot happen on a box with finite ends
                break;
            }
            let (old_i, old_j) = (x[i], x[j]);
            x[i] = if d == room_i { if y[i] > 0.0 { u[i] } else { l[i] } } else { x[i] + y[i] * d };
            x[j] = if d == room_j { if y[j] > 0.0 { l[j] } else { u[j] } } else { x[j] - y[j] * d };
            let (di, dj) = (x[i] - old_i, x[j] - old_j);
            for t in 0..n {
                g[t] += p[(t, i)] * di + p[(t, j)] * dj;
            }
        }
        if !cfg.polish {
            break;
        }
        let active = active_set(problem, &x);
        if let Some((mu, nu)) = polish(problem, &active, &x, cfg.tol) {
            log::debug!("qp: dim {n}, smo polished after {iterations} steps");
            let z = DVector::from_column_slice(&mu);
            return finish(problem, mu, nu, iterations, true, &z, &DVector::zeros(n));
        }
        rel *= 1e-3;
    }

    log::debug!("qp: dim {n}, smo {iterations} steps, converged {converged}");
    let active = active_set(problem, &x);
    let nu = estimate_nu(problem, &x, &active);
    let z = DVector::from_column_slice(&x);
    let mut sol = finish(problem, x, nu, iterations, false, &z, &DVector::zeros(n));
    if !converged {
        sol.status = QpStatus::MaxIter;
    }
    sol
}

/// Minimizes over the `free` variables with the rest held where they are.
/// Takes the Newton step of the equality-constrained subproblem, or, when
/// that subproblem is unbounded, the descent ray in the null space of `P_FF`;
/// either is cut at the first bound. Returns whether the full Newton step
/// was taken.
fn subspace_step(problem: &QpProblem, x: &mut [f64], g: &mut [f64], free: &[usize]) -> bool {
    let (p, a, l, u) = (&problem.p, &problem.a, &problem.lower, &problem.upper);
    let k = free.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(r, c)] = p[(i, j)];
        }
        kkt[(r, k)] = a[i];
        kkt[(k, r)] = a[i];
        rhs[r] = -g[i];
    }
    let svd = kkt.clone().svd(true, true);
    let cut = 1e-10 * svd.singular_values.max();
    let Ok(sol) = svd.solve(&rhs, cut) else {
        return false;
    };
    // rhs - K pinv(K) rhs is the part of -g_F in the null space
    let resid = &rhs - &kkt * &sol;
    let newton = resid.rows(0, k).amax() <= 1e-9 * rhs.amax();
    let mut dir: Vec<f64> = if newton { sol.rows(0, k).iter().copied().collect() } else { resid.rows(0, k).iter().copied().collect() };
    let ad: f64 = free.iter().zip(&dir).map(|(&i, d)| a[i] * d).sum();
    let aa: f64 = free.iter().map(|&i| a[i] * a[i]).sum();
    for (d, &i) in dir.iter_mut().zip(free) {
        *d -= ad / aa * a[i];
    }
    let slope: f64 = free.iter().zip(&dir).map(|(&i, d)| g[i] * d).sum();
    if !(slope < 0.0) {
        return false;
    }

    let mut step = if newton { 1.0 } else { f64::INFINITY };
    let mut block = None;
    for (r, &i) in free.iter().enumerate() {
        let limit = if dir[r] > 0.0 {
            (u[i] - x[i]) / dir[r]
        } else if dir[r] < 0.0 {
            (l[i] - x[i]) / dir[r]
        } else {
            continue;
        };
        if limit < step {
            step = limit;
            block = Some(r);
        }
    }
    if !(step > 0.0 && step.is_finite()) {
        return false;
    }
    for (r, &i) in free.iter().enumerate() {
        let old = x[i];
        x[i] = if block == Some(r) {
            if dir[r] > 0.0 { u[i] } else { l[i] }
        } else {
            (x[i] + step * dir[r]).clamp(l[i], u[i])
        };
        let delta = x[i] - old;
        if delta != 0.0 {
            for (t, gt) in g.iter_mut().enumerate() {
                *gt += p[(t, i)] * delta;
            }
        }
    }
    newton && block.is_none()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QpProblem,
    mu: Vec<f64>,
    nu: f64,
    iterations: usize,
    polished: bool,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> QpSolution {
    let warm = WarmStart {
        z: if polished { mu.clone() } else { z.iter().copied().collect() },
        u: u.iter().copied().collect(),
    };
    QpSolution {
        objective: problem.objective(&mu),
        mu,
        iterations,
        status: QpStatus::Solved,
        nu,
        polished,
        warm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
    /// lower == upper
    Fixed,
}

fn active_set(problem: &QpProblem, z: &[f64]) -> Vec<Bound> {
    z.iter()
        .enumerate()
        .map(|(i, &zi)| {
            let (l, u) = (problem.lower[i], problem.upper[i]);
            if l == u {
                Bound::Fixed
            } else if zi <= l {
                Bound::Lower
            } else if zi >= u {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect()
}

/// Euclidean projection onto `{x : a'x = 0, lower <= x <= upper}`.
pub fn project(problem: &QpProblem, v: &[f64]) -> Vec<f64> {
    let (a, l, u) = (&problem.a, &problem.lower, &problem.upper);
    let clip_at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, &vi)| (vi - lambda * a[i]).clamp(l[i], u[i]))
            .collect()
    };
    let h = |lambda: f64| -> f64 {
        v.iter()
            .enumerate()
            .filter(|&(i, _)| a[i] != 0.0)
            .map(|(i, &vi)| a[i] * (vi - lambda * a[i]).clamp(l[i], u[i]))
            .sum()
    };
    if a.iter().all(|&ai| ai == 0.0) {
        return clip_at(0.0);
    }

    // h is nonincreasing in lambda; the root lies between the breakpoints.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..v.len() {
        if a[i] != 0.0 {
            for b in [l[i], u[i]] {
                if b.is_finite() {
                    let t = (v[i] - b) / a[i];
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = -1e300;
        hi = 1e300;
    }
    let h0 = h(0.0);
    if h0 == 0.0 {
        return clip_at(0.0);
    }
    if h0 > 0.0 {
        lo = lo.max(0.0);
    } else {
        hi = hi.min(0.0);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    // Exact root on the linear piece containing the bracket.
    let mid = 0.5 * (lo + hi);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..v.len() {
        if a[i] == 0.0 {
            continue;
        }
        let w = v[i] - mid * a[i];
        if w > l[i] && w < u[i] {
            num += a[i] * v[i];
            den += a[i] * a[i];
        } else {
            num += a[i] * w.clamp(l[i], u[i]);
        }
    }
    let lambda = if den > 0.0 { (num / den).clamp(lo, hi) } else { mid };
    clip_at(lambda)
}

/// Solves the KKT system with the active set frozen; returns the point and
/// equality multiplier if every KKT condition holds.
fn polish(problem: &QpProblem, active: &[Bound], z: &[f64], tol: f64) -> Option<(Vec<f64>, f64)> {
    let n = problem.dim();
    let free: Vec<usize> = (0..n).filter(|&i| active[i] == Bound::Free).collect();
    let mut x: Vec<f64> = z.to_vec();
    for i in 0..n {
        match active[i] {
            Bound::Lower | Bound::Fixed => x[i] = problem.lower[i],
            Bound::Upper => x[i] = problem.upper[i],
            Bound::Free => {}
        }
    }
    let p = &problem.p;
    let a = &problem.a;
    let kkt_scale = problem.q.iter().fold(1.0f64, |m, v| m.max(v.abs())).max(p.amax());
    let kkt_tol = tol * kkt_scale;

    let a_free_nonzero = free.iter().any(|&i| a[i] != 0.0);
    let mut nu_fixed: Option<f64> = None;

    if !free.is_empty() {
        let k = free.len();
        // right-hand side: q_F - P_FB x_B
        let mut rhs = DVector::zeros(k + 1);
        for (r, &i) in free.iter().enumerate() {
            let mut s = problem.q[i];
            for j in 0..n {
                if active[j] != Bound::Free {
                    s -= p[(i, j)] * x[j];
                }
            }
            rhs[r] = s;
        }
        let eq_b: f64 = (0..n).filter(|&j| active[j] != Bound::Free).map(|j| a[j] * x[j]).sum();
        rhs[k] = -eq_b;

        let size = if a_free_nonzero { k + 1 } else { k };
        let mut kkt = DMatrix::zeros(size, size);
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                kkt[(r, c)] = p[(i, j)];
            }
            if a_free_nonzero {
                kkt[(r, k)] = a[i];
                kkt[(k, r)] = a[i];
            }
        }
        let rhs = rhs.rows(0, size).into_owned();
        let delta = 1e-9 * (1.0 + p.amax());
        let mut reg = kkt.clone();
        for r in 0..k {
            reg[(r, r)] += delta;
        }
        if a_free_nonzero {
            reg[(k, k)] -= delta;
        }
        let lu = reg.lu();
        // Correct the incoming iterate rather than solving from scratch: when
        // P_FF is singular the refinement then lands on the KKT point nearest
        // to it, which stays inside the box.
        let mut start = DVector::zeros(size);
        for (r, &i) in free.iter().enumerate() {
            start[r] = z[i];
        }
        if a_free_nonzero {
            start[k] = estimate_nu(problem, z, active);
        }
        let mut sol = &start + lu.solve(&(&rhs - &kkt * &start))?;
        let mut resid = (&rhs - &kkt * &sol).amax();
        // refine until the regularization error is gone or progress stalls
        for _ in 0..30 {
            if resid <= 1e-15 * kkt_scale {
                break;
            }
            let step = lu.solve(&(&rhs - &kkt * &sol))?;
            let cand = &sol + step;
            let r = (&rhs - &kkt * &cand).amax();
            if !(r < resid) {
                break;
            }
            sol = cand;
            resid = r;
        }
        if !(resid <= kkt_tol) || sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (r, &i) in free.iter().enumerate() {
            let xi = sol[r];
            let slack = tol * (1.0 + xi.abs());
            if xi < problem.lower[i] - slack || xi > problem.upper[i] + slack {
                return None;
            }
            x[i] = xi.clamp(problem.lower[i], problem.upper[i]);
        }
        if a_free_nonzero {
            nu_fixed = Some(sol[k]);
        }
    }

    // equality must hold
    let eq: f64 = dot(a, &x);
    let eq_scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if eq.abs() > 1e-9 * eq_scale.max(1.0) {
        return None;
    }

    // d = q - Px ; optimality: d_i - nu a_i = 0 (free), <= 0 at lower, >= 0 at upper
    let xv = DVector::from_column_slice(&x);
    let d: Vec<f64> = (DVector::from_column_slice(&problem.q) - p * &xv)
        .iter()
        .copied()
        .collect();
    let nu = match nu_fixed {
        Some(nu) => nu,
        None => {
            let (lo, hi) = nu_interval(problem, &d, active);
            if lo > hi + kkt_tol {
                return None;
            }
            pick_in(lo, hi)
        }
    };
    for i in 0..n {
        let g = d[i] - nu * a[i];
        let ok = match active[i] {
            Bound::Free => g.abs() <= kkt_tol,
            Bound::Lower => g <= kkt_tol,
            Bound::Upper => g >= -kkt_tol,
            Bound::Fixed => true,
        };
        if !ok {
            return None;
        }
    }
    Some((x, nu))
}

/// Range of `nu` compatible with the bound conditions on `d = q - Px`.
fn nu_interval(problem: &QpProblem, d: &[f64], active: &[Bound]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (i, &b) in active.iter().enumerate() {
        let ai = problem.a[i];
        if ai == 0.0 {
            continue;
        }
        // Lower: d - nu a <= 0 ; Upper: d - nu a >= 0
        let t = d[i] / ai;
        match (b, ai > 0.0) {
            (Bound::Lower, true) | (Bound::Upper, false) => lo = lo.max(t),
            (Bound::Lower, false) | (Bound::Upper, true) => hi = hi.min(t),
            (Bound::Free, _) => {
                lo = lo.max(t);
                hi = hi.min(t);
            }
            (Bound::Fixed, _) => {}
        }
    }
    (lo, hi)
}

fn pick_in(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

fn estimate_nu(problem: &QpProblem, x: &[f64], active: &[Bound]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let d: Vec<f64> = (DVector::from_column_slice(&problem.q) - &problem.p * &xv)
        .iter()
        .copied()
        .collect();
    let free: Vec<f64> = (0..x.len())
        .filter(|&i| active[i] == Bound::Free && problem.a[i] != 0.0)
        .map(|i| d[i] / problem.a[i])
        .collect();
    if !free.is_empty() {
        return free.iter().sum::<f64>() / free.len() as f64;
    }
    let (lo, hi) = nu_interval(problem, &d, active);
    pick_in(lo, hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

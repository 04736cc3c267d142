//! Concordance index and inverse-probability-of-censoring weighted Brier
//! scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::KaplanMeier;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Share of usable ordered pairs whose predicted medians are ordered like
/// their times. Pairs with tied predictions are excluded from both sums;
/// `None` when no usable pair remains.
pub fn concordance_index(pred: &[f64], times: &[f64], events: &[bool]) -> Result<Option<f64>> {
    check_lengths(pred.len(), times.len())?;
    check_lengths(pred.len(), events.len())?;
    let (mut num, mut den) = (0u64, 0u64);
    for i in 0..pred.len() {
        if !events[i] {
            continue;
        }
        for j in 0..pred.len() {
            if times[i] < times[j] && pred[i] != pred[j] {
                den += 1;
                num += (pred[i] < pred[j]) as u64;
            }
        }
    }
    Ok((den > 0).then(|| num as f64 / den as f64))
}

/// Kaplan-Meier estimate of the censoring distribution.
pub fn censoring_km(times: &[f64], events: &[bool]) -> KaplanMeier {
    let flipped: Vec<(f64, bool)> = times.iter().zip(events).map(|(&t, &e)| (t, !e)).collect();
    KaplanMeier::fit(&flipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierPoint {
    pub t: f64,
    pub score: f64,
    /// Observations left out because their censoring weight was zero.
    pub dropped: usize,
}

/// Brier score at `t`. Both terms are weighted by `1 / G(t_i-)`.
pub fn brier_score(
    curves: &[&KaplanMeier],
    times: &[f64],
    events: &[bool],
    g: &KaplanMeier,
    t: f64,
) -> Result<BrierPoint> {
    check_lengths(curves.len(), times.len())?;
    check_lengths(curves.len(), events.len())?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("Brier time must be >= 0, got {t}")));
    }
    let (mut total, mut kept, mut dropped) = (0.0, 0usize, 0usize);
    for i in 0..curves.len() {
        let w = g.survival_before(times[i]);
        if w <= 0.0 {
            dropped += 1;
            continue;
        }
        kept += 1;
        let s = curves[i].survival_at(t);
        if times[i] <= t && events[i] {
            total += s * s / w;
        } else if times[i] > t {
            total += (1.0 - s) * (1.0 - s) / w;
        }
    }
    let score = if kept > 0 { total / kept as f64 } else { 0.0 };
    Ok(BrierPoint { t, score, dropped })
}

/// Trapezoid knots: 0, the distinct uncensored times and the largest time.
pub fn brier_grid(times: &[f64], events: &[bool]) -> Vec<f64> {
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t))
        .chain(times.iter().copied().reduce(f64::max))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Trapezoid integral of `(t, BS(t))` divided by the last knot.
pub fn integrated_brier(curve: &[(f64, f64)]) -> Result<f64> {
    let Some(&(t_max, _)) = curve.last() else {
        return Err(Error::InvalidParameter("empty Brier curve".into()));
    };
    if !(t_max > 0.0) {
        return Err(Error::InvalidParameter("Brier curve must extend past 0".into()));
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok(area / t_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    pub ci: Option<f64>,
    pub ibs: f64,
    pub brier_curve: Vec<BrierPoint>,
    /// Largest number of observations dropped at any grid time.
    pub ipcw_dropped: usize,
}

/// CI from predicted medians and IBS from the per-observation curves.
pub fn evaluate(
    curves: &[&KaplanMeier],
    medians: &[f64],
    times: &[f64],
    events: &[bool],
) -> Result<EvalReport> {
    if times.is_empty() {
        return Err(Error::InvalidData("no test observations".into()));
    }
    let ci = concordance_index(medians, times, events)?;
    let g = censoring_km(times, events);
    let brier_curve = brier_grid(times, events)
        .into_iter()
        .map(|t| brier_score(curves, times, events, &g, t))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = brier_curve.iter().map(|b| (b.t, b.score)).collect();
    Ok(EvalReport {
        n_test: times.len(),
        ci,
        ibs: integrated_brier(&pts)?,
        ipcw_dropped: brier_curve.iter().map(|b| b.dropped).max().unwrap_or(0),
        brier_curve,
    })
}

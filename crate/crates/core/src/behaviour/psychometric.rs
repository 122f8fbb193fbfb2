//! Psychometric function in ln(ratio) with lapse and position bias.
//!
//! p(correct) = 0.5 + (0.5 - lapse) · tanh((slope · x + bias · pos) / 2),
//! x = ln(ratio), pos = +1 when the larger option is first. This is the
//! logistic 2·σ(z) - 1 rescaled onto [0.5, 1 - lapse], so the curve sits at
//! chance at ratio 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{position_code, BehaviourError, TrialRecord};
use crate::stats::optimize::nelder_mead;

pub const MAX_LAPSE: f64 = 0.1;
pub const MAX_RESTARTS: usize = 50;
const FTOL: f64 = 1e-6;
const MAX_EVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WfStatus {
    Finite,
    /// Threshold lies below the smallest tested ratio.
    BelowRange,
    /// The fitted curve does not reach 75% within ten times the largest
    /// tested ratio.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub slope: f64,
    pub lapse: f64,
    pub position_bias: f64,
    /// r* - 1 with r* the ratio at which the position-averaged curve is 0.75;
    /// infinite when unbounded.
    pub wf: f64,
    pub wf_status: WfStatus,
    /// -2 log-likelihood.
    pub deviance: f64,
    pub converged: bool,
    pub restarts: usize,
}

impl PsychometricFit {
    pub fn predict(&self, ratio: f64, position: f64) -> f64 {
        predict(self.slope, self.lapse, self.position_bias, ratio.ln(), position)
    }

    /// Average of the two position-specific curves.
    pub fn predict_marginal(&self, ratio: f64) -> f64 {
        marginal(self.slope, self.lapse, self.position_bias, ratio.ln())
    }
}

fn predict(slope: f64, lapse: f64, bias: f64, x: f64, pos: f64) -> f64 {
    0.5 + (0.5 - lapse) * ((slope * x + bias * pos) / 2.0).tanh()
}

fn marginal(slope: f64, lapse: f64, bias: f64, x: f64) -> f64 {
    0.5 * (predict(slope, lapse, bias, x, 1.0) + predict(slope, lapse, bias, x, -1.0))
}

/// Aggregated binomial cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cell {
    pub x: f64,
    pub pos: f64,
    pub k: f64,
    pub n: f64,
}

pub(crate) fn cells_from(trials: &[TrialRecord], weights: &[f64]) -> Vec<Cell> {
    let mut map: BTreeMap<(u64, i8), (f64, f64)> = BTreeMap::new();
    for (t, w) in trials.iter().zip(weights) {
        if !t.is_valid() || *w <= 0.0 {
            continue;
        }
        let pos = position_code(t.large_position);
        let e = map.entry((t.ratio.to_bits(), pos as i8)).or_default();
        e.0 += w * t.correct as u8 as f64;
        e.1 += w;
    }
    map.into_iter()
        .map(|((r, p), (k, n))| Cell {
            x: f64::from_bits(r).ln(),
            pos: p as f64,
            k,
            n,
        })
        .collect()
}

fn unpack(theta: &[f64]) -> (f64, f64, f64) {
    let slope = theta[0].clamp(-20.0, 12.0).exp();
    let lapse = MAX_LAPSE / (1.0 + (-theta[1].clamp(-40.0, 40.0)).exp());
    (slope, lapse, theta[2])
}

fn nll(cells: &[Cell], theta: &[f64]) -> f64 {
    let (slope, lapse, bias) = unpack(theta);
    cells
        .iter()
        .map(|c| {
            let p = predict(slope, lapse, bias, c.x, c.pos).clamp(1e-12, 1.0 - 1e-12);
            -(c.k * p.ln() + (c.n - c.k) * (1.0 - p).ln())
        })
        .sum()
}

pub(crate) fn default_starts() -> Vec<[f64; 3]> {
    let mut v = Vec::new();
    for s in [0.5f64, 2.0, 6.0, 15.0, 40.0] {
        for l in [-3.0, 0.0] {
            v.push([s.ln(), l, 0.0]);
        }
    }
    v
}

/// Maximum-likelihood fit over aggregated cells from the given starts, then
/// repeated restarts from the incumbent until the simplex converges.
pub(crate) fn fit_cells(cells: &[Cell], starts: &[[f64; 3]]) -> Result<PsychometricFit, BehaviourError> {
    let f = |t: &[f64]| nll(cells, t);
    let step = [0.5, 1.0, 0.2];
    let mut best = None::<crate::stats::optimize::SimplexResult>;
    for s in starts {
        let r = nelder_mead(&f, s, &step, FTOL, MAX_EVALS);
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut best = best.ok_or_else(|| BehaviourError::Insufficient("no starting points".into()))?;
    let mut restarts = 0;
    // restart from the incumbent: a converged restart that does not move
    // confirms the optimum
    loop {
        let r = nelder_mead(&f, &best.x, &[0.1, 0.3, 0.05], FTOL, MAX_EVALS);
        restarts += 1;
        let improved = best.value - r.value;
        if r.value < best.value {
            best = r.clone();
        }
        if r.converged && improved.abs() <= 10.0 * FTOL {
            break;
        }
        if restarts >= MAX_RESTARTS {
            return Err(BehaviourError::NoConvergence(MAX_RESTARTS));
        }
    }
    let (slope, lapse, bias) = unpack(&best.x);
    let min_ratio = cells.iter().map(|c| c.x).fold(f64::INFINITY, f64::min).exp();
    let max_ratio = cells.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max).exp();
    let (wf, wf_status) = threshold(slope, lapse, bias, min_ratio, max_ratio);
    Ok(PsychometricFit {
        slope,
        lapse,
        position_bias: bias,
        wf,
        wf_status,
        deviance: 2.0 * best.value,
        converged: true,
        restarts,
    })
}

fn threshold(slope: f64, lapse: f64, bias: f64, min_ratio: f64, max_ratio: f64) -> (f64, WfStatus) {
    let x_max = (10.0 * max_ratio).ln();
    if marginal(slope, lapse, bias, x_max) < 0.75 {
        return (f64::INFINITY, WfStatus::Unbounded);
    }
    let (mut lo, mut hi) = (0.0, x_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal(slope, lapse, bias, mid) < 0.75 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let wf = (0.5 * (lo + hi)).exp() - 1.0;
    let status = if wf < min_ratio - 1.0 { WfStatus::BelowRange } else { WfStatus::Finite };
    (wf, status)
}

/// Fits the psychometric function to valid trials (nominal ratios).
pub fn fit_psychometric(trials: &[TrialRecord]) -> Result<PsychometricFit, BehaviourError> {
    let cells = cells_from(trials, &vec![1.0; trials.len()]);
    let mut ratios: Vec<u64> = cells.iter().map(|c| c.x.to_bits()).collect();
    ratios.sort_unstable();
    ratios.dedup();
    if ratios.len() < 3 {
        return Err(BehaviourError::Insufficient(format!(
            "psychometric fit needs at least 3 ratio levels, got {}",
            ratios.len()
        )));
    }
    fit_cells(&cells, &default_starts())
}

/// Parameters of a fit in the optimiser's coordinates, for warm starts.
pub(crate) fn theta_of(fit: &PsychometricFit) -> [f64; 3] {
    let l = (fit.lapse / MAX_LAPSE).clamp(1e-12, 1.0 - 1e-12);
    [fit.slope.ln(), (l / (1.0 - l)).ln(), fit.position_bias]
}

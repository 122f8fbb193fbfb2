//! Residual periodicity diagnostic for a fitted geometry.

use serde::{Deserialize, Serialize};

use super::fit::GeometricFit;
use super::rdm::{theoretical_raw, Rdm};
use super::GeometryError;
use crate::stats::spectral::{frequency_grid, lomb_scargle};

pub const TRIGGER_R2: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Abscissa the residuals were ordered by: "n" or "ln_n".
    pub axis: String,
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub dominant_period: Option<f64>,
    pub dominant_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityResult {
    pub trigger: bool,
    pub r2: f64,
    pub mean_residuals: Vec<f64>,
    pub by_n: Periodogram,
    pub by_log_n: Periodogram,
}

fn periodogram(axis: &str, t: &[f64], y: &[f64]) -> Periodogram {
    let frequencies = frequency_grid(t, 10.0, 1.0);
    let power = lomb_scargle(t, y, &frequencies);
    let best = power
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .max_by(|a, b| a.1.total_cmp(b.1));
    Periodogram {
        axis: axis.to_string(),
        dominant_period: best.map(|(i, _)| 1.0 / frequencies[i]),
        dominant_power: best.map_or(0.0, |(_, p)| *p),
        frequencies,
        power,
    }
}

/// Per-magnitude mean residuals of `fit` on `rdm` and their Lomb–Scargle
/// periodograms against n and ln n. The trigger fires when R² < 0.20.
pub fn residual_periodicity(fit: &GeometricFit, rdm: &Rdm) -> Result<PeriodicityResult, GeometryError> {
    if fit.rdm_checksum != rdm.checksum() {
        return Err(GeometryError::ChecksumMismatch);
    }
    let n = rdm.n();
    let pred = theoretical_raw(&rdm.magnitudes, fit.kind, fit.beta)?;
    let mut mean_residuals = vec![0.0; n];
    for (i, slot) in mean_residuals.iter_mut().enumerate() {
        let s: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| rdm.get(i, j) - fit.a - fit.b * pred.get(i, j))
            .sum();
        *slot = s / (n - 1) as f64;
    }
    // round-off from an exact fit is not a signal
    let scale = rdm.upper().iter().map(|v| v.abs()).fold(0.0, f64::max);
    if mean_residuals.iter().all(|r| r.abs() <= 1e-10 * scale.max(1e-300)) {
        mean_residuals.iter_mut().for_each(|r| *r = 0.0);
    }
    let logn: Vec<f64> = rdm.magnitudes.iter().map(|m| m.ln()).collect();
    Ok(PeriodicityResult {
        trigger: fit.r2 < TRIGGER_R2,
        r2: fit.r2,
        by_n: periodogram("n", &rdm.magnitudes, &mean_residuals),
        by_log_n: periodogram("ln_n", &logn, &mean_residuals),
        mean_residuals,
    })
}

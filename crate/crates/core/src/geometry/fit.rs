//! Least-squares fits of empirical distances to the three model predictors.

use serde::{Deserialize, Serialize};

use super::rdm::{theoretical_raw, ModelKind, Rdm};
use super::GeometryError;
use crate::stats::optimize::golden_section;
use crate::stats::regression::simple_ols;

pub const BETA_MIN: f64 = 0.01;
pub const BETA_MAX: f64 = 2.0;
pub const BETA_STEP: f64 = 0.005;
pub const BETA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub kind: ModelKind,
    pub a: f64,
    pub b: f64,
    pub beta: Option<f64>,
    pub r2: f64,
    pub rss: f64,
    pub aic: f64,
    pub n_params: usize,
    pub rdm_checksum: u64,
}

/// `m ln(RSS/m) + 2k`, k counting the error variance. RSS is floored so a
/// perfect fit still has a finite criterion.
pub fn aic(rss: f64, tss: f64, m: usize, n_params: usize) -> f64 {
    let floor = (tss * 1e-24).max(1e-300);
    let mf = m as f64;
    mf * (rss.max(floor) / mf).ln() + 2.0 * (n_params + 1) as f64
}

fn ols_against(rdm: &Rdm, predictor: &Rdm) -> Option<(f64, f64, f64, f64)> {
    let fit = simple_ols(&predictor.upper(), &rdm.upper())?;
    Some((fit.intercept, fit.slope, fit.rss, fit.tss))
}

fn stevens_rss(rdm: &Rdm, beta: f64) -> f64 {
    theoretical_raw(&rdm.magnitudes, ModelKind::Stevens, Some(beta))
        .ok()
        .and_then(|p| ols_against(rdm, &p))
        .map_or(f64::INFINITY, |(_, _, rss, _)| rss)
}

pub fn fit_geometry(rdm: &Rdm, kind: ModelKind) -> Result<GeometricFit, GeometryError> {
    let n = rdm.n();
    if n < 4 {
        return Err(GeometryError::Input(format!("need at least 4 magnitudes, got {n}")));
    }
    let y = rdm.upper();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(tss > 0.0) {
        return Err(GeometryError::ConstantRdm);
    }
    let beta = match kind {
        ModelKind::Stevens => {
            let steps = ((BETA_MAX - BETA_MIN) / BETA_STEP).round() as usize;
            let (best_i, _) = (0..=steps)
                .map(|i| (i, stevens_rss(rdm, BETA_MIN + i as f64 * BETA_STEP)))
                .fold((0, f64::INFINITY), |acc, (i, r)| if r < acc.1 { (i, r) } else { acc });
            let centre = BETA_MIN + best_i as f64 * BETA_STEP;
            let lo = (centre - BETA_STEP).max(BETA_MIN);
            let hi = (centre + BETA_STEP).min(BETA_MAX);
            let refined = golden_section(|b| stevens_rss(rdm, b), lo, hi, BETA_TOL);
            // keep the grid point if refinement does not improve on it
            if stevens_rss(rdm, refined) <= stevens_rss(rdm, centre) {
                Some(refined)
            } else {
                Some(centre)
            }
        }
        _ => None,
    };
    let predictor = theoretical_raw(&rdm.magnitudes, kind, beta)?;
    let (a, b, rss, tss) = ols_against(rdm, &predictor).ok_or(GeometryError::ConstantPredictor)?;
    Ok(GeometricFit {
        kind,
        a,
        b,
        beta,
        r2: 1.0 - rss / tss,
        rss,
        aic: aic(rss, tss, y.len(), kind.n_params()),
        n_params: kind.n_params(),
        rdm_checksum: rdm.checksum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicDelta {
    pub model: ModelKind,
    pub versus: ModelKind,
    /// `aic(versus) - aic(model)`; positive favours `model`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub winner: ModelKind,
    pub deltas: Vec<AicDelta>,
}

/// Minimum AIC wins; exact ties go to the model with fewer parameters.
pub fn select_model(fits: &[GeometricFit]) -> Result<ModelSelection, GeometryError> {
    if fits.len() < 2 {
        return Err(GeometryError::Input("model selection needs at least two fits".into()));
    }
    if fits.iter().any(|f| f.rdm_checksum != fits[0].rdm_checksum) {
        return Err(GeometryError::ChecksumMismatch);
    }
    let best = fits
        .iter()
        .min_by(|x, y| x.aic.total_cmp(&y.aic).then(x.n_params.cmp(&y.n_params)))
        .expect("non-empty");
    let mut deltas = Vec::new();
    for (i, x) in fits.iter().enumerate() {
        for y in &fits[i + 1..] {
            deltas.push(AicDelta {
                model: x.kind,
                versus: y.kind,
                delta: y.aic - x.aic,
            });
        }
    }
    Ok(ModelSelection {
        winner: best.kind,
        deltas,
    })
}

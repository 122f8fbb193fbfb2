//! Local precision along the magnitude line.
//!
//! For consecutive magnitudes n1 < n2 with centroids h1, h2:
//! raw = |h2 - h1| / (n2 - n1), the representational distance per unit of
//! magnitude, and normalised = |h2 - h1| / (ln n2 - ln n1). A logarithmic
//! code makes raw fall as 1/n and keeps normalised flat.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::CentroidSet;
use crate::stats::{ranks, regression::simple_ols, spearman, spearman_trend_p};

#[derive(Debug, thiserror::Error)]
pub enum PrecisionError {
    #[error("precision needs at least 3 magnitudes, got {0}")]
    TooFew(usize),
    #[error("magnitudes must be positive and strictly increasing")]
    Magnitudes,
    #[error("layer {0} out of range")]
    Layer(usize),
    #[error("only {0} usable adjacent steps after excluding coincident centroids")]
    Degenerate(usize),
    #[error("missing precision curve for layer {layer} in domain {domain}")]
    MissingLayer { domain: String, layer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub lower: f64,
    pub upper: f64,
    /// Geometric mean of the two magnitudes.
    pub midpoint: f64,
    pub distance: f64,
    pub raw_precision: f64,
    pub normalised_precision: f64,
    /// Coincident centroids; kept for reporting, left out of every statistic.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCurve {
    pub layer: usize,
    pub points: Vec<PrecisionPoint>,
    /// Spearman of raw precision against midpoint.
    pub gradient_rho: f64,
    pub gradient_p: f64,
    pub gradient_exact: bool,
    /// Slope of ln(raw) on -ln(midpoint).
    pub gamma: f64,
    /// Same regression on normalised precision; zero for a log code.
    pub gamma_normalised: f64,
    /// Coefficient of variation of normalised precision.
    pub normalised_cv: f64,
}

impl PrecisionCurve {
    pub fn negative_significant(&self, alpha: f64) -> bool {
        self.gradient_rho < 0.0 && self.gradient_p < alpha
    }
}

pub const H3_ALPHA: f64 = 0.05;
const COINCIDENT_TOL: f64 = 1e-12;

pub fn analyze_precision(cents: &CentroidSet, layer: usize) -> Result<PrecisionCurve, PrecisionError> {
    let n = cents.len();
    if n < 3 {
        return Err(PrecisionError::TooFew(n));
    }
    if layer >= cents.layers {
        return Err(PrecisionError::Layer(layer));
    }
    let m = &cents.magnitudes;
    if m[0] <= 0.0 || m.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PrecisionError::Magnitudes);
    }
    let scale = (0..n)
        .map(|i| cents.row(layer, i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let points: Vec<PrecisionPoint> = (0..n - 1)
        .map(|i| {
            let d = cents
                .row(layer, i)
                .iter()
                .zip(cents.row(layer, i + 1))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let (lo, hi) = (m[i], m[i + 1]);
            PrecisionPoint {
                lower: lo,
                upper: hi,
                midpoint: (lo * hi).sqrt(),
                distance: d,
                raw_precision: d / (hi - lo),
                normalised_precision: d / (hi.ln() - lo.ln()),
                excluded: d <= COINCIDENT_TOL * scale.max(f64::MIN_POSITIVE),
            }
        })
        .collect();
    let used: Vec<&PrecisionPoint> = points.iter().filter(|p| !p.excluded).collect();
    if used.len() < 3 {
        return Err(PrecisionError::Degenerate(used.len()));
    }
    let mid: Vec<f64> = used.iter().map(|p| p.midpoint).collect();
    let raw: Vec<f64> = used.iter().map(|p| p.raw_precision).collect();
    let norm: Vec<f64> = used.iter().map(|p| p.normalised_precision).collect();
    let gradient_rho = spearman(&raw, &mid).unwrap_or(0.0);
    let (gradient_p, gradient_exact) = spearman_trend_p(&ranks(&raw), gradient_rho);
    let neg_log_mid: Vec<f64> = mid.iter().map(|v| -v.ln()).collect();
    let slope = |ys: &[f64]| {
        let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
        simple_ols(&neg_log_mid, &ly).map_or(f64::NAN, |f| f.slope)
    };
    let mean_norm = norm.iter().sum::<f64>() / norm.len() as f64;
    Ok(PrecisionCurve {
        layer,
        gradient_rho,
        gradient_p,
        gradient_exact,
        gamma: slope(&raw),
        gamma_normalised: slope(&norm),
        normalised_cv: crate::stats::sample_sd(&norm) / mean_norm,
        points,
    })
}

/// Curves for every layer, in layer order.
pub fn analyze_precision_layers(cents: &CentroidSet) -> Result<Vec<PrecisionCurve>, PrecisionError> {
    (0..cents.layers).into_par_iter().map(|l| analyze_precision(cents, l)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPrecision {
    pub domain: String,
    pub layers_passing: usize,
    pub layers_total: usize,
    pub required: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Result {
    pub pass: bool,
    pub domains: Vec<DomainPrecision>,
    pub min_domains: usize,
}

/// Layers required for a domain to pass: a strict majority, so 17 of 32.
pub fn h3_required_layers(n_layers: usize) -> usize {
    n_layers / 2 + 1
}

/// `curves` per domain must cover layers `0..n_layers`. A layer passes on a
/// negative gradient with p < .05.
pub fn evaluate_h3(
    curves: &[(String, Vec<PrecisionCurve>)],
    n_layers: usize,
    min_domains: usize,
) -> Result<H3Result, PrecisionError> {
    let mut domains = Vec::new();
    for (name, cs) in curves {
        for layer in 0..n_layers {
            if !cs.iter().any(|c| c.layer == layer) {
                return Err(PrecisionError::MissingLayer { domain: name.clone(), layer });
            }
        }
        let passing = (0..n_layers)
            .filter(|l| cs.iter().any(|c| c.layer == *l && c.negative_significant(H3_ALPHA)))
            .count();
        let required = h3_required_layers(n_layers);
        domains.push(DomainPrecision {
            domain: name.clone(),
            layers_passing: passing,
            layers_total: n_layers,
            required,
            pass: passing >= required,
        });
    }
    let pass = domains.iter().filter(|d| d.pass).count() >= min_domains;
    Ok(H3Result { pass, domains, min_domains })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(mags: &[f64], f: impl Fn(f64) -> f64) -> CentroidSet {
        let rows = vec![mags.iter().map(|&m| vec![f(m), 0.0]).collect()];
        CentroidSet::from_rows(mags.to_vec(), rows)
    }

    #[test]
    fn exact_log_line() {
        let mags: Vec<f64> = crate::stimulus::NUMERICAL_PROBES.iter().map(|&v| v as f64).collect();
        let c = analyze_precision(&line(&mags, f64::ln), 0).unwrap();
        assert_eq!(c.gradient_rho, -1.0);
        assert!(c.gradient_p < 1e-6);
        for p in &c.points {
            assert!((p.normalised_precision - 1.0).abs() < 1e-9);
        }
        assert!(c.gamma_normalised.abs() < 1e-9);
    }

    #[test]
    fn linear_line_is_flat() {
        let mags: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let c = analyze_precision(&line(&mags, |m| 0.3 * m), 0).unwrap();
        assert!(c.gamma.abs() < 0.05);
        assert!(c.points.iter().all(|p| (p.raw_precision - 0.3).abs() < 1e-12));
    }

    #[test]
    fn coincident_points_are_excluded() {
        let mags = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let c = analyze_precision(&line(&mags, |m| if m < 3.0 { 0.0 } else { m.ln() }), 0).unwrap();
        assert!(c.points[0].excluded);
        assert_eq!(c.points.iter().filter(|p| p.excluded).count(), 1);
    }

    #[test]
    fn majority_rule() {
        assert_eq!(h3_required_layers(32), 17);
        assert_eq!(h3_required_layers(33), 17);
    }
}

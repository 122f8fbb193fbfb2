//! Representational geometry: RDMs, model fits, RSA, layer verdicts and
//! the boundary / periodicity diagnostics.

pub mod fit;
pub mod partition;
pub mod periodicity;
pub mod rdm;
pub mod rsa;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{fit_geometry, select_model, GeometricFit, ModelSelection};
pub use partition::{digit_boundary_effect, variance_partition, DigitBoundaryEffect, VariancePartition};
pub use periodicity::{residual_periodicity, PeriodicityResult};
pub use rdm::{compute_rdm, theoretical_raw, theoretical_rdm, Metric, ModelKind, Rdm};
pub use rsa::{rsa_mantel, RsaResult};

use crate::activation::CentroidSet;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{0}")]
    Input(String),
    #[error("centroid {0} has zero norm; cosine distance undefined")]
    ZeroVector(usize),
    #[error("non-positive magnitude {0}")]
    NonPositive(f64),
    #[error("RDM has zero variance")]
    ConstantRdm,
    #[error("model predictor has zero variance")]
    ConstantPredictor,
    #[error("fits were computed on different RDMs")]
    ChecksumMismatch,
    #[error("RDM sizes differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("predictors are collinear (condition number {0:.3e})")]
    Collinear(f64),
    #[error("no verdict for layer {layer} under the {metric} metric")]
    MissingLayer { layer: usize, metric: String },
}

pub const H1_ALPHA: f64 = 0.017;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: usize,
    pub metric: Metric,
    pub weber_rho: f64,
    pub linear_rho: f64,
    pub stevens_rho: f64,
    pub weber_p: f64,
    pub weber_aic: f64,
    pub linear_aic: f64,
    pub stevens_aic: f64,
    pub h1_pass: bool,
}

impl LayerVerdict {
    pub fn criterion(weber_rho: f64, linear_rho: f64, weber_p: f64, weber_aic: f64, linear_aic: f64) -> bool {
        weber_rho > linear_rho && weber_p < H1_ALPHA && weber_aic < linear_aic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPassCount {
    pub metric: Metric,
    pub passed: usize,
    pub total: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Result {
    pub pass: bool,
    pub min_pass_layers: usize,
    pub primary_layers: [usize; 2],
    pub per_metric: Vec<MetricPassCount>,
}

/// Domain-level H1: every metric present must pass at `min_pass` or more of
/// the primary layers (inclusive range).
pub fn evaluate_h1(verdicts: &[LayerVerdict], primary: [usize; 2], min_pass: usize) -> Result<H1Result, GeometryError> {
    let mut metrics: Vec<Metric> = verdicts.iter().map(|v| v.metric).collect();
    metrics.sort();
    metrics.dedup();
    if metrics.is_empty() {
        return Err(GeometryError::MissingLayer { layer: primary[0], metric: "any".into() });
    }
    let mut per_metric = Vec::new();
    for metric in metrics {
        let mut passed = 0;
        for layer in primary[0]..=primary[1] {
            let v = verdicts
                .iter()
                .find(|v| v.metric == metric && v.layer == layer)
                .ok_or_else(|| GeometryError::MissingLayer { layer, metric: metric.as_str().into() })?;
            passed += v.h1_pass as usize;
        }
        per_metric.push(MetricPassCount {
            metric,
            passed,
            total: primary[1] + 1 - primary[0],
            pass: passed >= min_pass,
        });
    }
    Ok(H1Result {
        pass: per_metric.iter().all(|m| m.pass),
        min_pass_layers: min_pass,
        primary_layers: primary,
        per_metric,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub metrics: Vec<Metric>,
    /// Inclusive layer range to analyse; all layers when absent.
    pub layers: Option<[usize; 2]>,
    /// Inclusive range entering the H1 count; defaults to `layers`.
    pub primary_layers: Option<[usize; 2]>,
    pub min_pass_layers: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub digit_bins: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Cosine, Metric::Euclidean],
            layers: None,
            primary_layers: None,
            min_pass_layers: 9,
            n_perm: 10_000,
            seed: 42,
            digit_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRsa {
    pub linear: RsaResult,
    pub weber: RsaResult,
    /// Against the stevens RDM at the fitted exponent.
    pub stevens: RsaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub metric: Metric,
    pub fits: Vec<GeometricFit>,
    pub selection: ModelSelection,
    pub rsa: ModelRsa,
    pub verdict: LayerVerdict,
    pub periodicity: PeriodicityResult,
    pub variance_partition: Option<VariancePartition>,
    pub digit_effect: Option<DigitBoundaryEffect>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub magnitudes: Vec<f64>,
    pub config: GeometryConfig,
    pub layers: Vec<LayerReport>,
    pub h1: H1Result,
}

fn rsa_seed(base: u64, layer: usize, metric: Metric, kind: ModelKind) -> u64 {
    base ^ ((layer as u64) << 16) ^ ((metric as u64) << 8) ^ kind as u64
}

pub fn analyze_layer(
    cents: &CentroidSet,
    layer: usize,
    metric: Metric,
    cfg: &GeometryConfig,
) -> Result<LayerReport, GeometryError> {
    let rdm = compute_rdm(cents, layer, metric)?;
    let fits = ModelKind::ALL
        .iter()
        .map(|&k| fit_geometry(&rdm, k))
        .collect::<Result<Vec<_>, _>>()?;
    let selection = select_model(&fits)?;
    let mags = &cents.magnitudes;
    let stevens_beta = fits[2].beta;
    let rsa_for = |kind: ModelKind, beta: Option<f64>| -> Result<RsaResult, GeometryError> {
        let theo = theoretical_rdm(mags, kind, beta)?;
        rsa_mantel(&rdm, &theo, cfg.n_perm, rsa_seed(cfg.seed, layer, metric, kind))
    };
    let rsa = ModelRsa {
        linear: rsa_for(ModelKind::Linear, None)?,
        weber: rsa_for(ModelKind::Weber, None)?,
        stevens: rsa_for(ModelKind::Stevens, stevens_beta)?,
    };
    let verdict = LayerVerdict {
        layer,
        metric,
        weber_rho: rsa.weber.rho,
        linear_rho: rsa.linear.rho,
        stevens_rho: rsa.stevens.rho,
        weber_p: rsa.weber.mantel_p,
        weber_aic: fits[1].aic,
        linear_aic: fits[0].aic,
        stevens_aic: fits[2].aic,
        h1_pass: LayerVerdict::criterion(rsa.weber.rho, rsa.linear.rho, rsa.weber.mantel_p, fits[1].aic, fits[0].aic),
    };
    let winner = fits.iter().find(|f| f.kind == selection.winner).expect("winner among fits");
    let periodicity = residual_periodicity(winner, &rdm)?;
    let mut notes = Vec::new();
    let integer_like = mags.iter().all(|m| (m - m.round()).abs() < 1e-9);
    let (mut partition_result, mut digit_effect) = (None, None);
    if integer_like {
        let logd = theoretical_raw(mags, ModelKind::Weber, None)?;
        let digits: Vec<u32> = mags.iter().map(|&m| partition::digit_count(m)).collect();
        let digd = Rdm::from_fn(mags.clone(), Metric::Theoretical, |i, j| {
            (digits[i] as f64 - digits[j] as f64).abs()
        });
        match variance_partition(&rdm, &[("log_distance", &logd), ("digit_count_distance", &digd)]) {
            Ok(v) => partition_result = Some(v),
            Err(e) => notes.push(format!("variance partition skipped: {e}")),
        }
        match digit_boundary_effect(&rdm, cfg.digit_bins) {
            Ok(d) => digit_effect = Some(d),
            Err(e) => notes.push(format!("digit-boundary effect skipped: {e}")),
        }
    }
    Ok(LayerReport {
        layer,
        metric,
        fits,
        selection,
        rsa,
        verdict,
        periodicity,
        variance_partition: partition_result,
        digit_effect,
        notes,
    })
}

/// Runs every configured (layer, metric) cell and the H1 count.
pub fn analyze_geometry(cents: &CentroidSet, cfg: &GeometryConfig) -> Result<GeometryReport, GeometryError> {
    if cents.layers == 0 {
        return Err(GeometryError::Input("no layers".into()));
    }
    let range = cfg.layers.unwrap_or([0, cents.layers - 1]);
    if range[1] >= cents.layers || range[0] > range[1] {
        return Err(GeometryError::Input(format!(
            "layer range {}..{} outside 0..{}",
            range[0],
            range[1],
            cents.layers - 1
        )));
    }
    let cells: Vec<(usize, Metric)> = (range[0]..=range[1])
        .flat_map(|l| cfg.metrics.iter().map(move |&m| (l, m)))
        .collect();
    let layers = cells
        .par_iter()
        .map(|&(l, m)| analyze_layer(cents, l, m, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let verdicts: Vec<LayerVerdict> = layers.iter().map(|l| l.verdict.clone()).collect();
    let h1 = evaluate_h1(&verdicts, cfg.primary_layers.unwrap_or(range), cfg.min_pass_layers)?;
    Ok(GeometryReport {
        magnitudes: cents.magnitudes.clone(),
        config: cfg.clone(),
        layers,
        h1,
    })
}

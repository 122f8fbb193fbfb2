//! Dissimilarity matrices, empirical and theoretical.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::activation::CentroidSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Theoretical,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Theoretical => "theoretical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Weber,
    Stevens,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Linear, ModelKind::Weber, ModelKind::Stevens];

    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Stevens => 3,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Weber => "weber",
            ModelKind::Stevens => "stevens",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    pub magnitudes: Vec<f64>,
    pub metric: Metric,
    /// Row-major n×n.
    pub d: Vec<f64>,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n() + j]
    }

    /// Builds a symmetric zero-diagonal matrix from a pairwise function.
    pub fn from_fn(magnitudes: Vec<f64>, metric: Metric, f: impl Fn(usize, usize) -> f64) -> Self {
        let n = magnitudes.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { magnitudes, metric, d }
    }

    /// Upper-triangle entries in row order, `(i, j)` with `i < j`.
    pub fn upper(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.d[i * n + j]);
            }
        }
        out
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    /// Restriction to the listed indices.
    pub fn sub(&self, keep: &[usize]) -> Rdm {
        Rdm::from_fn(
            keep.iter().map(|&i| self.magnitudes[i]).collect(),
            self.metric,
            |a, b| self.get(keep[a], keep[b]),
        )
    }

    /// Content hash used to tie fits to the matrix they came from.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.magnitudes.iter().chain(&self.d) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Pairwise distances between centroids at one layer.
pub fn compute_rdm(cents: &CentroidSet, layer: usize, metric: Metric) -> Result<Rdm, GeometryError> {
    if layer >= cents.layers {
        return Err(GeometryError::Input(format!("layer {layer} out of range 0..{}", cents.layers)));
    }
    if cents.dim == 0 {
        return Err(GeometryError::Input("zero-dimensional centroids".into()));
    }
    let rows = cents.rows(layer);
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    match metric {
        Metric::Cosine => {
            if let Some(i) = norms.iter().position(|&v| v == 0.0) {
                return Err(GeometryError::ZeroVector(i));
            }
            Ok(Rdm::from_fn(cents.magnitudes.clone(), metric, |i, j| {
                let dot: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                (1.0 - dot / (norms[i] * norms[j])).max(0.0)
            }))
        }
        Metric::Euclidean => Ok(Rdm::from_fn(cents.magnitudes.clone(), metric, |i, j| {
            rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        })),
        Metric::Theoretical => Err(GeometryError::Input(
            "empirical RDMs use the cosine or euclidean metric".into(),
        )),
    }
}

fn check_positive(magnitudes: &[f64]) -> Result<(), GeometryError> {
    match magnitudes.iter().find(|m| !(**m > 0.0)) {
        Some(m) => Err(GeometryError::NonPositive(*m)),
        None => Ok(()),
    }
}

/// Model predictor |f(n1) - f(n2)| before any standardisation.
pub fn theoretical_raw(magnitudes: &[f64], kind: ModelKind, beta: Option<f64>) -> Result<Rdm, GeometryError> {
    check_positive(magnitudes)?;
    let f: Vec<f64> = match (kind, beta) {
        (ModelKind::Linear, None) => magnitudes.to_vec(),
        (ModelKind::Weber, None) => magnitudes.iter().map(|m| m.ln()).collect(),
        (ModelKind::Stevens, Some(b)) => magnitudes.iter().map(|m| m.powf(b)).collect(),
        (ModelKind::Stevens, None) => {
            return Err(GeometryError::Input("stevens RDM needs an exponent".into()))
        }
        (_, Some(_)) => {
            return Err(GeometryError::Input("only the stevens RDM takes an exponent".into()))
        }
    };
    Ok(Rdm::from_fn(magnitudes.to_vec(), Metric::Theoretical, |i, j| (f[i] - f[j]).abs()))
}

/// Theoretical RDM with upper-triangle entries z-scored (diagonal stays 0).
pub fn theoretical_rdm(magnitudes: &[f64], kind: ModelKind, beta: Option<f64>) -> Result<Rdm, GeometryError> {
    let raw = theoretical_raw(magnitudes, kind, beta)?;
    let upper = raw.upper();
    let m = upper.len() as f64;
    let mean = upper.iter().sum::<f64>() / m;
    let sd = (upper.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    Ok(Rdm::from_fn(raw.magnitudes.clone(), Metric::Theoretical, |i, j| {
        (raw.get(i, j) - mean) / scale
    }))
}

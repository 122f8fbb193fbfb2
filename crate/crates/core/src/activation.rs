//! `.wbract` activation files, per-magnitude centroids, carrier ICC and
//! cross-file agreement.
//!
//! Layout: `WBRACT1\0`, three little-endian u32 (layers, stimuli, dim), the
//! row-major f32 tensor, then a UTF-8 JSON manifest running to end of file.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, pca};

pub const MAGIC: &[u8; 8] = b"WBRACT1\0";
pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_PREFIX: &[u8] = b"{\"manifest_version\"";
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum ActivationError {
    #[error("not an activation file (bad magic)")]
    BadMagic,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at layer {layer}, stimulus {stimulus}, dim {dim}")]
    NonFinite {
        layer: usize,
        stimulus: usize,
        dim: usize,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ActivationError {
    /// Stable machine-readable code, also used as the CLI exit reason.
    pub fn code(&self) -> &'static str {
        match self {
            ActivationError::BadMagic => "E_BAD_MAGIC",
            ActivationError::ShapeMismatch(_) => "E_SHAPE",
            ActivationError::NonFinite { .. } => "E_NON_FINITE",
            ActivationError::Manifest(_) => "E_MANIFEST",
            ActivationError::Degenerate(_) => "E_DEGENERATE",
            ActivationError::Io(_) => "E_IO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stimulus_id: u32,
    pub magnitude: f64,
    pub carrier_index: u32,
    pub token_position: i64,
    pub surface_form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_label: Option<String>,
}

impl ManifestEntry {
    /// Explicit unit label, else the text after the first space of the
    /// surface form with a trailing plural "s" removed ("5 minutes" -> "minute").
    pub fn unit(&self) -> String {
        if let Some(u) = &self.unit_label {
            return u.trim_end_matches('s').to_string();
        }
        match self.surface_form.split_once(' ') {
            Some((_, rest)) => rest.trim().trim_end_matches('s').to_string(),
            None => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestDoc {
    manifest_version: u32,
    stimuli: Vec<ManifestEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub n_layers: usize,
    pub n_stimuli: usize,
    pub dim: usize,
    /// Row-major `[layer][stimulus][dim]`.
    pub tensor: Vec<f32>,
    pub manifest: Vec<ManifestEntry>,
    /// Free-form key/value data carried alongside the manifest.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ActivationSet {
    /// Builds and validates a set in memory.
    pub fn new(
        n_layers: usize,
        dim: usize,
        tensor: Vec<f32>,
        manifest: Vec<ManifestEntry>,
    ) -> Result<Self, ActivationError> {
        let set = Self {
            n_layers,
            n_stimuli: manifest.len(),
            dim,
            tensor,
            manifest,
            metadata: BTreeMap::new(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn vector(&self, layer: usize, stimulus: usize) -> &[f32] {
        let start = (layer * self.n_stimuli + stimulus) * self.dim;
        &self.tensor[start..start + self.dim]
    }

    pub fn vector_mut(&mut self, layer: usize, stimulus: usize) -> &mut [f32] {
        let start = (layer * self.n_stimuli + stimulus) * self.dim;
        &mut self.tensor[start..start + self.dim]
    }

    pub fn validate(&self) -> Result<(), ActivationError> {
        let expected = self.n_layers * self.n_stimuli * self.dim;
        if self.tensor.len() != expected {
            return Err(ActivationError::ShapeMismatch(format!(
                "tensor has {} values, header implies {expected}",
                self.tensor.len()
            )));
        }
        if self.manifest.len() != self.n_stimuli {
            return Err(ActivationError::ShapeMismatch(format!(
                "manifest has {} entries for {} stimuli",
                self.manifest.len(),
                self.n_stimuli
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.manifest {
            if !seen.insert(e.stimulus_id) {
                return Err(ActivationError::Manifest(format!(
                    "duplicate stimulus_id {}",
                    e.stimulus_id
                )));
            }
            if !e.magnitude.is_finite() {
                return Err(ActivationError::Manifest(format!(
                    "stimulus {} has non-finite magnitude",
                    e.stimulus_id
                )));
            }
        }
        // every (magnitude, unit) group must carry the same number of carriers
        let mut groups: BTreeMap<(u64, String), usize> = BTreeMap::new();
        for e in &self.manifest {
            *groups.entry((e.magnitude.to_bits(), e.unit())).or_default() += 1;
        }
        let mut sizes = groups.values();
        if let Some(first) = sizes.next() {
            if sizes.any(|s| s != first) {
                return Err(ActivationError::Manifest(
                    "magnitudes do not share a common carrier count".into(),
                ));
            }
        }
        if let Some(i) = self.tensor.iter().position(|v| !v.is_finite()) {
            let per_layer = self.n_stimuli * self.dim;
            return Err(ActivationError::NonFinite {
                layer: i / per_layer,
                stimulus: (i % per_layer) / self.dim,
                dim: i % self.dim,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.tensor.len() * 4 + 256);
        out.extend_from_slice(MAGIC);
        for v in [self.n_layers, self.n_stimuli, self.dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let doc = ManifestDoc {
            manifest_version: MANIFEST_VERSION,
            stimuli: self.manifest.clone(),
            metadata: self.metadata.clone(),
        };
        out.extend(serde_json::to_vec(&doc).expect("manifest serialises"));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ActivationError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ActivationError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(ActivationError::ShapeMismatch("header truncated".into()));
        }
        let word = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        };
        let (n_layers, n_stimuli, dim) = (word(0), word(1), word(2));
        let tensor_bytes = n_layers
            .checked_mul(n_stimuli)
            .and_then(|v| v.checked_mul(dim))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| ActivationError::ShapeMismatch("header dimensions overflow".into()))?;
        let manifest_at = HEADER_LEN + tensor_bytes;
        if bytes.len() < manifest_at || !bytes[manifest_at..].starts_with(MANIFEST_PREFIX) {
            let found = find(&bytes[HEADER_LEN..], MANIFEST_PREFIX)
                .map(|i| format!("{i} tensor bytes"))
                .unwrap_or_else(|| "no manifest".into());
            return Err(ActivationError::ShapeMismatch(format!(
                "header implies {tensor_bytes} tensor bytes, found {found}"
            )));
        }
        let doc: ManifestDoc = serde_json::from_slice(&bytes[manifest_at..])
            .map_err(|e| ActivationError::Manifest(e.to_string()))?;
        if doc.manifest_version != MANIFEST_VERSION {
            return Err(ActivationError::Manifest(format!(
                "unsupported manifest_version {}",
                doc.manifest_version
            )));
        }
        let tensor = bytes[HEADER_LEN..manifest_at]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let set = Self {
            n_layers,
            n_stimuli,
            dim,
            tensor,
            manifest: doc.stimuli,
            metadata: doc.metadata,
        };
        set.validate()?;
        Ok(set)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

pub fn read_activation_file(path: impl AsRef<Path>) -> Result<ActivationSet, ActivationError> {
    let bytes = std::fs::read(path)?;
    ActivationSet::from_bytes(&bytes)
}

pub fn write_activation_file(path: impl AsRef<Path>, set: &ActivationSet) -> Result<(), ActivationError> {
    std::fs::write(path, set.to_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentroidSet {
    pub layers: usize,
    pub dim: usize,
    /// Sorted ascending; repeated only when `labels` distinguishes entries.
    pub magnitudes: Vec<f64>,
    /// Unit label per centroid (empty for plain numbers).
    pub labels: Vec<String>,
    /// Row-major `[layer][magnitude][dim]`.
    pub centroid: Vec<f64>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn row(&self, layer: usize, i: usize) -> &[f64] {
        let start = (layer * self.len() + i) * self.dim;
        &self.centroid[start..start + self.dim]
    }

    pub fn rows(&self, layer: usize) -> Vec<&[f64]> {
        (0..self.len()).map(|i| self.row(layer, i)).collect()
    }

    /// From already-averaged vectors, `rows[layer][magnitude]`.
    pub fn from_rows(magnitudes: Vec<f64>, rows: Vec<Vec<Vec<f64>>>) -> Self {
        let layers = rows.len();
        let dim = rows.first().and_then(|l| l.first()).map_or(0, |r| r.len());
        let labels = vec![String::new(); magnitudes.len()];
        Self {
            layers,
            dim,
            magnitudes,
            labels,
            centroid: rows.into_iter().flatten().flatten().collect(),
        }
    }

    /// Keeps only the listed centroid indices, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        let mut centroid = Vec::with_capacity(self.layers * keep.len() * self.dim);
        for l in 0..self.layers {
            for &i in keep {
                centroid.extend_from_slice(self.row(l, i));
            }
        }
        Self {
            layers: self.layers,
            dim: self.dim,
            magnitudes: keep.iter().map(|&i| self.magnitudes[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
            centroid,
        }
    }
}

fn grouped_centroids(
    acts: &ActivationSet,
    key: impl Fn(&ManifestEntry) -> (f64, String),
) -> Result<CentroidSet, ActivationError> {
    if acts.n_stimuli == 0 {
        return Err(ActivationError::Degenerate("activation set has no stimuli".into()));
    }
    let mut groups: BTreeMap<(u64, String), Vec<usize>> = BTreeMap::new();
    let mut values: BTreeMap<(u64, String), f64> = BTreeMap::new();
    for (i, e) in acts.manifest.iter().enumerate() {
        let (m, label) = key(e);
        // order-preserving key for positive magnitudes
        let k = (m.to_bits(), label);
        values.insert(k.clone(), m);
        groups.entry(k).or_default().push(i);
    }
    let mut ordered: Vec<_> = groups.into_iter().collect();
    ordered.sort_by(|a, b| values[&a.0].total_cmp(&values[&b.0]).then_with(|| a.0 .1.cmp(&b.0 .1)));
    let n = ordered.len();
    let mut centroid = vec![0.0; acts.n_layers * n * acts.dim];
    for l in 0..acts.n_layers {
        for (gi, (_, members)) in ordered.iter().enumerate() {
            let out = &mut centroid[(l * n + gi) * acts.dim..(l * n + gi + 1) * acts.dim];
            for &s in members {
                for (o, v) in out.iter_mut().zip(acts.vector(l, s)) {
                    *o += *v as f64;
                }
            }
            let k = members.len() as f64;
            for o in out.iter_mut() {
                *o /= k;
            }
        }
    }
    Ok(CentroidSet {
        layers: acts.n_layers,
        dim: acts.dim,
        magnitudes: ordered.iter().map(|(k, _)| values[k]).collect(),
        labels: ordered.into_iter().map(|(k, _)| k.1).collect(),
        centroid,
    })
}

/// Mean over carriers per (layer, magnitude), magnitudes ascending.
pub fn compute_centroids(acts: &ActivationSet) -> Result<CentroidSet, ActivationError> {
    grouped_centroids(acts, |e| (e.magnitude, String::new()))
}

/// Like [`compute_centroids`] but keeps surface units apart, so "120 seconds"
/// and "2 minutes" give two centroids with the same magnitude.
pub fn compute_centroids_by_form(acts: &ActivationSet) -> Result<CentroidSet, ActivationError> {
    grouped_centroids(acts, |e| (e.magnitude, e.unit()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IccResult {
    pub layer: usize,
    pub icc: f64,
    /// Set when there is no variance to partition; `icc` is then 1.0.
    pub degenerate: bool,
    pub n_magnitudes: usize,
    pub n_carriers: usize,
    pub method: &'static str,
}

/// ICC(3,1) from an n×k score table (rows = targets, columns = raters).
/// `None` when both mean squares vanish.
pub fn icc_3_1(table: &[Vec<f64>]) -> Option<f64> {
    let n = table.len();
    let k = table.first().map_or(0, |r| r.len());
    if n < 2 || k < 2 {
        return None;
    }
    let grand = table.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_rows: f64 = row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * k as f64;
    let ss_cols: f64 = col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() * n as f64;
    let ss_total: f64 = table.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);
    let msr = ss_rows / (n - 1) as f64;
    let mse = ss_err / ((n - 1) * (k - 1)) as f64;
    let denom = msr + (k - 1) as f64 * mse;
    if denom <= f64::EPSILON * (ss_total.abs() + 1e-300) || denom == 0.0 {
        return None;
    }
    Some(((msr - mse) / denom).clamp(-1.0, 1.0))
}

/// Carrier consistency at one layer: ICC(3,1) of per-stimulus scores on the
/// first principal axis of the magnitude centroids.
///
/// The axis for carrier `c` is estimated from centroids that leave carrier
/// `c` out and is oriented to increase with log magnitude; without this
/// cross-fitting the axis absorbs each carrier's own noise and pure noise
/// scores near 1 in high dimension.
pub fn carrier_icc(acts: &ActivationSet, layer: usize) -> Result<IccResult, ActivationError> {
    if layer >= acts.n_layers {
        return Err(ActivationError::ShapeMismatch(format!(
            "layer {layer} out of range 0..{}",
            acts.n_layers
        )));
    }
    let mut carriers: Vec<u32> = acts.manifest.iter().map(|e| e.carrier_index).collect();
    carriers.sort_unstable();
    carriers.dedup();
    let mut by_mag: BTreeMap<u64, BTreeMap<u32, usize>> = BTreeMap::new();
    for (i, e) in acts.manifest.iter().enumerate() {
        by_mag.entry(e.magnitude.to_bits()).or_default().insert(e.carrier_index, i);
    }
    let mut mags: Vec<(f64, BTreeMap<u32, usize>)> =
        by_mag.into_iter().map(|(b, m)| (f64::from_bits(b), m)).collect();
    mags.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = carriers.len();
    let n = mags.len();
    if k < 2 || n < 2 {
        return Err(ActivationError::Degenerate(format!(
            "ICC needs at least 2 carriers and 2 magnitudes (got {k} and {n})"
        )));
    }
    if mags.iter().any(|(_, m)| m.len() != k) {
        return Err(ActivationError::Manifest(
            "every magnitude must appear under every carrier".into(),
        ));
    }
    let dim = acts.dim;
    let logm: Vec<f64> = mags.iter().map(|(m, _)| m.abs().max(f64::MIN_POSITIVE).ln()).collect();
    let mut table = vec![vec![0.0; k]; n];
    let mut degenerate = false;
    for (cj, c) in carriers.iter().enumerate() {
        let fold: Vec<Vec<f64>> = mags
            .iter()
            .map(|(_, m)| {
                let mut v = vec![0.0; dim];
                for (ci, &s) in m {
                    if ci != c {
                        for (o, x) in v.iter_mut().zip(acts.vector(layer, s)) {
                            *o += *x as f64;
                        }
                    }
                }
                v.iter_mut().for_each(|o| *o /= (k - 1) as f64);
                v
            })
            .collect();
        let rows: Vec<&[f64]> = fold.iter().map(|v| v.as_slice()).collect();
        let Some(pc) = pca::first_component(&rows) else {
            degenerate = true;
            break;
        };
        let sign = match stats::pearson(&pc.scores, &logm) {
            Some(r) if r < 0.0 => -1.0,
            _ => 1.0,
        };
        for (ri, (_, m)) in mags.iter().enumerate() {
            let x = acts.vector(layer, m[c]);
            table[ri][cj] = sign * x.iter().zip(&pc.axis).map(|(a, b)| *a as f64 * b).sum::<f64>();
        }
    }
    let icc = if degenerate { None } else { icc_3_1(&table) };
    Ok(IccResult {
        layer,
        icc: icc.unwrap_or(1.0),
        degenerate: icc.is_none(),
        n_magnitudes: n,
        n_carriers: k,
        method: "ICC(3,1) on leave-one-carrier-out PC1 projections",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementResult {
    pub per_layer_r: Vec<f64>,
    pub worst_layer: usize,
    pub worst_r: f64,
}

/// Pearson correlation of the flattened per-layer tensors of two sets with
/// identical shape and manifest.
pub fn tensor_agreement(a: &ActivationSet, b: &ActivationSet) -> Result<AgreementResult, ActivationError> {
    if (a.n_layers, a.n_stimuli, a.dim) != (b.n_layers, b.n_stimuli, b.dim) {
        return Err(ActivationError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.n_layers, a.n_stimuli, a.dim, b.n_layers, b.n_stimuli, b.dim
        )));
    }
    let same_manifest = a
        .manifest
        .iter()
        .zip(&b.manifest)
        .all(|(x, y)| x.stimulus_id == y.stimulus_id && x.magnitude == y.magnitude);
    if !same_manifest {
        return Err(ActivationError::ShapeMismatch("manifests differ".into()));
    }
    let per = a.n_stimuli * a.dim;
    let per_layer_r: Vec<f64> = (0..a.n_layers)
        .map(|l| {
            let x: Vec<f64> = a.tensor[l * per..(l + 1) * per].iter().map(|v| *v as f64).collect();
            let y: Vec<f64> = b.tensor[l * per..(l + 1) * per].iter().map(|v| *v as f64).collect();
            match stats::pearson(&x, &y) {
                Some(r) => r,
                // two constant layers agree only if they are identical
                None if x == y => 1.0,
                None => 0.0,
            }
        })
        .collect();
    let (worst_layer, worst_r) = per_layer_r
        .iter()
        .copied()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap_or((0, f64::NAN));
    Ok(AgreementResult {
        per_layer_r,
        worst_layer,
        worst_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ActivationSet {
        let manifest = (0..4)
            .map(|i| ManifestEntry {
                stimulus_id: i,
                magnitude: (i / 2 + 1) as f64,
                carrier_index: i % 2,
                token_position: 3,
                surface_form: ((i / 2 + 1) as u32).to_string(),
                unit_label: None,
            })
            .collect();
        let tensor = (0..2 * 4 * 8).map(|v| v as f32 * 0.5 - 3.0).collect();
        ActivationSet::new(2, 8, tensor, manifest).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = toy();
        let b = ActivationSet::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!((b.n_layers, b.n_stimuli, b.dim), (2, 4, 8));
    }

    #[test]
    fn nan_is_located() {
        let mut a = toy();
        a.vector_mut(1, 2)[5] = f32::NAN;
        let err = ActivationSet::from_bytes(&a.to_bytes()).unwrap_err();
        assert!(matches!(err, ActivationError::NonFinite { layer: 1, stimulus: 2, dim: 5 }));
        assert_eq!(err.code(), "E_NON_FINITE");
    }

    #[test]
    fn truncated_tensor_is_shape_error() {
        let a = toy();
        let mut bytes = a.to_bytes();
        bytes.drain(HEADER_LEN..HEADER_LEN + 8);
        let err = ActivationSet::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.code(), "E_SHAPE");
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = toy().to_bytes();
        bytes[0] = b'X';
        assert_eq!(ActivationSet::from_bytes(&bytes).unwrap_err().code(), "E_BAD_MAGIC");
    }

    #[test]
    fn opposite_carriers_cancel() {
        let manifest = vec![
            ManifestEntry { stimulus_id: 0, magnitude: 2.0, carrier_index: 0, token_position: 0, surface_form: "2".into(), unit_label: None },
            ManifestEntry { stimulus_id: 1, magnitude: 2.0, carrier_index: 1, token_position: 0, surface_form: "2".into(), unit_label: None },
        ];
        let set = ActivationSet::new(1, 3, vec![1.0, -2.0, 3.0, -1.0, 2.0, -3.0], manifest).unwrap();
        let c = compute_centroids(&set).unwrap();
        assert_eq!(c.row(0, 0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_labels_strip_plural() {
        let e = ManifestEntry { stimulus_id: 0, magnitude: 300.0, carrier_index: 0, token_position: 0, surface_form: "5 minutes".into(), unit_label: None };
        assert_eq!(e.unit(), "minute");
    }

    #[test]
    fn icc_formula_on_textbook_table() {
        // Shrout & Fleiss (1979) example: ICC(3,1) = 0.71
        let t = vec![
            vec![9.0, 2.0, 5.0, 8.0],
            vec![6.0, 1.0, 3.0, 2.0],
            vec![8.0, 4.0, 6.0, 8.0],
            vec![7.0, 1.0, 2.0, 6.0],
            vec![10.0, 5.0, 6.0, 9.0],
            vec![6.0, 2.0, 4.0, 7.0],
        ];
        assert!((icc_3_1(&t).unwrap() - 0.7148).abs() < 1e-3);
    }
}

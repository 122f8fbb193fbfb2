//! Magnitude direction, patch plans and analysis of patched runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::{compute_centroids, ActivationError, ActivationSet, CentroidSet, ManifestEntry};
use crate::records::PatchResult;
use crate::stats::{pca::first_component, pearson};
use crate::stimulus::Task;

#[derive(Debug, thiserror::Error)]
pub enum CausalError {
    #[error("{0}")]
    Input(String),
    #[error("ridge system is singular")]
    Singular,
    #[error("centroid matrix is rank deficient; PC1 undefined")]
    RankDeficient,
    #[error("no patch results for {0}")]
    EmptyCell(String),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const MAG_ID: &str = "mag";
pub const DEFAULT_DOSES: [f64; 4] = [0.25, 0.50, 0.75, 1.00];
pub const N_RANDOM: usize = 10;
pub const H7_THRESHOLD: f64 = 0.75;
pub const CEILING_ACCURACY: f64 = 0.95;
pub const PCA_MIN_R: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeDirection {
    pub layer: usize,
    pub unit_vector: Vec<f64>,
    pub ridge_lambda: f64,
    /// In-sample squared correlation of the probe with ln magnitude.
    pub probe_r2: f64,
    /// max - min projection of the magnitude centroids.
    pub projection_span: f64,
    /// Set when the probe interpolates (dim >= samples and r2 ~ 1), which
    /// says nothing about the quality of the direction.
    pub degenerate: bool,
    pub n_samples: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ridge regression of ln(magnitude) on centred per-stimulus activations,
/// solved in the n×n dual so the cost does not grow with dim².
/// `lambda = None` uses 1e-2 · trace(XᵀX) / dim.
pub fn fit_magnitude_direction(
    acts: &ActivationSet,
    layer: usize,
    lambda: Option<f64>,
) -> Result<MagnitudeDirection, CausalError> {
    if layer >= acts.n_layers {
        return Err(CausalError::Input(format!("layer {layer} out of range")));
    }
    let n = acts.n_stimuli;
    let dim = acts.dim;
    let mags: BTreeSet<u64> = acts.manifest.iter().map(|e| e.magnitude.to_bits()).collect();
    if mags.len() < 2 {
        return Err(CausalError::Input("need at least 2 distinct magnitudes".into()));
    }
    if acts.manifest.iter().any(|e| e.magnitude <= 0.0) {
        return Err(CausalError::Input("magnitudes must be positive".into()));
    }
    let mut mean = vec![0.0; dim];
    for s in 0..n {
        for (m, v) in mean.iter_mut().zip(acts.vector(layer, s)) {
            *m += *v as f64 / n as f64;
        }
    }
    let x: Vec<Vec<f64>> = (0..n)
        .map(|s| acts.vector(layer, s).iter().zip(&mean).map(|(v, m)| *v as f64 - m).collect())
        .collect();
    let ly: Vec<f64> = acts.manifest.iter().map(|e| e.magnitude.ln()).collect();
    let ybar = ly.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = ly.iter().map(|v| v - ybar).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| dot(&x[i], &x[j]));
    let trace = gram.trace();
    let lambda = lambda.unwrap_or(1e-2 * trace / dim as f64);
    if !(lambda > 0.0) {
        return Err(CausalError::Input("ridge lambda must be positive".into()));
    }
    let mut k = gram.clone();
    for i in 0..n {
        k[(i, i)] += lambda;
    }
    let alpha = k.cholesky().ok_or(CausalError::Singular)?.solve(&DVector::from_column_slice(&y));
    let mut w = vec![0.0; dim];
    for (a, row) in alpha.iter().zip(&x) {
        for (wi, xi) in w.iter_mut().zip(row) {
            *wi += a * xi;
        }
    }
    let norm = dot(&w, &w).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(CausalError::Singular);
    }
    let mut unit: Vec<f64> = w.iter().map(|v| v / norm).collect();
    let proj: Vec<f64> = x.iter().map(|r| dot(r, &unit)).collect();
    let r = pearson(&proj, &y).unwrap_or(0.0);
    if r < 0.0 {
        unit.iter_mut().for_each(|v| *v = -*v);
    }
    let cents = compute_centroids(acts)?;
    let cproj: Vec<f64> = (0..cents.len()).map(|i| dot(cents.row(layer, i), &unit)).collect();
    let span = cproj.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - cproj.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(CausalError::Input("centroid projections have zero span".into()));
    }
    let probe_r2 = r * r;
    Ok(MagnitudeDirection {
        layer,
        unit_vector: unit,
        ridge_lambda: lambda,
        probe_r2,
        projection_span: span,
        degenerate: dim >= n && probe_r2 > 0.999,
        n_samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaValidation {
    pub layer: usize,
    pub pc1_logmag_r: f64,
    pub pc1_dir_cos: f64,
    pub explained: f64,
    pub pass: bool,
}

/// PC1 of the magnitude centroids must track ln magnitude at |r| > .80.
pub fn pca_validate(cents: &CentroidSet, layer: usize, dir: &MagnitudeDirection) -> Result<PcaValidation, CausalError> {
    if cents.len() < 3 {
        return Err(CausalError::Input("PCA validation needs at least 3 magnitudes".into()));
    }
    if dir.unit_vector.len() != cents.dim {
        return Err(CausalError::Input("direction and centroid dimensions differ".into()));
    }
    let pc = first_component(&cents.rows(layer)).ok_or(CausalError::RankDeficient)?;
    let lm: Vec<f64> = cents.magnitudes.iter().map(|m| m.ln()).collect();
    let r = pearson(&pc.scores, &lm).ok_or(CausalError::RankDeficient)?;
    Ok(PcaValidation {
        layer,
        pc1_logmag_r: r.abs(),
        pc1_dir_cos: dot(&pc.axis, &dir.unit_vector).abs(),
        explained: pc.explained,
        pass: r.abs() > PCA_MIN_R,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDirection {
    pub id: String,
    /// Row in the plan tensor.
    pub index: usize,
    pub cos_with_mag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub schema: String,
    pub version: u32,
    pub layer: usize,
    /// Token position the offset is added at.
    pub position: String,
    pub doses: Vec<f64>,
    pub scale_rule: String,
    pub projection_span: f64,
    pub directions: Vec<PlanDirection>,
    pub prompt_ids: Vec<u32>,
    pub seed: u64,
    pub n_runs: usize,
    pub dim: usize,
    /// Largest |cos| between a random direction and the magnitude direction.
    pub max_abs_cos: f64,
    /// `max_abs_cos < 0.2`; only checked at dim >= 512.
    pub orthogonality_checked: bool,
    pub orthogonality_ok: bool,
    pub tensor_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPatch {
    pub plan: PatchPlan,
    /// One unit vector per entry of `plan.directions`.
    pub vectors: Vec<Vec<f64>>,
}

impl PlannedPatch {
    /// Additive offset for a direction at a dose.
    pub fn offset(&self, direction: usize, dose: f64) -> Vec<f64> {
        let s = dose * self.plan.projection_span;
        self.vectors[direction].iter().map(|v| v * s).collect()
    }

    /// Directions as a one-layer activation tensor, one row per direction.
    pub fn to_activation_set(&self) -> Result<ActivationSet, CausalError> {
        let tensor: Vec<f32> = self.vectors.iter().flatten().map(|v| *v as f32).collect();
        let manifest = self
            .plan
            .directions
            .iter()
            .map(|d| ManifestEntry {
                stimulus_id: d.index as u32,
                magnitude: (d.index + 1) as f64,
                carrier_index: 0,
                token_position: -1,
                surface_form: d.id.clone(),
                unit_label: None,
            })
            .collect();
        let mut set = ActivationSet::new(1, self.plan.dim, tensor, manifest)?;
        set.metadata.insert("patch_plan".into(), serde_json::Value::String(self.plan.schema.clone()));
        Ok(set)
    }

    /// Writes `plan.json` and the tensor file next to it.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), CausalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("plan.json"), serde_json::to_vec_pretty(&self.plan)?)?;
        crate::activation::write_activation_file(dir.join(&self.plan.tensor_file), &self.to_activation_set()?)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self, CausalError> {
        let dir = dir.as_ref();
        let plan: PatchPlan = serde_json::from_slice(&std::fs::read(dir.join("plan.json"))?)?;
        let set = crate::activation::read_activation_file(dir.join(&plan.tensor_file))?;
        if set.n_stimuli != plan.directions.len() || set.dim != plan.dim {
            return Err(CausalError::Input("plan tensor does not match plan.json".into()));
        }
        let vectors = (0..set.n_stimuli)
            .map(|i| set.vector(0, i).iter().map(|v| *v as f64).collect())
            .collect();
        Ok(Self { plan, vectors })
    }
}

/// Seeded isotropic Gaussian unit vectors. Not orthogonalised against the
/// magnitude direction; near-orthogonality is checked instead.
pub fn random_directions(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn build_patch_plan(dir: &MagnitudeDirection, prompt_ids: &[u32], doses: &[f64], seed: u64) -> PlannedPatch {
    let dim = dir.unit_vector.len();
    let mut vectors = vec![dir.unit_vector.clone()];
    vectors.extend(random_directions(N_RANDOM, dim, seed));
    let directions: Vec<PlanDirection> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| PlanDirection {
            id: if i == 0 { MAG_ID.to_string() } else { format!("rand_{i}") },
            index: i,
            cos_with_mag: dot(v, &dir.unit_vector),
        })
        .collect();
    let max_abs_cos = directions[1..].iter().map(|d| d.cos_with_mag.abs()).fold(0.0, f64::max);
    let checked = dim >= 512;
    let plan = PatchPlan {
        schema: "magpsych.patch_plan".into(),
        version: 1,
        layer: dir.layer,
        position: "magnitude_token".into(),
        doses: doses.to_vec(),
        scale_rule: "dose_x_projection_span".into(),
        projection_span: dir.projection_span,
        n_runs: prompt_ids.len() * directions.len() * doses.len(),
        directions,
        prompt_ids: prompt_ids.to_vec(),
        seed,
        dim,
        max_abs_cos,
        orthogonality_checked: checked,
        orthogonality_ok: !checked || max_abs_cos < 0.2,
        tensor_file: "plan.wbract".into(),
    };
    PlannedPatch { plan, vectors }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosePoint {
    pub dose: f64,
    /// Mean of delta_p · expected_sign.
    pub mean_dp: f64,
    pub mean_abs_dp: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchAnalysis {
    pub dose: f64,
    pub mag_mean_abs_dp: f64,
    pub rand_mean_abs_dp: f64,
    /// None when random directions produce no change at all.
    pub specificity: Option<f64>,
    pub mag_dose_response: Vec<DosePoint>,
    pub rand_dose_response: Vec<DosePoint>,
    pub dose_monotonic: bool,
    pub sign_correct: bool,
    pub sign_fraction: f64,
    pub n_prompts: usize,
    pub n_random_directions: usize,
}

fn dose_response(rows: &[&PatchResult]) -> Vec<DosePoint> {
    let mut by: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by.entry(r.dose.to_bits()).or_default();
        e.0 += r.delta_p * r.expected_sign;
        e.1 += r.delta_p.abs();
        e.2 += 1;
    }
    let mut pts: Vec<DosePoint> = by
        .into_iter()
        .map(|(d, (s, a, n))| DosePoint { dose: f64::from_bits(d), mean_dp: s / n as f64, mean_abs_dp: a / n as f64, n })
        .collect();
    pts.sort_by(|a, b| a.dose.total_cmp(&b.dose));
    pts
}

/// Weakly increasing, tolerating one inversion smaller than 10% of the range.
pub fn is_dose_monotonic(means: &[f64]) -> bool {
    if means.len() < 2 {
        return true;
    }
    let range = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - means.iter().cloned().fold(f64::INFINITY, f64::min);
    let drops: Vec<f64> = means.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    match drops.len() {
        0 => true,
        1 => drops[0] < 0.1 * range && means[means.len() - 1] > means[0],
        _ => false,
    }
}

/// Compares |Δp| along the magnitude direction with random directions at
/// `dose` (largest dose when `None`).
pub fn analyze_patch_results(results: &[PatchResult], dose: Option<f64>) -> Result<PatchAnalysis, CausalError> {
    let mag: Vec<&PatchResult> = results.iter().filter(|r| r.direction_id == MAG_ID).collect();
    let rand: Vec<&PatchResult> = results.iter().filter(|r| r.direction_id != MAG_ID).collect();
    if mag.is_empty() {
        return Err(CausalError::EmptyCell("the magnitude direction".into()));
    }
    if rand.is_empty() {
        return Err(CausalError::EmptyCell("random directions".into()));
    }
    let max_dose = mag.iter().map(|r| r.dose).fold(f64::NEG_INFINITY, f64::max);
    let dose = dose.unwrap_or(max_dose);
    let at = |rows: &[&PatchResult]| -> Vec<f64> {
        rows.iter().filter(|r| r.dose == dose).map(|r| r.delta_p.abs()).collect()
    };
    let (ma, ra) = (at(&mag), at(&rand));
    if ma.is_empty() || ra.is_empty() {
        return Err(CausalError::EmptyCell(format!("dose {dose}")));
    }
    let mag_mean = ma.iter().sum::<f64>() / ma.len() as f64;
    let rand_mean = ra.iter().sum::<f64>() / ra.len() as f64;
    let mag_curve = dose_response(&mag);
    let means: Vec<f64> = mag_curve.iter().filter(|p| p.dose > 0.0).map(|p| p.mean_dp).collect();
    let signed: Vec<f64> = mag.iter().filter(|r| r.dose == dose).map(|r| r.delta_p * r.expected_sign).collect();
    let sign_fraction = signed.iter().filter(|v| **v > 0.0).count() as f64 / signed.len() as f64;
    let prompts: BTreeSet<u32> = results.iter().map(|r| r.prompt_id).collect();
    let rand_ids: BTreeSet<&str> = rand.iter().map(|r| r.direction_id.as_str()).collect();
    Ok(PatchAnalysis {
        dose,
        mag_mean_abs_dp: mag_mean,
        rand_mean_abs_dp: rand_mean,
        specificity: (rand_mean > 0.0).then(|| mag_mean / rand_mean),
        rand_dose_response: dose_response(&rand),
        mag_dose_response: mag_curve,
        dose_monotonic: is_dose_monotonic(&means),
        sign_correct: sign_fraction > 0.5,
        sign_fraction,
        n_prompts: prompts.len(),
        n_random_directions: rand_ids.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H7Result {
    pub pass: bool,
    /// Prompts whose magnitude-direction patch at the largest dose moved
    /// p in the predicted direction.
    pub shift_fraction: f64,
    pub n_prompts: usize,
    pub baseline_accuracy: f64,
    /// Baseline accuracy at or above 0.95 leaves little room to move.
    pub ceiling: bool,
}

/// Evaluated on symbolic-control results when any are tagged, else on all.
pub fn evaluate_h7(results: &[PatchResult]) -> Result<H7Result, CausalError> {
    let tagged = results.iter().any(|r| r.task == Some(Task::SymbolicControl));
    let rows: Vec<&PatchResult> = results
        .iter()
        .filter(|r| r.direction_id == MAG_ID && (!tagged || r.task == Some(Task::SymbolicControl)))
        .collect();
    if rows.is_empty() {
        return Err(CausalError::EmptyCell("magnitude direction on symbolic prompts".into()));
    }
    let max_dose = rows.iter().map(|r| r.dose).fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<&&PatchResult> = rows.iter().filter(|r| r.dose == max_dose).collect();
    let shifted = top.iter().filter(|r| r.delta_p * r.expected_sign > 0.0).count();
    let correct = top
        .iter()
        .filter(|r| if r.expected_sign > 0.0 { r.p_chosen_base > 0.5 } else { r.p_chosen_base < 0.5 })
        .count();
    let n = top.len();
    let frac = shifted as f64 / n as f64;
    let acc = correct as f64 / n as f64;
    Ok(H7Result {
        pass: frac >= H7_THRESHOLD,
        shift_fraction: frac,
        n_prompts: n,
        baseline_accuracy: acc,
        ceiling: acc >= CEILING_ACCURACY,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, dose: f64, dp: f64) -> PatchResult {
        PatchResult {
            prompt_id: 0,
            direction_id: id.into(),
            dose,
            p_chosen_base: 0.6,
            p_chosen_patched: 0.6 + dp,
            delta_p: dp,
            expected_sign: 1.0,
            task: None,
            layer: None,
        }
    }

    #[test]
    fn specificity_ratio() {
        let rs = vec![row("mag", 1.0, 0.028), row("rand_1", 1.0, -0.00688)];
        let a = analyze_patch_results(&rs, None).unwrap();
        assert!((a.specificity.unwrap() - 4.0698).abs() < 1e-3);
    }

    #[test]
    fn monotonic_rule() {
        assert!(is_dose_monotonic(&[0.1, 0.2, 0.3, 0.4]));
        assert!(is_dose_monotonic(&[0.1, 0.2, 0.19, 0.4]));
        assert!(!is_dose_monotonic(&[0.1, 0.3, 0.2, 0.4]));
        assert!(!is_dose_monotonic(&[0.4, 0.3, 0.2, 0.1]));
    }

    #[test]
    fn one_dimensional_probe() {
        let mags = [1.0, 2.0, 5.0, 10.0, 50.0];
        let tensor: Vec<f32> = mags.iter().map(|m: &f64| m.ln() as f32).collect();
        let manifest = mags
            .iter()
            .enumerate()
            .map(|(i, m)| ManifestEntry {
                stimulus_id: i as u32,
                magnitude: *m,
                carrier_index: 0,
                token_position: 0,
                surface_form: m.to_string(),
                unit_label: None,
            })
            .collect();
        let acts = ActivationSet::new(1, 1, tensor, manifest).unwrap();
        let d = fit_magnitude_direction(&acts, 0, None).unwrap();
        assert_eq!(d.unit_vector, vec![1.0]);
        assert!((d.probe_r2 - 1.0).abs() < 1e-12);
    }
}

//! Robustness checks: frequency-matched nouns, shuffled magnitudes,
//! single-token subsets and unit boundaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::{compute_centroids, ActivationError, ActivationSet, CentroidSet};
use crate::geometry::{compute_rdm, fit_geometry, GeometryError, Metric, ModelKind, Rdm};
use crate::stats::spearman;

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("{0}")]
    Input(String),
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error(transparent)]
    Activation(#[from] ActivationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const MATCH_GATE_RHO: f64 = 0.85;
pub const UNIT_FALLBACK_COS: f64 = 0.70;
pub const MIN_SINGLE_TOKEN: usize = 6;

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres
/// with row/column potentials, O(n³)). Returns `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

pub fn assignment_cost(cost: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMatch {
    /// (number id, noun id, number logp, noun logp)
    pub matching: Vec<(String, String, f64, f64)>,
    pub total_cost: f64,
    pub matched_spearman: f64,
    pub gate_pass: bool,
}

/// Pairs each number with a noun of similar log-probability, minimising the
/// summed absolute difference.
pub fn hungarian_frequency_match(numbers: &[(String, f64)], nouns: &[(String, f64)]) -> Result<FrequencyMatch, ControlError> {
    if numbers.len() != nouns.len() {
        return Err(ControlError::Input(format!(
            "{} numbers but {} nouns",
            numbers.len(),
            nouns.len()
        )));
    }
    if numbers.len() < 3 {
        return Err(ControlError::Input("frequency matching needs at least 3 items".into()));
    }
    let cost: Vec<Vec<f64>> = numbers.iter().map(|a| nouns.iter().map(|b| (a.1 - b.1).abs()).collect()).collect();
    let assign = hungarian(&cost);
    let matching: Vec<_> = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| (numbers[i].0.clone(), nouns[j].0.clone(), numbers[i].1, nouns[j].1))
        .collect();
    let a: Vec<f64> = matching.iter().map(|m| m.2).collect();
    let b: Vec<f64> = matching.iter().map(|m| m.3).collect();
    let rho = spearman(&a, &b).unwrap_or(0.0);
    Ok(FrequencyMatch {
        total_cost: assignment_cost(&cost, &assign),
        matching,
        matched_spearman: rho,
        gate_pass: rho > MATCH_GATE_RHO,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleLayer {
    pub layer: usize,
    pub rho_identity: f64,
    pub rho_context: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleCheck {
    pub layers: Vec<ShuffleLayer>,
    pub rho_identity: f64,
    pub rho_context: f64,
}

/// Metadata key on the shuffled set: for every stimulus, the magnitude whose
/// carrier slot its token was placed in.
pub const CONTEXT_KEY: &str = "context_magnitudes";

fn context_from_metadata(set: &ActivationSet) -> Result<Vec<f64>, ControlError> {
    let v = set
        .metadata
        .get(CONTEXT_KEY)
        .ok_or_else(|| ControlError::Manifest(format!("shuffled set lacks metadata.{CONTEXT_KEY}")))?;
    let ctx: Vec<f64> = serde_json::from_value(v.clone())
        .map_err(|e| ControlError::Manifest(format!("metadata.{CONTEXT_KEY}: {e}")))?;
    if ctx.len() != set.n_stimuli {
        return Err(ControlError::Manifest(format!(
            "metadata.{CONTEXT_KEY} has {} entries for {} stimuli",
            ctx.len(),
            set.n_stimuli
        )));
    }
    Ok(ctx)
}

/// Compares the shuffled set's identity-keyed RDM with the original RDM
/// aligned by token identity and aligned by carrier slot. Context comes
/// from the shuffled set's metadata.
pub fn shuffled_magnitude_check(original: &ActivationSet, shuffled: &ActivationSet) -> Result<ShuffleCheck, ControlError> {
    let ctx = context_from_metadata(shuffled)?;
    shuffled_magnitude_check_with(original, shuffled, &ctx)
}

pub fn shuffled_magnitude_check_with(
    original: &ActivationSet,
    shuffled: &ActivationSet,
    context: &[f64],
) -> Result<ShuffleCheck, ControlError> {
    if original.n_layers != shuffled.n_layers || original.dim != shuffled.dim {
        return Err(ControlError::Manifest("original and shuffled sets differ in shape".into()));
    }
    let orig = compute_centroids(original)?;
    let shuf = compute_centroids(shuffled)?;
    if orig.magnitudes != shuf.magnitudes {
        return Err(ControlError::Manifest("shuffled set does not use the original magnitudes".into()));
    }
    let index: BTreeMap<u64, usize> = orig.magnitudes.iter().enumerate().map(|(i, m)| (m.to_bits(), i)).collect();
    // every token of one magnitude must sit in slots of a single magnitude
    let mut sigma: Vec<Option<usize>> = vec![None; orig.len()];
    for (e, c) in shuffled.manifest.iter().zip(context) {
        let i = index[&e.magnitude.to_bits()];
        let j = *index
            .get(&c.to_bits())
            .ok_or_else(|| ControlError::Manifest(format!("context magnitude {c} not in the original set")))?;
        match sigma[i] {
            None => sigma[i] = Some(j),
            Some(k) if k == j => {}
            Some(_) => {
                return Err(ControlError::Manifest(format!(
                    "tokens of magnitude {} appear in more than one context",
                    e.magnitude
                )))
            }
        }
    }
    let sigma: Vec<usize> = sigma.into_iter().map(|s| s.unwrap_or(usize::MAX)).collect();
    let mut seen = sigma.clone();
    seen.sort_unstable();
    if seen.iter().enumerate().any(|(i, s)| *s != i) {
        return Err(ControlError::Manifest("context assignment is not a permutation of magnitudes".into()));
    }
    let mut layers = Vec::new();
    for l in 0..orig.layers {
        let ro = compute_rdm(&orig, l, Metric::Cosine)?;
        let rs = compute_rdm(&shuf, l, Metric::Cosine)?;
        let rc = Rdm::from_fn(ro.magnitudes.clone(), Metric::Cosine, |i, j| ro.get(sigma[i], sigma[j]));
        let s = rs.upper();
        layers.push(ShuffleLayer {
            layer: l,
            rho_identity: spearman(&s, &ro.upper()).unwrap_or(0.0),
            rho_context: spearman(&s, &rc.upper()).unwrap_or(0.0),
        });
    }
    let k = layers.len() as f64;
    Ok(ShuffleCheck {
        rho_identity: layers.iter().map(|l| l.rho_identity).sum::<f64>() / k,
        rho_context: layers.iter().map(|l| l.rho_context).sum::<f64>() / k,
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTokenControl {
    pub r2_full: f64,
    pub r2_subset: f64,
    /// r2_full - r2_subset.
    pub delta_r2: f64,
    pub n_full: usize,
    pub n_subset: usize,
}

/// Weber-fit R² on the full RDM against the RDM restricted to magnitudes
/// that are single tokens.
pub fn single_token_control(rdm_full: &Rdm, single_token: &[f64]) -> Result<SingleTokenControl, ControlError> {
    let mut keep: Vec<usize> = single_token
        .iter()
        .map(|m| {
            rdm_full
                .magnitudes
                .iter()
                .position(|x| x == m)
                .ok_or_else(|| ControlError::Input(format!("magnitude {m} not in the RDM")))
        })
        .collect::<Result<_, _>>()?;
    keep.sort_unstable();
    keep.dedup();
    if keep.len() < MIN_SINGLE_TOKEN {
        return Err(ControlError::Input(format!(
            "single-token subset has {} magnitudes, need at least {MIN_SINGLE_TOKEN}",
            keep.len()
        )));
    }
    let full = fit_geometry(rdm_full, ModelKind::Weber)?;
    let sub = if keep.len() == rdm_full.n() {
        full.clone()
    } else {
        fit_geometry(&rdm_full.sub(&keep), ModelKind::Weber)?
    };
    Ok(SingleTokenControl {
        r2_full: full.r2,
        r2_subset: sub.r2,
        delta_r2: full.r2 - sub.r2,
        n_full: rdm_full.n(),
        n_subset: keep.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBoundary {
    pub layer: usize,
    pub equiv_cross_unit_sim: f64,
    pub diff_same_unit_sim: f64,
    /// Equivalent magnitudes in different units are less alike than
    /// neighbouring magnitudes in the same unit.
    pub form_specific: bool,
    /// Mean cross-unit cosine below 0.70.
    pub fallback_trigger: bool,
    pub equivalent_pairs: Vec<MatchedPair>,
    /// For each endpoint of an equivalent pair, its same-unit neighbour at
    /// the smallest nonzero log distance.
    pub matched_pairs: Vec<MatchedPair>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Needs centroids keyed by (magnitude, unit), see
/// [`crate::activation::compute_centroids_by_form`].
pub fn unit_boundary_check(cents: &CentroidSet, layer: usize) -> Result<UnitBoundary, ControlError> {
    if layer >= cents.layers {
        return Err(ControlError::Input(format!("layer {layer} out of range")));
    }
    let n = cents.len();
    let mut equivalent = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if cents.magnitudes[i] == cents.magnitudes[j] && cents.labels[i] != cents.labels[j] {
                equivalent.push(MatchedPair { a: i, b: j, cosine: cosine(cents.row(layer, i), cents.row(layer, j)) });
            }
        }
    }
    if equivalent.is_empty() {
        return Err(ControlError::Input("no equivalent-magnitude cross-unit pairs".into()));
    }
    let mut matched = Vec::new();
    for e in &equivalent {
        for &i in &[e.a, e.b] {
            let li = cents.magnitudes[i].ln();
            let best = (0..n)
                .filter(|&k| cents.labels[k] == cents.labels[i] && cents.magnitudes[k] != cents.magnitudes[i])
                .min_by(|&x, &y| {
                    (cents.magnitudes[x].ln() - li).abs().total_cmp(&(cents.magnitudes[y].ln() - li).abs())
                });
            if let Some(k) = best {
                matched.push(MatchedPair { a: i, b: k, cosine: cosine(cents.row(layer, i), cents.row(layer, k)) });
            }
        }
    }
    if matched.is_empty() {
        return Err(ControlError::Input("no same-unit comparison magnitudes".into()));
    }
    let mean = |v: &[MatchedPair]| v.iter().map(|p| p.cosine).sum::<f64>() / v.len() as f64;
    let cross = mean(&equivalent);
    let same = mean(&matched);
    Ok(UnitBoundary {
        layer,
        equiv_cross_unit_sim: cross,
        diff_same_unit_sim: same,
        form_specific: cross < same,
        fallback_trigger: cross < UNIT_FALLBACK_COS,
        equivalent_pairs: equivalent,
        matched_pairs: matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_small() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&c);
        assert_eq!(assignment_cost(&c, &a), 5.0);
    }

    #[test]
    fn identical_logprobs_match_perfectly() {
        let nums: Vec<(String, f64)> = (0..26).map(|i| (format!("n{i}"), -(i as f64) * 0.7)).collect();
        let nouns: Vec<(String, f64)> = (0..26).rev().map(|i| (format!("w{i}"), -(i as f64) * 0.7)).collect();
        let m = hungarian_frequency_match(&nums, &nouns).unwrap();
        assert_eq!(m.total_cost, 0.0);
        assert!((m.matched_spearman - 1.0).abs() < 1e-12);
        assert!(m.gate_pass);
    }

    #[test]
    fn unequal_lengths_rejected() {
        let a = vec![("a".to_string(), 0.0); 3];
        let b = vec![("b".to_string(), 0.0); 4];
        assert!(hungarian_frequency_match(&a, &b).is_err());
    }
}

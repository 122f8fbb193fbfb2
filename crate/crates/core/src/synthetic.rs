//! Ground-truth generators: embeddings with a known geometry, simulated
//! observers with a known Weber fraction, corpora with a known power law,
//! and a logistic readout for patching experiments.
//!
//! Nothing here depends on the analysis modules.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationSet, ManifestEntry};
use crate::records::{trial_from_pair, Choice, PatchResult, TrialRecord};
use crate::stimulus::ComparisonPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Log,
    Linear,
    Stevens { beta: f64 },
    /// ln n along the planted direction with no offset vector.
    PlantedDirection,
}

impl Geometry {
    pub fn map(self, n: f64) -> f64 {
        match self {
            Geometry::Log | Geometry::PlantedDirection => n.ln(),
            Geometry::Linear => n,
            Geometry::Stevens { beta } => n.powf(beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub magnitudes: Vec<f64>,
    pub dim: usize,
    pub layers: usize,
    pub geometry: Geometry,
    /// Per-stimulus noise norm as a fraction of the signal span.
    pub noise_sigma: f64,
    pub carriers: usize,
    pub seed: u64,
    /// Norm of the per-layer offset vector as a multiple of the signal span.
    pub offset_scale: f64,
}

impl EmbeddingSpec {
    pub fn new(magnitudes: Vec<f64>, dim: usize, geometry: Geometry, noise_sigma: f64, seed: u64) -> Self {
        Self {
            magnitudes,
            dim,
            layers: 1,
            geometry,
            noise_sigma,
            carriers: 5,
            seed,
            offset_scale: 3.0,
        }
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// The unit direction carrying the signal at `layer` for a given seed.
pub fn planted_direction(seed: u64, layer: usize, dim: usize) -> Vec<f64> {
    gaussian_unit(&mut stream(seed, 2 * layer as u64), dim)
}

/// Offset vector at `layer`, orthogonal to the planted direction, unit norm.
fn offset_direction(seed: u64, layer: usize, u: &[f64]) -> Vec<f64> {
    let mut rng = stream(seed, 2 * layer as u64 + 1);
    loop {
        let mut v = gaussian_unit(&mut rng, u.len());
        let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 || u.len() == 1 {
            return v.into_iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect();
        }
    }
}

/// Plain-number surface form for a synthetic magnitude.
pub fn surface_form(m: f64) -> String {
    if m.fract() == 0.0 && m.abs() < 1e15 {
        format!("{}", m as i64)
    } else {
        format!("{m}")
    }
}

/// Embeddings `offset + g(n) u + noise` per layer, with an independent
/// direction, offset and noise stream per layer. Noise is isotropic with
/// per-coordinate sd `noise_sigma * span / sqrt(dim)`, so its norm is about
/// `noise_sigma * span`.
pub fn gen_embeddings(spec: &EmbeddingSpec) -> ActivationSet {
    let g: Vec<f64> = spec.magnitudes.iter().map(|&m| spec.geometry.map(m)).collect();
    let span = g.iter().copied().fold(f64::NEG_INFINITY, f64::max) - g.iter().copied().fold(f64::INFINITY, f64::min);
    let span = if span > 0.0 { span } else { 1.0 };
    let dim = spec.dim;
    let sd = spec.noise_sigma * span / (dim as f64).sqrt();
    let n_stim = spec.magnitudes.len() * spec.carriers;
    let mut tensor = Vec::with_capacity(spec.layers * n_stim * dim);
    for layer in 0..spec.layers {
        let u = planted_direction(spec.seed, layer, dim);
        let offset = match spec.geometry {
            Geometry::PlantedDirection => vec![0.0; dim],
            _ => offset_direction(spec.seed, layer, &u)
                .into_iter()
                .map(|x| x * spec.offset_scale * span)
                .collect(),
        };
        let mut noise = stream(spec.seed, 1_000_000 + layer as u64);
        for gi in &g {
            for _ in 0..spec.carriers {
                for d in 0..dim {
                    let e: f64 = if sd > 0.0 { noise.sample::<f64, _>(StandardNormal) * sd } else { 0.0 };
                    tensor.push((offset[d] + gi * u[d] + e) as f32);
                }
            }
        }
    }
    let manifest = spec
        .magnitudes
        .iter()
        .flat_map(|&m| (0..spec.carriers).map(move |c| (m, c)))
        .enumerate()
        .map(|(i, (m, c))| ManifestEntry {
            stimulus_id: i as u32,
            magnitude: m,
            carrier_index: c as u32,
            token_position: 0,
            surface_form: surface_form(m),
            unit_label: None,
        })
        .collect();
    let mut set = ActivationSet::new(spec.layers, dim, tensor, manifest).expect("generator output is valid");
    set.metadata.insert(
        "synthetic".into(),
        serde_json::to_value(spec).expect("spec serialises"),
    );
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObserverMode {
    Ratio,
    Absdiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub wf: f64,
    pub lapse: f64,
    pub mode: ObserverMode,
    pub seed: u64,
    /// Added to the decision variable when the larger option is in position A
    /// and subtracted when it is in B.
    pub position_bias: f64,
    /// Fraction of trials answered with an unparseable choice.
    pub invalid_rate: f64,
}

impl ObserverSpec {
    pub fn new(wf: f64, lapse: f64, mode: ObserverMode, seed: u64) -> Self {
        Self {
            wf,
            lapse,
            mode,
            seed,
            position_bias: 0.0,
            invalid_rate: 0.0,
        }
    }
}

/// Slope on ln(ratio) that puts the observer at 75% correct (no lapse) at
/// ratio `1 + wf`.
pub fn weber_slope(wf: f64) -> f64 {
    3f64.ln() / (1.0 + wf).ln()
}

/// 0.5 + (0.5 - lapse) tanh(z / 2): chance at z = 0, 1 - lapse as z grows.
pub fn observer_probability(z: f64, lapse: f64) -> f64 {
    0.5 + (0.5 - lapse.clamp(0.0, 0.5)) * (z / 2.0).tanh()
}

/// Simulated two-alternative observer. In ratio mode the decision variable is
/// `k ln(large / small)`; in absdiff mode it is `ln 3 · |large - small| / s`
/// with `s = wf ×` the geometric mean of the pair baselines, so both modes
/// sit at 75% (less half the lapse) at their threshold.
pub fn gen_observer_trials(spec: &ObserverSpec, pairs: &[ComparisonPair]) -> Vec<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = weber_slope(spec.wf);
    let scale = {
        let logs: Vec<f64> = pairs.iter().map(|p| p.baseline_nominal.ln()).collect();
        (logs.iter().sum::<f64>() / logs.len().max(1) as f64).exp() * spec.wf
    };
    pairs
        .iter()
        .map(|pair| {
            let small = pair.small_value.canonical_magnitude;
            let large = pair.large_value.canonical_magnitude;
            let z = match spec.mode {
                ObserverMode::Ratio => k * (large / small).ln(),
                ObserverMode::Absdiff => 3f64.ln() * (large - small).abs() / scale,
            };
            let pos = match pair.large_position {
                crate::stimulus::Position::A => 1.0,
                crate::stimulus::Position::B => -1.0,
            };
            let p_large = observer_probability(z + spec.position_bias * pos, spec.lapse);
            let invalid = spec.invalid_rate > 0.0 && rng.random::<f64>() < spec.invalid_rate;
            let u: f64 = rng.random();
            let chosen = if invalid {
                Choice::Invalid
            } else if u < p_large {
                Choice::from(pair.large_position)
            } else {
                Choice::from(pair.large_position.flipped())
            };
            trial_from_pair(pair, p_large, chosen)
        })
        .collect()
}

const FILLERS: [&str; 6] = [
    "The report mentioned {} items in the final count.",
    "We waited for {} before anyone spoke.",
    "There were {} people at the meeting.",
    "She bought {} of them at the market.",
    "Around {} visitors arrived that morning.",
    "The list had {} entries by evening.",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub text: String,
    /// `counts[n]` for n in 1..=1000; index 0 unused.
    pub counts: Vec<u64>,
}

/// Integers 1..=1000 drawn with p(n) ∝ n^-alpha, each wrapped in a filler
/// sentence. Returns the text and the exact tally.
pub fn gen_powerlaw_corpus(alpha: f64, n_mentions: usize, seed: u64) -> SyntheticCorpus {
    let mut counts = vec![0u64; 1001];
    if n_mentions == 0 {
        return SyntheticCorpus { text: String::new(), counts };
    }
    let weights: Vec<f64> = (1..=1000).map(|n| (n as f64).powf(-alpha)).collect();
    let dist = WeightedIndex::new(&weights).expect("positive weights");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(n_mentions * 44);
    for i in 0..n_mentions {
        let n = dist.sample(&mut rng) + 1;
        counts[n] += 1;
        let filler = FILLERS[rng.random_range(0..FILLERS.len())];
        let (head, tail) = filler.split_once("{}").expect("slot");
        text.push_str(head);
        text.push_str(&n.to_string());
        text.push_str(tail);
        text.push(if i % 8 == 7 { '\n' } else { ' ' });
    }
    SyntheticCorpus { text, counts }
}

/// A linear-logistic readout standing in for a model under patching:
/// `p(larger) = σ(c_prompt + gain · <h, u>)`, where `u` is the true
/// magnitude axis and a patch adds `dose · scale · v` to `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSpec {
    pub axis: Vec<f64>,
    pub gain: f64,
    pub n_prompts: usize,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Patch results for every (prompt, direction, dose) under the readout.
/// `directions` pairs an id with a unit vector; `scale` converts dose to an
/// offset norm.
pub fn simulate_patch_results(
    spec: &ReadoutSpec,
    directions: &[(String, Vec<f64>)],
    doses: &[f64],
    scale: f64,
) -> Vec<PatchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base: Vec<f64> = (0..spec.n_prompts)
        .map(|_| 0.5 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut out = Vec::new();
    for (pid, c) in base.iter().enumerate() {
        for (id, v) in directions {
            let along: f64 = v.iter().zip(&spec.axis).map(|(a, b)| a * b).sum();
            for &dose in doses {
                let p0 = sigmoid(*c);
                let p1 = sigmoid(c + spec.gain * dose * scale * along);
                out.push(PatchResult {
                    prompt_id: pid as u32,
                    direction_id: id.clone(),
                    dose,
                    p_chosen_base: p0,
                    p_chosen_patched: p1,
                    delta_p: p1 - p0,
                    expected_sign: 1.0,
                    task: None,
                    layer: None,
                });
            }
        }
    }
    out
}

//! `run-all`: configuration, input loading or synthesis, and the full
//! analysis sequence for one model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::*;
use crate::activation::{compute_centroids, compute_centroids_by_form, read_activation_file, ActivationSet, ManifestEntry};
use crate::behaviour::{analyze_behaviour, load_trials, TrialSet};
use crate::causal::{analyze_patch_results, build_patch_plan, evaluate_h7, fit_magnitude_direction, DEFAULT_DOSES};
use crate::controls::{
    hungarian_frequency_match, shuffled_magnitude_check, single_token_control, unit_boundary_check, CONTEXT_KEY,
};
use crate::corpus::{count_path, extract_integer_counts, fit_magnitude_distribution};
use crate::geometry::{analyze_geometry, compute_rdm, GeometryConfig, Metric};
use crate::precision::analyze_precision_layers;
use crate::records::{read_jsonl, PatchResult};
use crate::stimulus::{build_comparison_pairs, build_unit_boundary_values, probe_values, PairDesign};
use crate::synthetic::{
    gen_embeddings, gen_observer_trials, gen_powerlaw_corpus, planted_direction, simulate_patch_results, EmbeddingSpec,
    Geometry, ObserverMode, ObserverSpec, ReadoutSpec,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {message}")]
    Stage { context: String, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn stage<E: std::fmt::Display>(context: impl Into<String>) -> impl FnOnce(E) -> PipelineError {
    let context = context.into();
    move |e| PipelineError::Stage { context, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationInput {
    pub domain: Domain,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialInput {
    pub domain: Domain,
    pub task: Task,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySettings {
    pub metrics: Vec<Metric>,
    pub layers: Option<[usize; 2]>,
    pub primary_layers: Option<[usize; 2]>,
    pub min_pass_layers: usize,
    pub n_perm: usize,
    pub digit_bins: usize,
}

impl Default for GeometrySettings {
    fn default() -> Self {
        let g = GeometryConfig::default();
        Self {
            metrics: g.metrics,
            layers: g.layers,
            primary_layers: g.primary_layers,
            min_pass_layers: g.min_pass_layers,
            n_perm: g.n_perm,
            digit_bins: g.digit_bins,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSettings {
    pub results: Option<PathBuf>,
    /// Dose at which specificity is read; the largest when absent.
    pub dose: Option<f64>,
}

/// Auxiliary control inputs. All optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlInputs {
    pub number_logprobs: Vec<(String, f64)>,
    pub noun_logprobs: Vec<(String, f64)>,
    /// Magnitudes rendered as one token by the model's tokenizer.
    pub single_token_magnitudes: Vec<f64>,
    pub shuffled_activations: Option<PathBuf>,
    /// Layer for the single-token control; the middle layer when absent.
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub dim: usize,
    pub layers: usize,
    pub noise_sigma: f64,
    pub geometry: Geometry,
    pub carriers: usize,
    pub wf: f64,
    pub lapse: f64,
    pub corpus_alpha: f64,
    pub corpus_mentions: usize,
    pub patch_prompts: usize,
    /// Logit shift of a full-dose patch along the true axis.
    pub patch_logit_shift: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self {
            dim: 4096,
            layers: 16,
            noise_sigma: 0.05,
            geometry: Geometry::Log,
            carriers: 5,
            wf: 0.20,
            lapse: 0.02,
            corpus_alpha: 0.773,
            corpus_mentions: 1_000_000,
            patch_prompts: 200,
            patch_logit_shift: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model_id: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub bootstrap: usize,
    /// Generate every input from the synthetic oracles instead of reading
    /// files.
    pub synthetic: Option<SyntheticSettings>,
    pub geometry: GeometrySettings,
    pub activations: Vec<ActivationInput>,
    pub trials: Vec<TrialInput>,
    pub patch: PatchSettings,
    pub corpus: Option<PathBuf>,
    pub controls: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_id: "unnamed".into(),
            out_dir: PathBuf::from("magpsych-out"),
            seed: 42,
            bootstrap: 2000,
            synthetic: None,
            geometry: GeometrySettings::default(),
            activations: Vec::new(),
            trials: Vec::new(),
            patch: PatchSettings::default(),
            corpus: None,
            controls: None,
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut c.out_dir);
        c.activations.iter_mut().for_each(|a| fix(&mut a.path));
        c.trials.iter_mut().for_each(|t| fix(&mut t.path));
        if let Some(p) = c.patch.results.as_mut() {
            fix(p);
        }
        if let Some(p) = c.corpus.as_mut() {
            fix(p);
        }
        if let Some(p) = c.controls.as_mut() {
            fix(p);
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(stage(format!("reading {}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn geometry_config(&self) -> GeometryConfig {
        let g = &self.geometry;
        GeometryConfig {
            metrics: g.metrics.clone(),
            layers: g.layers,
            primary_layers: g.primary_layers,
            min_pass_layers: g.min_pass_layers,
            n_perm: g.n_perm,
            seed: self.seed,
            digit_bins: g.digit_bins,
        }
    }
}

/// Inputs after loading or synthesis.
struct Inputs {
    activations: Vec<(Domain, ActivationSet)>,
    trials: Vec<(Domain, Task, TrialSet)>,
    patch: Option<Vec<PatchResult>>,
    corpus: Option<MagnitudeHistogram>,
    controls: Option<(ControlInputs, Option<ActivationSet>, Option<ActivationSet>)>,
}

fn domain_seed(seed: u64, d: Domain) -> u64 {
    seed.wrapping_add(match d {
        Domain::Numerical => 0,
        Domain::Temporal => 1_000,
        Domain::Spatial => 2_000,
    })
}

fn synthesize(cfg: &RunConfig, s: &SyntheticSettings) -> Result<Inputs, PipelineError> {
    let mut activations = Vec::new();
    for d in Domain::ALL {
        let mags: Vec<f64> = probe_values(d).iter().map(|v| v.canonical_magnitude).collect();
        let mut spec = EmbeddingSpec::new(mags, s.dim, s.geometry, s.noise_sigma, domain_seed(cfg.seed, d));
        spec.layers = s.layers;
        spec.carriers = s.carriers;
        activations.push((d, gen_embeddings(&spec)));
    }
    let mut trials = Vec::new();
    for d in Domain::ALL {
        let pairs = build_comparison_pairs(d, Task::B1CrossFormat, cfg.seed, &PairDesign::default())
            .map_err(stage("synthetic pairs"))?;
        let obs = ObserverSpec::new(s.wf, s.lapse, ObserverMode::Ratio, domain_seed(cfg.seed, d) + 1);
        let recs = gen_observer_trials(&obs, &pairs);
        trials.push((d, Task::B1CrossFormat, TrialSet { exclusion: crate::behaviour::summarise_exclusions(&recs), trials: recs }));
    }

    // patching along the fitted direction of the middle layer
    let (_, num) = &activations[0];
    let layer = s.layers / 2;
    let dir = fit_magnitude_direction(num, layer, None).map_err(stage("synthetic direction"))?;
    let prompts: Vec<u32> = (0..s.patch_prompts as u32).collect();
    let plan = build_patch_plan(&dir, &prompts, &DEFAULT_DOSES, cfg.seed);
    let directions: Vec<(String, Vec<f64>)> =
        plan.plan.directions.iter().map(|d| (d.id.clone(), plan.vectors[d.index].clone())).collect();
    let readout = ReadoutSpec {
        axis: planted_direction(domain_seed(cfg.seed, Domain::Numerical), layer, s.dim),
        gain: s.patch_logit_shift / dir.projection_span,
        n_prompts: s.patch_prompts,
        seed: cfg.seed,
    };
    let patch = simulate_patch_results(&readout, &directions, &DEFAULT_DOSES, dir.projection_span);

    let corpus = gen_powerlaw_corpus(s.corpus_alpha, s.corpus_mentions, cfg.seed);
    let hist = extract_integer_counts(corpus.text.as_bytes());

    // controls: log-probabilities falling with ln n, nouns with a small jitter
    let numbers: Vec<(String, f64)> = crate::stimulus::NUMERICAL_PROBES
        .iter()
        .map(|&n| (n.to_string(), -2.0 - 0.9 * (n as f64).ln()))
        .collect();
    let nouns: Vec<(String, f64)> = numbers
        .iter()
        .enumerate()
        .map(|(i, (_, lp))| (format!("noun_{i:02}"), lp + 0.15 * ((i * 7 % 5) as f64 - 2.0)))
        .collect();
    let single: Vec<f64> = crate::stimulus::NUMERICAL_PROBES.iter().filter(|&&n| n < 1000).map(|&n| n as f64).collect();
    let shuffled = synthetic_shuffled(num, cfg.seed);
    let units = synthetic_unit_set(s, cfg.seed);
    let aux = ControlInputs {
        number_logprobs: numbers,
        noun_logprobs: nouns,
        single_token_magnitudes: single,
        shuffled_activations: None,
        layer: Some(layer),
    };
    Ok(Inputs {
        activations,
        trials,
        patch: Some(patch),
        corpus: Some(hist),
        controls: Some((aux, Some(shuffled), Some(units))),
    })
}

/// Each magnitude's tokens moved into the carrier slots of another
/// magnitude (a seeded derangement); the vectors follow token identity.
fn synthetic_shuffled(original: &ActivationSet, seed: u64) -> ActivationSet {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut set = original.clone();
    let mut mags: Vec<f64> = original.manifest.iter().map(|e| e.magnitude).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..mags.len()).collect();
    while perm.iter().enumerate().any(|(i, p)| i == *p) {
        perm.shuffle(&mut rng);
    }
    let ctx: Vec<f64> = set
        .manifest
        .iter()
        .map(|e| mags[perm[mags.iter().position(|m| *m == e.magnitude).expect("own magnitude")]])
        .collect();
    set.metadata.insert(CONTEXT_KEY.into(), serde_json::to_value(ctx).expect("numbers serialise"));
    set
}

/// Temporal unit-boundary stimuli whose vectors depend on the canonical
/// duration only.
fn synthetic_unit_set(s: &SyntheticSettings, seed: u64) -> ActivationSet {
    let mut values = probe_values(Domain::Temporal);
    for v in build_unit_boundary_values(Domain::Temporal) {
        if !values.iter().any(|w| w.canonical_magnitude == v.canonical_magnitude && w.unit_label == v.unit_label) {
            values.push(v);
        }
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.canonical_magnitude).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let mut spec = EmbeddingSpec::new(mags.clone(), s.dim.min(512), s.geometry, s.noise_sigma, seed ^ 0x5eed);
    spec.carriers = 1;
    let base = gen_embeddings(&spec);
    let dim = base.dim;
    let mut tensor = Vec::new();
    let mut manifest = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let src = mags.iter().position(|m| *m == v.canonical_magnitude).expect("listed");
        tensor.extend_from_slice(base.vector(0, src));
        manifest.push(ManifestEntry {
            stimulus_id: i as u32,
            magnitude: v.canonical_magnitude,
            carrier_index: 0,
            token_position: 0,
            surface_form: v.surface_form.clone(),
            unit_label: Some(v.unit_label.clone()),
        });
    }
    ActivationSet::new(1, dim, tensor, manifest).expect("consistent synthetic set")
}

fn load(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let mut activations = Vec::new();
    for a in &cfg.activations {
        let set = read_activation_file(&a.path).map_err(stage(format!("activations {}", a.path.display())))?;
        activations.push((a.domain, set));
    }
    let mut trials = Vec::new();
    for t in &cfg.trials {
        let set = load_trials(&t.path).map_err(stage(format!("trials {}", t.path.display())))?;
        trials.push((t.domain, t.task, set));
    }
    let patch = match &cfg.patch.results {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(stage(format!("patch results {}", p.display())))?;
            Some(read_jsonl(std::io::BufReader::new(f)).map_err(stage(format!("patch results {}", p.display())))?)
        }
        None => None,
    };
    let corpus = match &cfg.corpus {
        Some(p) => Some(count_path(p).map_err(stage("corpus"))?),
        None => None,
    };
    let controls = match &cfg.controls {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(stage(format!("controls {}", p.display())))?;
            let mut aux: ControlInputs =
                serde_json::from_str(&text).map_err(stage(format!("controls {}", p.display())))?;
            let base = p.parent().unwrap_or(Path::new("."));
            let shuffled = match aux.shuffled_activations.as_mut() {
                Some(sp) => {
                    if sp.is_relative() {
                        *sp = base.join(&*sp);
                    }
                    Some(read_activation_file(&*sp).map_err(stage("shuffled activations"))?)
                }
                None => None,
            };
            let units = activations
                .iter()
                .find(|(d, s)| *d != Domain::Numerical && s.manifest.iter().any(|e| e.unit_label.is_some()))
                .map(|(_, s)| s.clone());
            Some((aux, shuffled, units))
        }
        None => None,
    };
    Ok(Inputs { activations, trials, patch, corpus, controls })
}

/// Runs every analysis whose inputs are present. Failures inside one
/// section are recorded in `notes` and leave that section empty.
fn analyse(cfg: &RunConfig, inputs: &Inputs, notes: &mut Vec<String>) -> ModuleResults {
    let mut r = ModuleResults::default();
    let gcfg = cfg.geometry_config();
    for (d, set) in &inputs.activations {
        let cents = match compute_centroids(set) {
            Ok(c) => c,
            Err(e) => {
                notes.push(format!("{} centroids: {e}", d.as_str()));
                continue;
            }
        };
        match analyze_geometry(&cents, &gcfg) {
            Ok(report) => r.geometry.push(DomainGeometry { domain: *d, report }),
            Err(e) => notes.push(format!("{} geometry: {e}", d.as_str())),
        }
        match analyze_precision_layers(&cents) {
            Ok(curves) => r.precision.push(DomainPrecision { domain: *d, curves }),
            Err(e) => notes.push(format!("{} precision: {e}", d.as_str())),
        }
    }
    for (i, (d, task, set)) in inputs.trials.iter().enumerate() {
        let report = analyze_behaviour(set, cfg.bootstrap, cfg.seed.wrapping_add(i as u64));
        r.behaviour.push(DomainBehaviour { domain: *d, task: *task, report });
    }
    if let Some(patch) = &inputs.patch {
        match analyze_patch_results(patch, cfg.patch.dose) {
            Ok(analysis) => {
                let h7 = evaluate_h7(patch).map_err(|e| notes.push(format!("H7: {e}"))).ok();
                r.causal = Some(CausalSection { analysis, h7 });
            }
            Err(e) => notes.push(format!("patch analysis: {e}")),
        }
    }
    if let Some(h) = &inputs.corpus {
        match fit_magnitude_distribution(h) {
            Ok(fit) => r.corpus = Some(CorpusSection { histogram: h.clone(), fit }),
            Err(e) => notes.push(format!("corpus: {e}")),
        }
    }
    if let Some((aux, shuffled, units)) = &inputs.controls {
        r.controls = Some(run_controls(aux, numerical_set(inputs), shuffled.as_ref(), units.as_ref()));
    }
    r
}

fn numerical_set(inputs: &Inputs) -> Option<&ActivationSet> {
    inputs.activations.iter().find(|(d, _)| *d == Domain::Numerical).map(|(_, s)| s)
}

/// The control battery over whichever inputs are available.
pub fn run_controls(
    aux: &ControlInputs,
    numerical: Option<&ActivationSet>,
    shuffled: Option<&ActivationSet>,
    units: Option<&ActivationSet>,
) -> ControlsSection {
    let mut c = ControlsSection::default();
    if !aux.number_logprobs.is_empty() {
        match hungarian_frequency_match(&aux.number_logprobs, &aux.noun_logprobs) {
            Ok(m) => c.frequency_match = Some(m),
            Err(e) => c.notes.push(format!("frequency match: {e}")),
        }
    }
    if let (Some(orig), Some(sh)) = (numerical, shuffled) {
        match shuffled_magnitude_check(orig, sh) {
            Ok(s) => c.shuffled = Some(s),
            Err(e) => c.notes.push(format!("shuffled magnitudes: {e}")),
        }
    }
    if let (Some(orig), false) = (numerical, aux.single_token_magnitudes.is_empty()) {
        let layer = aux.layer.unwrap_or(orig.n_layers / 2);
        let res = compute_centroids(orig)
            .map_err(|e| e.to_string())
            .and_then(|cents| compute_rdm(&cents, layer, Metric::Cosine).map_err(|e| e.to_string()))
            .and_then(|rdm| single_token_control(&rdm, &aux.single_token_magnitudes).map_err(|e| e.to_string()));
        match res {
            Ok(s) => c.single_token = Some(s),
            Err(e) => c.notes.push(format!("single-token control: {e}")),
        }
    }
    if let Some(set) = units {
        match compute_centroids_by_form(set) {
            Ok(cents) => {
                for l in 0..cents.layers {
                    match unit_boundary_check(&cents, l) {
                        Ok(u) => c.unit_boundary.push(u),
                        Err(e) => {
                            c.notes.push(format!("unit boundary layer {l}: {e}"));
                            break;
                        }
                    }
                }
            }
            Err(e) => c.notes.push(format!("unit boundary: {e}")),
        }
    }
    c
}

/// Loads or synthesises inputs, runs every analysis, evaluates the
/// hypotheses and writes the report. Verdicts never make this fail.
pub fn run_all(cfg: &RunConfig) -> Result<(Report, Vec<String>), PipelineError> {
    let inputs = match &cfg.synthetic {
        Some(s) => synthesize(cfg, s)?,
        None => load(cfg)?,
    };
    let mut notes = Vec::new();
    let results = analyse(cfg, &inputs, &mut notes);
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".to_string(), serde_json::json!(cfg.seed));
    metadata.insert("bootstrap".to_string(), serde_json::json!(cfg.bootstrap));
    metadata.insert("synthetic".to_string(), serde_json::to_value(&cfg.synthetic).map_err(ReportError::from)?);
    metadata.insert("notes".to_string(), serde_json::json!(notes));
    let report = build_report(&cfg.model_id, results, metadata);
    let written = emit_report(&report, &cfg.out_dir)?;
    Ok((report, written))
}

//! Forced-choice behaviour: trial loading, accuracy curves, model comparison
//! on ln(ratio) versus absolute difference, psychometric Weber fractions,
//! bootstrap intervals, entropy and d′.

pub mod bootstrap;
pub mod psychometric;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bca_ci, BcaInterval, Statistic};
pub use psychometric::{fit_psychometric, PsychometricFit, WfStatus};

pub use crate::records::{Choice, TrialRecord};
use crate::records::binary_entropy;
use crate::stats::dist::{chi2_sf, normal_quantile, wilson_interval};
use crate::stats::regression::{correlation_condition_number, logistic_irls};
use crate::stats::{mean, sample_sd};
use crate::stimulus::Position;

#[derive(Debug, Error)]
pub enum BehaviourError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trial {pair_id}: option probabilities cannot be normalised")]
    NotNormalisable { pair_id: u32 },
    #[error("no trials")]
    Empty,
    #[error("{0}")]
    Insufficient(String),
    #[error("psychometric fit did not converge after {0} restarts")]
    NoConvergence(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const ENTROPY_THRESHOLD: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub total: usize,
    pub invalid: usize,
    pub usable: usize,
    pub invalid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    /// All records, probabilities renormalised; invalid choices included.
    pub trials: Vec<TrialRecord>,
    pub exclusion: ExclusionSummary,
}

impl TrialSet {
    pub fn valid(&self) -> Vec<TrialRecord> {
        self.trials.iter().filter(|t| t.is_valid()).cloned().collect()
    }
}

/// Renormalises option probabilities, recomputes entropy and correctness.
pub fn normalise_trial(mut t: TrialRecord) -> Result<TrialRecord, BehaviourError> {
    let s = t.p_a + t.p_b;
    if !(t.p_a >= 0.0 && t.p_b >= 0.0 && s > 0.0 && s.is_finite()) {
        return Err(BehaviourError::NotNormalisable { pair_id: t.pair_id });
    }
    t.p_a /= s;
    t.p_b /= s;
    t.entropy_nats = binary_entropy(t.p_a);
    t.correct = t.chosen == Choice::from(t.large_position);
    Ok(t)
}

pub fn summarise_exclusions(trials: &[TrialRecord]) -> ExclusionSummary {
    let invalid = trials.iter().filter(|t| !t.is_valid()).count();
    ExclusionSummary {
        total: trials.len(),
        invalid,
        usable: trials.len() - invalid,
        invalid_fraction: if trials.is_empty() { 0.0 } else { invalid as f64 / trials.len() as f64 },
    }
}

/// Parses a JSONL trial log (a leading schema header line is allowed).
pub fn parse_trials<R: BufRead>(input: R) -> Result<TrialSet, BehaviourError> {
    let mut trials = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || (i == 0 && s.starts_with("{\"schema\"")) {
            continue;
        }
        let t: TrialRecord = serde_json::from_str(s).map_err(|e| BehaviourError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(t.ratio > 1.0) {
            return Err(BehaviourError::Malformed {
                line: i + 1,
                message: format!("ratio must exceed 1, got {}", t.ratio),
            });
        }
        trials.push(normalise_trial(t)?);
    }
    if trials.is_empty() {
        return Err(BehaviourError::Empty);
    }
    let exclusion = summarise_exclusions(&trials);
    Ok(TrialSet { trials, exclusion })
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialSet, BehaviourError> {
    let f = std::fs::File::open(path)?;
    parse_trials(std::io::BufReader::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub ratio: f64,
    pub baseline: Option<f64>,
    pub correct: u64,
    pub n: u64,
    pub accuracy: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub by_ratio: Vec<AccuracyCell>,
    pub by_cell: Vec<AccuracyCell>,
}

fn cell(ratio: f64, baseline: Option<f64>, correct: u64, n: u64) -> AccuracyCell {
    let (lo, hi) = wilson_interval(correct, n, 1.959963984540054);
    AccuracyCell {
        ratio,
        baseline,
        correct,
        n,
        accuracy: correct as f64 / n as f64,
        wilson_lo: lo,
        wilson_hi: hi,
    }
}

/// Proportion correct per nominal ratio and per (baseline, ratio) cell, with
/// Wilson 95% intervals. Invalid trials are left out.
pub fn accuracy_by_ratio(trials: &[TrialRecord]) -> AccuracyTable {
    let mut by_ratio: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut by_cell: BTreeMap<(u64, u64), (u64, u64)> = BTreeMap::new();
    for t in trials.iter().filter(|t| t.is_valid()) {
        let r = by_ratio.entry(t.ratio.to_bits()).or_default();
        r.0 += t.correct as u64;
        r.1 += 1;
        let c = by_cell.entry((t.baseline.to_bits(), t.ratio.to_bits())).or_default();
        c.0 += t.correct as u64;
        c.1 += 1;
    }
    // positive floats order like their bit patterns
    AccuracyTable {
        by_ratio: by_ratio
            .into_iter()
            .map(|(r, (k, n))| cell(f64::from_bits(r), None, k, n))
            .collect(),
        by_cell: by_cell
            .into_iter()
            .map(|((b, r), (k, n))| cell(f64::from_bits(r), Some(f64::from_bits(b)), k, n))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviancePredictor {
    LogRatio,
    AbsDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaDevianceResult {
    pub deviance_log_ratio: Option<f64>,
    pub deviance_abs_diff: Option<f64>,
    /// deviance(abs_diff) - deviance(log_ratio); positive favours ln(ratio).
    pub delta_dev: Option<f64>,
    /// χ²(1) upper tail at |delta_dev|.
    pub p: Option<f64>,
    pub winner: Option<DeviancePredictor>,
    /// All valid trials correct, or all incorrect.
    pub separated: bool,
    pub n: usize,
}

fn position_code(p: Position) -> f64 {
    match p {
        Position::A => 1.0,
        Position::B => -1.0,
    }
}

fn standardise(x: &[f64], w: &[f64]) -> Vec<f64> {
    let sw: f64 = w.iter().sum();
    let m = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let v = x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw;
    let sd = v.sqrt();
    x.iter().map(|a| if sd > 0.0 { (a - m) / sd } else { 0.0 }).collect()
}

/// Weighted version used by the bootstrap; `weights` are case multiplicities.
pub(crate) fn delta_deviance_weighted(trials: &[TrialRecord], weights: &[f64]) -> DeltaDevianceResult {
    let idx: Vec<usize> = (0..trials.len())
        .filter(|&i| trials[i].is_valid() && weights[i] > 0.0)
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| trials[i].correct as u8 as f64).collect();
    let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
    let n = idx.len();
    let ones = y.iter().zip(&w).filter(|(v, _)| **v > 0.5).count();
    let separated = ones == 0 || ones == n;
    let empty = DeltaDevianceResult {
        deviance_log_ratio: None,
        deviance_abs_diff: None,
        delta_dev: None,
        p: None,
        winner: None,
        separated,
        n,
    };
    if separated || n < 4 {
        return empty;
    }
    let pos: Vec<f64> = idx.iter().map(|&i| position_code(trials[i].large_position)).collect();
    let lr: Vec<f64> = idx.iter().map(|&i| trials[i].effective_ratio().ln()).collect();
    let ad: Vec<f64> = idx.iter().map(|&i| trials[i].abs_difference()).collect();
    let fit = |x: &[f64]| logistic_irls(&[&standardise(x, &w), &pos], &y, &w).map(|f| f.deviance);
    let (Some(d_log), Some(d_abs)) = (fit(&lr), fit(&ad)) else {
        return empty;
    };
    let delta = d_abs - d_log;
    DeltaDevianceResult {
        deviance_log_ratio: Some(d_log),
        deviance_abs_diff: Some(d_abs),
        delta_dev: Some(delta),
        p: Some(chi2_sf(delta.abs(), 1.0)),
        winner: Some(if delta >= 0.0 { DeviancePredictor::LogRatio } else { DeviancePredictor::AbsDiff }),
        separated,
        n,
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<u64> = values.map(f64::to_bits).collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Logistic regressions of correctness on ln(ratio) and on |large - small|,
/// each with an intercept and a position term.
pub fn delta_deviance_test(trials: &[TrialRecord]) -> Result<DeltaDevianceResult, BehaviourError> {
    let valid: Vec<&TrialRecord> = trials.iter().filter(|t| t.is_valid()).collect();
    if distinct(valid.iter().map(|t| t.ratio)) < 2 || distinct(valid.iter().map(|t| t.baseline)) < 2 {
        return Err(BehaviourError::Insufficient(
            "need at least two distinct ratios and baselines".into(),
        ));
    }
    Ok(delta_deviance_weighted(trials, &vec![1.0; trials.len()]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessingMode {
    Approximate,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyDiagnostic {
    pub mean_entropy: f64,
    pub mode: ProcessingMode,
    pub n: usize,
}

/// Mean binary entropy (nats) of the option distribution over valid trials.
pub fn entropy_diagnostic(trials: &[TrialRecord]) -> EntropyDiagnostic {
    let h: Vec<f64> = trials
        .iter()
        .filter(|t| t.is_valid())
        .map(|t| binary_entropy(t.p_a / (t.p_a + t.p_b)))
        .collect();
    let m = if h.is_empty() { 0.0 } else { mean(&h) };
    EntropyDiagnostic {
        mean_entropy: m,
        mode: entropy_mode(m),
        n: h.len(),
    }
}

pub fn entropy_mode(mean_entropy: f64) -> ProcessingMode {
    if mean_entropy > ENTROPY_THRESHOLD {
        ProcessingMode::Approximate
    } else {
        ProcessingMode::Exact
    }
}

/// 2AFC sensitivity √2·Φ⁻¹(p) with p clipped to [1/(2n), 1 - 1/(2n)].
pub fn dprime(p_correct: f64, n: u64) -> f64 {
    let lo = 1.0 / (2.0 * n as f64);
    std::f64::consts::SQRT_2 * normal_quantile(p_correct.clamp(lo, 1.0 - lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprimeCell {
    pub baseline: f64,
    pub ratio: f64,
    pub n: u64,
    pub p_correct: f64,
    pub dprime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprimeProfile {
    pub cells: Vec<DprimeCell>,
    /// (ratio, CV of d′ across baselines)
    pub cv_by_ratio: Vec<(f64, f64)>,
    pub mean_cv: Option<f64>,
    /// Cells with fewer than `MIN_DPRIME_N` valid trials, left out.
    pub cells_skipped: usize,
}

pub const MIN_DPRIME_N: u64 = 10;

pub fn dprime_profile(trials: &[TrialRecord]) -> DprimeProfile {
    let table = accuracy_by_ratio(trials);
    let mut cells = Vec::new();
    let mut skipped = 0;
    for c in &table.by_cell {
        if c.n < MIN_DPRIME_N {
            skipped += 1;
            continue;
        }
        cells.push(DprimeCell {
            baseline: c.baseline.unwrap_or(f64::NAN),
            ratio: c.ratio,
            n: c.n,
            p_correct: c.accuracy,
            dprime: dprime(c.accuracy, c.n),
        });
    }
    let mut by_ratio: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        by_ratio.entry(c.ratio.to_bits()).or_default().push(c.dprime);
    }
    let cv_by_ratio: Vec<(f64, f64)> = by_ratio
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .filter_map(|(r, v)| {
            let m = mean(&v);
            if m.abs() < 1e-12 {
                let all_equal = v.iter().all(|x| (x - m).abs() < 1e-12);
                return all_equal.then_some((f64::from_bits(r), 0.0));
            }
            Some((f64::from_bits(r), sample_sd(&v) / m.abs()))
        })
        .collect();
    let mean_cv = if cv_by_ratio.is_empty() {
        None
    } else {
        Some(cv_by_ratio.iter().map(|(_, c)| c).sum::<f64>() / cv_by_ratio.len() as f64)
    };
    DprimeProfile {
        cells,
        cv_by_ratio,
        mean_cv,
        cells_skipped: skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTerm {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRatioModel {
    pub terms: Vec<WaldTerm>,
    pub deviance: f64,
    pub n: usize,
    pub condition_number: f64,
    pub converged: bool,
}

/// Trial-level logistic model of correctness on standardised |difference|,
/// standardised ln(ratio), their product and position.
pub fn distance_ratio_model(trials: &[TrialRecord]) -> Result<DistanceRatioModel, BehaviourError> {
    let valid: Vec<&TrialRecord> = trials.iter().filter(|t| t.is_valid()).collect();
    let n = valid.len();
    let w = vec![1.0; n];
    let dist = standardise(&valid.iter().map(|t| t.abs_difference()).collect::<Vec<_>>(), &w);
    let lr = standardise(&valid.iter().map(|t| t.effective_ratio().ln()).collect::<Vec<_>>(), &w);
    let inter: Vec<f64> = dist.iter().zip(&lr).map(|(a, b)| a * b).collect();
    let pos: Vec<f64> = valid.iter().map(|t| position_code(t.large_position)).collect();
    let y: Vec<f64> = valid.iter().map(|t| t.correct as u8 as f64).collect();
    let ones = y.iter().filter(|v| **v > 0.5).count();
    if n < 10 || ones == 0 || ones == n {
        return Err(BehaviourError::Insufficient(
            "trial-level model needs both correct and incorrect trials".into(),
        ));
    }
    let preds: [&[f64]; 4] = [&dist, &lr, &inter, &pos];
    let cond = correlation_condition_number(&preds);
    let fit = logistic_irls(&preds, &y, &w)
        .ok_or_else(|| BehaviourError::Insufficient("trial-level model is singular".into()))?;
    let names = ["distance", "ratio", "distance_x_ratio", "position"];
    let terms = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let est = fit.coefficients[i + 1];
            let se = fit.standard_errors[i + 1];
            let z = if se > 0.0 { est / se } else { f64::NAN };
            WaldTerm {
                name: name.to_string(),
                estimate: est,
                se,
                z,
                p: if z.is_finite() { chi2_sf(z * z, 1.0) } else { f64::NAN },
            }
        })
        .collect();
    Ok(DistanceRatioModel {
        terms,
        deviance: fit.deviance,
        n,
        condition_number: cond,
        converged: fit.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourReport {
    pub exclusion: ExclusionSummary,
    pub accuracy: AccuracyTable,
    pub delta_deviance: Option<DeltaDevianceResult>,
    pub psychometric: Option<PsychometricFit>,
    pub wf_ci: Option<BcaInterval>,
    pub entropy: EntropyDiagnostic,
    pub dprime: DprimeProfile,
    pub distance_ratio: Option<DistanceRatioModel>,
    pub overall_accuracy: f64,
    pub n_valid: usize,
    pub notes: Vec<String>,
}

/// Every behavioural analysis on one trial log. Analyses whose
/// preconditions fail are left out with a note.
pub fn analyze_behaviour(set: &TrialSet, bootstrap: usize, seed: u64) -> BehaviourReport {
    let valid = set.valid();
    let mut notes = Vec::new();
    let delta_deviance = delta_deviance_test(&valid)
        .map_err(|e| notes.push(format!("delta deviance: {e}")))
        .ok();
    let psychometric = fit_psychometric(&valid)
        .map_err(|e| notes.push(format!("psychometric: {e}")))
        .ok();
    let wf_ci = match &psychometric {
        Some(p) if p.wf_status == WfStatus::Finite || p.wf_status == WfStatus::BelowRange => {
            bca_ci(&valid, Statistic::WeberFraction, bootstrap, seed)
                .map_err(|e| notes.push(format!("bootstrap: {e}")))
                .ok()
        }
        Some(_) => {
            notes.push("Weber fraction unbounded; no interval".into());
            None
        }
        None => None,
    };
    let distance_ratio = distance_ratio_model(&valid)
        .map_err(|e| notes.push(format!("distance/ratio model: {e}")))
        .ok();
    let n_valid = valid.len();
    BehaviourReport {
        exclusion: set.exclusion.clone(),
        accuracy: accuracy_by_ratio(&valid),
        delta_deviance,
        psychometric,
        wf_ci,
        entropy: entropy_diagnostic(&valid),
        dprime: dprime_profile(&valid),
        distance_ratio,
        overall_accuracy: if n_valid == 0 {
            f64::NAN
        } else {
            valid.iter().filter(|t| t.correct).count() as f64 / n_valid as f64
        },
        n_valid,
        notes,
    }
}

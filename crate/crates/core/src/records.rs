//! Line-oriented record types shared between producers (the bridge, the
//! synthetic generators) and the analyses that consume them.

use std::io::{BufRead, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::stimulus::{MagnitudeValue, Position, Task};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no records")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "invalid")]
    Invalid,
}

impl From<Position> for Choice {
    fn from(p: Position) -> Self {
        match p {
            Position::A => Choice::A,
            Position::B => Choice::B,
        }
    }
}

/// One forced-choice trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pair_id: u32,
    /// Nominal baseline of the pair's design cell.
    pub baseline: f64,
    /// Nominal ratio of the design cell.
    pub ratio: f64,
    pub large_position: Position,
    pub chosen: Choice,
    pub p_a: f64,
    pub p_b: f64,
    pub correct: bool,
    pub entropy_nats: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub large_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl TrialRecord {
    /// Realised large/small ratio when option values are present, else nominal.
    pub fn effective_ratio(&self) -> f64 {
        match (self.small_value, self.large_value) {
            (Some(s), Some(l)) if s > 0.0 && l > 0.0 => l / s,
            _ => self.ratio,
        }
    }

    /// |large - small| in canonical units; falls back to the nominal design.
    pub fn abs_difference(&self) -> f64 {
        match (self.small_value, self.large_value) {
            (Some(s), Some(l)) => (l - s).abs(),
            _ => self.baseline * (self.ratio - 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.chosen != Choice::Invalid
    }

    /// Probability assigned to the larger option.
    pub fn p_large(&self) -> f64 {
        match self.large_position {
            Position::A => self.p_a,
            Position::B => self.p_b,
        }
    }
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Builds a trial from the pair it answers and the probability placed on the
/// larger option.
pub fn trial_from_pair(
    pair: &crate::stimulus::ComparisonPair,
    p_large: f64,
    chosen: Choice,
) -> TrialRecord {
    let (p_a, p_b) = match pair.large_position {
        Position::A => (p_large, 1.0 - p_large),
        Position::B => (1.0 - p_large, p_large),
    };
    TrialRecord {
        pair_id: pair.pair_id,
        baseline: pair.baseline_nominal,
        ratio: pair.ratio_nominal,
        large_position: pair.large_position,
        chosen,
        p_a,
        p_b,
        correct: chosen == Choice::from(pair.large_position),
        entropy_nats: binary_entropy(p_large),
        small_value: Some(value_of(&pair.small_value)),
        large_value: Some(value_of(&pair.large_value)),
        task: Some(pair.task),
        model_id: None,
        domain: Some(pair.small_value.domain.as_str().to_string()),
    }
}

fn value_of(v: &MagnitudeValue) -> f64 {
    v.canonical_magnitude
}

/// Result of one patched forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    pub prompt_id: u32,
    /// "mag" or "rand_1" .. "rand_10".
    pub direction_id: String,
    pub dose: f64,
    pub p_chosen_base: f64,
    pub p_chosen_patched: f64,
    pub delta_p: f64,
    /// Direction in which a magnitude-increasing patch should move
    /// `p_chosen` (+1 or -1).
    #[serde(default = "plus_one")]
    pub expected_sign: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

fn plus_one() -> f64 {
    1.0
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one JSON object per non-blank line. Header lines carrying a
/// `"schema"` key are skipped.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(input: R) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 && trimmed.starts_with("{\"schema\"") {
            continue;
        }
        let rec = serde_json::from_str(trimmed).map_err(|e| RecordError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(RecordError::Empty);
    }
    Ok(out)
}

//! Probe stimuli and forced-choice comparison pairs.
//!
//! Everything here is a pure function of the configuration and seed; two runs
//! with the same inputs serialise to identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STIMULI_SCHEMA: &str = "magpsych.stimuli";
pub const STIMULI_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("task {task} is not defined for the {domain} domain")]
    Unsupported { domain: Domain, task: Task },
    #[error("no surface form within tolerance for baseline {baseline} at ratio {ratio}")]
    Infeasible { baseline: f64, ratio: f64 },
    #[error("cannot render prompts for an empty pair list")]
    EmptyPairs,
    #[error("unknown {kind} '{value}'")]
    Parse { kind: &'static str, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Numerical,
    Temporal,
    Spatial,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Numerical, Domain::Temporal, Domain::Spatial];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Numerical => "numerical",
            Domain::Temporal => "temporal",
            Domain::Spatial => "spatial",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = StimulusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numerical" => Ok(Domain::Numerical),
            "temporal" => Ok(Domain::Temporal),
            "spatial" => Ok(Domain::Spatial),
            other => Err(StimulusError::Parse {
                kind: "domain",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "B1_crossformat")]
    B1CrossFormat,
    #[serde(rename = "B2_arithmetic")]
    B2Arithmetic,
    #[serde(rename = "B3_contextual")]
    B3Contextual,
    #[serde(rename = "symbolic_control")]
    SymbolicControl,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::B1CrossFormat => "B1_crossformat",
            Task::B2Arithmetic => "B2_arithmetic",
            Task::B3Contextual => "B3_contextual",
            Task::SymbolicControl => "symbolic_control",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = StimulusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B1_crossformat" | "B1" | "b1" => Ok(Task::B1CrossFormat),
            "B2_arithmetic" | "B2" | "b2" => Ok(Task::B2Arithmetic),
            "B3_contextual" | "B3" | "b3" => Ok(Task::B3Contextual),
            "symbolic_control" | "symbolic" => Ok(Task::SymbolicControl),
            other => Err(StimulusError::Parse {
                kind: "task",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    A,
    B,
}

impl Position {
    pub fn flipped(self) -> Position {
        match self {
            Position::A => Position::B,
            Position::B => Position::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeValue {
    pub domain: Domain,
    /// Count, seconds or metres.
    pub canonical_magnitude: f64,
    pub surface_form: String,
    pub unit_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStimulus {
    pub stimulus_id: u32,
    pub value: MagnitudeValue,
    pub carrier_index: u8,
    pub prompt_text: String,
    /// `[start, end)` in characters, not bytes.
    pub magnitude_char_span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub pair_id: u32,
    pub task: Task,
    pub baseline_nominal: f64,
    pub baseline_jittered: f64,
    pub ratio_nominal: f64,
    pub small_value: MagnitudeValue,
    pub large_value: MagnitudeValue,
    /// Expression shown to the model for the smaller option.
    pub small_expression: String,
    pub large_expression: String,
    pub large_position: Position,
}

impl ComparisonPair {
    pub fn realised_ratio(&self) -> f64 {
        self.large_value.canonical_magnitude / self.small_value.canonical_magnitude
    }

    /// Expressions in presentation order (option A first).
    pub fn ordered_expressions(&self) -> (&str, &str) {
        match self.large_position {
            Position::A => (&self.large_expression, &self.small_expression),
            Position::B => (&self.small_expression, &self.large_expression),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub pair_id: u32,
    pub text: String,
    /// Token that selects option A and option B respectively.
    pub option_tokens: [String; 2],
    pub expected_answer: String,
    pub large_position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBatch {
    pub labelled: bool,
    pub task: Task,
    pub prompts: Vec<RenderedPrompt>,
}

/// Baselines, ratio grid and pair counts. The defaults are stand-ins for
/// values that were never published; they are echoed in every output header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDesign {
    pub ratios: Vec<f64>,
    pub numerical_baselines: Vec<f64>,
    pub temporal_baselines: Vec<f64>,
    pub spatial_baselines: Vec<f64>,
    pub pairs_per_cell: usize,
    pub jitter: f64,
    pub ratio_tolerance: f64,
}

impl Default for PairDesign {
    fn default() -> Self {
        Self {
            ratios: vec![1.05, 1.15, 1.35, 1.65, 2.00, 3.00],
            numerical_baselines: vec![18.0, 24.0, 47.0, 120.0, 480.0],
            temporal_baselines: vec![50.0, 2400.0, 144_000.0],
            spatial_baselines: vec![40.0, 800.0, 50_000.0],
            pairs_per_cell: 50,
            jitter: 0.15,
            ratio_tolerance: 0.02,
        }
    }
}

impl PairDesign {
    pub fn baselines(&self, domain: Domain) -> &[f64] {
        match domain {
            Domain::Numerical => &self.numerical_baselines,
            Domain::Temporal => &self.temporal_baselines,
            Domain::Spatial => &self.spatial_baselines,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PromptTemplate {
    labelled: String,
    unlabelled: String,
}

#[derive(Debug, Deserialize)]
struct TemplateTable {
    carriers: BTreeMap<String, Vec<String>>,
    prompts: BTreeMap<String, PromptTemplate>,
    crossformat: Vec<String>,
}

fn templates() -> &'static TemplateTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<TemplateTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/templates.json")).expect("bundled templates")
    })
}

pub fn carrier_templates(domain: Domain) -> &'static [String] {
    &templates().carriers[domain.as_str()]
}

struct Unit {
    seconds_or_metres: f64,
    singular: &'static str,
    plural: &'static str,
}

const TIME_UNITS: [Unit; 7] = [
    Unit { seconds_or_metres: 1.0, singular: "second", plural: "seconds" },
    Unit { seconds_or_metres: 60.0, singular: "minute", plural: "minutes" },
    Unit { seconds_or_metres: 3600.0, singular: "hour", plural: "hours" },
    Unit { seconds_or_metres: 86_400.0, singular: "day", plural: "days" },
    Unit { seconds_or_metres: 604_800.0, singular: "week", plural: "weeks" },
    Unit { seconds_or_metres: 2_592_000.0, singular: "month", plural: "months" },
    Unit { seconds_or_metres: 31_536_000.0, singular: "year", plural: "years" },
];

const SPACE_UNITS: [Unit; 2] = [
    Unit { seconds_or_metres: 1.0, singular: "metre", plural: "metres" },
    Unit { seconds_or_metres: 1000.0, singular: "kilometre", plural: "kilometres" },
];

fn units(domain: Domain) -> &'static [Unit] {
    match domain {
        Domain::Temporal => &TIME_UNITS,
        Domain::Spatial => &SPACE_UNITS,
        Domain::Numerical => &[],
    }
}

/// (count, unit index) per probe value.
const TEMPORAL_PROBES: [(u64, usize); 19] = [
    (1, 0), (5, 0), (10, 0), (30, 0),
    (1, 1), (2, 1), (5, 1), (10, 1), (30, 1),
    (1, 2), (2, 2), (6, 2), (12, 2),
    (1, 3), (3, 3),
    (1, 4), (2, 4),
    (1, 5),
    (1, 6),
];

const SPATIAL_PROBES: [(u64, usize); 14] = [
    (1, 0), (2, 0), (5, 0), (10, 0), (20, 0), (50, 0), (100, 0), (200, 0), (500, 0),
    (1, 1), (5, 1), (10, 1), (100, 1), (1000, 1),
];

pub const NUMERICAL_PROBES: [u64; 26] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100, 150, 200, 300, 500,
    700, 1000,
];

fn unit_value(domain: Domain, count: u64, unit: usize) -> MagnitudeValue {
    let u = &units(domain)[unit];
    let label = if count == 1 { u.singular } else { u.plural };
    MagnitudeValue {
        domain,
        canonical_magnitude: count as f64 * u.seconds_or_metres,
        surface_form: format!("{count} {label}"),
        unit_label: u.plural.to_string(),
    }
}

fn number_value(n: u64) -> MagnitudeValue {
    MagnitudeValue {
        domain: Domain::Numerical,
        canonical_magnitude: n as f64,
        surface_form: n.to_string(),
        unit_label: String::new(),
    }
}

/// Probe values for a domain in strictly increasing canonical order.
pub fn probe_values(domain: Domain) -> Vec<MagnitudeValue> {
    match domain {
        Domain::Numerical => NUMERICAL_PROBES.iter().map(|&n| number_value(n)).collect(),
        Domain::Temporal => TEMPORAL_PROBES
            .iter()
            .map(|&(c, u)| unit_value(domain, c, u))
            .collect(),
        Domain::Spatial => SPATIAL_PROBES
            .iter()
            .map(|&(c, u)| unit_value(domain, c, u))
            .collect(),
    }
}

fn substitute(template: &str, form: &str) -> (String, [usize; 2]) {
    let at = template.find("{}").expect("carrier has a slot");
    let start = template[..at].chars().count();
    let text = format!("{}{}{}", &template[..at], form, &template[at + 2..]);
    (text, [start, start + form.chars().count()])
}

/// Probe sentences: every probe value in every carrier, value-major order.
pub fn build_probe_set(domain: Domain) -> Vec<ProbeStimulus> {
    let carriers = carrier_templates(domain);
    let mut out = Vec::new();
    for value in probe_values(domain) {
        for (ci, template) in carriers.iter().enumerate() {
            let (prompt_text, span) = substitute(template, &value.surface_form);
            out.push(ProbeStimulus {
                stimulus_id: out.len() as u32,
                value: value.clone(),
                carrier_index: ci as u8,
                prompt_text,
                magnitude_char_span: span,
            });
        }
    }
    out
}

/// Equivalent magnitudes written in different units (e.g. 120 seconds and
/// 2 minutes), for the unit-boundary control. Empty for numerical.
pub fn build_unit_boundary_values(domain: Domain) -> Vec<MagnitudeValue> {
    let pairs: &[(u64, usize)] = match domain {
        Domain::Temporal => &[
            (120, 0), (2, 1),
            (180, 0), (3, 1),
            (90, 1), (5400, 0),
            (120, 1), (2, 2),
            (48, 2), (2, 3),
            (14, 3), (2, 4),
            (10, 1), (600, 0),
            (3, 2), (180, 1),
        ],
        Domain::Spatial => &[
            (2000, 0), (2, 1),
            (5000, 0), (5, 1),
            (1500, 0), (3000, 0),
            (3, 1), (10_000, 0),
            (10, 1), (700, 0),
        ],
        Domain::Numerical => &[],
    };
    pairs.iter().map(|&(c, u)| unit_value(domain, c, u)).collect()
}

// ---------------------------------------------------------------------------
// Surface rendering helpers
// ---------------------------------------------------------------------------

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// English cardinal for `0..1_000_000`.
pub fn number_to_words(n: u64) -> String {
    fn below_thousand(n: u64) -> String {
        let mut parts = Vec::new();
        let h = n / 100;
        let rest = n % 100;
        if h > 0 {
            parts.push(format!("{} hundred", ONES[h as usize]));
        }
        if rest > 0 {
            let r = if rest < 20 {
                ONES[rest as usize].to_string()
            } else if rest % 10 == 0 {
                TENS[(rest / 10) as usize].to_string()
            } else {
                format!("{}-{}", TENS[(rest / 10) as usize], ONES[(rest % 10) as usize])
            };
            if h > 0 {
                parts.push(format!("and {r}"));
            } else {
                parts.push(r);
            }
        }
        parts.join(" ")
    }
    if n == 0 {
        return ONES[0].to_string();
    }
    let thousands = n / 1000;
    let rest = n % 1000;
    match (thousands, rest) {
        (0, r) => below_thousand(r),
        (t, 0) => format!("{} thousand", below_thousand(t)),
        (t, r) if r < 100 => format!("{} thousand and {}", below_thousand(t), below_thousand(r)),
        (t, r) => format!("{} thousand {}", below_thousand(t), below_thousand(r)),
    }
}

fn render_number(n: u64, style: &str) -> String {
    match style {
        "words" => number_to_words(n),
        "dozens" if n >= 12 => {
            let (q, r) = (n / 12, n % 12);
            if r == 0 {
                format!("{} dozen", number_to_words(q))
            } else {
                format!("{} dozen and {}", number_to_words(q), number_to_words(r))
            }
        }
        "digits_words" if n >= 10 => {
            let tens = n / 10;
            let ones = n % 10;
            if ones == 0 {
                format!("{tens} tens")
            } else {
                format!("{tens} tens and {ones}")
            }
        }
        "dozens" | "digits_words" => number_to_words(n),
        _ => n.to_string(),
    }
}

/// Largest unit whose count is at least 25; keeps integer rounding within 2%.
fn natural_unit(domain: Domain, value: f64) -> usize {
    units(domain)
        .iter()
        .enumerate()
        .rev()
        .find(|(_, u)| value / u.seconds_or_metres >= 25.0)
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn rounded_in_unit(domain: Domain, value: f64, unit: usize) -> MagnitudeValue {
    let count = (value / units(domain)[unit].seconds_or_metres).round().max(1.0) as u64;
    unit_value(domain, count, unit)
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

fn supported(domain: Domain, task: Task) -> bool {
    domain == Domain::Numerical || task == Task::B1CrossFormat
}

struct Option2 {
    value: MagnitudeValue,
    expression: String,
}

fn percent_option(target: f64, rng: &mut ChaCha8Rng) -> Option2 {
    let pct: u64 = rng.random_range(20..=90);
    let base = ((target * 100.0) / pct as f64).round().max(1.0) as u64;
    let actual = pct as f64 * base as f64 / 100.0;
    Option2 {
        value: MagnitudeValue {
            domain: Domain::Numerical,
            canonical_magnitude: actual,
            surface_form: format!("{pct}% of {base}"),
            unit_label: String::new(),
        },
        expression: format!("{pct}% of {base}"),
    }
}

fn numerical_option(n: u64, task: Task, style: &str) -> Option2 {
    let value = number_value(n);
    let expression = match task {
        Task::B1CrossFormat => render_number(n, style),
        _ => n.to_string(),
    };
    Option2 { value, expression }
}

/// Comparison pairs for one (domain, task) cell grid.
pub fn build_comparison_pairs(
    domain: Domain,
    task: Task,
    seed: u64,
    design: &PairDesign,
) -> Result<Vec<ComparisonPair>, StimulusError> {
    if !supported(domain, task) {
        return Err(StimulusError::Unsupported { domain, task });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles = &templates().crossformat;
    let mut pairs = Vec::new();
    for &baseline in design.baselines(domain) {
        for &ratio in &design.ratios {
            let n = design.pairs_per_cell;
            let mut positions: Vec<Position> = (0..n)
                .map(|k| if k % 2 == 0 { Position::A } else { Position::B })
                .collect();
            positions.shuffle(&mut rng);
            for position in positions {
                let pair_id = pairs.len() as u32;
                let mut accepted = None;
                for _attempt in 0..10_000 {
                    let jitter: f64 = rng.random_range(-design.jitter..design.jitter);
                    let jittered = baseline * (1.0 + jitter);
                    let (small, large) = match (domain, task) {
                        (Domain::Numerical, Task::B2Arithmetic) => (
                            percent_option(jittered, &mut rng),
                            percent_option(jittered * ratio, &mut rng),
                        ),
                        (Domain::Numerical, _) => {
                            let s = jittered.round().max(1.0) as u64;
                            let l = (s as f64 * ratio).round() as u64;
                            let k = styles.len();
                            let i = pair_id as usize % k;
                            let j = (i + 1 + (pair_id as usize / k) % (k - 1)) % k;
                            (
                                numerical_option(s, task, &styles[i]),
                                numerical_option(l, task, &styles[j]),
                            )
                        }
                        _ => {
                            // one option in the base unit, the other in its natural unit
                            let base_first = pair_id % 2 == 0;
                            let su = if base_first { 0 } else { natural_unit(domain, jittered) };
                            let s = rounded_in_unit(domain, jittered, su);
                            let target = s.canonical_magnitude * ratio;
                            let lu = if base_first { natural_unit(domain, target) } else { 0 };
                            let l = rounded_in_unit(domain, target, lu);
                            (
                                Option2 { expression: s.surface_form.clone(), value: s },
                                Option2 { expression: l.surface_form.clone(), value: l },
                            )
                        }
                    };
                    let realised = large.value.canonical_magnitude / small.value.canonical_magnitude;
                    if (realised / ratio - 1.0).abs() <= design.ratio_tolerance {
                        accepted = Some((jittered, small, large));
                        break;
                    }
                }
                let (jittered, small, large) =
                    accepted.ok_or(StimulusError::Infeasible { baseline, ratio })?;
                pairs.push(ComparisonPair {
                    pair_id,
                    task,
                    baseline_nominal: baseline,
                    baseline_jittered: jittered,
                    ratio_nominal: ratio,
                    small_value: small.value,
                    large_value: large.value,
                    small_expression: small.expression,
                    large_expression: large.expression,
                    large_position: position,
                });
            }
        }
    }
    Ok(pairs)
}

/// Prompt text per pair. `labelled` adds explicit "A)" / "B)" option labels;
/// the unlabelled format reproduces the original pre-labelling layout.
pub fn render_prompts(pairs: &[ComparisonPair], labelled: bool) -> Result<PromptBatch, StimulusError> {
    let first = pairs.first().ok_or(StimulusError::EmptyPairs)?;
    let table = &templates().prompts;
    let prompts = pairs
        .iter()
        .map(|pair| {
            let template = &table[pair.task.as_str()];
            let pattern = if labelled { &template.labelled } else { &template.unlabelled };
            let (a, b) = pair.ordered_expressions();
            let text = pattern.replace("{a}", a).replace("{b}", b);
            let option_tokens = if labelled {
                ["A".to_string(), "B".to_string()]
            } else {
                [a.to_string(), b.to_string()]
            };
            let expected_answer = match pair.large_position {
                Position::A => option_tokens[0].clone(),
                Position::B => option_tokens[1].clone(),
            };
            RenderedPrompt {
                pair_id: pair.pair_id,
                text,
                option_tokens,
                expected_answer,
                large_position: pair.large_position,
            }
        })
        .collect();
    Ok(PromptBatch {
        labelled,
        task: first.task,
        prompts,
    })
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StimulusHeader {
    pub schema: String,
    pub version: u32,
    pub kind: String,
    pub domain: Domain,
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub labelled: Option<bool>,
    /// Values chosen here because they were never published.
    pub stand_in_parameters: Vec<String>,
    pub design: Option<PairDesign>,
}

impl StimulusHeader {
    pub fn new(kind: &str, domain: Domain) -> Self {
        Self {
            schema: STIMULI_SCHEMA.to_string(),
            version: STIMULI_SCHEMA_VERSION,
            kind: kind.to_string(),
            domain,
            task: None,
            seed: None,
            labelled: None,
            stand_in_parameters: vec![
                "ratio_grid".into(),
                "baselines".into(),
                "carrier_sentences_2_to_5".into(),
                "b2_b3_templates".into(),
                "temporal_spatial_probe_values".into(),
            ],
            design: None,
        }
    }
}

/// Header line followed by one JSON record per line.
pub fn write_jsonl<W: Write, T: Serialize>(
    mut out: W,
    header: &StimulusHeader,
    records: &[T],
) -> Result<(), StimulusError> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The comparison-pair file for one (domain, task, seed): a header line then
/// one pair per line.
pub fn pairs_file(domain: Domain, task: Task, seed: u64, design: &PairDesign) -> Result<(Vec<ComparisonPair>, Vec<u8>), StimulusError> {
    let pairs = build_comparison_pairs(domain, task, seed, design)?;
    let mut header = StimulusHeader::new("comparison_pairs", domain);
    header.task = Some(task);
    header.seed = Some(seed);
    header.design = Some(design.clone());
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &header, &pairs)?;
    Ok((pairs, bytes))
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_counts_per_domain() {
        assert_eq!(build_probe_set(Domain::Numerical).len(), 130);
        assert_eq!(build_probe_set(Domain::Temporal).len(), 95);
        assert_eq!(build_probe_set(Domain::Spatial).len(), 70);
    }

    #[test]
    fn numerical_probe_range() {
        let v = probe_values(Domain::Numerical);
        assert_eq!(v.len(), 26);
        assert_eq!(v[0].canonical_magnitude, 1.0);
        assert_eq!(v[25].canonical_magnitude, 1000.0);
    }

    #[test]
    fn temporal_spans_one_second_to_one_year() {
        let v = probe_values(Domain::Temporal);
        assert_eq!(v[0].canonical_magnitude, 1.0);
        assert_eq!(v.last().unwrap().canonical_magnitude, 31_536_000.0);
        let s = probe_values(Domain::Spatial);
        assert_eq!(s.last().unwrap().canonical_magnitude, 1_000_000.0);
    }

    #[test]
    fn probe_magnitudes_strictly_increase() {
        for d in Domain::ALL {
            let v = probe_values(d);
            assert!(v.windows(2).all(|w| w[0].canonical_magnitude < w[1].canonical_magnitude));
            assert!(v.iter().all(|m| m.canonical_magnitude > 0.0));
        }
    }

    #[test]
    fn surface_form_occurs_once_inside_span() {
        for d in Domain::ALL {
            for s in build_probe_set(d) {
                let chars: Vec<char> = s.prompt_text.chars().collect();
                let inside: String = chars[s.magnitude_char_span[0]..s.magnitude_char_span[1]]
                    .iter()
                    .collect();
                assert_eq!(inside, s.value.surface_form);
                assert_eq!(s.prompt_text.matches(&s.value.surface_form).count(), 1, "{}", s.prompt_text);
            }
        }
    }

    #[test]
    fn first_numerical_carrier() {
        let s = &build_probe_set(Domain::Numerical)[0];
        assert_eq!(s.prompt_text, "The number 1 is a quantity.");
    }

    #[test]
    fn words_rendering() {
        assert_eq!(number_to_words(28), "twenty-eight");
        assert_eq!(number_to_words(147), "one hundred and forty-seven");
        assert_eq!(number_to_words(1440), "one thousand four hundred and forty");
        assert_eq!(render_number(36, "dozens"), "three dozen");
    }

    #[test]
    fn unsupported_combination_is_rejected() {
        let err = build_comparison_pairs(Domain::Temporal, Task::B2Arithmetic, 42, &PairDesign::default());
        assert!(matches!(err, Err(StimulusError::Unsupported { .. })));
    }

    #[test]
    fn labelled_prompt_has_each_label_once() {
        let pairs = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &PairDesign::default()).unwrap();
        let batch = render_prompts(&pairs[..1], true).unwrap();
        let t = &batch.prompts[0].text;
        assert_eq!(t.matches("A)").count(), 1);
        assert_eq!(t.matches("B)").count(), 1);
        let unlabelled = render_prompts(&pairs[..1], false).unwrap();
        assert!(!unlabelled.prompts[0].text.contains("A)"));
    }

    #[test]
    fn symbolic_prompt_contains_both_numbers() {
        let pair = ComparisonPair {
            pair_id: 7,
            task: Task::SymbolicControl,
            baseline_nominal: 47.0,
            baseline_jittered: 47.0,
            ratio_nominal: 1.65,
            small_value: number_value(47),
            large_value: number_value(83),
            small_expression: "47".into(),
            large_expression: "83".into(),
            large_position: Position::B,
        };
        let batch = render_prompts(&[pair], true).unwrap();
        assert!(batch.prompts[0].text.contains("47") && batch.prompts[0].text.contains("83"));
        assert_eq!(batch.prompts[0].expected_answer, "B");
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(matches!(render_prompts(&[], true), Err(StimulusError::EmptyPairs)));
    }

    #[test]
    fn unit_boundary_values_come_in_equivalent_pairs() {
        let v = build_unit_boundary_values(Domain::Temporal);
        assert_eq!(v[0].canonical_magnitude, v[1].canonical_magnitude);
        assert_ne!(v[0].unit_label, v[1].unit_label);
    }
}

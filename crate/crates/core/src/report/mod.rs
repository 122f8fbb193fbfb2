//! Hypothesis verdicts and report emission.

pub mod pipeline;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behaviour::{BehaviourReport, DeviancePredictor, WfStatus};
use crate::causal::{H7Result, PatchAnalysis};
use crate::controls::{FrequencyMatch, ShuffleCheck, SingleTokenControl, UnitBoundary};
use crate::corpus::{DistributionFit, MagnitudeHistogram};
use crate::geometry::GeometryReport;
use crate::precision::{evaluate_h3, PrecisionCurve};
use crate::stats::dist::binomial_two_sided;
use crate::stats::{ranks, spearman, spearman_trend_p};
use crate::stimulus::{Domain, Task};

pub const REPORT_SCHEMA: &str = "magpsych.report";
pub const REPORT_VERSION: u32 = 1;
pub const PRIMARY_ALPHA: f64 = 0.017;
pub const SECONDARY_ALPHA: f64 = 0.05;
pub const HUMAN_WF_RANGE: [f64; 2] = [0.10, 0.25];
pub const H6_MODEL: &str = "logit(correct) ~ z(|difference|) + z(ln ratio) + z(|difference|)·z(ln ratio) + position; Wald tests";
pub const H5_RULE: &str = "Spearman of layer index against weber_rho - linear_rho on the first configured metric; negative and p < .05";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    Partial,
    Fail,
    NonEvaluable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub status: Status,
    pub alpha: f64,
    pub detail: String,
    pub statistics: BTreeMap<String, f64>,
}

impl Hypothesis {
    fn new(id: &str, alpha: f64) -> Self {
        Self { id: id.into(), status: Status::NonEvaluable, alpha, detail: String::new(), statistics: BTreeMap::new() }
    }

    fn non_evaluable(mut self, why: impl Into<String>) -> Self {
        self.status = Status::NonEvaluable;
        self.detail = why.into();
        self
    }

    fn stat(&mut self, k: &str, v: f64) {
        self.statistics.insert(k.into(), v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGeometry {
    pub domain: Domain,
    pub report: GeometryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBehaviour {
    pub domain: Domain,
    pub task: Task,
    pub report: BehaviourReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPrecision {
    pub domain: Domain,
    pub curves: Vec<PrecisionCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalSection {
    pub analysis: PatchAnalysis,
    pub h7: Option<H7Result>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub histogram: MagnitudeHistogram,
    pub fit: DistributionFit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlsSection {
    pub frequency_match: Option<FrequencyMatch>,
    pub shuffled: Option<ShuffleCheck>,
    pub single_token: Option<SingleTokenControl>,
    pub unit_boundary: Vec<UnitBoundary>,
    pub notes: Vec<String>,
}

/// Everything one model's run produced. Missing sections stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModuleResults {
    pub geometry: Vec<DomainGeometry>,
    pub behaviour: Vec<DomainBehaviour>,
    pub precision: Vec<DomainPrecision>,
    pub causal: Option<CausalSection>,
    pub corpus: Option<CorpusSection>,
    pub controls: Option<ControlsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisTable {
    pub model_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

impl HypothesisTable {
    pub fn get(&self, id: &str) -> Option<&Hypothesis> {
        self.hypotheses.iter().find(|h| h.id == id)
    }
}

fn primary_behaviour(r: &ModuleResults) -> Option<&DomainBehaviour> {
    r.behaviour
        .iter()
        .find(|b| b.domain == Domain::Numerical && b.task == Task::B1CrossFormat)
}

fn h1(r: &ModuleResults) -> Hypothesis {
    let h = Hypothesis::new("H1", PRIMARY_ALPHA);
    if r.geometry.is_empty() {
        return h.non_evaluable("no geometry results");
    }
    let k = r.geometry.len();
    let passed = r.geometry.iter().filter(|g| g.report.h1.pass).count();
    // two of three domains; all domains when fewer are supplied
    let required = (2 * k).div_ceil(3);
    let mut h = h;
    h.stat("domains_passed", passed as f64);
    h.stat("domains_required", required as f64);
    for g in &r.geometry {
        for m in &g.report.h1.per_metric {
            h.stat(&format!("{}_{}_layers_passed", g.domain.as_str(), m.metric.as_str()), m.passed as f64);
        }
    }
    h.status = if passed >= required { Status::Pass } else { Status::Fail };
    h.detail = format!("{passed}/{k} domains pass the layer count (need {required})");
    h
}

fn h2(r: &ModuleResults) -> Hypothesis {
    let h = Hypothesis::new("H2", PRIMARY_ALPHA);
    let Some(b) = primary_behaviour(r) else {
        return h.non_evaluable("no numerical B1 trials");
    };
    let Some(dd) = &b.report.delta_deviance else {
        return h.non_evaluable("delta deviance test not computed");
    };
    let (Some(delta), Some(p)) = (dd.delta_dev, dd.p) else {
        return h.non_evaluable("delta deviance undefined");
    };
    let mut h = h;
    h.stat("delta_deviance", delta);
    h.stat("p", p);
    let wf = b.report.psychometric.as_ref().filter(|f| f.wf_status != WfStatus::Unbounded).map(|f| f.wf);
    if let Some(wf) = wf {
        h.stat("weber_fraction", wf);
    }
    if let Some(ci) = &b.report.wf_ci {
        h.stat("wf_ci_lo", ci.lo);
        h.stat("wf_ci_hi", ci.hi);
    }
    let ratio_wins = dd.winner == Some(DeviancePredictor::LogRatio) && p < PRIMARY_ALPHA;
    let in_range = wf.is_some_and(|w| (HUMAN_WF_RANGE[0]..=HUMAN_WF_RANGE[1]).contains(&w));
    h.status = if ratio_wins && in_range { Status::Pass } else { Status::Fail };
    h.detail = format!(
        "log ratio {} (p = {p:.4}); Weber fraction {}",
        if ratio_wins { "preferred" } else { "not preferred" },
        wf.map_or("undefined".to_string(), |w| format!("{w:.3}"))
    );
    h
}

fn h3(r: &ModuleResults) -> Hypothesis {
    let h = Hypothesis::new("H3", SECONDARY_ALPHA);
    if r.precision.is_empty() {
        return h.non_evaluable("no precision curves");
    }
    let n_layers = r.precision.iter().map(|d| d.curves.len()).min().unwrap_or(0);
    let input: Vec<(String, Vec<PrecisionCurve>)> =
        r.precision.iter().map(|d| (d.domain.as_str().to_string(), d.curves.clone())).collect();
    match evaluate_h3(&input, n_layers, 2) {
        Ok(res) => {
            let mut h = h;
            for d in &res.domains {
                h.stat(&format!("{}_layers_passing", d.domain), d.layers_passing as f64);
            }
            h.stat("layers_required", crate::precision::h3_required_layers(n_layers) as f64);
            let passing = res.domains.iter().filter(|d| d.pass).count();
            h.status = if res.pass { Status::Pass } else { Status::Fail };
            h.detail = format!("{passing} domains with a negative gradient at a majority of layers (need 2)");
            h
        }
        Err(e) => h.non_evaluable(e.to_string()),
    }
}

fn h4(r: &ModuleResults) -> Hypothesis {
    let mut h = Hypothesis::new("H4", SECONDARY_ALPHA);
    let sets: Vec<&DomainBehaviour> = r.behaviour.iter().filter(|b| b.task == Task::B1CrossFormat).collect();
    let others: Vec<&&DomainBehaviour> = sets.iter().filter(|b| b.domain != Domain::Numerical).collect();
    if others.is_empty() {
        return h.non_evaluable("no non-numerical B1 trials");
    }
    for b in &others {
        let n = b.report.n_valid as u64;
        let k = (b.report.overall_accuracy * n as f64).round() as u64;
        let p = binomial_two_sided(k, n, 0.5);
        h.stat(&format!("{}_accuracy", b.domain.as_str()), b.report.overall_accuracy);
        h.stat(&format!("{}_chance_p", b.domain.as_str()), p);
        if !(p <= SECONDARY_ALPHA) {
            let why = format!(
                "{} accuracy {:.1}% is indistinguishable from chance (binomial p = {p:.3})",
                b.domain.as_str(),
                100.0 * b.report.overall_accuracy
            );
            return h.non_evaluable(why);
        }
    }
    let cis: Vec<(Domain, f64, f64)> = sets
        .iter()
        .filter_map(|b| b.report.wf_ci.as_ref().filter(|c| c.lo.is_finite() && c.hi.is_finite()).map(|c| (b.domain, c.lo, c.hi)))
        .collect();
    if cis.len() < 2 {
        return h.non_evaluable("fewer than two domains with a Weber-fraction interval");
    }
    let mut differs = false;
    for (i, a) in cis.iter().enumerate() {
        for b in &cis[i + 1..] {
            if a.2 < b.1 || b.2 < a.1 {
                differs = true;
            }
        }
    }
    h.status = if differs { Status::Pass } else { Status::Fail };
    h.detail = if differs {
        "at least two domains have non-overlapping Weber-fraction intervals".into()
    } else {
        "all domain Weber-fraction intervals overlap".into()
    };
    h
}

fn h5(r: &ModuleResults) -> Hypothesis {
    let mut h = Hypothesis::new("H5", SECONDARY_ALPHA);
    if r.geometry.is_empty() {
        return h.non_evaluable("no geometry results");
    }
    let mut passing = Vec::new();
    let mut evaluated = 0;
    for g in &r.geometry {
        let Some(&metric) = g.report.config.metrics.first() else { continue };
        let mut cells: Vec<(usize, f64)> = g
            .report
            .layers
            .iter()
            .filter(|l| l.metric == metric)
            .map(|l| (l.layer, l.verdict.weber_rho - l.verdict.linear_rho))
            .collect();
        if cells.len() < 3 {
            continue;
        }
        cells.sort_by_key(|c| c.0);
        evaluated += 1;
        let layer: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
        let adv: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let rho = spearman(&layer, &adv).unwrap_or(0.0);
        let (p, _) = spearman_trend_p(&ranks(&adv), rho);
        let name = g.domain.as_str();
        h.stat(&format!("{name}_rho"), rho);
        h.stat(&format!("{name}_p"), p);
        if rho < 0.0 && p < SECONDARY_ALPHA {
            passing.push(name);
        }
    }
    if evaluated == 0 {
        return h.non_evaluable("fewer than 3 layers per domain");
    }
    h.status = if passing.is_empty() { Status::Fail } else { Status::Pass };
    h.detail = if passing.is_empty() {
        "no domain shows a significant decline of the log advantage with depth".into()
    } else {
        format!("significant decline in: {}", passing.join(", "))
    };
    h
}

fn h6(r: &ModuleResults) -> Hypothesis {
    let h = Hypothesis::new("H6", SECONDARY_ALPHA);
    let Some(b) = primary_behaviour(r) else {
        return h.non_evaluable("no numerical B1 trials");
    };
    let Some(model) = &b.report.distance_ratio else {
        return h.non_evaluable("distance/ratio model not fitted");
    };
    let mut h = h;
    let mut sig = Vec::new();
    for name in ["distance", "ratio", "distance_x_ratio"] {
        if let Some(t) = model.terms.iter().find(|t| t.name == name) {
            h.stat(&format!("{name}_z"), t.z);
            h.stat(&format!("{name}_p"), t.p);
            sig.push((name, t.p < SECONDARY_ALPHA));
        }
    }
    let k = sig.iter().filter(|s| s.1).count();
    h.status = match k {
        3 => Status::Pass,
        0 => Status::Fail,
        _ => Status::Partial,
    };
    h.detail = sig
        .iter()
        .map(|(n, s)| format!("{n} {}", if *s { "significant" } else { "n.s." }))
        .collect::<Vec<_>>()
        .join(", ");
    h
}

fn h7(r: &ModuleResults) -> Hypothesis {
    let h = Hypothesis::new("H7", SECONDARY_ALPHA);
    let Some(res) = r.causal.as_ref().and_then(|c| c.h7.as_ref()) else {
        return h.non_evaluable("no patch results");
    };
    let mut h = h;
    h.stat("shift_fraction", res.shift_fraction);
    h.stat("baseline_accuracy", res.baseline_accuracy);
    h.status = if res.pass { Status::Pass } else { Status::Fail };
    h.detail = format!(
        "{:.1}% of prompts shifted (need 75%){}",
        100.0 * res.shift_fraction,
        if res.ceiling { "; baseline accuracy at ceiling" } else { "" }
    );
    h
}

/// Verdicts for one model; a pure function of the module results.
pub fn evaluate_hypotheses(model_id: &str, r: &ModuleResults) -> HypothesisTable {
    HypothesisTable {
        model_id: model_id.to_string(),
        hypotheses: vec![h1(r), h2(r), h3(r), h4(r), h5(r), h6(r), h7(r)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProgrammeStatus {
    Supported,
    NotSupported,
    NonEvaluable,
}

/// Across models: supported only when every designated model passes.
pub fn programme_verdicts(tables: &[HypothesisTable]) -> BTreeMap<String, ProgrammeStatus> {
    let mut out = BTreeMap::new();
    let Some(first) = tables.first() else { return out };
    for h in &first.hypotheses {
        let statuses: Vec<Status> = tables.iter().filter_map(|t| t.get(&h.id)).map(|x| x.status).collect();
        let v = if statuses.len() == tables.len() && statuses.iter().all(|s| *s == Status::Pass) {
            ProgrammeStatus::Supported
        } else if statuses.iter().all(|s| *s == Status::NonEvaluable) {
            ProgrammeStatus::NonEvaluable
        } else {
            ProgrammeStatus::NotSupported
        };
        out.insert(h.id.clone(), v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub model_id: String,
    pub h5_rule: String,
    pub h6_model: String,
    /// Which module sections carry results.
    pub sections: BTreeMap<String, bool>,
    pub hypotheses: HypothesisTable,
    pub results: ModuleResults,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn build_report(model_id: &str, results: ModuleResults, metadata: BTreeMap<String, serde_json::Value>) -> Report {
    let sections = BTreeMap::from([
        ("geometry".to_string(), !results.geometry.is_empty()),
        ("behaviour".to_string(), !results.behaviour.is_empty()),
        ("precision".to_string(), !results.precision.is_empty()),
        ("causal".to_string(), results.causal.is_some()),
        ("corpus".to_string(), results.corpus.is_some()),
        ("controls".to_string(), results.controls.is_some()),
    ]);
    Report {
        schema: REPORT_SCHEMA.into(),
        version: REPORT_VERSION,
        model_id: model_id.into(),
        h5_rule: H5_RULE.into(),
        h6_model: H6_MODEL.into(),
        sections,
        hypotheses: evaluate_hypotheses(model_id, &results),
        results,
        metadata,
    }
}

/// Parses a report, naming the offending field on failure.
pub fn parse_report(text: &str) -> Result<Report, ReportError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ReportError::Invalid {
        what: format!("report field `{}`", e.path()),
        message: e.inner().to_string(),
    })
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Write { path: path.display().to_string(), source }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, ReportError> {
    let f = std::fs::File::create(path).map_err(write_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Writes `report.json` plus one CSV per populated table. Returns the paths
/// written, in a fixed order.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<String>, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let mut written = Vec::new();
    let json = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(&json, text).map_err(write_err(&json))?;
    written.push("report.json".to_string());
    let r = &report.results;

    if !r.geometry.is_empty() {
        let p = out_dir.join("rsa_by_layer.csv");
        let mut w = csv_writer(&p)?;
        w.write_record([
            "domain", "layer", "metric", "weber_rho", "linear_rho", "stevens_rho", "weber_p", "linear_aic",
            "weber_aic", "stevens_aic", "stevens_beta", "winner", "h1_pass",
        ])?;
        for g in &r.geometry {
            for l in &g.report.layers {
                let v = &l.verdict;
                w.write_record([
                    g.domain.as_str().to_string(),
                    l.layer.to_string(),
                    l.metric.as_str().to_string(),
                    num(v.weber_rho),
                    num(v.linear_rho),
                    num(v.stevens_rho),
                    num(v.weber_p),
                    num(v.linear_aic),
                    num(v.weber_aic),
                    num(v.stevens_aic),
                    num(l.fits[2].beta.unwrap_or(f64::NAN)),
                    l.selection.winner.as_str().to_string(),
                    v.h1_pass.to_string(),
                ])?;
            }
        }
        w.flush().map_err(write_err(&p))?;
        written.push("rsa_by_layer.csv".into());
    }
    if !r.behaviour.is_empty() {
        let p = out_dir.join("accuracy_by_ratio.csv");
        let mut w = csv_writer(&p)?;
        w.write_record(["domain", "task", "ratio", "n", "correct", "accuracy", "wilson_lo", "wilson_hi"])?;
        for b in &r.behaviour {
            for c in &b.report.accuracy.by_ratio {
                w.write_record([
                    b.domain.as_str().to_string(),
                    b.task.as_str().to_string(),
                    num(c.ratio),
                    c.n.to_string(),
                    c.correct.to_string(),
                    num(c.accuracy),
                    num(c.wilson_lo),
                    num(c.wilson_hi),
                ])?;
            }
        }
        w.flush().map_err(write_err(&p))?;
        written.push("accuracy_by_ratio.csv".into());
    }
    if !r.precision.is_empty() {
        let p = out_dir.join("precision_curves.csv");
        let mut w = csv_writer(&p)?;
        w.write_record(["domain", "layer", "lower", "upper", "midpoint", "raw_precision", "normalised_precision", "excluded"])?;
        for d in &r.precision {
            for c in &d.curves {
                for pt in &c.points {
                    w.write_record([
                        d.domain.as_str().to_string(),
                        c.layer.to_string(),
                        num(pt.lower),
                        num(pt.upper),
                        num(pt.midpoint),
                        num(pt.raw_precision),
                        num(pt.normalised_precision),
                        pt.excluded.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(write_err(&p))?;
        written.push("precision_curves.csv".into());
    }
    if let Some(c) = &r.causal {
        let p = out_dir.join("dose_response.csv");
        let mut w = csv_writer(&p)?;
        w.write_record(["direction", "dose", "mean_dp", "mean_abs_dp", "n"])?;
        for (name, rows) in [("mag", &c.analysis.mag_dose_response), ("random", &c.analysis.rand_dose_response)] {
            for d in rows {
                w.write_record([name.to_string(), num(d.dose), num(d.mean_dp), num(d.mean_abs_dp), d.n.to_string()])?;
            }
        }
        w.flush().map_err(write_err(&p))?;
        written.push("dose_response.csv".into());
    }
    if let Some(c) = &r.corpus {
        let p = out_dir.join("corpus_histogram.csv");
        let mut w = csv_writer(&p)?;
        w.write_record(["n", "count"])?;
        for (n, k) in c.histogram.counts.iter().enumerate().skip(1) {
            w.write_record([n.to_string(), k.to_string()])?;
        }
        w.flush().map_err(write_err(&p))?;
        written.push("corpus_histogram.csv".into());
    }
    Ok(written)
}

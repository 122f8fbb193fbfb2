use std::collections::BTreeMap;
use std::path::Path;

use magpsych::behaviour::{analyze_behaviour, summarise_exclusions, Choice, TrialRecord, TrialSet};
use magpsych::corpus::{extract_integer_counts, fit_magnitude_distribution};
use magpsych::records::trial_from_pair;
use magpsych::report::pipeline::{run_all, RunConfig, SyntheticSettings};
use magpsych::report::{
    build_report, emit_report, evaluate_hypotheses, parse_report, programme_verdicts, CorpusSection, DomainBehaviour,
    ModuleResults, ProgrammeStatus, Status,
};
use magpsych::stimulus::{build_comparison_pairs, Domain, PairDesign, Task};
use magpsych::synthetic::{gen_observer_trials, gen_powerlaw_corpus, ObserverMode, ObserverSpec};

fn small_config(out: &Path) -> RunConfig {
    let text = r#"
model_id = "small"
out_dir = "out"
bootstrap = 1000

[synthetic]
dim = 128
layers = 6
corpus_mentions = 50000
patch_prompts = 40

[geometry]
n_perm = 200
min_pass_layers = 4
"#;
    RunConfig::from_toml(text, out).unwrap()
}

fn corpus_only() -> ModuleResults {
    let histogram = extract_integer_counts(gen_powerlaw_corpus(0.9, 20_000, 1).text.as_bytes());
    let fit = fit_magnitude_distribution(&histogram).unwrap();
    ModuleResults { corpus: Some(CorpusSection { histogram, fit }), ..ModuleResults::default() }
}

fn behaviour(domain: Domain, trials: Vec<TrialRecord>) -> DomainBehaviour {
    let set = TrialSet { exclusion: summarise_exclusions(&trials), trials };
    DomainBehaviour { domain, task: Task::B1CrossFormat, report: analyze_behaviour(&set, 1000, 3) }
}

#[test]
fn config_resolves_paths_and_rejects_unknown_keys() {
    let c = small_config(Path::new("/data/run"));
    assert_eq!(c.out_dir, Path::new("/data/run/out"));
    assert_eq!(c.synthetic.as_ref().unwrap().dim, 128);
    assert_eq!(c.synthetic.unwrap().wf, SyntheticSettings::default().wf);
    assert!(RunConfig::from_toml("model_id = \"x\"\nn_perms = 3\n", Path::new(".")).is_err());
    let files = "[[activations]]\ndomain = \"temporal\"\npath = \"t.wbract\"\n";
    let c = RunConfig::from_toml(files, Path::new("/x")).unwrap();
    assert_eq!(c.activations[0].path, Path::new("/x/t.wbract"));
    assert_eq!(c.activations[0].domain, Domain::Temporal);
}

#[test]
fn partial_results_leave_hypotheses_non_evaluable() {
    let report = build_report("m", corpus_only(), BTreeMap::new());
    assert!(report.hypotheses.hypotheses.iter().all(|h| h.status == Status::NonEvaluable));
    assert_eq!(report.hypotheses.hypotheses.len(), 7);
    assert!(report.sections["corpus"] && !report.sections["geometry"]);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, dir.path()).unwrap();
    assert_eq!(written, vec!["report.json", "corpus_histogram.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("corpus_histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
}

#[test]
fn report_round_trips() {
    let report = build_report("m", corpus_only(), BTreeMap::from([("seed".to_string(), serde_json::json!(1))]));
    let text = serde_json::to_string(&report).unwrap();
    assert_eq!(parse_report(&text).unwrap(), report);
}

#[test]
fn malformed_report_names_the_field() {
    let report = build_report("m", corpus_only(), BTreeMap::new());
    let mut v = serde_json::to_value(&report).unwrap();
    v["results"]["corpus"]["fit"]["alpha"] = serde_json::json!("steep");
    let err = parse_report(&v.to_string()).unwrap_err().to_string();
    assert!(err.contains("results.corpus.fit.alpha"), "{err}");
    let mut v = serde_json::to_value(&report).unwrap();
    v.as_object_mut().unwrap().remove("model_id");
    assert!(parse_report(&v.to_string()).unwrap_err().to_string().contains("model_id"));
}

#[test]
fn chance_level_domain_makes_h4_non_evaluable() {
    let num = build_comparison_pairs(Domain::Numerical, Task::B1CrossFormat, 42, &PairDesign::default()).unwrap();
    let tmp = build_comparison_pairs(Domain::Temporal, Task::B1CrossFormat, 42, &PairDesign::default()).unwrap();
    assert_eq!(tmp.len(), 900);
    // 431 of 900 correct is 47.9%
    let chance: Vec<TrialRecord> = tmp
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let right = Choice::from(p.large_position);
            let wrong = Choice::from(p.large_position.flipped());
            trial_from_pair(p, 0.5, if i < 431 { right } else { wrong })
        })
        .collect();
    let observer = gen_observer_trials(&ObserverSpec::new(0.2, 0.02, ObserverMode::Ratio, 1), &num);
    let results = ModuleResults {
        behaviour: vec![behaviour(Domain::Numerical, observer), behaviour(Domain::Temporal, chance)],
        ..ModuleResults::default()
    };
    let table = evaluate_hypotheses("m", &results);
    let h4 = table.get("H4").unwrap();
    assert_eq!(h4.status, Status::NonEvaluable, "{}", h4.detail);
    assert_eq!(table.get("H2").unwrap().status, Status::Pass);
}

#[test]
fn programme_needs_every_model() {
    let a = evaluate_hypotheses("a", &ModuleResults::default());
    let v = programme_verdicts(&[a.clone(), a]);
    assert!(v.values().all(|s| *s == ProgrammeStatus::NonEvaluable));
}

#[test]
fn run_all_is_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let (r1, w1) = run_all(&small_config(d1.path())).unwrap();
    let (r2, w2) = run_all(&small_config(d2.path())).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(r1, r2);
    for f in &w1 {
        let a = std::fs::read(d1.path().join("out").join(f)).unwrap();
        let b = std::fs::read(d2.path().join("out").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    assert!(r1.sections.values().all(|s| *s));
    assert_eq!(r1.hypotheses.get("H1").unwrap().status, Status::Pass);
    assert_eq!(r1.hypotheses.get("H7").unwrap().status, Status::Pass);
}

use std::path::Path;
use std::process::{Command, Output};

fn magpsych(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magpsych")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = magpsych(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_stimuli_reports_counts_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["gen-stimuli", "--domain", "temporal", "--task", "B1", "--seed", "42", "--labelled", "true", "--out", p(dir.path())]);
    assert!(out.contains("pairs 900 sha256 0f6872ebe89e70f49df4756b98d42c0bb90ecd95c6251b7b365243cbdca125a9"), "{out}");
    let prompts = std::fs::read_to_string(dir.path().join("temporal_B1_crossformat_prompts.jsonl")).unwrap();
    assert_eq!(prompts.lines().count(), 901);
    assert!(dir.path().join("temporal_unit_boundary.jsonl").exists());
}

#[test]
fn validate_exits_2_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.wbract");
    std::fs::write(&bad, b"WBRACT1\0\x01\0\0\0").unwrap();
    let out = magpsych(&["validate-activations", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("E_SHAPE"));
}

#[test]
fn synthetic_loop_through_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let acts = dir.path().join("log.wbract");
    ok(&["synth", "embeddings", "--geometry", "log", "--dim", "64", "--layers", "4", "--out", p(&acts)]);
    let v: serde_json::Value = serde_json::from_str(&ok(&["validate-activations", p(&acts), "--compare", p(&acts)])).unwrap();
    assert_eq!(v["n_layers"], 4);
    assert_eq!(v["agreement"]["worst_r"], 1.0);

    let geo = dir.path().join("geo.json");
    let out = ok(&["analyze-geometry", "--activations", p(&acts), "--metric", "cosine", "--layers", "0..3", "--min-pass", "3", "--perms", "300", "--out", p(&geo)]);
    assert!(out.contains("H1 PASS"), "{out}");

    let prec = dir.path().join("precision.json");
    ok(&["analyze-precision", "--activations", p(&acts), "--out", p(&prec)]);
    let csv = std::fs::read_to_string(dir.path().join("precision.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 25);

    let trials = dir.path().join("trials.jsonl");
    ok(&["synth", "observer", "--wf", "0.2", "--seed", "42", "--out", p(&trials)]);
    let beh = dir.path().join("beh.json");
    let out = ok(&["analyze-behaviour", "--trials", p(&trials), "--bootstrap", "1000", "--out", p(&beh)]);
    assert!(out.contains("valid trials 1500"), "{out}");
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&beh).unwrap()).unwrap();
    let wf = b["psychometric"]["wf"].as_f64().unwrap();
    assert!((0.17..=0.23).contains(&wf), "{wf}");
}

#[test]
fn patch_plan_and_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let acts = dir.path().join("planted.wbract");
    ok(&["synth", "embeddings", "--geometry", "planted", "--dim", "64", "--layers", "2", "--out", p(&acts)]);
    let plan = dir.path().join("plan");
    let out = ok(&["plan-patch", "--activations", p(&acts), "--layer", "1", "--prompts", "10", "--out", p(&plan)]);
    assert!(out.contains("planned runs 440"), "{out}");
    let plan_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(plan.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan_json["directions"].as_array().unwrap().len(), 11);

    let mut rows = String::new();
    for pid in 0..10 {
        for (id, scale) in [("mag", 0.2), ("rand_1", 0.02), ("rand_2", -0.03)] {
            for dose in [0.25, 0.5, 0.75, 1.0] {
                let dp = scale * dose;
                rows.push_str(&format!(
                    "{{\"prompt_id\":{pid},\"direction_id\":\"{id}\",\"dose\":{dose},\"p_chosen_base\":0.6,\"p_chosen_patched\":{},\"delta_p\":{dp}}}\n",
                    0.6 + dp
                ));
            }
        }
    }
    let results = dir.path().join("results.jsonl");
    std::fs::write(&results, rows).unwrap();
    let report = dir.path().join("patch.json");
    let out = ok(&["analyze-patch", "--results", p(&results), "--out", p(&report)]);
    assert!(out.contains("specificity 8.000"), "{out}");
}

#[test]
fn corpus_and_controls() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("corpus.txt");
    ok(&["synth", "corpus", "--alpha", "0.773", "--mentions", "50000", "--out", p(&text)]);
    let out = ok(&["corpus-fit", "--in", p(dir.path()), "--out", p(&dir.path().join("fit.json"))]);
    assert!(out.contains("winner PowerLaw"), "{out}");

    let acts = dir.path().join("log.wbract");
    ok(&["synth", "embeddings", "--dim", "32", "--layers", "2", "--out", p(&acts)]);
    let aux = dir.path().join("aux.json");
    let numbers: Vec<(String, f64)> = (0..10).map(|i| (format!("{i}"), -(i as f64))).collect();
    let nouns: Vec<(String, f64)> = (0..10).map(|i| (format!("w{i}"), -(i as f64) - 0.1)).collect();
    let doc = serde_json::json!({
        "number_logprobs": numbers,
        "noun_logprobs": nouns,
        "single_token_magnitudes": [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 15.0, 20.0],
    });
    std::fs::write(&aux, doc.to_string()).unwrap();
    let report = dir.path().join("controls.json");
    ok(&["run-controls", "--activations", p(&acts), "--aux", p(&aux), "--out", p(&report)]);
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(c["frequency_match"]["gate_pass"], true);
    assert!(c["single_token"]["delta_r2"].is_number());
}

#[test]
fn run_all_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "model_id = \"cli\"\nout_dir = \"out\"\nbootstrap = 1000\n[synthetic]\ndim = 64\nlayers = 4\ncorpus_mentions = 20000\npatch_prompts = 20\n[geometry]\nn_perm = 200\nmin_pass_layers = 3\n",
    )
    .unwrap();
    let out = ok(&["run-all", "--config", p(&cfg)]);
    assert!(out.contains("H1 "), "{out}");
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn bad_arguments_fail() {
    assert!(!magpsych(&["synth", "embeddings", "--geometry", "cubic", "--out", "x"]).status.success());
    assert!(!magpsych(&["analyze-geometry", "--activations", "/nonexistent", "--out", "x"]).status.success());
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use magpsych::activation::{carrier_icc, compute_centroids, read_activation_file, tensor_agreement, write_activation_file};
use magpsych::behaviour::{analyze_behaviour, load_trials};
use magpsych::causal::{analyze_patch_results, build_patch_plan, evaluate_h7, fit_magnitude_direction, pca_validate};
use magpsych::corpus::{count_path, fit_magnitude_distribution};
use magpsych::geometry::{analyze_geometry, GeometryConfig, Metric};
use magpsych::precision::analyze_precision_layers;
use magpsych::records::{read_jsonl, write_jsonl, PatchResult};
use magpsych::report::pipeline::{run_all, run_controls, ControlInputs, RunConfig};
use magpsych::stimulus::{
    build_comparison_pairs, build_probe_set, build_unit_boundary_values, pairs_file, render_prompts, sha256_hex, Domain,
    PairDesign, StimulusHeader, Task,
};
use magpsych::synthetic::{
    gen_embeddings, gen_observer_trials, gen_powerlaw_corpus, EmbeddingSpec, Geometry, ObserverMode, ObserverSpec,
};

#[derive(Parser)]
#[command(name = "magpsych", version, about = "Magnitude psychophysics for hidden-state activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write probe stimuli, comparison pairs and prompts for one domain.
    GenStimuli(GenStimuli),
    /// Check an activation file and report carrier ICC per layer.
    ValidateActivations(ValidateActivations),
    AnalyzeGeometry(AnalyzeGeometry),
    AnalyzeBehaviour(AnalyzeBehaviour),
    AnalyzePrecision(AnalyzePrecision),
    /// Fit the magnitude direction and write a patch plan directory.
    PlanPatch(PlanPatch),
    AnalyzePatch(AnalyzePatch),
    /// Count integer mentions in text (plain or gzip) and fit their distribution.
    CorpusFit(CorpusFit),
    RunControls(RunControls),
    /// Ground-truth generators.
    #[command(subcommand)]
    Synth(Synth),
    /// Full pipeline from a TOML config.
    RunAll(RunAll),
}

#[derive(Args)]
struct GenStimuli {
    #[arg(long)]
    domain: Domain,
    #[arg(long, default_value = "B1_crossformat")]
    task: Task,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Prompts carry "A)"/"B)" option labels.
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    labelled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateActivations {
    activations: PathBuf,
    /// Second file of the same stimuli, e.g. another precision.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeGeometry {
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, alias = "n-perm", default_value_t = 10_000)]
    perms: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Inclusive layer range "a..b".
    #[arg(long, value_parser = parse_range)]
    layers: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_range)]
    primary_layers: Option<[usize; 2]>,
    #[arg(long, default_value_t = 9)]
    min_pass: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Both)]
    metric: MetricArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Cosine,
    Euclidean,
    Both,
}

impl MetricArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            MetricArg::Cosine => vec![Metric::Cosine],
            MetricArg::Euclidean => vec![Metric::Euclidean],
            MetricArg::Both => vec![Metric::Cosine, Metric::Euclidean],
        }
    }
}

#[derive(Args)]
struct AnalyzeBehaviour {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzePrecision {
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanPatch {
    #[arg(long)]
    activations: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, default_value_t = 200)]
    prompts: u32,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzePatch {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    dose: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorpusFit {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunControls {
    #[arg(long)]
    activations: PathBuf,
    /// JSON with log-probabilities, single-token magnitudes and an optional
    /// shuffled activation file.
    #[arg(long)]
    aux: PathBuf,
    /// Activations with unit labels for the unit-boundary check.
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Synth {
    Embeddings(SynthEmbeddings),
    Observer(SynthObserver),
    Corpus(SynthCorpus),
}

#[derive(Args)]
struct SynthEmbeddings {
    /// log, linear, stevens:BETA or planted.
    #[arg(long, default_value = "log", value_parser = parse_geometry)]
    geometry: Geometry,
    #[arg(long, default_value = "numerical")]
    domain: Domain,
    #[arg(long, default_value_t = 4096)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    carriers: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthObserver {
    #[arg(long, default_value_t = 0.20)]
    wf: f64,
    #[arg(long, default_value_t = 0.02)]
    lapse: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Ratio)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.0)]
    position_bias: f64,
    #[arg(long, default_value_t = 0.0)]
    invalid_rate: f64,
    #[arg(long, default_value = "numerical")]
    domain: Domain,
    #[arg(long, default_value = "B1_crossformat")]
    task: Task,
    /// Seed of the comparison pairs.
    #[arg(long, default_value_t = 42)]
    pair_seed: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ratio,
    Absdiff,
}

#[derive(Args)]
struct SynthCorpus {
    #[arg(long, default_value_t = 0.773)]
    alpha: f64,
    #[arg(long, default_value_t = 1_000_000)]
    mentions: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAll {
    #[arg(long)]
    config: PathBuf,
}

fn parse_range(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s
        .split_once("..")
        .or_else(|| s.split_once([':', '-']))
        .ok_or_else(|| format!("expected a..b, got {s}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("empty range {s}"));
    }
    Ok([a, b])
}

fn parse_geometry(s: &str) -> Result<Geometry, String> {
    match s {
        "log" => Ok(Geometry::Log),
        "linear" => Ok(Geometry::Linear),
        "planted" | "planted_direction" => Ok(Geometry::PlantedDirection),
        _ => match s.strip_prefix("stevens:") {
            Some(b) => b.parse().map(|beta| Geometry::Stevens { beta }).map_err(|e| format!("{e}")),
            None => Err(format!("unknown geometry {s}")),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn gen_stimuli(a: GenStimuli) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let d = a.domain;
    let probes = build_probe_set(d);
    let mut w = create(&a.out.join(format!("{}_probes.jsonl", d.as_str())))?;
    magpsych::stimulus::write_jsonl(&mut w, &StimulusHeader::new("probes", d), &probes)?;
    w.flush()?;
    let boundary = build_unit_boundary_values(d);
    if !boundary.is_empty() {
        let mut w = create(&a.out.join(format!("{}_unit_boundary.jsonl", d.as_str())))?;
        magpsych::stimulus::write_jsonl(&mut w, &StimulusHeader::new("unit_boundary", d), &boundary)?;
        w.flush()?;
    }
    let design = PairDesign::default();
    let (pairs, bytes) = pairs_file(d, a.task, a.seed, &design)?;
    let pairs_name = format!("{}_{}_pairs.jsonl", d.as_str(), a.task.as_str());
    std::fs::write(a.out.join(&pairs_name), &bytes)?;
    let batch = render_prompts(&pairs, a.labelled)?;
    let mut header = StimulusHeader::new("prompts", d);
    header.task = Some(a.task);
    header.seed = Some(a.seed);
    header.labelled = Some(a.labelled);
    let mut w = create(&a.out.join(format!("{}_{}_prompts.jsonl", d.as_str(), a.task.as_str())))?;
    magpsych::stimulus::write_jsonl(&mut w, &header, &batch.prompts)?;
    w.flush()?;
    println!("probes {}", probes.len());
    println!("pairs {} sha256 {}", pairs.len(), sha256_hex(&bytes));
    Ok(())
}

fn validate(a: ValidateActivations) -> Result<ExitCode> {
    let set = match read_activation_file(&a.activations) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            return Ok(ExitCode::from(2));
        }
    };
    let icc: Vec<_> = (0..set.n_layers).filter_map(|l| carrier_icc(&set, l).ok()).collect();
    let agreement = match &a.compare {
        Some(p) => {
            let other = read_activation_file(p).with_context(|| format!("reading {}", p.display()))?;
            Some(tensor_agreement(&set, &other)?)
        }
        None => None,
    };
    let summary = serde_json::json!({
        "valid": true,
        "n_layers": set.n_layers,
        "n_stimuli": set.n_stimuli,
        "dim": set.dim,
        "carrier_icc": icc,
        "agreement": agreement,
    });
    match &a.out {
        Some(p) => write_json(p, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn geometry(a: AnalyzeGeometry) -> Result<()> {
    let set = read_activation_file(&a.activations)?;
    let cents = compute_centroids(&set)?;
    let cfg = GeometryConfig {
        metrics: a.metric.metrics(),
        layers: a.layers,
        primary_layers: a.primary_layers,
        min_pass_layers: a.min_pass,
        n_perm: a.perms,
        seed: a.seed,
        ..GeometryConfig::default()
    };
    let report = analyze_geometry(&cents, &cfg)?;
    write_json(&a.out, &report)?;
    for m in &report.h1.per_metric {
        println!("{}: {}/{} layers pass", m.metric.as_str(), m.passed, m.total);
    }
    println!("H1 {}", if report.h1.pass { "PASS" } else { "FAIL" });
    Ok(())
}

fn behaviour(a: AnalyzeBehaviour) -> Result<()> {
    let set = load_trials(&a.trials)?;
    let report = analyze_behaviour(&set, a.bootstrap, a.seed);
    write_json(&a.out, &report)?;
    println!("valid trials {} accuracy {:.3}", report.n_valid, report.overall_accuracy);
    if let Some(p) = &report.psychometric {
        println!("weber fraction {:.4} ({:?})", p.wf, p.wf_status);
    }
    if let Some(d) = report.delta_deviance.as_ref().and_then(|d| d.delta_dev) {
        println!("delta deviance {d:.3}");
    }
    Ok(())
}

fn precision(a: AnalyzePrecision) -> Result<()> {
    let set = read_activation_file(&a.activations)?;
    let curves = analyze_precision_layers(&compute_centroids(&set)?)?;
    write_json(&a.out, &curves)?;
    let csv_path = a.out.with_extension("csv");
    let mut w = create(&csv_path)?;
    writeln!(w, "layer,lower,upper,midpoint,raw_precision,normalised_precision,excluded")?;
    for c in &curves {
        for p in &c.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.layer, p.lower, p.upper, p.midpoint, p.raw_precision, p.normalised_precision, p.excluded
            )?;
        }
    }
    w.flush()?;
    let negative = curves.iter().filter(|c| c.negative_significant(0.05)).count();
    println!("{negative}/{} layers with a significant negative gradient", curves.len());
    Ok(())
}

fn plan_patch(a: PlanPatch) -> Result<()> {
    let set = read_activation_file(&a.activations)?;
    let dir = fit_magnitude_direction(&set, a.layer, a.lambda)?;
    let pca = pca_validate(&compute_centroids(&set)?, a.layer, &dir)?;
    if !pca.pass {
        eprintln!("warning: PC1 correlates with ln magnitude at |r| = {:.3} (< 0.80)", pca.pc1_logmag_r);
    }
    let ids: Vec<u32> = (0..a.prompts).collect();
    let plan = build_patch_plan(&dir, &ids, &magpsych::causal::DEFAULT_DOSES, a.seed);
    plan.write(&a.out)?;
    write_json(&a.out.join("direction.json"), &serde_json::json!({
        "layer": dir.layer,
        "ridge_lambda": dir.ridge_lambda,
        "probe_r2": dir.probe_r2,
        "projection_span": dir.projection_span,
        "degenerate": dir.degenerate,
        "pca": pca,
    }))?;
    println!("planned runs {}", plan.plan.n_runs);
    Ok(())
}

fn analyze_patch(a: AnalyzePatch) -> Result<()> {
    let f = File::open(&a.results).with_context(|| format!("opening {}", a.results.display()))?;
    let results: Vec<PatchResult> = read_jsonl(BufReader::new(f))?;
    let analysis = analyze_patch_results(&results, a.dose)?;
    let h7 = evaluate_h7(&results).ok();
    write_json(&a.out, &serde_json::json!({ "analysis": analysis, "h7": h7 }))?;
    match analysis.specificity {
        Some(s) => println!("specificity {s:.3}"),
        None => println!("specificity undefined (random directions had no effect)"),
    }
    Ok(())
}

fn corpus_fit(a: CorpusFit) -> Result<()> {
    let hist = count_path(&a.input)?;
    let fit = fit_magnitude_distribution(&hist)?;
    write_json(&a.out, &serde_json::json!({ "histogram": hist, "fit": fit }))?;
    println!("alpha {:.4} winner {:?} delta_aic {:.2}", fit.alpha, fit.winner, fit.delta_aic);
    Ok(())
}

fn controls(a: RunControls) -> Result<()> {
    let set = read_activation_file(&a.activations)?;
    let text = std::fs::read_to_string(&a.aux).with_context(|| format!("reading {}", a.aux.display()))?;
    let aux: ControlInputs = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.aux.display()))?;
    let shuffled = match &aux.shuffled_activations {
        Some(p) => {
            let p = if p.is_relative() { a.aux.parent().unwrap_or(Path::new(".")).join(p) } else { p.clone() };
            Some(read_activation_file(&p)?)
        }
        None => None,
    };
    let units = match &a.units {
        Some(p) => Some(read_activation_file(p)?),
        None => None,
    };
    let section = run_controls(&aux, Some(&set), shuffled.as_ref(), units.as_ref());
    write_json(&a.out, &section)?;
    for n in &section.notes {
        eprintln!("note: {n}");
    }
    Ok(())
}

fn synth(s: Synth) -> Result<()> {
    match s {
        Synth::Embeddings(a) => {
            let mags: Vec<f64> = magpsych::stimulus::probe_values(a.domain).iter().map(|v| v.canonical_magnitude).collect();
            let mut spec = EmbeddingSpec::new(mags, a.dim, a.geometry, a.sigma, a.seed);
            spec.layers = a.layers;
            spec.carriers = a.carriers;
            let set = gen_embeddings(&spec);
            write_activation_file(&a.out, &set)?;
            println!("{} layers x {} stimuli x {} dims", set.n_layers, set.n_stimuli, set.dim);
        }
        Synth::Observer(a) => {
            if a.lapse < 0.0 || a.lapse >= 0.5 {
                bail!("lapse must lie in [0, 0.5)");
            }
            let pairs = build_comparison_pairs(a.domain, a.task, a.pair_seed, &PairDesign::default())?;
            let mode = match a.mode {
                ModeArg::Ratio => ObserverMode::Ratio,
                ModeArg::Absdiff => ObserverMode::Absdiff,
            };
            let mut spec = ObserverSpec::new(a.wf, a.lapse, mode, a.seed);
            spec.position_bias = a.position_bias;
            spec.invalid_rate = a.invalid_rate;
            let trials = gen_observer_trials(&spec, &pairs);
            let mut w = create(&a.out)?;
            write_jsonl(&mut w, &trials)?;
            w.flush()?;
            println!("{} trials", trials.len());
        }
        Synth::Corpus(a) => {
            let c = gen_powerlaw_corpus(a.alpha, a.mentions, a.seed);
            std::fs::write(&a.out, c.text.as_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
            println!("{} mentions", c.counts.iter().sum::<u64>());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenStimuli(a) => gen_stimuli(a)?,
        Command::ValidateActivations(a) => return validate(a),
        Command::AnalyzeGeometry(a) => geometry(a)?,
        Command::AnalyzeBehaviour(a) => behaviour(a)?,
        Command::AnalyzePrecision(a) => precision(a)?,
        Command::PlanPatch(a) => plan_patch(a)?,
        Command::AnalyzePatch(a) => analyze_patch(a)?,
        Command::CorpusFit(a) => corpus_fit(a)?,
        Command::RunControls(a) => controls(a)?,
        Command::Synth(s) => synth(s)?,
        Command::RunAll(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let (report, written) = run_all(&cfg)?;
            for h in &report.hypotheses.hypotheses {
                println!("{} {:?}: {}", h.id, h.status, h.detail);
            }
            println!("wrote {} files to {}", written.len(), cfg.out_dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

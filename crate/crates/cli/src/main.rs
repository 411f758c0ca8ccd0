//! `gesturemeta` command line: pipeline stages, evaluation and search.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gesturemeta::eval::{
    balanced_threshold, cross_validate, feature_search, make_folds, Dataset, ReportFile, SearchConfig, DEFAULT_FOLDS,
};
use gesturemeta::ingest::load_manifest;
use gesturemeta::pipeline::{
    analyse_tracks, features_from_checkpoints, features_from_records, prepare_records, read_gestures, read_prepared,
    sample_spans, write_gestures, write_prepared,
};
use gesturemeta::pose::parse_localisation_set;
use gesturemeta::synth::{generate_dataset, SynthConfig};
use gesturemeta::{
    ClassifierConfig, ClassifierKind, Error, FeatureMask, FeatureMatrix, LabelSchema, MovementThreshold,
    PipelineConfig, Result,
};

#[derive(Parser, Debug)]
#[command(name = "gesturemeta", version, about = "Gesture meta features from pose keypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted gestures.
    Synth(Common),
    /// Load, split, filter, recover and smooth every sample of a manifest.
    Prepare(Common),
    /// Detect gestures on prepared samples.
    Detect(Common),
    /// Compute the feature matrix, from a manifest or from checkpoints.
    Features(Common),
    /// Cross-validate a classifier on one label.
    Evaluate(Common),
    /// Exhaustive feature-subset search on one label.
    Search(Common),
    /// Summarise artifacts after checking they share a config hash.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint from the previous stage (prepared samples).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Gesture checkpoint for `features`.
    #[arg(long)]
    gestures: Option<PathBuf>,
    /// Precomputed feature matrix for `evaluate` and `search`.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma separated subset of hands,head,legs,feet.
    #[arg(long)]
    localisations: Option<String>,
    /// Binarisation threshold for the label.
    #[arg(long, alias = "threshold-override")]
    threshold: Option<f64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long, value_parser = parse_classifier)]
    classifier: Option<ClassifierKind>,
    /// Run the exhaustive search (for `evaluate`).
    #[arg(long)]
    search: bool,
    /// Feature mask as a bit string, first feature first (for `evaluate`).
    #[arg(long)]
    mask: Option<String>,
    /// Gesture detector window length in frames.
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    keep_frequencies: Option<usize>,
    /// Window movement threshold, or `auto`.
    #[arg(long, value_parser = parse_threshold)]
    movement_threshold: Option<MovementThreshold>,
    #[arg(long)]
    end_patience: Option<usize>,
    #[arg(long)]
    min_gesture_windows: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Feature CSVs, checkpoints and report JSONs to combine.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_classifier(s: &str) -> std::result::Result<ClassifierKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_threshold(s: &str) -> std::result::Result<MovementThreshold, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    pipeline: PipelineConfig,
    classifier: ClassifierConfig,
    synth: SynthConfig,
    label: String,
    threshold: Option<f64>,
    seed: u64,
    folds: usize,
    search: SearchSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SearchSettings {
    allow_large: bool,
    reevaluate: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            allow_large: false,
            reevaluate: true,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            classifier: ClassifierConfig::default(),
            synth: SynthConfig::default(),
            label: "phq8".into(),
            threshold: None,
            seed: 0,
            folds: DEFAULT_FOLDS,
            search: SearchSettings::default(),
        }
    }
}

impl RunConfig {
    fn resolve(args: &Common) -> Result<RunConfig> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        cfg.classifier.seed = cfg.seed;
        cfg.synth.seed = cfg.seed;
        if let Some(list) = &args.localisations {
            cfg.pipeline.localisations = parse_localisation_set(list)?;
        }
        if let Some(t) = args.threshold {
            cfg.threshold = Some(t);
        }
        if let Some(label) = &args.label {
            cfg.label = label.clone();
        }
        if let Some(kind) = args.classifier {
            cfg.classifier.kind = kind;
        }
        let detector = &mut cfg.pipeline.detector;
        if let Some(l) = args.window_length {
            detector.window_length = l;
        }
        if let Some(m) = args.movement_threshold {
            detector.movement_threshold = m;
        }
        if let Some(n) = args.end_patience {
            detector.end_patience = n;
        }
        if let Some(n) = args.min_gesture_windows {
            detector.min_gesture_windows = n;
        }
        if let Some(k) = args.keep_frequencies {
            cfg.pipeline.smoothing.keep_frequencies = k;
        }
        cfg.pipeline.validate()?;
        cfg.classifier.validate()?;
        Ok(cfg)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Validation(format!("missing required flag --{flag}")))
}

fn check_hash(path: &Path, found: Option<String>, expected: &str) -> Result<()> {
    match found {
        Some(h) if h != expected => Err(Error::Validation(format!(
            "{} was built with config hash {h}, but this run has {expected}",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn synth(args: &Common, cfg: &RunConfig) -> Result<String> {
    let out = required(&args.out, "out")?;
    let output = generate_dataset(&cfg.synth, out)?;
    Ok(format!(
        "synth: {} samples, {} planted gestures -> {} (config {}, seed {})",
        output.samples,
        output.gestures,
        output.manifest.display(),
        output.config_hash,
        cfg.seed
    ))
}

fn prepare(args: &Common, cfg: &RunConfig) -> Result<String> {
    let records = load_manifest(required(&args.manifest, "manifest")?)?;
    let out = required(&args.out, "out")?;
    let hash = cfg.pipeline.hash();
    let prepared = prepare_records(&records, &cfg.pipeline)?;
    write_prepared(out, &prepared, &hash)?;
    Ok(format!(
        "prepare: {} of {} samples kept -> {} (config {hash})",
        prepared.len(),
        records.len(),
        out.display()
    ))
}

fn detect(args: &Common, cfg: &RunConfig) -> Result<String> {
    let input = required(&args.input, "input")?;
    let out = required(&args.out, "out")?;
    let hash = cfg.pipeline.hash();
    let (prepared, found) = read_prepared(input)?;
    check_hash(input, found, &hash)?;
    use rayon::prelude::*;
    let records: Vec<_> = prepared
        .par_iter()
        .flat_map_iter(|s| {
            let spans = sample_spans(&analyse_tracks(&s.tracks, &cfg.pipeline));
            let id = s.record.sample_id.clone();
            let hash = hash.clone();
            spans
                .into_iter()
                .map(move |span| gesturemeta::gestures::GestureRecord::new(&id, &span, Some(&hash)))
        })
        .collect();
    write_gestures(out, &records)?;
    Ok(format!(
        "detect: {} gestures in {} samples -> {} (config {hash})",
        records.len(),
        prepared.len(),
        out.display()
    ))
}

fn features(args: &Common, cfg: &RunConfig) -> Result<String> {
    let out = required(&args.out, "out")?;
    let hash = cfg.pipeline.hash();
    let matrix = match (&args.manifest, &args.input) {
        (Some(manifest), None) => features_from_records(&load_manifest(manifest)?, &cfg.pipeline)?,
        (None, Some(input)) => {
            let gestures_path = required(&args.gestures, "gestures")?;
            let (prepared, found) = read_prepared(input)?;
            check_hash(input, found, &hash)?;
            let (gestures, found) = read_gestures(gestures_path)?;
            check_hash(gestures_path, found, &hash)?;
            features_from_checkpoints(&prepared, &gestures, &cfg.pipeline)?
        }
        _ => {
            return Err(Error::Validation(
                "features needs either --manifest or --input with --gestures".into(),
            ))
        }
    };
    matrix.write_csv(out, &hash, cfg.seed)?;
    Ok(format!(
        "features: {} samples x {} features -> {} (config {hash})",
        matrix.n_samples(),
        matrix.n_features(),
        out.display()
    ))
}

/// Feature matrix for evaluation, read from `--features` or computed.
fn load_features(args: &Common, cfg: &RunConfig) -> Result<(FeatureMatrix, String)> {
    match &args.features {
        Some(path) => {
            let (matrix, found) = FeatureMatrix::read_csv(path)?;
            let hash = found.unwrap_or_else(|| cfg.pipeline.hash());
            Ok((matrix, hash))
        }
        None => {
            let records = load_manifest(required(&args.manifest, "manifest")?)?;
            Ok((features_from_records(&records, &cfg.pipeline)?, cfg.pipeline.hash()))
        }
    }
}

fn label_schema(cfg: &RunConfig, records: &[gesturemeta::SampleRecord]) -> Result<(LabelSchema, f64)> {
    if let Some(schema) = LabelSchema::builtin(&cfg.label) {
        let t = cfg.threshold.unwrap_or(schema.binarization_threshold);
        return Ok((schema, t));
    }
    let scores: Vec<f64> = records.iter().filter_map(|r| r.labels.get(&cfg.label).copied()).collect();
    if scores.is_empty() {
        return Err(Error::Validation(format!("no sample has a `{}` label", cfg.label)));
    }
    let (min, max) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let t = match cfg.threshold {
        Some(t) => t,
        None => {
            let t = balanced_threshold(&scores).expect("non-empty scores");
            log::info!("label `{}`: balanced threshold {t}", cfg.label);
            t
        }
    };
    let max = if t < max { max } else { t + 1.0 };
    Ok((LabelSchema::new(&cfg.label, min.min(t), max, t)?, t))
}

fn evaluate(args: &Common, cfg: &RunConfig, search: bool) -> Result<String> {
    let out = required(&args.out, "out")?;
    let records = load_manifest(required(&args.manifest, "manifest")?)?;
    let (matrix, hash) = load_features(args, cfg)?;
    let (schema, threshold) = label_schema(cfg, &records)?;
    let data = Dataset::from_features(&matrix, &records, &schema, threshold)?;
    let classes: Vec<bool> = data.y.iter().map(|&v| v == 1.0).collect();
    let plan = make_folds(&data.participant_ids, &classes, cfg.folds, cfg.seed)?;
    let file = if search {
        let search_cfg = SearchConfig {
            classifier: cfg.classifier.clone(),
            allow_large: cfg.search.allow_large,
            reevaluate: cfg.search.reevaluate,
        };
        let outcome = feature_search(&data, &plan, &search_cfg)?;
        ReportFile::new(&schema, threshold, &cfg.classifier, &outcome.best, &data, &hash).with_search(&outcome)
    } else {
        let mask = match &args.mask {
            Some(bits) => FeatureMask::parse_bit_string(bits)?,
            None => FeatureMask::all(data.n_features()),
        };
        let report = cross_validate(&cfg.classifier, &data, &plan, &mask)?;
        ReportFile::new(&schema, threshold, &cfg.classifier, &report, &data, &hash)
    };
    let json = serde_json::to_string_pretty(&file).expect("report serialises");
    fs::write(out, json + "\n").map_err(|e| io_error(out, e))?;
    Ok(format!(
        "{}: {} {} f1 {:.4} +/- {:.4} mask {} [{}] -> {}",
        if search { "search" } else { "evaluate" },
        file.label,
        file.classifier,
        file.f1_mean,
        file.f1_std,
        file.mask_bits,
        file.notation_tokens.join(" "),
        out.display()
    ))
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    config_hash: String,
    artifacts: Vec<PathBuf>,
    reports: Vec<ReportFile>,
}

/// Config hash recorded in an artifact, if any.
fn artifact_hash(path: &Path) -> Result<(Option<String>, Option<ReportFile>)> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => Ok((FeatureMatrix::read_csv(path)?.1, None)),
        "json" => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let report: ReportFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Ok((Some(report.config_hash.clone()), Some(report)))
        }
        "jsonl" => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            let mut hash: Option<String> = None;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })?;
                let h = value.get("config_hash").and_then(|h| h.as_str()).map(str::to_string);
                match (&hash, h) {
                    (Some(a), Some(b)) if *a != b => {
                        return Err(Error::Validation(format!("{}: mixed config hashes {a} and {b}", path.display())))
                    }
                    (None, Some(b)) => hash = Some(b),
                    _ => {}
                }
            }
            Ok((hash, None))
        }
        _ => Err(Error::Validation(format!(
            "{}: unknown artifact type (expected .csv, .json or .jsonl)",
            path.display()
        ))),
    }
}

fn report(args: &ReportArgs) -> Result<String> {
    let mut hash: Option<(String, PathBuf)> = None;
    let mut reports = Vec::new();
    for path in &args.inputs {
        let (found, parsed) = artifact_hash(path)?;
        let found = found.ok_or_else(|| Error::Validation(format!("{} carries no config hash", path.display())))?;
        match &hash {
            Some((h, first)) if *h != found => {
                return Err(Error::Validation(format!(
                    "refusing to combine {} (config {h}) with {} (config {found})",
                    first.display(),
                    path.display()
                )))
            }
            Some(_) => {}
            None => hash = Some((found, path.clone())),
        }
        reports.extend(parsed);
    }
    let (config_hash, _) = hash.expect("at least one input");
    for r in &reports {
        println!(
            "{:<18} {:<4} f1 {:.4} +/- {:.4}  {}",
            r.label,
            r.classifier.as_str(),
            r.f1_mean,
            r.f1_std,
            r.notation_tokens.join(" ")
        );
    }
    let summary = ReportSummary {
        config_hash: config_hash.clone(),
        artifacts: args.inputs.clone(),
        reports,
    };
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
        fs::write(out, json + "\n").map_err(|e| io_error(out, e))?;
    }
    Ok(format!(
        "report: {} artifacts share config {config_hash}, {} evaluation report(s)",
        args.inputs.len(),
        summary.reports.len()
    ))
}

fn run(cli: Cli) -> Result<String> {
    let args = match &cli.command {
        Command::Report(r) => return report(r),
        Command::Synth(a)
        | Command::Prepare(a)
        | Command::Detect(a)
        | Command::Features(a)
        | Command::Evaluate(a)
        | Command::Search(a) => a,
    };
    let cfg = RunConfig::resolve(args)?;
    let work = || match &cli.command {
        Command::Synth(_) => synth(args, &cfg),
        Command::Prepare(_) => prepare(args, &cfg),
        Command::Detect(_) => detect(args, &cfg),
        Command::Features(_) => features(args, &cfg),
        Command::Evaluate(_) => evaluate(args, &cfg, args.search),
        Command::Search(_) => evaluate(args, &cfg, true),
        Command::Report(_) => unreachable!(),
    };
    match args.jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

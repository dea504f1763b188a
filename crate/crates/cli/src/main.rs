use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use trajformer::evaluation::{evaluate, export_qualitative, CvBaseline, EvalError, Predictor};
use trajformer::features::{FeatureError, Split, WindowSet};
use trajformer::harness::{
    append_results, build_split, compare_variants, framerate_study, rerun_from_manifest, run_experiment,
    ExperimentOutcome, ExperimentSpec, HarnessError, Manifest, ResultRow,
};
use trajformer::ingest::{parse_dataset, read_store_file, write_store_file, CanonicalStore, DatasetKind, IngestError, ParseOptions, SourceFile};
use trajformer::model::{Checkpoint, ModelError};
use trajformer::synthetic::{generate, SynthConfig};
use trajformer::training::{train, TrainError};

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Harness(e) => e.exit_code() as u8,
            Self::Train(TrainError::DivergedLoss { .. }) => 4,
            Self::Train(TrainError::InvalidConfig(_)) | Self::Model(ModelError::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "trajformer", version, about = "Transformer trajectory forecasting on traffic datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw dataset files into a canonical track store.
    Ingest(IngestArgs),
    /// Generate a synthetic track store.
    Synth(SynthArgs),
    /// Build train/test windows for an experiment and write them with the split manifest.
    Prep(PrepArgs),
    /// Train a model on prepared windows.
    Train(TrainArgs),
    /// Score a checkpoint (or the constant-velocity baseline) on prepared windows.
    Eval(EvalArgs),
    /// Print the predicted positions for one window.
    Predict(WindowArgs),
    /// Run an experiment end to end and append its rows to the results table.
    Experiment(ExperimentArgs),
    /// Export one window's observed, ground-truth and predicted paths as SVG and CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default)]
struct IngestConfig {
    dataset: Option<DatasetKind>,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    strict: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// TOML file with `dataset`, `input`, `output`, `strict`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ind_family, highd or interaction.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Directory holding the raw CSV files.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Abort on the first malformed row.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with synthetic generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Dataset family written in the store header.
    #[arg(long, default_value = "ind_family")]
    dataset: DatasetKind,
    #[arg(long)]
    tracks: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    hz: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    turn_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    recording: Option<String>,
    #[arg(long)]
    location: Option<String>,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Canonical stores; replaces `stores` from the config when given.
    #[arg(long = "store")]
    stores: Vec<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec, CliError> {
        let text = std::fs::read_to_string(&self.config)?;
        let mut spec = ExperimentSpec::from_toml(&text)?;
        if !self.stores.is_empty() {
            spec.stores = self.stores.clone();
        }
        if let Some(e) = self.epochs {
            spec.train.epochs = e;
        }
        if let Some(s) = self.seed {
            spec.train.seed = s;
        }
        if let Some(b) = self.batch_size {
            spec.train.batch_size = b;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct PrepArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Window file; the manifest is written next to it as `<output>.manifest.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Window file produced by `prep`.
    #[arg(long)]
    windows: PathBuf,
    /// Checkpoint path; the training report goes to `<output>.report.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    windows: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Score constant-velocity extrapolation instead of a checkpoint.
    #[arg(long)]
    baseline: bool,
    /// Write the full per-sample report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    windows: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    window: WindowArgs,
    /// Output base path; `.svg` and `.csv` are appended.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Cumulative results table (CSV, append-only).
    #[arg(long, default_value = "results.csv")]
    results: PathBuf,
    /// Run vanilla and oriented on the same split.
    #[arg(long)]
    compare: bool,
    /// Frame rates for a frame-rate study, e.g. `--rates 2.5,5`.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// Rerun the experiment recorded in this manifest instead of `--config`'s split.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Prep(a) => prep(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn read_source_files(dir: &Path) -> Result<Vec<SourceFile>, CliError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Data(e.to_string()))?;
        let path = entry.path();
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if entry.file_type().is_file() && is_csv {
            files.push(SourceFile::read(path, dir)?);
        }
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("no CSV files under {}", dir.display())));
    }
    Ok(files)
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let mut cfg: IngestConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => IngestConfig::default(),
    };
    cfg.dataset = a.dataset.or(cfg.dataset);
    cfg.input = a.input.or(cfg.input);
    cfg.output = a.output.or(cfg.output);
    cfg.strict |= a.strict;
    let missing = |f: &str| CliError::Config(format!("`{f}` is required"));
    let kind = cfg.dataset.ok_or_else(|| missing("dataset"))?;
    let input = cfg.input.ok_or_else(|| missing("input"))?;
    let output = cfg.output.ok_or_else(|| missing("output"))?;
    let files = read_source_files(&input)?;
    let parsed = parse_dataset(kind, &files, ParseOptions { strict: cfg.strict })?;
    let report = parsed.report.clone();
    let store = parsed.into_store();
    write_store_file(&store, &output)?;
    println!(
        "{}: {} tracks, {} rows in, {} records out, {} malformed rows skipped",
        output.display(),
        store.tracks.len(),
        report.rows_in,
        report.records_out,
        report.malformed.len()
    );
    for m in report.malformed.iter().take(20) {
        eprintln!("skipped {}:{}: {}", m.file, m.line, m.reason);
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthConfig::default(),
    };
    cfg.n_tracks = a.tracks.unwrap_or(cfg.n_tracks);
    cfg.points = a.points.unwrap_or(cfg.points);
    cfg.sample_hz = a.hz.unwrap_or(cfg.sample_hz);
    cfg.noise_sd = a.noise.unwrap_or(cfg.noise_sd);
    cfg.turn_fraction = a.turn_fraction.unwrap_or(cfg.turn_fraction);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(r) = a.recording {
        cfg.recording_id = r;
    }
    if let Some(l) = a.location {
        cfg.location_id = l;
    }
    if cfg.noise_sd < 0.0 || cfg.sample_hz <= 0.0 || cfg.speed.0 > cfg.speed.1 || cfg.yaw_rate.0 > cfg.yaw_rate.1 {
        return Err(CliError::Config("invalid synthetic settings".into()));
    }
    let tracks = generate(&cfg);
    let store = CanonicalStore {
        header: trajformer::ingest::StoreHeader {
            version: trajformer::ingest::STORE_VERSION,
            kind: a.dataset,
            heading_source: a.dataset.heading_source(),
            sample_hz: [(cfg.recording_id.clone(), cfg.sample_hz)].into_iter().collect(),
        },
        tracks,
    };
    write_store_file(&store, &a.output)?;
    println!("{}: {} tracks", a.output.display(), store.tracks.len());
    Ok(())
}

fn load_stores(spec: &ExperimentSpec) -> Result<Vec<CanonicalStore>, CliError> {
    if spec.stores.is_empty() {
        return Err(CliError::Config("no stores given (`stores` in the config or --store)".into()));
    }
    spec.stores.iter().map(|p| Ok(read_store_file(p)?)).collect()
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn prep(a: PrepArgs) -> Result<(), CliError> {
    let spec = a.spec.load()?;
    let stores = load_stores(&spec)?;
    let (set, manifest) = build_split(&stores, &spec)?;
    set.write_file(&a.output)?;
    std::fs::write(sidecar(&a.output, ".manifest.json"), manifest.to_json())?;
    println!(
        "{}: {} train / {} test windows",
        a.output.display(),
        set.train.len(),
        set.test.len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let spec = a.spec.load()?;
    let set = WindowSet::read_file(&a.windows)?;
    if set.cfg != spec.windowing {
        return Err(CliError::Config("window file was built with different windowing settings".into()));
    }
    let (mut ckpt, report) = train(&set, &spec.model, &spec.train)?;
    ckpt.meta["config_hash"] = serde_json::Value::String(spec.config_hash());
    ckpt.write_file(&a.output)?;
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(sidecar(&a.output, ".report.json"), report_json)?;
    println!(
        "{}: {} epochs, final loss {:.6e}, {:.1} s",
        a.output.display(),
        report.epoch_losses.len(),
        report.final_loss(),
        report.wall_time_s
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let set = WindowSet::read_file(&a.windows)?;
    let windows = set.split(a.split.into());
    let report = if a.baseline {
        evaluate(&CvBaseline as &dyn Predictor, windows)?
    } else {
        let path = a.checkpoint.expect("clap enforces checkpoint");
        let ckpt = Checkpoint::read_file(&path)?;
        trajformer::evaluation::evaluate_checkpoint(&ckpt, &set, a.split.into())?
    };
    if let Some(p) = &a.json {
        std::fs::write(p, report.to_json())?;
    }
    println!("ADE / FDE (m): {report}  [{} windows]", report.n_samples);
    Ok(())
}

fn window_and_prediction(a: &WindowArgs) -> Result<(trajformer::types::WindowSample, Vec<[f64; 2]>), CliError> {
    let set = WindowSet::read_file(&a.windows)?;
    let ckpt = Checkpoint::read_file(&a.checkpoint)?;
    if ckpt.stats != set.stats {
        return Err(EvalError::StatsMismatch.into());
    }
    let windows = set.split(a.split.into());
    let w = windows
        .get(a.index)
        .ok_or_else(|| CliError::Data(format!("index {} out of range ({} windows)", a.index, windows.len())))?
        .clone();
    let model = ckpt.to_model()?;
    let pred = model.predict(&w)?;
    Ok((w, pred))
}

fn predict(a: WindowArgs) -> Result<(), CliError> {
    let (_, pred) = window_and_prediction(&a)?;
    println!("step,x,y");
    for (i, [x, y]) in pred.iter().enumerate() {
        println!("{},{x},{y}", i + 1);
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<(), CliError> {
    let (w, pred) = window_and_prediction(&a.window)?;
    let (svg, csv) = export_qualitative(&w, &pred, &a.output)?;
    println!("{}\n{}", svg.display(), csv.display());
    Ok(())
}

fn print_row(r: &ResultRow) {
    println!("{:<32} {:<18} {:.2} / {:.2}  n={}", r.experiment, r.variant, r.ade_m, r.fde_m, r.n_test);
}

fn save_outcome(dir: Option<&Path>, o: &ExperimentOutcome) -> Result<(), CliError> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}-{}", o.row.experiment, o.row.variant).replace(['/', ' '], "_");
    std::fs::write(dir.join(format!("{stem}.manifest.json")), o.manifest.to_json())?;
    std::fs::write(dir.join(format!("{stem}.metrics.json")), o.metrics.to_json())?;
    if let Some(c) = &o.checkpoint {
        c.write_file(&dir.join(format!("{stem}.ckpt")))?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let mut spec = a.spec.load()?;
    let manifest = match &a.manifest {
        Some(p) => {
            let m = Manifest::from_json(&std::fs::read_to_string(p)?)?;
            let stores = std::mem::take(&mut spec.stores);
            spec = m.spec.clone();
            spec.stores = stores;
            Some(m)
        }
        None => None,
    };
    let stores = load_stores(&spec)?;
    let out_dir = spec.output.clone();
    let outcomes: Vec<ExperimentOutcome> = if let Some(m) = manifest {
        vec![rerun_from_manifest(&stores, &m)?]
    } else if !a.rates.is_empty() {
        framerate_study(&stores, &spec, &a.rates)?
            .into_iter()
            .map(|r| r.outcome)
            .collect()
    } else if a.compare {
        let c = compare_variants(&stores, &spec)?;
        println!("winner: ADE {}, FDE {}", c.winners.ade.name(), c.winners.fde.name());
        vec![c.vanilla, c.oriented]
    } else {
        vec![run_experiment(&stores, &spec)?]
    };
    let rows: Vec<ResultRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    for o in &outcomes {
        print_row(&o.row);
        save_outcome(out_dir.as_deref(), o)?;
    }
    append_results(&a.results, &rows)?;
    Ok(())
}

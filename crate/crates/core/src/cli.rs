//! `tscot` command line: `synth`, `train`, `eval`, `sweep`, `ablate`.
//!
//! Every command reads an optional JSON run config, applies flag overrides,
//! and echoes the resolved config next to its outputs. Primary outputs are
//! deterministic; timestamps go to `meta.json` only.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{
    generate_synthetic_with, load_dataset, standardize, write_dataset, NoiseKind, NoiseSpec, SyntheticSignal,
    TimeSeriesDataset,
};
use crate::error::{Error, Result};
use crate::eval::{self, AblationVariant, EvalReport, NoiseTarget, Split};
use crate::training::{prepare_state, run_epoch, MetricLog, TrainConfig, TrainMode, ViewData, ViewSelection};

/// Line on stdout; a closed pipe (`tscot eval | head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Held-out fraction when no separate test file is given.
    pub test_fraction: f64,
    pub variant: AblationVariant,
    /// Probe seed; defaults to the training seed.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_fraction: 0.3,
            variant: AblationVariant::Full,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub kind: NoiseKind,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<AblationVariant>,
    pub target: NoiseTarget,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: NoiseKind::Missing,
            levels: vec![0.0, 0.1, 0.3, 0.5],
            seeds: vec![0, 1, 2],
            variants: vec![AblationVariant::Full],
            target: NoiseTarget::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: AblationVariant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a command needs; parsed from `--config` then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: String,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            command: String::new(),
            data: None,
            test_data: None,
            checkpoint: None,
            out: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tscot", version, about = "Prototype-based multi-view co-training for time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset (TSD file).
    Synth(SynthArgs),
    /// Train both view encoders; writes checkpoint and logs.
    Train(TrainArgs),
    /// Linear-probe evaluation of a checkpoint; writes a JSON report.
    Eval(EvalArgs),
    /// Noise-robustness sweep; writes sweep.csv.
    Sweep(SweepArgs),
    /// Ablation over view variants; writes ablation.csv.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes (>= 2).
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 64)]
    pub per_class: usize,
    /// Series length (>= 32).
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    /// Channels per series.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sinusoid amplitude.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Trend scale.
    #[arg(long)]
    pub trend: Option<f64>,
    /// Output path (.tsd, or .csv for univariate data).
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags shared by train, sweep and ablate.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Instance-loss-only epochs before co-training.
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Mini-batch size (>= 2).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Instance-loss temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Co-training loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Co-training loss temperature.
    #[arg(long)]
    pub proto_tau: Option<f64>,
    /// Prototype moving-average rate.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Prototype counts per way, comma separated (default K,2K).
    #[arg(long, value_delimiter = ',')]
    pub ways: Option<Vec<usize>>,
    /// K for unlabeled data.
    #[arg(long)]
    pub num_prototypes: Option<usize>,
    /// unsupervised | semi.
    #[arg(long)]
    pub mode: Option<String>,
    /// Labeled fraction in semi mode (implies --mode semi; default 0.1).
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    /// both | time | frequency.
    #[arg(long)]
    pub views: Option<String>,
    /// Encoder dropout rate (also the augmentation).
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Embedding width per view.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Share one univariate encoder across channels.
    #[arg(long)]
    pub channel_shared: bool,
    /// Include the positive pair in the instance-loss denominator.
    #[arg(long)]
    pub ntxent: bool,
    /// Use ln(1 + |X|) spectra for the frequency view.
    #[arg(long)]
    pub log_magnitude: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (.tsd or .csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labeled dataset; the probe trains on it (or on its split).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate labeled test set; otherwise --data is split.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Held-out fraction of --data when no test set is given.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Embedding slice: T, F, T+F or full.
    #[arg(long)]
    pub variant: Option<String>,
    /// Probe and split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report path (JSON); printed to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Labeled dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// missing | gaussian.
    #[arg(long)]
    pub kind: Option<String>,
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Variants, comma separated (T, F, T+F, full).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Corrupted side: both | train_only | test_only.
    #[arg(long)]
    pub target: Option<String>,
    /// Held-out fraction for the probe.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Labeled dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Variants, comma separated (T, F, T+F, full).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Held-out fraction for the probe.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))
        }
    }
}

fn parse_variant(s: &str) -> Result<AblationVariant> {
    s.parse()
}

fn apply_overrides(cfg: &mut TrainConfig, o: &TrainOverrides) -> Result<()> {
    macro_rules! set {
        ($field:expr, $v:expr) => {
            if let Some(v) = $v.clone() {
                $field = v;
            }
        };
    }
    set!(cfg.seed, o.seed);
    set!(cfg.epochs, o.epochs);
    set!(cfg.warmup_epochs, o.warmup_epochs);
    set!(cfg.batch_size, o.batch_size);
    set!(cfg.temperature, o.tau);
    set!(cfg.lambda, o.lambda);
    set!(cfg.proto_temperature, o.proto_tau);
    set!(cfg.gamma, o.gamma);
    set!(cfg.lr, o.lr);
    set!(cfg.prototype_ways, o.ways);
    set!(cfg.encoder.dropout_rate, o.dropout);
    set!(cfg.encoder.embedding_dim, o.embedding_dim);
    if o.num_prototypes.is_some() {
        cfg.num_prototypes = o.num_prototypes;
    }
    cfg.encoder.channel_shared |= o.channel_shared;
    cfg.ntxent |= o.ntxent;
    cfg.log_magnitude |= o.log_magnitude;
    let fraction = o.labeled_fraction.or(match cfg.mode {
        TrainMode::SemiSupervised { labeled_fraction } => Some(labeled_fraction),
        TrainMode::Unsupervised => None,
    });
    match o.mode.as_deref() {
        None if o.labeled_fraction.is_some() => {
            cfg.mode = TrainMode::SemiSupervised {
                labeled_fraction: fraction.unwrap(),
            }
        }
        None => {}
        Some("unsupervised") => cfg.mode = TrainMode::Unsupervised,
        Some("semi") | Some("semi_supervised") => {
            cfg.mode = TrainMode::SemiSupervised {
                labeled_fraction: fraction.unwrap_or(0.1),
            }
        }
        Some(m) => return Err(Error::invalid(format!("--mode must be unsupervised or semi, got '{m}'"))),
    }
    if let Some(v) = o.views.as_deref() {
        cfg.views = match v {
            "both" => ViewSelection::Both,
            "time" => ViewSelection::TimeOnly,
            "frequency" | "freq" => ViewSelection::FrequencyOnly,
            _ => return Err(Error::invalid(format!("--views must be both, time or frequency, got '{v}'"))),
        };
    }
    cfg.validate()
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::invalid(format!("missing required {flag} (flag or config field)")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Serialize)]
struct Meta<'a> {
    schema_version: u32,
    command: &'a str,
    tool_version: &'a str,
    started_unix: f64,
    finished_unix: f64,
    wall_time_s: f64,
    status: &'a str,
}

fn write_meta(dir: &Path, command: &str, started: (f64, Instant), status: &str) -> Result<()> {
    write_json(
        &dir.join("meta.json"),
        &Meta {
            schema_version: SCHEMA_VERSION,
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix: started.0,
            finished_unix: unix_now(),
            wall_time_s: started.1.elapsed().as_secs_f64(),
            status,
        },
    )
}

fn describe(ds: &TimeSeriesDataset) -> String {
    format!(
        "{}: n={} t={} d={} classes={}",
        ds.name,
        ds.n,
        ds.t,
        ds.d,
        ds.class_count.map_or("unlabeled".to_string(), |k| k.to_string())
    )
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let defaults = SyntheticSignal::default();
    let signal = SyntheticSignal {
        amplitude: a.amplitude.unwrap_or(defaults.amplitude),
        trend: a.trend.unwrap_or(defaults.trend),
    };
    let ds = generate_synthetic_with(a.per_class, a.length, a.channels, a.classes, a.seed, signal)?;
    write_dataset(&ds, &a.out)?;
    say!("wrote {} to {}", describe(&ds), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let mut rc = load_config(a.train.config.as_deref())?;
    rc.command = "train".into();
    if a.data.is_some() {
        rc.data = a.data.clone();
    }
    if a.out.is_some() {
        rc.out = a.out.clone();
    }
    apply_overrides(&mut rc.train, &a.train)?;
    let data_path = require(&rc.data, "--data")?;
    let out = require(&rc.out, "--out")?;
    let raw = load_dataset(&data_path)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &rc)?;

    let (ds, _, stats) = standardize(&raw, &[])?;
    let mut state = prepare_state(&ds, &rc.train)?;
    state.stats = Some(stats);
    let data = ViewData::new(&ds, rc.train.log_magnitude);
    let mut log = MetricLog::default();
    let mut outcome = Ok(());
    while state.epoch < rc.train.epochs {
        if let Err(e) = run_epoch(&mut state, &data, &mut log) {
            outcome = Err(e);
            break;
        }
        let last = log.epochs.last().unwrap();
        say!("epoch {} [{}] total {:.4}", last.epoch, last.phase, last.total);
    }
    fs::write(out.join("loss.csv"), log.loss_csv()?)?;
    fs::write(out.join("epochs.jsonl"), log.epochs_jsonl()?)?;
    if let Err(e) = outcome {
        write_meta(&out, "train", started, "failed")?;
        return Err(e);
    }
    checkpoint::checkpoint(&state, &out.join("checkpoint.tsckpt"))?;
    write_meta(&out, "train", started, "ok")?;
    say!("trained {} for {} epochs; outputs in {}", describe(&raw), state.epoch, out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    variant: AblationVariant,
    embedding_width: usize,
    n_probe_train: usize,
    n_test: usize,
    checkpoint_epoch: usize,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut rc = load_config(a.config.as_deref())?;
    rc.command = "eval".into();
    for (dst, src) in [
        (&mut rc.checkpoint, &a.checkpoint),
        (&mut rc.data, &a.data),
        (&mut rc.test_data, &a.test_data),
        (&mut rc.out, &a.out),
    ] {
        if src.is_some() {
            *dst = src.clone();
        }
    }
    if let Some(f) = a.test_fraction {
        rc.eval.test_fraction = f;
    }
    if let Some(v) = a.variant.as_deref() {
        rc.eval.variant = parse_variant(v)?;
    }
    if a.seed.is_some() {
        rc.eval.seed = a.seed;
    }
    let state = checkpoint::restore(&require(&rc.checkpoint, "--checkpoint")?)?;
    let seed = rc.eval.seed.unwrap_or(state.config.seed);
    let raw = load_dataset(&require(&rc.data, "--data")?)?;
    raw.labels_or_err()?;
    let (train_raw, test_raw) = match &rc.test_data {
        Some(p) => {
            let t = load_dataset(p)?;
            t.labels_or_err()?;
            (raw, t)
        }
        None => {
            let parts = crate::dataset::split_indices(
                &raw,
                &[1.0 - rc.eval.test_fraction, rc.eval.test_fraction],
                crate::rng::derive_seed(seed, &[crate::rng::STREAM_SPLIT]),
            )?;
            (raw.subset(&parts[0])?, raw.subset(&parts[1])?)
        }
    };
    let split = match &state.stats {
        Some(stats) => Split {
            train: stats.apply(&train_raw)?,
            test: stats.apply(&test_raw)?,
            stats: stats.clone(),
        },
        None => eval::from_parts(&train_raw, &test_raw)?,
    };
    let report = eval::evaluate(&state, &split, rc.eval.variant, seed)?;
    let width = match rc.eval.variant {
        AblationVariant::T | AblationVariant::F => 1,
        _ => 2,
    } * state.config.encoder.embedding_dim;
    let output = EvalOutput {
        report: &report,
        variant: rc.eval.variant,
        embedding_width: width,
        n_probe_train: split.train.n,
        n_test: split.test.n,
        checkpoint_epoch: state.epoch,
    };
    let text = serde_json::to_string_pretty(&output)?;
    say!("{text}");
    if let Some(out) = &rc.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(out, text + "\n")?;
    }
    Ok(())
}

/// CSV file that flushes after every row.
struct RowSink {
    writer: csv::Writer<fs::File>,
}

impl RowSink {
    fn create(path: &Path) -> Result<Self> {
        Ok(RowSink {
            writer: csv::Writer::from_path(path).map_err(csv_err)?,
        })
    }

    fn push(&mut self, row: &impl Serialize) -> Result<()> {
        self.writer.serialize(row).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("csv: {other:?}")),
    }
}

fn experiment_split(rc: &RunConfig) -> Result<Split> {
    let raw = load_dataset(&require(&rc.data, "--data")?)?;
    raw.labels_or_err()?;
    match &rc.test_data {
        Some(p) => eval::from_parts(&raw, &load_dataset(p)?),
        None => eval::prepare_split(&raw, rc.eval.test_fraction, rc.eval.seed.unwrap_or(0)),
    }
}

fn parse_variants(v: &Option<Vec<String>>, dst: &mut Vec<AblationVariant>) -> Result<()> {
    if let Some(list) = v {
        *dst = list.iter().map(|s| parse_variant(s)).collect::<Result<_>>()?;
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let mut rc = load_config(a.train.config.as_deref())?;
    rc.command = "sweep".into();
    if a.data.is_some() {
        rc.data = a.data.clone();
    }
    if a.out.is_some() {
        rc.out = a.out.clone();
    }
    if let Some(f) = a.test_fraction {
        rc.eval.test_fraction = f;
    }
    if let Some(k) = a.kind.as_deref() {
        rc.sweep.kind = match k {
            "missing" => NoiseKind::Missing,
            "gaussian" => NoiseKind::Gaussian,
            _ => return Err(Error::invalid(format!("--kind must be missing or gaussian, got '{k}'"))),
        };
    }
    if let Some(l) = &a.levels {
        rc.sweep.levels = l.clone();
    }
    if let Some(s) = &a.seeds {
        rc.sweep.seeds = s.clone();
    }
    parse_variants(&a.variants, &mut rc.sweep.variants)?;
    if let Some(t) = a.target.as_deref() {
        rc.sweep.target = serde_json::from_value(serde_json::Value::String(t.to_string()))
            .map_err(|_| Error::invalid(format!("--target must be both, train_only or test_only, got '{t}'")))?;
    }
    apply_overrides(&mut rc.train, &a.train)?;
    let out = require(&rc.out, "--out")?;
    let specs: Vec<NoiseSpec> = rc
        .sweep
        .levels
        .iter()
        .map(|&level| {
            let s = NoiseSpec {
                kind: rc.sweep.kind,
                level,
                seed: 0,
            };
            s.validate().map(|_| s)
        })
        .collect::<Result<_>>()?;
    let split = experiment_split(&rc)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &rc)?;
    let mut sink = RowSink::create(&out.join("sweep.csv"))?;
    let res = eval::robustness_sweep(
        &split,
        &specs,
        &rc.train,
        &rc.sweep.variants,
        &rc.sweep.seeds,
        rc.sweep.target,
        |row| {
            say!(
                "{} {} seed {} {}: accuracy {:.4} auroc {:.4}",
                row.kind.as_str(),
                row.level,
                row.seed,
                row.variant,
                row.accuracy,
                row.auroc
            );
            sink.push(row)
        },
    );
    write_meta(&out, "sweep", started, if res.is_ok() { "ok" } else { "failed" })?;
    res.map(|_| ())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let mut rc = load_config(a.train.config.as_deref())?;
    rc.command = "ablate".into();
    if a.data.is_some() {
        rc.data = a.data.clone();
    }
    if a.out.is_some() {
        rc.out = a.out.clone();
    }
    if let Some(f) = a.test_fraction {
        rc.eval.test_fraction = f;
    }
    if let Some(s) = &a.seeds {
        rc.ablation.seeds = s.clone();
    }
    parse_variants(&a.variants, &mut rc.ablation.variants)?;
    apply_overrides(&mut rc.train, &a.train)?;
    let out = require(&rc.out, "--out")?;
    let split = experiment_split(&rc)?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &rc)?;
    let mut sink = RowSink::create(&out.join("ablation.csv"))?;
    let res = eval::run_ablation(&split, &rc.ablation.variants, &rc.train, &rc.ablation.seeds, |row| {
        say!(
            "{} seed {}: accuracy {:.4} auroc {:.4} nmi {:.4}",
            row.variant, row.seed, row.accuracy, row.auroc, row.nmi
        );
        sink.push(row)
    });
    write_meta(&out, "ablate", started, if res.is_ok() { "ok" } else { "failed" })?;
    res.map(|_| ())
}


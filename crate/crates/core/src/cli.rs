//! Command-line entry point. Exit codes: 0 success, 1 runtime or data
//! error, 2 usage or configuration error.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ckpt;
use crate::dataio::preprocess::{preprocess_corpus, PreprocessOptions};
use crate::dataio::{
    reduce_no_au, synth_generate, Corpus, DatasetManifest, InputKind, SplitMode, SplitSpec,
    SynthParams,
};
use crate::error::Error;
use crate::experiment::{data_splits, run_experiment, ExperimentSpec};
use crate::modelsel::{self, SelectionGrid, StubEvaluator};
use crate::network::ArchitectureConfig;
use crate::train::{evaluate, repeat_experiment, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "smilenet",
    version,
    about = "Convolutional smile recognition experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic smile / non-smile corpus.
    Synth(SynthArgs),
    /// Crop and downscale frames to mouth or face network inputs.
    Preprocess(PreprocessArgs),
    /// Keep all frames with some action unit and a fraction of the rest.
    Reduce(ReduceArgs),
    /// Split, train and save a checkpoint.
    Train(TrainArgs),
    /// Greedy per-parameter architecture selection.
    Select(SelectArgs),
    /// Classification rate of a checkpoint on one split.
    Eval(EvalArgs),
    /// Repeat an experiment with fresh seeds and report test accuracy spread.
    Repeat(RepeatArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Mouth,
    Face,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "input-kind", value_enum)]
    pub input_kind: KindArg,
    /// Defaults to 69 (mouth) or 128 (face).
    #[arg(long)]
    pub height: Option<usize>,
    /// Defaults to 85 (mouth) or 104 (face).
    #[arg(long)]
    pub width: Option<usize>,
    /// Comma-separated landmark indices outlining the mouth.
    #[arg(long = "mouth-indices", value_delimiter = ',')]
    pub mouth_indices: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest path; image paths are rewritten relative to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub keep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key=value` run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// `train` (default) or `stub:FILE` to replay recorded accuracies.
    #[arg(long, default_value = "train")]
    pub evaluator: String,
    /// Winning run configuration, keeping the configured `epochs`; defaults to
    /// `<out>` with a `.config` extension.
    #[arg(long = "config-out")]
    pub config_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct RepeatArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long)]
    pub data: PathBuf,
    /// Use the configured seed for every run instead of derived ones.
    #[arg(long = "same-seed")]
    pub same_seed: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Every run setting, read from `key=value` files and overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub num_convolutions: usize,
    pub num_hidden_layers: usize,
    pub units_per_hidden_layer: usize,
    pub dropout_rate: f64,
    /// Taken from the data when unset.
    pub input_height: Option<usize>,
    pub input_width: Option<usize>,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Follows `seed` when unset.
    pub split_seed: Option<u64>,
    pub split_mode: SplitMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ArchitectureConfig::default();
        let split = SplitSpec::default();
        RunConfig {
            train: TrainConfig::default(),
            num_convolutions: arch.num_convolutions,
            num_hidden_layers: arch.num_hidden_layers,
            units_per_hidden_layer: arch.units_per_hidden_layer,
            dropout_rate: arch.dropout_rate,
            input_height: None,
            input_width: None,
            train_ratio: split.train,
            val_ratio: split.val,
            test_ratio: split.test,
            split_seed: None,
            split_mode: split.mode,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 17] = [
        "learning_rate",
        "momentum",
        "batch_size",
        "epochs",
        "seed",
        "eval_every",
        "num_convolutions",
        "num_hidden_layers",
        "units_per_hidden_layer",
        "dropout_rate",
        "input_height",
        "input_width",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "split_seed",
        "split_mode",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let v = value.trim();
        match key.trim() {
            "learning_rate" => self.train.learning_rate = parse_value(key, v)?,
            "momentum" => self.train.momentum = parse_value(key, v)?,
            "batch_size" => self.train.batch_size = parse_value(key, v)?,
            "epochs" => self.train.epochs = parse_value(key, v)?,
            "seed" => self.train.seed = parse_value(key, v)?,
            "eval_every" => self.train.eval_every = parse_value(key, v)?,
            "num_convolutions" => self.num_convolutions = parse_value(key, v)?,
            "num_hidden_layers" => self.num_hidden_layers = parse_value(key, v)?,
            "units_per_hidden_layer" => self.units_per_hidden_layer = parse_value(key, v)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, v)?,
            "input_height" => self.input_height = Some(parse_value(key, v)?),
            "input_width" => self.input_width = Some(parse_value(key, v)?),
            "train_ratio" => self.train_ratio = parse_value(key, v)?,
            "val_ratio" => self.val_ratio = parse_value(key, v)?,
            "test_ratio" => self.test_ratio = parse_value(key, v)?,
            "split_seed" => self.split_seed = Some(parse_value(key, v)?),
            "split_mode" => self.split_mode = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("learning_rate", t.learning_rate.to_string());
        line("momentum", t.momentum.to_string());
        line("batch_size", t.batch_size.to_string());
        line("epochs", t.epochs.to_string());
        line("seed", t.seed.to_string());
        line("eval_every", t.eval_every.to_string());
        line("num_convolutions", self.num_convolutions.to_string());
        line("num_hidden_layers", self.num_hidden_layers.to_string());
        line(
            "units_per_hidden_layer",
            self.units_per_hidden_layer.to_string(),
        );
        line("dropout_rate", self.dropout_rate.to_string());
        if let Some(h) = self.input_height {
            line("input_height", h.to_string());
        }
        if let Some(w) = self.input_width {
            line("input_width", w.to_string());
        }
        line("train_ratio", self.train_ratio.to_string());
        line("val_ratio", self.val_ratio.to_string());
        line("test_ratio", self.test_ratio.to_string());
        if let Some(s) = self.split_seed {
            line("split_seed", s.to_string());
        }
        line("split_mode", self.split_mode.as_str().to_string());
        out
    }

    /// Architecture, with unset input dimensions filled from `frame`.
    pub fn architecture(&self, frame: Option<(usize, usize)>) -> Result<ArchitectureConfig, Error> {
        let (fh, fw) = match frame {
            Some((h, w)) => (Some(h), Some(w)),
            None => (None, None),
        };
        let missing = || Error::Config("input_height/input_width unset and no data given".into());
        Ok(ArchitectureConfig {
            num_convolutions: self.num_convolutions,
            num_hidden_layers: self.num_hidden_layers,
            units_per_hidden_layer: self.units_per_hidden_layer,
            dropout_rate: self.dropout_rate,
            input_height: self.input_height.or(fh).ok_or_else(missing)?,
            input_width: self.input_width.or(fw).ok_or_else(missing)?,
        })
    }

    pub fn set_architecture(&mut self, arch: &ArchitectureConfig) {
        self.num_convolutions = arch.num_convolutions;
        self.num_hidden_layers = arch.num_hidden_layers;
        self.units_per_hidden_layer = arch.units_per_hidden_layer;
        self.dropout_rate = arch.dropout_rate;
        self.input_height = Some(arch.input_height);
        self.input_width = Some(arch.input_width);
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_ratio,
            val: self.val_ratio,
            test: self.test_ratio,
            seed: self.split_seed.unwrap_or(self.train.seed),
            mode: self.split_mode,
        }
    }

    pub fn experiment(&self, frame: Option<(usize, usize)>) -> Result<ExperimentSpec, Error> {
        let spec = ExperimentSpec {
            arch: self.architecture(frame)?,
            train: self.train.clone(),
            split: self.split_spec(),
        };
        let as_config = |e: Error| Error::Config(e.to_string());
        spec.train.validate().map_err(as_config)?;
        spec.split.validate().map_err(as_config)?;
        Ok(spec)
    }
}

fn load_run_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    if a.n < 2 || !a.n.is_multiple_of(2) {
        return Err(usage(format!(
            "--n must be even and at least 2 for balanced classes, got {}",
            a.n
        )));
    }
    let corpus = synth_generate(&SynthParams {
        n: a.n,
        height: a.height,
        width: a.width,
        noise_sigma: a.noise,
        seed: a.seed,
    })
    .map_err(|e| match e {
        Error::InvalidArgument { msg, .. } => usage(msg),
        other => other.into(),
    })?;
    corpus.write(&a.out)?;
    let _ = writeln!(out, "wrote {} images to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs, out: &mut dyn Write) -> CliResult {
    let kind = match a.input_kind {
        KindArg::Mouth => InputKind::Mouth,
        KindArg::Face => InputKind::Face,
    };
    if kind == InputKind::Mouth && a.mouth_indices.is_empty() {
        return Err(usage("--mouth-indices is required for --input-kind mouth"));
    }
    let (dh, dw) = kind.default_size();
    let opts = PreprocessOptions {
        kind,
        height: a.height.unwrap_or(dh),
        width: a.width.unwrap_or(dw),
        mouth_indices: a.mouth_indices.clone(),
        margin: a.margin,
    };
    let manifest = DatasetManifest::read(&a.manifest)?;
    let source = a.manifest.parent().unwrap_or(Path::new("."));
    let written = preprocess_corpus(&manifest, source, &opts, &a.out)?;
    let _ = writeln!(
        out,
        "wrote {} {}x{} frames to {}",
        written.len(),
        opts.height,
        opts.width,
        a.out.display()
    );
    Ok(())
}

fn cmd_reduce(a: &ReduceArgs, out: &mut dyn Write) -> CliResult {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let reduced = reduce_no_au(&manifest, a.keep, a.seed)?;
    let src_dir = a.manifest.parent().unwrap_or(Path::new("."));
    let dst_dir = a.out.parent().unwrap_or(Path::new("."));
    let records = if same_dir(src_dir, dst_dir) {
        reduced.into_records()
    } else {
        let abs =
            fs::canonicalize(src_dir).map_err(|e| CliError::Runtime(Error::io(src_dir, e)))?;
        reduced
            .into_records()
            .into_iter()
            .map(|mut r| {
                if Path::new(&r.image_path).is_relative() {
                    r.image_path = abs.join(&r.image_path).to_string_lossy().into_owned();
                }
                r
            })
            .collect()
    };
    let reduced = DatasetManifest::new(records)?;
    reduced.write(&a.out)?;
    let _ = writeln!(out, "kept {} of {} records", reduced.len(), manifest.len());
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    let norm = |p: &Path| {
        fs::canonicalize(if p.as_os_str().is_empty() {
            Path::new(".")
        } else {
            p
        })
        .ok()
    };
    norm(a).is_some() && norm(a) == norm(b)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_run_config(&a.cfg)?;
    let corpus = Corpus::load(&a.data)?;
    let spec = cfg.experiment(corpus.frame_size())?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log"));
    let log_file =
        fs::File::create(&log_path).map_err(|e| CliError::Runtime(Error::io(&log_path, e)))?;
    let mut log = BufWriter::new(log_file);
    let (net, report) = run_experiment(&corpus, &spec, Some(&mut log))?;
    log.flush()
        .map_err(|e| CliError::Runtime(Error::io(&log_path, e)))?;
    ckpt::save(&net, &a.out)?;
    let summary = report.summary_lines().join("\n") + "\n";
    write_file(&with_suffix(&a.out, ".report"), summary.as_bytes())?;
    let _ = out.write_all(summary.as_bytes());
    Ok(())
}

fn cmd_select(a: &SelectArgs, out: &mut dyn Write) -> CliResult {
    let mut cfg = load_run_config(&a.cfg)?;
    // The winning configuration keeps the configured epoch count for the
    // final training run; candidates train for `--epochs`.
    let final_epochs = cfg.train.epochs;
    cfg.train.epochs = a.epochs;
    let grid = SelectionGrid::default();
    let config_out = a
        .config_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("config"));

    let result = if let Some(stub_path) = a.evaluator.strip_prefix("stub:") {
        let text = fs::read_to_string(stub_path)
            .map_err(|e| usage(format!("cannot read stub {stub_path}: {e}")))?;
        let stub = StubEvaluator::parse(&text)?;
        let mouth = ArchitectureConfig::mouth();
        let base = cfg.architecture(Some((mouth.input_height, mouth.input_width)))?;
        modelsel::select(&grid, &base, |c| stub.evaluate(c))
    } else if a.evaluator == "train" {
        let data = a
            .data
            .as_ref()
            .ok_or_else(|| usage("--data is required with the train evaluator"))?;
        let corpus = Corpus::load(data)?;
        let spec = cfg.experiment(corpus.frame_size())?;
        modelsel::select(&grid, &spec.arch, |c| {
            let candidate = ExperimentSpec {
                arch: c.config.clone(),
                ..spec.clone()
            };
            let (_, report) = run_experiment(&corpus, &candidate, None)?;
            report
                .best_val_acc
                .ok_or_else(|| Error::invalid("select", "candidate trained for zero epochs"))
        })
    } else {
        return Err(usage(format!("unknown evaluator {:?}", a.evaluator)));
    };

    match result {
        Ok(report) => {
            write_file(&a.out, report.to_csv().as_bytes())?;
            let mut winning = cfg.clone();
            winning.train.epochs = final_epochs;
            winning.set_architecture(report.final_config.as_ref().expect("complete report"));
            write_file(&config_out, winning.to_text().as_bytes())?;
            let _ = writeln!(out, "runs {}", report.total_runs());
            for (p, v) in &report.winners {
                let _ = writeln!(out, "{p} {v}");
            }
            Ok(())
        }
        Err(failure) => {
            write_file(&a.out, failure.partial.to_csv().as_bytes())?;
            let _ = writeln!(out, "runs {}", failure.partial.total_runs());
            Err(CliError::Runtime(Error::invalid(
                "select",
                failure.to_string(),
            )))
        }
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_run_config(&a.cfg)?;
    let net = ckpt::load(&a.model)?;
    let corpus = Corpus::load(&a.data)?;
    let arch = net.config();
    if let Some((h, w)) = corpus.frame_size() {
        if (h, w) != (arch.input_height, arch.input_width) {
            return Err(CliError::Runtime(Error::shape(
                "eval",
                "checkpoint input size vs data",
                format!("{}x{}", arch.input_height, arch.input_width),
                format!("{h}x{w}"),
            )));
        }
    }
    let split = cfg.split_spec();
    split.validate().map_err(|e| usage(e.to_string()))?;
    let splits = data_splits(&corpus, &split)?;
    let set = match a.split {
        SplitArg::Train => &splits.train,
        SplitArg::Val => &splits.val,
        SplitArg::Test => &splits.test,
    };
    let rate = evaluate(&net, set)?;
    let _ = writeln!(out, "classification_rate {rate:.6}");
    Ok(())
}

fn cmd_repeat(a: &RepeatArgs, out: &mut dyn Write) -> CliResult {
    if a.n < 2 {
        return Err(usage(format!("--n must be at least 2, got {}", a.n)));
    }
    let cfg = load_run_config(&a.cfg)?;
    let corpus = Corpus::load(&a.data)?;
    let spec = cfg.experiment(corpus.frame_size())?;
    let stats = repeat_experiment(a.n, spec.train.seed, |_, seed| {
        let run = if a.same_seed {
            spec.clone()
        } else {
            spec.reseeded(seed)
        };
        let (_, report) = run_experiment(&corpus, &run, None)?;
        report
            .test_acc_at_best
            .ok_or_else(|| Error::invalid("repeat", "runs need at least one epoch"))
    })?;
    for (i, acc) in stats.accuracies.iter().enumerate() {
        let _ = writeln!(out, "run {} test_acc {acc:.6}", i + 1);
    }
    let _ = writeln!(out, "mean {:.6} std {:.6}", stats.mean, stats.std);
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Preprocess(a) => cmd_preprocess(a, out),
        Command::Reduce(a) => cmd_reduce(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Select(a) => cmd_select(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Repeat(a) => cmd_repeat(a, out),
    }
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

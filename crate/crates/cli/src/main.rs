//! `mclstm` command-line front end: train, evaluate, gradcheck, generate.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mclstm::checkpoint::load_checkpoint;
use mclstm::data::{batchify, build_vocabulary, decode, encode};
use mclstm::evaluation::evaluate;
use mclstm::gradcheck::{check_strategy, GradCheckConfig};
use mclstm::layer::CellInit;
use mclstm::model::ModelConfig;
use mclstm::selection::StrategyKind;
use mclstm::training::{fit, Corpora, EpochRow, TrainConfig};
use mclstm::Error;

#[derive(Parser)]
#[command(name = "mclstm", version, about = "Multi-cell LSTM language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the best-validation checkpoint.
    Train(RunArgs),
    /// Score the validation and/or test corpus with a checkpoint.
    Evaluate(RunArgs),
    /// Finite-difference check of the gradients on the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only check this strategy (default: all).
        #[arg(long)]
        strategy: Option<StrategyKind>,
    },
    /// Continue a prompt with a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 20)]
        length: usize,
        /// 0 decodes greedily.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file whose keys mirror the flag names (with underscores).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Small,
    Medium,
    Large,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CellMode {
    Zero,
    Jitter,
}

/// Every setting a config file or flag may give; unset fields fall back to
/// the preset.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding width (defaults to `hidden`).
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Memory cells per node.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    gate_threshold: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    cell_init: Option<CellMode>,
    #[arg(long)]
    jitter_scale: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs_to_wait: Option<usize>,
    #[arg(long)]
    min_reduction: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    unroll: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl Overrides {
    /// Fields set in `other` win.
    fn merge(self, other: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset,
            train,
            valid,
            test,
            checkpoint,
            seed,
            hidden,
            embed,
            layers,
            cells,
            strategy,
            dropout,
            gate_threshold,
            init_scale,
            cell_init,
            jitter_scale,
            lr,
            lr_decay,
            epochs_to_wait,
            min_reduction,
            min_lr,
            clip_norm,
            batch_size,
            unroll,
            max_epochs
        )
    }
}

/// Fully resolved run configuration, echoed before every run.
#[derive(Clone, Debug, PartialEq, Serialize)]
struct Settings {
    preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    seed: u64,
    hidden: usize,
    embed: usize,
    layers: usize,
    cells: usize,
    strategy: StrategyKind,
    dropout: f64,
    gate_threshold: f64,
    init_scale: f64,
    cell_init: CellMode,
    jitter_scale: f64,
    lr: f64,
    lr_decay: f64,
    epochs_to_wait: usize,
    min_reduction: f64,
    min_lr: f64,
    clip_norm: f64,
    batch_size: usize,
    unroll: usize,
    max_epochs: usize,
}

impl Settings {
    fn preset(p: Preset) -> Settings {
        let t = TrainConfig::default();
        // (hidden, dropout, lr, init_scale, clip_norm, max_epochs)
        let (hidden, dropout, lr, init_scale, clip_norm, max_epochs) = match p {
            Preset::Small | Preset::Custom => (200, 0.4, 1.0, 0.1, 5.0, 39),
            Preset::Medium => (650, 0.5, 1.2, 0.05, 5.0, 55),
            Preset::Large => (1500, 0.65, 1.2, 0.05, 10.0, 55),
        };
        Settings {
            preset: p,
            train: None,
            valid: None,
            test: None,
            checkpoint: None,
            seed: 0,
            hidden,
            embed: hidden,
            layers: 2,
            cells: 10,
            strategy: StrategyKind::MaxPooling,
            dropout,
            gate_threshold: mclstm::selection::DEFAULT_GATE_THRESHOLD,
            init_scale,
            cell_init: CellMode::Jitter,
            jitter_scale: mclstm::layer::DEFAULT_JITTER,
            lr,
            lr_decay: t.lr_decay,
            epochs_to_wait: t.epochs_to_wait,
            min_reduction: t.min_reduction,
            min_lr: t.min_lr,
            clip_norm,
            batch_size: t.batch_size,
            unroll: t.unroll,
            max_epochs,
        }
    }

    fn resolve(o: Overrides) -> Settings {
        let mut s = Settings::preset(o.preset.unwrap_or(Preset::Small));
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { s.$f = v; })* };
        }
        s.train = o.train;
        s.valid = o.valid;
        s.test = o.test;
        s.checkpoint = o.checkpoint;
        s.embed = o.embed.or(o.hidden).unwrap_or(s.embed);
        set!(
            seed,
            hidden,
            layers,
            cells,
            strategy,
            dropout,
            gate_threshold,
            init_scale,
            cell_init,
            jitter_scale,
            lr,
            lr_decay,
            epochs_to_wait,
            min_reduction,
            min_lr,
            clip_norm,
            batch_size,
            unroll,
            max_epochs
        );
        s
    }

    fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed,
            hidden_dim: self.hidden,
            num_layers: self.layers,
            cells: self.cells,
            strategy: self.strategy,
            gate_threshold: self.gate_threshold,
            dropout: self.dropout,
            init_scale: self.init_scale,
            cell_init: match self.cell_init {
                CellMode::Zero => CellInit::Zero,
                CellMode::Jitter => CellInit::Jitter {
                    scale: self.jitter_scale,
                },
            },
            seed: self.seed,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial_lr: self.lr,
            lr_decay: self.lr_decay,
            epochs_to_wait: self.epochs_to_wait,
            min_reduction: self.min_reduction,
            min_lr: self.min_lr,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            unroll: self.unroll,
            max_epochs: self.max_epochs,
            seed: self.seed,
        }
    }

    /// Checks every value before any data is read.
    fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: Error| CliError::new(Kind::ConfigInvalid, e.to_string());
        self.model_config(1).validate().map_err(invalid)?;
        self.train_config().validate().map_err(invalid)?;
        if self.cell_init == CellMode::Jitter
            && !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite())
        {
            return Err(CliError::new(
                Kind::ConfigInvalid,
                "jitter_scale must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Usage,
    ConfigMissing,
    ConfigParse,
    ConfigUnknownKey,
    ConfigInvalid,
    Io,
    Checkpoint,
    Data,
    Numeric,
    Gradcheck,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::ConfigMissing => "config_missing",
            Kind::ConfigParse => "config_parse",
            Kind::ConfigUnknownKey => "config_unknown_key",
            Kind::ConfigInvalid => "config_invalid",
            Kind::Io => "io",
            Kind::Checkpoint => "checkpoint",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
            Kind::Gradcheck => "gradcheck",
        }
    }

    fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::ConfigMissing
            | Kind::ConfigParse
            | Kind::ConfigUnknownKey
            | Kind::ConfigInvalid => 2,
            Kind::Io | Kind::Checkpoint | Kind::Data => 3,
            Kind::Numeric => 4,
            Kind::Gradcheck => 5,
        }
    }
}

#[derive(Debug)]
struct CliError {
    kind: Kind,
    message: String,
}

impl CliError {
    fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "error kind={} exit={} message={:?}",
            self.kind.name(),
            self.kind.exit_code(),
            self.message
        )
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::NonFinite(_) => Kind::Numeric,
            Error::Io { .. } => Kind::Io,
            Error::CheckpointMissing(_)
            | Error::CheckpointVersion { .. }
            | Error::CheckpointCorrupt(_) => Kind::Checkpoint,
            Error::InvalidArgument(_) => Kind::ConfigInvalid,
            _ => Kind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::new(Kind::Io, format!("{}: {e}", path.display())))
}

fn load_settings(args: RunArgs) -> Result<Settings, CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                let kind = if e.kind() == std::io::ErrorKind::NotFound {
                    Kind::ConfigMissing
                } else {
                    Kind::Io
                };
                CliError::new(kind, format!("{}: {e}", path.display()))
            })?;
            toml::from_str::<Overrides>(&text).map_err(|e| {
                let msg = e.to_string();
                let kind = if msg.contains("unknown field") {
                    Kind::ConfigUnknownKey
                } else {
                    Kind::ConfigParse
                };
                CliError::new(kind, format!("{}: {}", path.display(), msg.trim()))
            })?
        }
        None => Overrides::default(),
    };
    let settings = Settings::resolve(file.merge(args.overrides));
    settings.validate()?;
    Ok(settings)
}

fn echo(settings: &Settings) -> String {
    let body = toml::to_string(settings).expect("settings serialize");
    format!("# effective configuration\n{body}")
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| {
        CliError::new(
            Kind::Usage,
            format!("--{flag} is required (flag or config key)"),
        )
    })
}

fn command_train(settings: Settings) -> Result<(), CliError> {
    let train_path = required(&settings.train, "train")?;
    let valid_path = required(&settings.valid, "valid")?;
    let checkpoint = required(&settings.checkpoint, "checkpoint")?;
    let train_text = read_text(train_path)?;
    let vocabulary = build_vocabulary(&train_text)?;
    let valid = encode(&read_text(valid_path)?, &vocabulary);
    let test = match &settings.test {
        Some(p) => Some(encode(&read_text(p)?, &vocabulary)),
        None => None,
    };
    let corpora = Corpora {
        train: encode(&train_text, &vocabulary),
        valid,
        test,
        vocabulary,
    };
    let model_config = settings.model_config(corpora.vocabulary.len());

    let mut log_path = checkpoint.as_os_str().to_owned();
    log_path.push(".log");
    let log_path = PathBuf::from(log_path);
    let io = |e: std::io::Error| CliError::new(Kind::Io, format!("{}: {e}", log_path.display()));
    let mut log = File::create(&log_path).map_err(io)?;
    let header = format!(
        "{}# vocabulary {} tokens, {} training tokens\n{}",
        echo(&settings),
        corpora.vocabulary.len(),
        corpora.train.len(),
        EpochRow::HEADER
    );
    println!("{header}");
    writeln!(log, "{header}").map_err(io)?;

    let mut log_err = None;
    let report = fit(
        &model_config,
        &settings.train_config(),
        &corpora,
        Some(checkpoint),
        |row| {
            println!("{row}");
            if let Err(e) = writeln!(log, "{row}").and_then(|_| log.flush()) {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(io(e));
    }
    let mut summary = format!(
        "best epoch={} valid_ppl={:.4} checkpoint={}",
        report.best_epoch,
        report.best_valid_ppl,
        checkpoint.display()
    );
    if let Some(t) = report.test {
        summary.push_str(&format!("\ntest {t}"));
    }
    println!("{summary}");
    writeln!(log, "{summary}").map_err(io)?;
    Ok(())
}

fn command_evaluate(settings: Settings) -> Result<(), CliError> {
    let checkpoint = required(&settings.checkpoint, "checkpoint")?;
    let splits: Vec<(&str, &Path)> = [("valid", &settings.valid), ("test", &settings.test)]
        .into_iter()
        .filter_map(|(name, p)| p.as_deref().map(|p| (name, p)))
        .collect();
    if splits.is_empty() {
        return Err(CliError::new(
            Kind::Usage,
            "evaluate needs --valid and/or --test",
        ));
    }
    let ck = load_checkpoint(checkpoint)?;
    for (name, path) in splits {
        let ids = encode(&read_text(path)?, &ck.vocabulary);
        let corpus = batchify(&ids, settings.batch_size)?;
        let report = evaluate(&ck.model, &corpus, settings.unroll)?;
        println!("{name} {report}");
    }
    Ok(())
}

fn command_gradcheck(seed: u64, strategy: Option<StrategyKind>) -> Result<(), CliError> {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let kinds = strategy.map_or_else(|| StrategyKind::ALL.to_vec(), |k| vec![k]);
    let mut failed = Vec::new();
    for kind in kinds {
        let report = check_strategy(kind, &cfg)?;
        println!("{report}");
        if !report.passed() {
            failed.push(kind.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            Kind::Gradcheck,
            format!("gradient check failed for {}", failed.join(", ")),
        ))
    }
}

fn command_generate(
    checkpoint: &Path,
    prompt: &str,
    length: usize,
    temperature: f64,
    seed: u64,
) -> Result<(), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let ids: Vec<usize> = prompt
        .split_whitespace()
        .map(|t| ck.vocabulary.id(t).unwrap_or(ck.vocabulary.unk_id()))
        .collect();
    if ids.is_empty() {
        return Err(CliError::new(
            Kind::Usage,
            "--prompt must contain at least one token",
        ));
    }
    let out = ck
        .model
        .generate(&ids, length, temperature, seed)
        .map_err(|e| match e {
            Error::InvalidArgument(m) => CliError::new(Kind::Usage, m),
            e => e.into(),
        })?;
    println!("{}", decode(&out, &ck.vocabulary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => command_train(load_settings(args)?),
        Command::Evaluate(args) => command_evaluate(load_settings(args)?),
        Command::Gradcheck { seed, strategy } => command_gradcheck(seed, strategy),
        Command::Generate {
            checkpoint,
            prompt,
            length,
            temperature,
            seed,
        } => command_generate(&checkpoint, &prompt, length, temperature, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::new(Kind::Usage, e.kind().to_string());
            eprintln!("{err}");
            return ExitCode::from(err.kind.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code())
        }
    }
}

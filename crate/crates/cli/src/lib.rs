//! Command-line driver: synthetic data, training, evaluation, the
//! variant/mode ablation sweep and CSV conversion.
//!
//! Exit codes: 0 on success, 1 for invalid inputs or configuration, 2 for
//! runtime and numerical failures.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyshot_core::anyshot::Protocol;
use anyshot_core::{DataError, Mode, SyntheticSpec, Variant};
use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_ablate, cmd_convert_csv, cmd_eval, cmd_synth_data, cmd_train, median, AblationTable,
    EvalArgs,
};
pub use config::{AblateConfig, EvalSettings, TrainRunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<anyshot_core::Error> for CliError {
    fn from(e: anyshot_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        anyshot_core::Error::from(e).into()
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Gan,
    Vae,
    Vaegan,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Gan => Variant::Gan,
            VariantArg::Vae => Variant::Vae,
            VariantArg::Vaegan => Variant::VaeGan,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Inductive,
    Transductive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Inductive => Mode::Inductive,
            ModeArg::Transductive => Mode::Transductive,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProtocolArg {
    Zsl,
    Gzsl,
    Fsl,
    Gfsl,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Zsl => Protocol::Zsl,
            ProtocolArg::Gzsl => Protocol::Gzsl,
            ProtocolArg::Fsl => Protocol::Fsl,
            ProtocolArg::Gfsl => Protocol::Gfsl,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "anyshot", version, about = "Feature-generating any-shot learning")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic class-conditional dataset.
    SynthData {
        /// JSON synthetic spec; defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model set from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under one protocol and print the report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// Labeled samples per novel class (fsl and gfsl).
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long, default_value_t = 0)]
        shot_seed: u64,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, default_value_t = anyshot_core::anyshot::DEFAULT_SYNTHETIC_PER_CLASS)]
        synthetic_per_class: usize,
        /// Synthetic features per seen class in the generalized protocols.
        #[arg(long, default_value_t = 0)]
        synthetic_seen_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        per_class_csv: Option<PathBuf>,
    },
    /// Run the variant x mode ablation sweep from a JSON config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a headerless numeric CSV into a matrix blob.
    ConvertCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Executes a parsed command and returns the text to print.
pub fn execute(command: Command) -> Result<String, CliError> {
    match command {
        Command::SynthData { spec, out, seed } => {
            let mut spec = match spec {
                Some(path) => config::read_json::<SyntheticSpec>(&path)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let manifest = cmd_synth_data(&spec, &out)?;
            Ok(format!("wrote {}", manifest.display()))
        }
        Command::Train {
            config,
            variant,
            mode,
            seed,
            out,
        } => {
            let mut cfg = config::load_train_config(&config)?;
            if let Some(v) = variant {
                cfg.training.variant = v.into();
            }
            if let Some(m) = mode {
                cfg.training.mode = m.into();
            }
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let meta = cmd_train(&cfg)?;
            Ok(format!(
                "trained {} epochs ({} generator steps) in {:.1}s; wrote {}",
                meta.epochs_run,
                meta.counters.generator_steps,
                meta.wall_time_secs,
                cfg.output_dir.join(&meta.checkpoint).display()
            ))
        }
        Command::Eval {
            checkpoint,
            dataset,
            protocol,
            shots,
            shot_seed,
            top_k,
            synthetic_per_class,
            synthetic_seen_per_class,
            seed,
            out,
            per_class_csv,
        } => {
            let args = EvalArgs {
                shots,
                shot_seed,
                top_k,
                synthetic_per_class,
                synthetic_seen_per_class,
                seed,
                out,
                per_class_csv,
                ..EvalArgs::new(checkpoint, dataset, protocol.into())
            };
            let report = cmd_eval(&args)?;
            Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
        }
        Command::Ablate { config, seeds, out } => {
            let mut cfg = config::load_ablate_config(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            Ok(cmd_ablate(&cfg)?.to_csv())
        }
        Command::ConvertCsv { input, output } => {
            let (r, c) = cmd_convert_csv(&input, &output)?;
            Ok(format!("wrote {} ({r}x{c})", output.display()))
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .try_init();
    match execute(cli.command) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

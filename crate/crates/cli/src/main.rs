//! `onlab`: deterministic experiment runner.
//!
//! Every subcommand resolves the configuration (file plus `--set`
//! overrides), writes its CSV tables into `--out`, and finishes with a
//! `manifest.json` recording the config hash, seed, versions and output
//! digests. Failures print one JSON line on stderr and exit with 2 (config),
//! 3 (numerical) or 4 (I/O).

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::AnalysisKind;
use config::ExperimentConfig;
use error::CliError;
use output::RunDir;

#[derive(Debug, Parser)]
#[command(name = "onlab", version, about = "Operator-norm laboratory experiment runner")]
struct Cli {
    /// TOML configuration file; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration field, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Out {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Network file; defaults to `model.checkpoint`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or load and re-emit) the dataset.
    GenData(Out),
    /// Write a randomly initialized network.
    InitModel(Out),
    /// Train a network under `[train]` and write it with its metrics.
    Train(Out),
    /// Attack the analysis points and record the outcome per sample.
    Attack {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        out: Out,
    },
    /// Measurements on a trained network.
    Analyze {
        kind: Kind,
        #[command(flatten)]
        model: ModelArg,
        /// Method label written into accuracy.csv.
        #[arg(long, default_value = "model")]
        method: String,
        #[command(flatten)]
        out: Out,
    },
    /// Smallest ε of `analysis.eps_grid` at which the model is fooled on
    /// `analysis.fooled_fraction` of the points.
    SelectEps {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value = "standard")]
        method: String,
        #[command(flatten)]
        out: Out,
    },
    /// Compare logit-space attack and power-method trajectories inside ReLU cells.
    #[command(name = "verify-theorem1")]
    VerifyTheorem1 {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        out: Out,
    },
    /// Retrain over a logarithmic grid of `train.weight` or `attack.eps`.
    Sweep(Out),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Spectrum,
    Alignment,
    Linearity,
    Topsv,
    Activations,
    Accuracy,
}

impl From<Kind> for AnalysisKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Spectrum => AnalysisKind::Spectrum,
            Kind::Alignment => AnalysisKind::Alignment,
            Kind::Linearity => AnalysisKind::Linearity,
            Kind::Topsv => AnalysisKind::Topsv,
            Kind::Activations => AnalysisKind::Activations,
            Kind::Accuracy => AnalysisKind::Accuracy,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        onlab::par::set_threads(n)?;
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let (name, out) = match &cli.command {
        Command::GenData(o) => ("gen-data", o),
        Command::InitModel(o) => ("init-model", o),
        Command::Train(o) => ("train", o),
        Command::Attack { out, .. } => ("attack", out),
        Command::Analyze { out, .. } => ("analyze", out),
        Command::SelectEps { out, .. } => ("select-eps", out),
        Command::VerifyTheorem1 { out, .. } => ("verify-theorem1", out),
        Command::Sweep(o) => ("sweep", o),
    };
    let mut run = RunDir::create(&out.out)?;
    let label = match &cli.command {
        Command::GenData(_) => {
            commands::gen_data(&cfg, &mut run)?;
            name.to_string()
        }
        Command::InitModel(_) => {
            commands::init_model(&cfg, &mut run)?;
            name.to_string()
        }
        Command::Train(_) => {
            commands::train_cmd(&cfg, &mut run)?;
            name.to_string()
        }
        Command::Attack { model, .. } => {
            commands::attack_cmd(&cfg, model.model.as_deref(), &mut run)?;
            name.to_string()
        }
        Command::Analyze { kind, model, method, .. } => {
            commands::analyze(&cfg, (*kind).into(), model.model.as_deref(), method, &mut run)?;
            format!("analyze {}", kind.to_possible_value().expect("named").get_name())
        }
        Command::SelectEps { model, method, .. } => {
            commands::select_eps(&cfg, model.model.as_deref(), method, &mut run)?;
            name.to_string()
        }
        Command::VerifyTheorem1 { model, .. } => {
            commands::verify_theorem(&cfg, model.model.as_deref(), &mut run)?;
            name.to_string()
        }
        Command::Sweep(_) => {
            commands::sweep(&cfg, &mut run)?;
            name.to_string()
        }
    };
    run.finish(&label, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

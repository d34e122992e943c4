//! `surrogate`: mesh generation, dataset synthesis, training, evaluation and
//! the classic-versus-hybrid Newton-Raphson benchmark.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 inconsistent
//! or unreadable inputs, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use surrogate_core::Error;

use commands::PredictorChoice;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "surrogate", version, about = "Neural surrogate for hyperelastic FEM with hybrid Newton-Raphson")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults apply to missing keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` and `train.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 for one per core
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output path of the command (file or directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dotted config override such as `train.epochs=50`, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clamped beam mesh
    Mesh,
    /// Synthesize modal forces and solve them
    Dataset,
    /// Train a surrogate on the dataset
    Train {
        /// Not supported; rejected with a message
        #[arg(long)]
        resume: bool,
    },
    /// Accuracy metrics on fresh forces
    Eval(PredictorArgs),
    /// Classic versus hybrid Newton-Raphson on fresh forces
    Bench {
        #[command(flatten)]
        predictor: PredictorArgs,
        /// Use the in-distribution forces as drawn instead of the load sweep
        #[arg(long)]
        no_sweep: bool,
    },
    /// Predict the displacement for one force (JSON array of N numbers)
    Predict {
        #[arg(long)]
        force: PathBuf,
    },
}

#[derive(Args)]
struct PredictorArgs {
    /// Use the Newton-Raphson solution as the prediction
    #[arg(long, conflicts_with = "zero")]
    oracle: bool,
    /// Use an all-zero prediction
    #[arg(long)]
    zero: bool,
}

impl PredictorArgs {
    fn choice(&self) -> PredictorChoice {
        match (self.oracle, self.zero) {
            (true, _) => PredictorChoice::Oracle,
            (_, true) => PredictorChoice::Zero,
            _ => PredictorChoice::Model,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidMesh(_) => 1,
        Error::Inconsistent(_) | Error::ShapeMismatch { .. } | Error::Format { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::ElementInverted { .. }
        | Error::NonPositiveJacobian(_)
        | Error::LinearSolve(_)
        | Error::Eigen(_)
        | Error::DatasetAborted { .. }
        | Error::NonFiniteLoss { .. } => 3,
    }
}

fn run(cli: Cli) -> surrogate_core::Result<()> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    overrides.extend(cli.set.iter().cloned());
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let out = cli.out.as_deref();
    match cli.command {
        Command::Mesh => commands::mesh(&config, out),
        Command::Dataset => commands::dataset(&config, out),
        Command::Train { resume } => commands::train_model(&config, out, resume),
        Command::Eval(p) => commands::eval(&config, out, p.choice()).map(|_| ()),
        Command::Bench { predictor, no_sweep } => commands::bench(&config, out, predictor.choice(), !no_sweep).map(|_| ()),
        Command::Predict { force } => commands::predict(&config, &force, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

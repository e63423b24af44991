use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtl_forge::config::{parse_model_list, ExperimentConfig};
use mtl_forge::{harness, Result};

/// Multi-task regression experiments: prepare data, train a model suite,
/// evaluate against the per-task baseline, and render report artifacts.
#[derive(Parser)]
#[command(name = "mtl-forge", version)]
struct Cli {
    /// Experiment configuration file (INI); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed (also honors MTL_FORGE_SEED)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the model list, comma-separated (e.g. baseline,ern)
    #[arg(long, global = true)]
    models: Option<String>,
    /// Override the concurrent training job limit; 0 = one per processor
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the data pipeline and cache one dataset per task
    Prepare,
    /// Train every configured model; one job per model, per task for baseline
    Train,
    /// Score checkpoints on the test split and write the evaluation CSVs
    Evaluate {
        /// Score an external per-task RMSE table instead of checkpoints
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Render the evaluation CSVs as a text report with significance marks
    Report,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::parse("")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synthetic.seed = seed;
    }
    if let Some(models) = &cli.models {
        cfg.models = parse_model_list(models)?;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;

    match &cli.cmd {
        Cmd::Prepare => harness::cmd_prepare(&cfg),
        Cmd::Train => harness::cmd_train(&cfg),
        Cmd::Evaluate { table } => harness::cmd_evaluate(&cfg, table.as_deref()),
        Cmd::Report => harness::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version land here
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

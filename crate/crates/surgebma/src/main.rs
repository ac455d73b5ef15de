use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use surgebma::config::Profile;
use surgebma::{fixtures, pipeline, Context, Error, Result, RunConfig};

#[derive(Parser)]
#[command(name = "surgebma", version, about = "Bayesian model averaging of storm-surge return levels")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Sampler profile: desk or paper.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Pool chains even when the PSRF gate fails.
    #[arg(long, global = true)]
    force: bool,
    /// Restrict to these structure ids (repeatable), e.g. ST or NS2-nao.
    #[arg(long = "structure", global = true)]
    structures: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detrend, threshold and decluster the station record; build covariates.
    Preprocess,
    /// Fit station MLEs and elicit priors.
    FitPriors,
    /// Run the adaptive Metropolis chains per structure.
    Calibrate,
    /// Bridge-sampled evidence and BMA weights.
    Evidence,
    /// Return-level ensembles for the projection year.
    Project,
    /// Weight tables, return-level table and curve data.
    Report,
    /// Every stage in order.
    RunAll,
    /// Write a synthetic fixture directory with a ready config.
    Simulate {
        /// Target directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn absolute(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        std::env::current_dir().map(|d| d.join(&path)).unwrap_or(path)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.run.output_dir = absolute(dir.clone());
    }
    if let Some(p) = cli.profile {
        config.run.profile = p;
    }
    if cli.force {
        config.sampler.force = true;
    }
    if !cli.structures.is_empty() {
        config.run.structures = cli.structures.clone();
    }
    if cli.workers.is_some() {
        config.run.workers = cli.workers;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<String> {
    if let Command::Simulate { out } = &cli.command {
        let path = fixtures::write_fixture(out, cli.seed.unwrap_or(1))?;
        return Ok(format!("fixture written; run with --config {}\n", path.display()));
    }
    let config = load_config(cli)?;
    let workers = config.run.workers;
    let ctx = Context::new(config)?;
    let stage = match cli.command {
        Command::Preprocess => pipeline::run_preprocess,
        Command::FitPriors => pipeline::run_fit_priors,
        Command::Calibrate => pipeline::run_calibrate,
        Command::Evidence => pipeline::run_evidence,
        Command::Project => pipeline::run_project,
        Command::Report => pipeline::run_report,
        Command::RunAll => pipeline::run_all,
        Command::Simulate { .. } => unreachable!(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut out = pool.install(|| stage(&ctx))?;
    out.push_str(&format!("config hash {}\n", ctx.config_hash));
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use reworkd::artifacts::{read_json, Bundle, DirLock};
use reworkd::config::PipelineConfig;
use reworkd::{pipeline, CliError};

/// Learns and prices rework policies for lot-based production data.
#[derive(Debug, Parser)]
#[command(name = "reworkd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct NewBundle {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the artifact bundle.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override; wins over the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct InBundle {
    /// Bundle directory produced by earlier stages.
    #[arg(long = "in")]
    dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generates or loads the dataset, trims thin-overlap rows, splits it.
    Simulate(NewBundle),
    /// Tunes learners, cross-fits nuisances, estimates headline effects.
    Estimate(InBundle),
    /// Fits effect curves with uniform bands and the effect surface.
    Cate(InBundle),
    /// Learns the menu of candidate rework policies.
    Policy(InBundle),
    /// Prices every policy on the held-out side.
    Evaluate(InBundle),
    /// Bounds the headline effect under unobserved confounding.
    Sensitivity(InBundle),
    /// Checks covariate balance and arm overlap.
    Diagnose(InBundle),
    /// Renders plots and the markdown report.
    Report(InBundle),
    /// Runs every stage in order in one process.
    Run {
        #[command(flatten)]
        new: NewBundle,
        /// Stop after this stage instead of finishing the pipeline.
        #[arg(long)]
        stage: Option<String>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> reworkd::Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn configure_threads() -> reworkd::Result<()> {
    let Ok(raw) = std::env::var("REWORKD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("REWORKD_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool setup failed: {e}")))
}

fn dispatch(cmd: Command) -> reworkd::Result<()> {
    match cmd {
        Command::Simulate(new) => {
            let cfg = load_config(new.config.as_ref(), new.seed)?;
            let bundle = Bundle::new(&new.out);
            let _lock = DirLock::acquire(&new.out)?;
            pipeline::stage_simulate(&bundle, &cfg)
        }
        Command::Estimate(b) => with_lock(&b.dir, pipeline::stage_estimate),
        Command::Cate(b) => with_lock(&b.dir, pipeline::stage_cate),
        Command::Policy(b) => with_lock(&b.dir, pipeline::stage_policy),
        Command::Evaluate(b) => with_lock(&b.dir, pipeline::stage_evaluate),
        Command::Sensitivity(b) => with_lock(&b.dir, pipeline::stage_sensitivity),
        Command::Diagnose(b) => with_lock(&b.dir, pipeline::stage_diagnose),
        Command::Report(b) => with_lock(&b.dir, pipeline::stage_report),
        Command::Run { new, stage } => {
            let cfg = load_config(new.config.as_ref(), new.seed)?;
            let bundle = Bundle::new(&new.out);
            let _lock = DirLock::acquire(&new.out)?;
            pipeline::run_pipeline(&bundle, &cfg, stage.as_deref())
        }
    }
}

fn with_lock(dir: &PathBuf, stage: fn(&Bundle) -> reworkd::Result<()>) -> reworkd::Result<()> {
    let bundle = Bundle::new(dir);
    let _lock = DirLock::acquire(dir)?;
    stage(&bundle)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = configure_threads().and_then(|()| dispatch(cli.command)) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(e.exit_code());
    }
}

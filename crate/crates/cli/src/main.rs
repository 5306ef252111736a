#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Batch front end for heterogeneous production-function estimation.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 non-convergence,
//! 5 internal error.

mod artifacts;
mod config;
mod log;
mod report;
mod runner;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use runner::{CliError, CliResult};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hetprod")]
#[command(about = "Heterogeneous production function estimation from firm panels")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Override run.output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,

    /// Override run.threads.
    #[arg(long)]
    threads: Option<usize>,

    /// Override run.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override run.memory_budget_mb.
    #[arg(long)]
    memory_budget_mb: Option<usize>,

    /// Override model.family (cd | ces | intensive).
    #[arg(long)]
    family: Option<String>,

    /// Override solver.max_iter.
    #[arg(long)]
    max_iter: Option<usize>,

    /// Override solver.tol.
    #[arg(long)]
    tol: Option<f64>,

    /// Diagnostic random restarts (solver.restarts).
    #[arg(long)]
    restarts: Option<usize>,

    /// On-disk density cache file (run.cache_path).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the mixing distribution and firm posteriors.
    Estimate(CommonFlags),
    /// Generate synthetic panels and run the bias/MSE harness.
    Simulate(CommonFlags),
    /// Grid utilities.
    Grid {
        #[command(subcommand)]
        sub: GridCommand,
    },
    /// Total technology productivity from a finished run.
    Ttp {
        #[command(flatten)]
        common: CommonFlags,
        /// Directory produced by `estimate`.
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Labor markups from a finished run.
    Markups {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Variance decomposition from a finished run.
    Anova {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Per-firm OLS baseline (plus pooled OLS).
    OlsBaseline {
        #[command(flatten)]
        common: CommonFlags,
        /// Output CSV path.
        #[arg(long, default_value = "ols_baseline.csv")]
        out: PathBuf,
    },
    /// Regenerate SVG figures from a finished run's CSVs.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum GridCommand {
    /// Print the resolved grid (dimensions, ranges, Q).
    Describe(CommonFlags),
}

fn load_config(flags: &CommonFlags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::from_path(&flags.config)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = &flags.output_dir {
        cfg.run.output_dir = dir.clone();
    }
    if let Some(t) = flags.threads {
        cfg.run.threads = t;
    }
    if let Some(s) = flags.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = flags.memory_budget_mb {
        cfg.run.memory_budget_mb = m;
    }
    if let Some(f) = &flags.family {
        cfg.model.family = f.clone();
    }
    if let Some(m) = flags.max_iter {
        cfg.solver.max_iter = m;
    }
    if let Some(t) = flags.tol {
        cfg.solver.tol = t;
    }
    if let Some(r) = flags.restarts {
        cfg.solver.restarts = r;
    }
    if let Some(c) = &flags.cache {
        cfg.run.cache_path = Some(c.clone());
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Run `body` inside a rayon pool of the configured size, so the thread
/// count is a run parameter rather than ambient state.
fn with_pool<T>(threads: usize, body: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(body)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate(flags) => {
            let cfg = load_config(&flags)?;
            with_pool(cfg.run.threads, || runner::run_estimate(&cfg).map(|_| ()))
        }
        Command::Simulate(flags) => {
            let cfg = load_config(&flags)?;
            with_pool(cfg.run.threads, || runner::run_simulate(&cfg).map(|_| ()))
        }
        Command::Grid { sub: GridCommand::Describe(flags) } => {
            let cfg = load_config(&flags)?;
            let (panel, _) = runner::load_configured_panel(&cfg)?;
            let model = hetprod_core::model::ModelSpec::new(cfg.family(), panel.n_periods());
            let grid = cfg
                .resolve_grid(&model, &panel)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let desc = hetprod_core::grid::describe(&model, &grid);
            println!("{}", serde_json::to_string_pretty(&desc).unwrap());
            Ok(())
        }
        Command::Ttp { common, run_dir } => {
            let cfg = load_config(&common)?;
            report::rerun_ttp(&cfg, &run_dir)
        }
        Command::Markups { common, run_dir } => {
            let cfg = load_config(&common)?;
            report::rerun_markups(&cfg, &run_dir)
        }
        Command::Anova { common, run_dir } => {
            let cfg = load_config(&common)?;
            report::rerun_anova(&cfg, &run_dir)
        }
        Command::OlsBaseline { common, out } => {
            let cfg = load_config(&common)?;
            with_pool(cfg.run.threads, || runner::run_ols_baseline(&cfg, &out))
        }
        Command::Report { run_dir } => report::regenerate_svgs(&run_dir),
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            log::log_event(serde_json::json!({
                "event": "error",
                "kind": e.exit_code(),
                "message": e.message(),
            }));
            std::process::exit(e.exit_code());
        }
    }
}

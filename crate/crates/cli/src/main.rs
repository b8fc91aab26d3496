use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mim_core::harness::{self, DataSection, DatasetKind, ExperimentConfig, RunSummary, SweepOptions};
use mim_core::ObjectiveKind;

#[derive(Parser)]
#[command(name = "mim", version, about = "Train and evaluate MIM and VAE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of one configuration.
    Run {
        config: PathBuf,
        /// Overwrite existing run directories.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Cross product of hidden sizes, objectives and seeds.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 20, 500])]
        hidden: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [ObjectiveKind::Vae, ObjectiveKind::Mim])]
        objectives: Vec<ObjectiveKind>,
        /// Number of seeds, run as 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Exact checks on discrete models.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Score a saved checkpoint on a dataset's test split.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum OracleCommand {
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: DatasetKind,
    /// IDX directory for image datasets.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long, default_value_t = 128)]
    n_is: usize,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long, default_value_t = 5)]
    ksg_k: usize,
    /// Seed of the synthetic dataset or the train/val shuffle.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

fn report(runs: Vec<mim_core::Result<RunSummary>>) -> Result<ExitCode> {
    let mut failed = 0;
    for r in &runs {
        match r {
            Ok(s) => {
                let m = s.metrics.as_ref();
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{} epochs={} best={} stop={} mi_ksg={} nll={} recon_rmse={} knn_acc={}",
                    s.run_id,
                    s.epochs,
                    s.best_epoch,
                    s.stop,
                    fmt(m.and_then(|m| m.mi_ksg)),
                    fmt(m.map(|m| m.nll)),
                    fmt(m.map(|m| m.recon_rmse)),
                    fmt(m.map(|m| m.knn_acc)),
                );
                if !s.ok {
                    failed += 1;
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", runs.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("invalid config {}", path.display()))
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, force, jobs } => {
            let cfg = load(&config)?;
            report(harness::run(&cfg, jobs, force)?)
        }
        Command::Sweep {
            config,
            hidden,
            objectives,
            seeds,
            jobs,
            force,
        } => {
            let cfg = load(&config)?;
            let out = harness::sweep(
                &cfg,
                &SweepOptions {
                    hidden,
                    objectives,
                    seeds,
                    jobs,
                    force,
                },
            )?;
            let code = report(out.runs)?;
            println!("summary: {}", out.summary_path.display());
            Ok(code)
        }
        Command::Oracle {
            command: OracleCommand::Verify { trials, seed },
        } => {
            let s = harness::oracle_verify(trials, seed)?;
            print!("{}", s.render());
            Ok(if s.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Eval(a) => {
            if a.dataset.is_image() && a.data_dir.is_none() {
                bail!("--data-dir is required for dataset `{}`", a.dataset.name());
            }
            let mut cfg = ExperimentConfig::from_json(&format!(
                r#"{{"dataset": "{}", "objective": "mim", "data": {{"dir": "/"}}}}"#,
                a.dataset.name()
            ))?;
            cfg.data = DataSection {
                dir: a.data_dir,
                n_test: a.n_test,
                seed: Some(a.data_seed),
                ..Default::default()
            };
            cfg.eval.n_is = a.n_is;
            cfg.eval.knn_k = a.knn_k;
            cfg.eval.ksg_k = a.ksg_k;
            if let Some(dir) = std::env::var_os(harness::OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
                cfg.output_dir = dir.into();
            }
            cfg.validate()?;
            let (m, seed, epoch) = harness::eval_checkpoint(&a.checkpoint, &cfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "checkpoint": a.checkpoint,
                    "seed": seed,
                    "epoch": epoch,
                    "metrics": m,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

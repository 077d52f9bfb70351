mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deeptemper::experiment::run::{self, load_or_generate_data, CHECKPOINT_FILE};
use deeptemper::experiment::{cells, run_cell, ExperimentConfig};
use deeptemper::metrics::{write_metrics, MetricsRow};
use deeptemper::verify::{self, Status, VerifyOptions};
use rayon::prelude::*;

const EVALUATION_FILE: &str = "evaluation.csv";

#[derive(Parser)]
#[command(name = "deeptemper", version, about = "Train and sample RBMs with SML, PT, CAST and Deep Tempering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the test set and dataset spec for a config.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (seed, learning rate) cell of a config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue each cell from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Re-score each cell's checkpoint on the test set.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Draw learning curves from metrics files or run directories.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Run the oracle and sampler correctness checks.
    Verify {
        #[arg(long, default_value_t = 1_000_000)]
        iterations: usize,
        #[arg(long, default_value_t = 8)]
        max_visible: usize,
        #[arg(long, default_value_t = 8)]
        max_hidden: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    DtSign,
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
    Verification,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let is_config = e
            .chain()
            .any(|c| matches!(c.downcast_ref::<deeptemper::Error>(), Some(deeptemper::Error::Config { .. })));
        if is_config {
            Failure::Config(e)
        } else {
            Failure::Other(e)
        }
    }
}

impl From<deeptemper::Error> for Failure {
    fn from(e: deeptemper::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn print_rows(label: &str, rows: &[MetricsRow]) {
    for r in rows {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.4}"));
        let swaps = if r.swap_rates.len() <= 4 {
            let rates: Vec<String> = r.swap_rates.iter().map(|&x| fmt(x)).collect();
            format!("[{}]", rates.join(", "))
        } else {
            let seen: Vec<f64> = r.swap_rates.iter().flatten().copied().collect();
            let mean = (!seen.is_empty()).then(|| seen.iter().sum::<f64>() / seen.len() as f64);
            format!("mean {} over {}/{} pairs", fmt(mean), seen.len(), r.swap_rates.len())
        };
        println!(
            "{label} iter {} layer {}: test_ll {} bound {} swaps {swaps}",
            r.iteration,
            r.layer,
            fmt(r.test_ll_nats),
            fmt(r.dbn_bound_nats),
        );
    }
}

fn train(cfg: &ExperimentConfig, resume: bool, jobs: usize, seed_offset: u64) -> Result<(), Failure> {
    let root = cfg.output_dir.clone();
    let data = load_or_generate_data(cfg, &root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building thread pool")?;
    let results: Vec<_> = pool.install(|| {
        cells(cfg, seed_offset)
            .par_iter()
            .map(|cell| run_cell(cfg, &root, &data, cell, resume, None))
            .collect()
    });
    for r in results {
        let out = r?;
        let label = out.cell.dir_name();
        if let Some(it) = out.resumed_from {
            println!("{label}: resumed from iteration {it}");
        }
        print_rows(&label, &out.final_rows);
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, seed_offset: u64) -> Result<(), Failure> {
    let root = cfg.output_dir.clone();
    let data = load_or_generate_data(cfg, &root)?;
    for cell in cells(cfg, seed_offset) {
        let dir = run::cell_dir(&root, cfg.method, &cell);
        let ckpt = dir.join(CHECKPOINT_FILE);
        let rows = run::evaluate_checkpoint(cfg, &ckpt, &data.test)?;
        write_metrics(&dir.join(EVALUATION_FILE), cfg.n_swap_pairs(), &rows)?;
        print_rows(&cell.dir_name(), &rows);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenerateData { config, out } => {
            let cfg = load_config(&config, out)?;
            let data = run::generate_data(&cfg, &cfg.output_dir)?;
            println!(
                "wrote {} test samples to {}",
                data.test.len(),
                cfg.output_dir.join(run::TEST_SET_FILE).display()
            );
        }
        Command::Train {
            config,
            out,
            resume,
            jobs,
            seed_offset,
        } => {
            let cfg = load_config(&config, out)?;
            train(&cfg, resume, jobs, seed_offset)?;
        }
        Command::Evaluate { config, out, seed_offset } => {
            let cfg = load_config(&config, out)?;
            evaluate(&cfg, seed_offset)?;
        }
        Command::Plot { inputs, out } => {
            for p in plot::plot(&inputs, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Verify {
            iterations,
            max_visible,
            max_hidden,
            seed,
            inject_fault,
        } => {
            let opts = VerifyOptions {
                seed,
                max_visible,
                max_hidden,
                iterations,
                inject_dt_sign_flip: matches!(inject_fault, Some(Fault::DtSign)),
            };
            let results = verify::run_all(&opts);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| r.status == Status::Fail).count();
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

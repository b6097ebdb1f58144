use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use periodic_sir::experiment::{self, RunConfig};

#[derive(Parser)]
#[command(name = "periodic-sir", version, about = "Stochastic SIR simulation and periodic transmission estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and persist datasets for every noise level.
    Generate(Common),
    /// Estimate every persisted dataset.
    Estimate(Common),
    /// Generate, estimate and report.
    Sweep(Common),
    /// Estimate from fresh data and compare prediction ensembles.
    Predict(Common),
    /// Information matrix, limit variable and scaled-error experiment.
    Theory(Common),
    /// Summaries, consistency verdict and scatter data from estimates.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Config file in `key = value` format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Full-scale dataset counts (10000 generated, 1000 estimated).
    #[arg(long)]
    full: bool,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.full {
            cfg = cfg.full_scale();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        if let Some(jobs) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build_global()
                .context("configuring the worker pool")?;
        }
        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        cfg.save(&cfg.out.join("config.txt"))?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            let records = experiment::generate_datasets(&cfg)?;
            println!("generated {} datasets in {}", records.len(), cfg.out.display());
        }
        Command::Estimate(c) => {
            let cfg = c.resolve()?;
            let records = experiment::load_index(&cfg.out)?;
            let rows = experiment::batch_estimate(&records, &cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("estimated {} datasets ({failed} failed)", rows.len());
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let summary = experiment::sweep(&cfg)?;
            print_summary(&summary);
        }
        Command::Predict(c) => {
            let cfg = c.resolve()?;
            let report = experiment::prediction_study(&cfg)?;
            println!("true     {:?}", report.theta0.to_vec());
            for row in &report.rows {
                println!("eps={:<6} {:?} sup_rel_diff={:.4}", row.eps, row.theta.to_vec(), row.sup_rel_diff);
            }
        }
        Command::Theory(c) => {
            let cfg = c.resolve()?;
            let report = experiment::run_theory(&cfg)?;
            println!("information matrix: min eigenvalue {:.6e}, asymmetry {:.1e}", report.min_eigenvalue, report.asymmetry);
            for row in &report.rate.rows {
                println!("eps={:<6} iqr {:?} failures {}", row.eps, row.iqr, row.failures.len());
            }
        }
        Command::Report(c) => {
            let cfg = c.resolve()?;
            let summary = experiment::emit_reports(&cfg.out, &cfg)?;
            print_summary(&summary);
        }
    }
    Ok(())
}

fn print_summary(summary: &experiment::ReportSummary) {
    for row in &summary.rows {
        println!("eps={:<6} ok={} failed={} median_l2={:.4e}", row.eps, row.n_ok, row.n_failed, row.median_l2);
    }
    println!(
        "consistency: {} (shrink ratio {:.2})",
        if summary.consistent { "pass" } else { "fail" },
        summary.shrink_ratio
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

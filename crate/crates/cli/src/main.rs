use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use colar::experiment::write_rows;
use colar::linalg::load_matrix;
use colar::stage2::colar_estimate;
use colar::{
    run_experiment, run_misspec, run_reduction_checks, AdmmConfig, CovarianceKind, CvConfig, ExperimentConfig,
    ExperimentSummary, Misspecification, ReductionCheckConfig, SampleSet,
};

#[derive(Parser)]
#[command(name = "colar", version, about = "Sparse CCA simulations, estimation and reduction checks")]
struct Cli {
    /// Worker threads for parallel repetitions (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator simulation for one covariance setting.
    Simulate(SimArgs),
    /// Run a simulation with an extra canonical pair the fit ignores.
    Misspec {
        #[command(flatten)]
        sim: SimArgs,
        /// Support of the extra pair.
        #[arg(long, value_enum, default_value_t = Scenario::Free)]
        scenario: Scenario,
        /// Canonical correlation of the extra pair.
        #[arg(long)]
        lambda3: Option<f64>,
    },
    /// Run the distribution-level checks of the reduction samplers.
    ReduceCheck(CheckArgs),
    /// Fit the estimator to CSV data matrices.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct SimArgs {
    /// TOML file with `key = value` experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    setting: Option<CovarianceKind>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Per-repetition CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Shared,
    Free,
}

#[derive(Args)]
struct CheckArgs {
    /// TOML file with `key = value` check settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo repetitions for the sampling checks.
    #[arg(long)]
    reps: Option<usize>,
    /// CSV report path; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV matrix with one observation per row.
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Penalty multiplier for the first stage.
    #[arg(long, default_value_t = 0.55)]
    rho_multiplier: f64,
    /// Use disjoint sample batches for the stages.
    #[arg(long)]
    split: bool,
    /// Recorded in the metadata file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the estimates.
    #[arg(long, default_value = "colar-estimate")]
    out: PathBuf,
}

enum Outcome {
    Ok,
    AssertionFailed,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn experiment_config(args: &SimArgs) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load_config(args.config.as_deref())?;
    if let Some(s) = args.setting {
        cfg.setting = s;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    Ok(cfg)
}

fn write_csv<T: serde::Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_rows(rows, file)?;
        }
        None => write_rows(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn print_summary(summary: &ExperimentSummary) -> Result<()> {
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{} (p={}, m={}, n={}): {} reps, {} failed, {} not converged",
        summary.setting, summary.p, summary.m, summary.n, summary.reps, summary.failed, summary.not_converged
    )?;
    writeln!(out, "median U-init  {}  V-init  {}", fmt(summary.median_loss_u_init), fmt(summary.median_loss_v_init))?;
    writeln!(out, "median U-CoLaR {}  V-CoLaR {}", fmt(summary.median_loss_u_colar), fmt(summary.median_loss_v_colar))?;
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome> {
    let (rows, summary) = if cfg.misspec.is_some() { run_misspec(cfg)? } else { run_experiment(cfg)? };
    if let Some(path) = out {
        write_csv(&rows, Some(path))?;
    }
    print_summary(&summary)?;
    Ok(Outcome::Ok)
}

fn reduce_check(args: &CheckArgs) -> Result<Outcome> {
    let mut cfg: ReductionCheckConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    let rows = run_reduction_checks(&cfg)?;
    write_csv(&rows, args.out.as_deref())?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    for row in &failed {
        eprintln!("FAIL {} {}: {} vs {}", row.check, row.detail, row.value, row.bound);
    }
    Ok(if failed.is_empty() { Outcome::Ok } else { Outcome::AssertionFailed })
}

fn estimate(args: &EstimateArgs) -> Result<Outcome> {
    let x = load_matrix(&args.x).with_context(|| format!("reading {}", args.x.display()))?;
    let y = load_matrix(&args.y).with_context(|| format!("reading {}", args.y.display()))?;
    let data = SampleSet::new(x, y)?;
    let (p, m) = (data.x.ncols(), data.y.ncols());
    let rho = args.rho_multiplier * (((p + m) as f64).ln() / data.n() as f64).sqrt();
    let est = colar_estimate(&data, &AdmmConfig::new(rho, args.rank), &CvConfig::new(args.rank), args.split)?;
    est.write_dir(&args.out, args.seed)?;
    println!(
        "rank {}: {} x-rows and {} y-rows selected, admm {} after {} iterations; wrote {}",
        args.rank,
        est.support_u.len(),
        est.support_v.len(),
        if est.converged { "converged" } else { "stopped" },
        est.admm_iterations,
        args.out.display()
    );
    Ok(Outcome::Ok)
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Simulate(args) => {
            let cfg = experiment_config(&args)?;
            simulate(&cfg, args.out.as_deref())
        }
        Command::Misspec { sim, scenario, lambda3 } => {
            let mut cfg = experiment_config(&sim)?;
            cfg.misspec = Some(match scenario {
                Scenario::Shared => Misspecification::SharedSupport,
                Scenario::Free => Misspecification::FreeSupport,
            });
            if let Some(l3) = lambda3 {
                cfg.lambda3 = l3;
            }
            simulate(&cfg, sim.out.as_deref())
        }
        Command::ReduceCheck(args) => reduce_check(&args),
        Command::Estimate(args) => estimate(&args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AssertionFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "setting = \"toeplitz\"\nn = 200\nreps = 7\n").unwrap();
        let cli = Cli::parse_from(["colar", "simulate", "--config", path.to_str().unwrap(), "--reps", "3", "--p", "40"]);
        let Command::Simulate(args) = cli.command else { panic!("wrong subcommand") };
        let cfg = experiment_config(&args).unwrap();
        assert_eq!(cfg.setting, CovarianceKind::Toeplitz);
        assert_eq!((cfg.p, cfg.m, cfg.n, cfg.reps), (40, 300, 200, 3));
    }

    #[test]
    fn missing_config_uses_defaults() {
        let cfg: ExperimentConfig = load_config(None).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(load_config::<ExperimentConfig>(Some(Path::new("/nonexistent.toml"))).is_err());
    }
}

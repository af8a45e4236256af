use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use odforge::config::PipelineConfig;
use odforge::fixtures::MiniCounty;
use odforge::pipeline::{self, BenchOverrides};
use odforge::vrpbench::Algorithm;

/// Synthetic commuter OD tables, travel-time calibration and
/// pickup-delivery benchmarks.
#[derive(Parser)]
#[command(name = "odforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BenchFlags {
    /// Algorithm to run; repeat for several (default: from config).
    #[arg(long = "algo", value_parser = parse_algo)]
    algos: Vec<Algorithm>,
    /// Requests per instance.
    #[arg(long)]
    k: Option<usize>,
    /// Time budget per algorithm run, in seconds.
    #[arg(long = "budget-s")]
    budget_s: Option<f64>,
    /// Passengers per vehicle.
    #[arg(long)]
    capacity: Option<u32>,
    /// Vehicles available.
    #[arg(long)]
    fleet: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: synthesize, calibrate, validate, bench.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: BenchFlags,
    },
    /// Initial trips and the mean-speed shift.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Per-origin calibration and resampled trips.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Fidelity report over the trips in the output directory.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Pickup-delivery benchmark on calibrated trips.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bench: BenchFlags,
    },
    /// Write a synthetic mini-county input set and config.
    GenMiniCounty {
        /// Target directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Trips per origin unit.
        #[arg(long, default_value_t = 200)]
        trips_per_origin: u64,
        /// Arterial peak-hour speed factor (1 = time-invariant).
        #[arg(long, default_value_t = 0.35)]
        peak_factor: f64,
    },
}

fn parse_algo(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: odforge::Error| e.to_string())
}

impl BenchFlags {
    fn overrides(&self) -> BenchOverrides {
        BenchOverrides {
            algorithms: (!self.algos.is_empty()).then(|| self.algos.clone()),
            k: self.k,
            budget_s: self.budget_s,
            capacity: self.capacity,
            fleet: self.fleet,
        }
    }
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, bench } => {
            let mut cfg = load(&common)?;
            bench.overrides().apply(&mut cfg);
            let manifest = pipeline::run_pipeline(&cfg)?;
            println!(
                "wrote {} artifacts to {}",
                manifest.files.len(),
                cfg.output_dir.display()
            );
        }
        Command::Synthesize { common } => {
            let cfg = load(&common)?;
            let shift = pipeline::synthesize(&cfg)?;
            println!("{} initial trips, psi = {:.6}", shift.trips, shift.psi);
        }
        Command::Calibrate { common } => {
            let cfg = load(&common)?;
            let s = pipeline::calibrate(&cfg)?;
            println!(
                "{} origins calibrated, bin slack {} -> {}",
                s.origins.len(),
                s.eps_initial,
                s.eps_calibrated
            );
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let report = pipeline::validate(&cfg)?;
            print!("{}", report.to_text());
            let failed = report.hard_failures();
            if !failed.is_empty() {
                anyhow::bail!("validate: checks failed: {}", failed.join(", "));
            }
        }
        Command::Bench { common, bench } => {
            let mut cfg = load(&common)?;
            bench.overrides().apply(&mut cfg);
            cfg.validate()?;
            let runs = pipeline::bench(&cfg)?;
            let last = runs.last().map(Vec::as_slice).unwrap_or(&[]);
            print!("{}", odforge::vrpbench::results_csv(last));
        }
        Command::GenMiniCounty {
            dir,
            seed,
            trips_per_origin,
            peak_factor,
        } => {
            let county = MiniCounty {
                seed,
                trips_per_origin,
                peak_factor,
                ..MiniCounty::default()
            };
            let cfg = county.write(&dir)?;
            println!("{}", cfg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ODFORGE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

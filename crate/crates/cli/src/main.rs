use clap::{Args, Parser, Subcommand, ValueEnum};
use pfa::simgen::{NullPlacement, Scenario, ScenarioKind};
use pfa_harness::commands::{
    cmd_control, cmd_convergence, cmd_estimate, cmd_generate, cmd_simulate, ControlConfig,
    EstimateConfig, GenerateConfig,
};
use pfa_harness::config::{AlphaRule, ExperimentConfig};
use pfa_harness::convergence::ConvergenceConfig;
use pfa_harness::error::{EXIT_OK, EXIT_UNREACHABLE};
use pfa_harness::{io, HarnessError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Principal factor approximation of the false discovery proportion.
#[derive(Parser)]
#[command(name = "pfa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate FDP(t) from a correlation matrix and a vector of z-statistics.
    Estimate(EstimateArgs),
    /// Find the threshold whose approximate FDR equals alpha.
    Control(ControlArgs),
    /// Run a replicated simulation experiment.
    Simulate(SimulateArgs),
    /// Histograms of the realized FDP and its limit for several dimensions.
    Convergence(ConvergenceArgs),
    /// Write one simulated instance (sigma.csv, z.csv, instance.json).
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    EqualCorrelation,
    FanSong,
    IndependentCauchy,
    ThreeFactor,
    TwoFactor,
    NonlinearFactor,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, default_value = "two-factor")]
    scenario: Kind,
    /// Common correlation of the equal-correlation scenario.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p1: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Place the false nulls at random instead of first.
    #[arg(long)]
    random_placement: bool,
}

impl ScenarioArgs {
    fn build(&self) -> Scenario {
        let kind = match self.scenario {
            Kind::EqualCorrelation => ScenarioKind::EqualCorrelation { rho: self.rho },
            Kind::FanSong => ScenarioKind::FanSong,
            Kind::IndependentCauchy => ScenarioKind::IndependentCauchy,
            Kind::ThreeFactor => ScenarioKind::ThreeFactor,
            Kind::TwoFactor => ScenarioKind::TwoFactor,
            Kind::NonlinearFactor => ScenarioKind::NonlinearFactor,
        };
        let mut s = Scenario::standard(kind);
        if let Some(p) = self.p {
            s.p = p;
        }
        if let Some(n) = self.n {
            s.n = n;
        }
        if let Some(p1) = self.p1 {
            s.p1 = p1;
        }
        if let Some(beta) = self.beta {
            s.beta = beta;
        }
        if self.random_placement {
            s.placement = NullPlacement::Random;
        }
        s
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    sigma: PathBuf,
    #[arg(long)]
    z: PathBuf,
    /// Thresholds, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    t: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.75)]
    fraction: f64,
    /// Number of factors; overrides the epsilon rule.
    #[arg(long)]
    k: Option<usize>,
    /// Output JSON file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ControlArgs {
    #[arg(long)]
    sigma: PathBuf,
    /// Number of false nulls, assumed known.
    #[arg(long)]
    p1: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    mc: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',')]
    t: Vec<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn build(&self, seed: u64, default_t: &[f64]) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => io::read_json::<ExperimentConfig>(path)?,
            None => ExperimentConfig::new(self.scenario.build(), default_t.to_vec(), 100, seed),
        };
        cfg.seed = seed;
        if !self.t.is_empty() {
            cfg.t_grid = self.t.clone();
        }
        if let Some(v) = self.reps {
            cfg.n_reps = v;
        }
        if let Some(v) = self.mc {
            cfg.n_mc = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.fraction {
            cfg.calibration_fraction = v;
        }
        if self.k.is_some() {
            cfg.num_factors = self.k;
        }
        if self.out.is_some() {
            cfg.output_path = self.out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Run BH and Storey at this level.
    #[arg(long)]
    alpha: Option<f64>,
    /// Run BH and Storey at the mean approximate FDR of the first threshold.
    #[arg(long, conflicts_with = "alpha")]
    alpha_from_pfa: bool,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 500, 1000])]
    dims: Vec<usize>,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Estimate(a) => {
            let mut cfg = EstimateConfig::new(a.sigma, a.z, a.t);
            cfg.epsilon = a.epsilon;
            cfg.fraction = a.fraction;
            cfg.k = a.k;
            emit(&cmd_estimate(&cfg)?, a.out.as_deref())?;
        }
        Command::Control(a) => {
            let mut cfg = ControlConfig::new(a.sigma, a.p1, a.alpha, a.seed);
            cfg.epsilon = a.epsilon;
            cfg.k = a.k;
            cfg.n_mc = a.mc;
            cfg.tol = a.tol;
            let out = cmd_control(&cfg)?;
            emit(&out, a.out.as_deref())?;
            if let Some(b) = out.unreachable {
                eprintln!(
                    "alpha {} is unreachable: FDR at the boundary t = {:e} is {}",
                    b.alpha, b.boundary_t, b.boundary_fdr
                );
                return Ok(EXIT_UNREACHABLE);
            }
        }
        Command::Simulate(a) => {
            let mut cfg = a.experiment.build(a.seed, &[0.001])?;
            if let Some(alpha) = a.alpha {
                cfg.alpha = Some(AlphaRule::Fixed(alpha));
            } else if a.alpha_from_pfa {
                cfg.alpha = Some(AlphaRule::PfaApprox);
            }
            let out = cmd_simulate(&cfg)?;
            if cfg.output_path.is_none() {
                emit(&out, None)?;
            }
        }
        Command::Convergence(a) => {
            let mut exp = a.experiment.build(a.seed, &[0.01, 0.001])?;
            let out = exp.output_path.take();
            let cfg = ConvergenceConfig {
                experiment: exp,
                p_values: a.dims,
            };
            let result = cmd_convergence(&cfg, out.as_deref())?;
            if out.is_none() {
                emit(&result, None)?;
            }
        }
        Command::Generate(a) => {
            let cfg = GenerateConfig {
                scenario: a.scenario.build(),
                seed: a.seed,
            };
            cmd_generate(&cfg, &a.out)?;
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    if let Some(threads) = std::env::var("PFA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Results do not depend on the thread count; this only bounds the pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

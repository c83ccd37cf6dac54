//! The subcommands, independent of argument parsing.

use crate::config::ExperimentConfig;
use crate::convergence::{run_convergence, ConvergenceConfig, ConvergenceOutput};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, ExperimentOutput};
use crate::io;
use pfa::fdr::{
    solve_on_curve, ControlResult, FdrCurve, DEFAULT_MC_DRAWS, DEFAULT_SOLVER_TOL, T_MAX, T_MIN,
};
use pfa::lad::DEFAULT_FRACTION;
use pfa::linalg::spectral_decompose;
use pfa::pfa::{build_factor_model, select_num_factors, DEFAULT_EPSILON};
use pfa::pipeline::{PfaEstimator, PfaOptions, PfaReport};
use pfa::rng::{substream, Purpose};
use pfa::simgen::{
    generate_design, make_test_statistics, sample_correlation, GeneratedInstance, Scenario,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SIGMA_FILE: &str = "sigma.csv";
pub const Z_FILE: &str = "z.csv";
pub const INSTANCE_FILE: &str = "instance.json";

/// Points on the log-spaced FDR curve emitted by `control`.
pub const CURVE_POINTS: usize = 61;

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    if let Some(dir) = &cfg.output_path {
        out.save(dir)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub sigma: PathBuf,
    pub z: PathBuf,
    pub thresholds: Vec<f64>,
    pub epsilon: f64,
    pub fraction: f64,
    pub k: Option<usize>,
}

impl EstimateConfig {
    pub fn new(sigma: PathBuf, z: PathBuf, thresholds: Vec<f64>) -> Self {
        Self {
            sigma,
            z,
            thresholds,
            epsilon: DEFAULT_EPSILON,
            fraction: DEFAULT_FRACTION,
            k: None,
        }
    }

    pub fn options(&self) -> PfaOptions {
        PfaOptions {
            epsilon: self.epsilon,
            fraction: self.fraction,
            k: self.k,
            ..PfaOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub version: String,
    /// The estimator is deterministic; there is no seed.
    pub seed: Option<u64>,
    pub config: EstimateConfig,
    pub report: PfaReport,
}

pub fn cmd_estimate(cfg: &EstimateConfig) -> Result<EstimateOutput> {
    if cfg.thresholds.is_empty() {
        return Err(HarnessError::Config(
            "at least one threshold is required".into(),
        ));
    }
    let sigma = io::read_correlation(&cfg.sigma)?;
    let z = io::read_vector(&cfg.z)?;
    if z.len() != sigma.dim() {
        return Err(pfa::Error::DimensionMismatch {
            what: "z-statistic count",
            expected: sigma.dim(),
            got: z.len(),
        }
        .into());
    }
    let report =
        PfaEstimator::from_correlation(&sigma, cfg.options())?.estimate(&z, &cfg.thresholds)?;
    Ok(EstimateOutput {
        version: crate::VERSION.to_string(),
        seed: None,
        config: cfg.clone(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub sigma: PathBuf,
    pub p1: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: Option<usize>,
    pub n_mc: usize,
    pub tol: f64,
    pub seed: u64,
}

impl ControlConfig {
    pub fn new(sigma: PathBuf, p1: usize, alpha: f64, seed: u64) -> Self {
        Self {
            sigma,
            p1,
            alpha,
            epsilon: DEFAULT_EPSILON,
            k: None,
            n_mc: DEFAULT_MC_DRAWS,
            tol: DEFAULT_SOLVER_TOL,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub fdr: f64,
    pub sd: f64,
}

/// Where the search stopped when `alpha` is out of reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub alpha: f64,
    pub boundary_t: f64,
    pub boundary_fdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub version: String,
    pub seed: u64,
    pub config: ControlConfig,
    pub k: usize,
    pub result: Option<ControlResult>,
    pub unreachable: Option<Boundary>,
    pub curve: Vec<CurvePoint>,
}

/// Solves for the threshold. An unreachable level is reported in the output
/// rather than as an error so that the boundary can still be written out.
pub fn cmd_control(cfg: &ControlConfig) -> Result<ControlOutput> {
    let sigma = io::read_correlation(&cfg.sigma)?;
    let system = spectral_decompose(&sigma)?;
    let k = match cfg.k {
        Some(k) => k,
        None => select_num_factors(system.values(), cfg.epsilon)?,
    };
    let model = build_factor_model(&system, k)?;
    let curve = FdrCurve::new(&model, cfg.p1, cfg.n_mc, cfg.seed)?;
    let (result, unreachable) = match solve_on_curve(cfg.alpha, &curve, cfg.tol, cfg.seed) {
        Ok(r) => (Some(r), None),
        Err(pfa::Error::Unreachable {
            alpha,
            boundary_t,
            boundary_fdr,
        }) => (
            None,
            Some(Boundary {
                alpha,
                boundary_t,
                boundary_fdr,
            }),
        ),
        Err(e) => return Err(e.into()),
    };
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let points = (0..CURVE_POINTS)
        .map(|i| {
            let t = (lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64)
                .exp()
                .min(T_MAX);
            let e = curve.evaluate(t)?;
            Ok(CurvePoint {
                t,
                fdr: e.mean,
                sd: e.sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ControlOutput {
        version: crate::VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        k,
        result,
        unreachable,
        curve: points,
    })
}

pub fn cmd_convergence(cfg: &ConvergenceConfig, out: Option<&Path>) -> Result<ConvergenceOutput> {
    let result = run_convergence(cfg)?;
    if let Some(dir) = out {
        result.save(dir)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub scenario: Scenario,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub version: String,
    pub seed: u64,
    pub config: GenerateConfig,
    pub mu: Vec<f64>,
    pub true_nulls: Vec<usize>,
    pub sds: Vec<f64>,
}

/// One simulated instance: sample correlation of a fresh design and a
/// statistic vector drawn with that correlation.
pub fn generate_instance(cfg: &GenerateConfig) -> Result<GeneratedInstance> {
    cfg.scenario.validate()?;
    let design = generate_design(&cfg.scenario, &mut substream(cfg.seed, Purpose::Design, 0))?;
    let (sigma, sds) = sample_correlation(&design)?;
    Ok(make_test_statistics(
        &sigma,
        &sds,
        &cfg.scenario,
        &mut substream(cfg.seed, Purpose::Replication, 0),
    )?)
}

/// Writes `sigma.csv`, `z.csv` and `instance.json` into `dir`.
pub fn cmd_generate(cfg: &GenerateConfig, dir: &Path) -> Result<GeneratedInstance> {
    let inst = generate_instance(cfg)?;
    io::ensure_dir(dir)?;
    io::write_matrix(&dir.join(SIGMA_FILE), inst.sigma_hat_mat.as_matrix())?;
    io::write_vector(&dir.join(Z_FILE), &inst.z)?;
    io::write_json(
        &dir.join(INSTANCE_FILE),
        &InstanceFile {
            version: crate::VERSION.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            mu: inst.mu.clone(),
            true_nulls: inst.true_nulls.clone(),
            sds: inst.sds.clone(),
        },
    )?;
    Ok(inst)
}

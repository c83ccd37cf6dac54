use crate::error::{HarnessError, Result};
use pfa::fdr::DEFAULT_MC_DRAWS;
use pfa::lad::DEFAULT_FRACTION;
use pfa::pfa::DEFAULT_EPSILON;
use pfa::simgen::Scenario;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Whether each replication draws its own design (and so its own `Sigma`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    #[default]
    PerReplication,
    /// One design, drawn once, shared by every replication.
    Fixed,
}

/// Level at which the BH and Storey procedures are run, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    Fixed(f64),
    /// The mean approximate FDR of the first threshold in the grid.
    PfaApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub t_grid: Vec<f64>,
    pub n_reps: usize,
    #[serde(default = "default_mc")]
    pub n_mc: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_fraction")]
    pub calibration_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Directory `simulate` writes into; not part of the serialized result.
    #[serde(default, skip_serializing)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub design: DesignMode,
    /// Overrides the epsilon rule when set.
    #[serde(default)]
    pub num_factors: Option<usize>,
    /// Run the PFA, Efron and Storey FDP estimators on every replication.
    #[serde(default = "default_true")]
    pub estimators: bool,
    #[serde(default = "default_x0")]
    pub efron_x0: f64,
    #[serde(default = "default_lambda")]
    pub storey_lambda: f64,
    #[serde(default)]
    pub alpha: Option<AlphaRule>,
}

fn default_mc() -> usize {
    DEFAULT_MC_DRAWS
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}
fn default_true() -> bool {
    true
}
fn default_x0() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, t_grid: Vec<f64>, n_reps: usize, seed: u64) -> Self {
        Self {
            scenario,
            t_grid,
            n_reps,
            n_mc: default_mc(),
            epsilon: default_epsilon(),
            calibration_fraction: default_fraction(),
            seed,
            output_path: None,
            design: DesignMode::default(),
            num_factors: None,
            estimators: true,
            efron_x0: default_x0(),
            storey_lambda: default_lambda(),
            alpha: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        self.scenario.validate()?;
        if self.t_grid.is_empty() {
            return fail("t_grid is empty".into());
        }
        if let Some(t) = self.t_grid.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
            return fail(format!("threshold {t} is outside (0, 1)"));
        }
        if self.n_reps == 0 {
            return fail("n_reps must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction <= 1.0) {
            return fail(format!(
                "calibration_fraction {} is outside (0, 1]",
                self.calibration_fraction
            ));
        }
        if !(self.efron_x0 > 0.0) {
            return fail(format!("efron_x0 {} must be positive", self.efron_x0));
        }
        if !(self.storey_lambda > 0.0 && self.storey_lambda < 1.0) {
            return fail(format!(
                "storey_lambda {} is outside (0, 1)",
                self.storey_lambda
            ));
        }
        if let Some(AlphaRule::Fixed(a)) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return fail(format!("alpha {a} is outside (0, 1)"));
            }
        }
        Ok(())
    }
}

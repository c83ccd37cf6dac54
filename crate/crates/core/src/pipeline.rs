//! End-to-end PFA estimation from a correlation structure and statistics.

use crate::error::{Error, Result};
use crate::lad::{estimate_factors, LadOptions, DEFAULT_FRACTION};
use crate::linalg::{spectral_decompose, CorrelationMatrix, EigenSystem};
use crate::pfa::{
    build_factor_model, estimate_fdp, select_num_factors, FactorModel, FdpReport, DEFAULT_EPSILON,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfaOptions {
    pub epsilon: f64,
    pub fraction: f64,
    /// Forces the factor count instead of selecting it from `epsilon`.
    pub k: Option<usize>,
    #[serde(skip, default)]
    pub lad: LadOptions,
}

impl Default for PfaOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            fraction: DEFAULT_FRACTION,
            k: None,
            lad: LadOptions::default(),
        }
    }
}

/// A fitted factor model ready to be applied to statistic vectors.
#[derive(Debug, Clone)]
pub struct PfaEstimator {
    model: FactorModel,
    options: PfaOptions,
}

/// Outcome of one estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfaReport {
    pub k: usize,
    /// Size of the calibration set.
    pub m: usize,
    pub w_hat: Vec<f64>,
    pub lad_objective: f64,
    pub converged: bool,
    pub degenerate_rows: Vec<usize>,
    pub estimates: Vec<FdpReport>,
}

impl PfaEstimator {
    pub fn from_correlation(sigma: &CorrelationMatrix, options: PfaOptions) -> Result<Self> {
        Self::from_eigensystem(&spectral_decompose(sigma)?, options)
    }

    pub fn from_eigensystem(system: &EigenSystem, options: PfaOptions) -> Result<Self> {
        let k = match options.k {
            Some(k) => k,
            None => select_num_factors(system.values(), options.epsilon)?,
        };
        let model = build_factor_model(system, k)?;
        Ok(Self { model, options })
    }

    pub fn model(&self) -> &FactorModel {
        &self.model
    }

    pub fn options(&self) -> &PfaOptions {
        &self.options
    }

    /// Recovers the factors from `z` and estimates the FDP at each threshold.
    pub fn estimate(&self, z: &[f64], thresholds: &[f64]) -> Result<PfaReport> {
        if let Some((i, _)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        let (set, fit) =
            estimate_factors(&self.model, z, self.options.fraction, &self.options.lad)?;
        let estimates = thresholds
            .iter()
            .map(|&t| estimate_fdp(t, z, &self.model, &fit.w_hat))
            .collect::<Result<Vec<_>>>()?;
        Ok(PfaReport {
            k: self.model.k(),
            m: set.len(),
            w_hat: fit.w_hat,
            lad_objective: fit.objective,
            converged: fit.converged,
            degenerate_rows: self.model.degenerate_rows().to_vec(),
            estimates,
        })
    }
}

/// One-shot estimation: decompose, select `k`, fit and estimate.
pub fn run_pfa(
    sigma: &CorrelationMatrix,
    z: &[f64],
    thresholds: &[f64],
    options: PfaOptions,
) -> Result<PfaReport> {
    PfaEstimator::from_correlation(sigma, options)?.estimate(z, thresholds)
}

//! Principal factor approximation (PFA) for multiple testing under
//! arbitrary dependence.
//!
//! Given correlated Z-statistics `Z ~ N(mu, Sigma)` with `Sigma` known, the
//! crate decomposes `Sigma` into a small number of principal factors plus a
//! weakly dependent remainder, recovers the realized factors from the data by
//! L1 regression and estimates the false discovery proportion at a fixed
//! p-value threshold. It also provides approximate FDR control by threshold
//! search, the Benjamini-Hochberg, Storey and Efron baselines, and the data
//! generating processes used to study all of them by simulation.
//!
//! Module map:
//!
//! * [`linalg`]: correlation matrices, eigensystems, matrix square roots.
//! * [`gauss`]: standard normal CDF, density, quantile and p-values.
//! * [`pfa`]: factor-count selection, factor models and FDP formulas.
//! * [`lad`]: calibration sets, L1 and least-squares factor recovery.
//! * [`fdr`]: approximate FDR control and baseline procedures.
//! * [`simgen`]: simulation scenarios and test-statistic sampling.
//! * [`pipeline`]: the end-to-end estimator from `(Sigma, z)` to a report.

pub mod error;
pub mod fdr;
pub mod gauss;
pub mod lad;
pub mod linalg;
pub mod pfa;
pub mod pipeline;
pub mod rng;
pub mod simgen;
mod sum;

pub use error::{Error, Result};
pub use sum::{compensated_sum, NeumaierSum};

//! Principal factor approximation of correlated Z-statistics.
//!
//! With `Sigma = sum_i lambda_i gamma_i gamma_i^T`, the leading `k` eigenpairs
//! give loadings `b_ih = sqrt(lambda_h) gamma_ih` and every statistic can be
//! written as `Z_i = mu_i + sum_h b_ih W_h + K_i` with weakly dependent
//! residuals `K_i`. Conditional on the realized factors `W`, the expected
//! number of null rejections at threshold `t` is
//! `sum_i [Phi(a_i (z_{t/2} + eta_i)) + Phi(a_i (z_{t/2} - eta_i))]` where
//! `eta_i = b_i . W` and `a_i = (1 - |b_i|^2)^{-1/2}`.

use crate::error::{Error, Result};
use crate::gauss::{half_threshold_quantile, norm_cdf, two_sided_pvalue};
use crate::linalg::{mat_vec, EigenSystem};
use crate::rng::{substream, Purpose};
use crate::NeumaierSum;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default tolerance of the factor-count rule.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Scale assigned to rows whose residual variance is numerically zero.
pub const DEGENERATE_SCALE: f64 = 1e6;

/// Residual variance below which a row is treated as degenerate.
const DEGENERATE_RESIDUAL: f64 = 1e-12;

/// Smallest `k` with `tail_energy(values, k) / sum(values) < epsilon`.
///
/// `values` must be sorted in descending order. `k = p` always qualifies.
pub fn select_num_factors(values: &[f64], epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain("epsilon", epsilon, "(0, 1)"));
    }
    let p = values.len();
    let total = crate::compensated_sum(values.iter().copied());
    if total <= 0.0 {
        return Ok(0);
    }
    // suffix[k] = lambda_{k+1}^2 + ... + lambda_p^2 (1-based), suffix[p] = 0.
    let mut suffix = vec![0.0; p + 1];
    let mut acc = NeumaierSum::new();
    for k in (0..p).rev() {
        acc.add(values[k] * values[k]);
        suffix[k] = acc.value();
    }
    Ok((0..=p)
        .find(|&k| suffix[k].sqrt() / total < epsilon)
        .unwrap_or(p))
}

/// Loadings, residual scales and the eigenvalues they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    loadings: DMatrix<f64>,
    a: Vec<f64>,
    eigenvalues: Vec<f64>,
    degenerate_rows: Vec<usize>,
}

impl FactorModel {
    /// Model built from explicit loadings, e.g. an exact multifactor model.
    ///
    /// The retained eigenvalues are the squared column norms of `loadings`.
    pub fn from_loadings(loadings: DMatrix<f64>) -> Result<Self> {
        let eigenvalues = loadings.column_iter().map(|c| c.norm_squared()).collect();
        Self::assemble(loadings, eigenvalues)
    }

    fn assemble(loadings: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        let p = loadings.nrows();
        let k = loadings.ncols();
        let mut a = Vec::with_capacity(p);
        let mut degenerate_rows = Vec::new();
        for i in 0..p {
            let mut energy = NeumaierSum::new();
            energy.extend((0..k).map(|h| loadings[(i, h)] * loadings[(i, h)]));
            let energy = energy.value();
            if energy > 1.0 + 1e-10 {
                return Err(Error::domain(
                    "row energy of loadings",
                    energy,
                    "at most one",
                ));
            }
            let residual = 1.0 - energy;
            if residual < DEGENERATE_RESIDUAL {
                a.push(DEGENERATE_SCALE);
                degenerate_rows.push(i);
            } else {
                a.push(residual.sqrt().recip().min(DEGENERATE_SCALE));
            }
        }
        Ok(Self {
            loadings,
            a,
            eigenvalues,
            degenerate_rows,
        })
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    /// `p x k` loadings; column `h` is `sqrt(lambda_h) gamma_h`.
    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Residual scales `a_i = (1 - sum_h b_ih^2)^{-1/2}`.
    pub fn scales(&self) -> &[f64] {
        &self.a
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Rows whose residual variance vanished and whose scale was capped.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate_rows
    }

    /// Loading rows restricted to `rows`, as an `m x k` design.
    pub fn loadings_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(rows.len(), k, |r, h| self.loadings[(rows[r], h)])
    }

    pub fn realize(&self, w: &[f64]) -> Result<FactorRealization> {
        if w.len() != self.k() {
            return Err(Error::DimensionMismatch {
                what: "factor vector length",
                expected: self.k(),
                got: w.len(),
            });
        }
        let eta = if self.k() == 0 {
            vec![0.0; self.p()]
        } else {
            mat_vec(&self.loadings, w)
        };
        Ok(FactorRealization { w: w.to_vec(), eta })
    }

    /// Expected null rejections of hypothesis `i` given `eta_i` and `z_{t/2}`.
    #[inline]
    fn null_term(&self, i: usize, eta: f64, z_half: f64, t: f64) -> f64 {
        let a = self.a[i];
        if eta == 0.0 && a == 1.0 {
            return t;
        }
        norm_cdf(a * (z_half + eta)) + norm_cdf(a * (z_half - eta))
    }

    /// Sum of [`Self::null_term`] over `subset` (all rows when `None`).
    fn null_sum(&self, eta: &[f64], z_half: f64, t: f64, subset: Option<&[usize]>) -> f64 {
        let mut acc = NeumaierSum::new();
        match subset {
            None => acc.extend((0..self.p()).map(|i| self.null_term(i, eta[i], z_half, t))),
            Some(idx) => acc.extend(idx.iter().map(|&i| self.null_term(i, eta[i], z_half, t))),
        }
        acc.value()
    }
}

/// Builds the `k`-factor model from an eigensystem.
///
/// Rows with residual variance below `1e-12` get `a_i = 1e6` and are listed in
/// [`FactorModel::degenerate_rows`].
pub fn build_factor_model(system: &EigenSystem, k: usize) -> Result<FactorModel> {
    let p = system.dim();
    if k > p {
        return Err(Error::IndexOutOfRange { index: k, max: p });
    }
    let stored = system.stored();
    let values = system.values();
    let vectors = system.vectors();
    let mut loadings = DMatrix::zeros(p, k);
    for h in 0..k.min(stored) {
        let s = values[h].sqrt();
        for i in 0..p {
            loadings[(i, h)] = s * vectors[(i, h)];
        }
    }
    FactorModel::assemble(loadings, values.to_vec())
}

/// Realized factor values `W` and the induced shifts `eta = B W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRealization {
    pub w: Vec<f64>,
    pub eta: Vec<f64>,
}

fn check_subset(subset: Option<&[usize]>, p: usize) -> Result<()> {
    if let Some(idx) = subset {
        if let Some(&bad) = idx.iter().find(|&&i| i >= p) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                max: p - 1,
            });
        }
    }
    Ok(())
}

/// `sum_{i in subset} [Phi(a_i (z_{t/2} + eta_i)) + Phi(a_i (z_{t/2} - eta_i))]`.
///
/// With `subset = None` this is the conservative surrogate over all
/// hypotheses; over the true nulls it is the limiting false-discovery count.
pub fn fdp_numerator(
    t: f64,
    model: &FactorModel,
    real: &FactorRealization,
    subset: Option<&[usize]>,
) -> Result<f64> {
    let z_half = half_threshold_quantile(t)?;
    check_subset(subset, model.p())?;
    Ok(model.null_sum(&real.eta, z_half, t, subset))
}

/// Limiting FDP given the realized factors, the signals `mu` and the set of
/// true nulls.
pub fn fdp_limit(
    t: f64,
    model: &FactorModel,
    mu: &[f64],
    true_nulls: &[usize],
    real: &FactorRealization,
) -> Result<f64> {
    let z_half = half_threshold_quantile(t)?;
    let p = model.p();
    if mu.len() != p {
        return Err(Error::DimensionMismatch {
            what: "signal vector length",
            expected: p,
            got: mu.len(),
        });
    }
    check_subset(Some(true_nulls), p)?;
    let numerator = model.null_sum(&real.eta, z_half, t, Some(true_nulls));
    let mut denominator = NeumaierSum::new();
    for i in 0..p {
        if mu[i] == 0.0 {
            denominator.add(model.null_term(i, real.eta[i], z_half, t));
        } else {
            let a = model.a[i];
            let shift = real.eta[i] + mu[i];
            denominator.add(norm_cdf(a * (z_half + shift)) + norm_cdf(a * (z_half - shift)));
        }
    }
    let denominator = denominator.value();
    if denominator < 1e-300 {
        return Ok(0.0);
    }
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Estimated FDP at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdpReport {
    pub t: f64,
    /// `R(t)`, the number of p-values at or below `t`.
    pub rejections: usize,
    /// `min(surrogate numerator, R(t))`.
    pub false_count: f64,
    pub fdp: f64,
}

/// Number of two-sided p-values at or below `t`.
pub fn count_rejections(z: &[f64], t: f64) -> usize {
    z.iter().filter(|&&zi| two_sided_pvalue(zi) <= t).count()
}

/// PFA estimate of the FDP at threshold `t` given estimated factors `w_hat`.
pub fn estimate_fdp(t: f64, z: &[f64], model: &FactorModel, w_hat: &[f64]) -> Result<FdpReport> {
    if z.len() != model.p() {
        return Err(Error::DimensionMismatch {
            what: "z-statistic count",
            expected: model.p(),
            got: z.len(),
        });
    }
    let real = model.realize(w_hat)?;
    let numerator = fdp_numerator(t, model, &real, None)?;
    let rejections = count_rejections(z, t);
    if rejections == 0 {
        return Ok(FdpReport {
            t,
            rejections,
            false_count: 0.0,
            fdp: 0.0,
        });
    }
    let r = rejections as f64;
    let false_count = numerator.min(r);
    Ok(FdpReport {
        t,
        rejections,
        false_count,
        fdp: false_count / r,
    })
}

/// `n` independent standard normal `k`-vectors, draw `j` taken from its own
/// substream of `seed`.
pub fn draw_factors(k: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, Purpose::FactorDraws, j as u64);
            (0..k).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect()
}

/// Unbiased sample variance, accumulated in index order.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = crate::compensated_sum(xs.iter().copied()) / n as f64;
    crate::compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1) as f64
}

/// Monte-Carlo variance of [`fdp_numerator`] over `W ~ N_k(0, I)`.
pub fn variance_of_false_count(
    t: f64,
    model: &FactorModel,
    subset: Option<&[usize]>,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc < 2 {
        return Err(Error::domain("n_mc", n_mc as f64, "at least 2"));
    }
    let z_half = half_threshold_quantile(t)?;
    check_subset(subset, model.p())?;
    if model.k() == 0 {
        return Ok(0.0);
    }
    let values: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, Purpose::FactorDraws, j as u64);
            let w: Vec<f64> = (0..model.k()).map(|_| rng.sample(StandardNormal)).collect();
            let eta = mat_vec(&model.loadings, &w);
            model.null_sum(&eta, z_half, t, subset)
        })
        .collect();
    Ok(sample_variance(&values))
}

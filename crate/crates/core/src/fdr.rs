//! FDR control and baseline procedures.

use crate::error::{Error, Result};
use crate::gauss::{half_threshold_quantile, norm_pdf, truncated_variance_sensitivity};
use crate::linalg::mat_vec;
use crate::pfa::{draw_factors, sample_variance, FactorModel};
use crate::NeumaierSum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

pub const DEFAULT_MC_DRAWS: usize = 10_000;
pub const DEFAULT_SOLVER_TOL: f64 = 1e-4;

/// Search interval for the threshold solver.
pub const T_MIN: f64 = 1e-12;
pub const T_MAX: f64 = 0.5;

/// Above this many stored entries the factor shifts are recomputed per
/// evaluation instead of cached.
const ETA_CACHE_LIMIT: usize = 25_000_000;

/// Monte-Carlo mean and standard deviation of the integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub sd: f64,
}

/// `FDR(t) ~ E[N(t) / (N(t) + p1)]` with `N(t)` the all-hypothesis surrogate
/// numerator, evaluated on one fixed set of factor draws.
///
/// Reusing the draws across thresholds makes the estimated curve exactly
/// nondecreasing in `t`, since every integrand is.
pub struct FdrCurve<'m> {
    model: &'m FactorModel,
    p1: usize,
    draws: Vec<Vec<f64>>,
    etas: Option<Vec<Vec<f64>>>,
}

impl<'m> FdrCurve<'m> {
    pub fn new(model: &'m FactorModel, p1: usize, n_mc: usize, seed: u64) -> Result<Self> {
        if p1 > model.p() {
            return Err(Error::domain("p1", p1 as f64, "at most p"));
        }
        if n_mc == 0 {
            return Err(Error::domain("n_mc", 0.0, "at least 1"));
        }
        let k = model.k();
        let draws = if k == 0 {
            Vec::new()
        } else {
            draw_factors(k, n_mc, seed)
        };
        let etas = if k > 0 && n_mc.saturating_mul(model.p()) <= ETA_CACHE_LIMIT {
            Some(
                draws
                    .par_iter()
                    .map(|w| mat_vec(model.loadings(), w))
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            model,
            p1,
            draws,
            etas,
        })
    }

    pub fn draws(&self) -> usize {
        self.draws.len()
    }

    fn ratio(&self, numerator: f64) -> f64 {
        let denom = numerator + self.p1 as f64;
        if denom > 0.0 {
            numerator / denom
        } else {
            0.0
        }
    }

    /// Per-draw integrand values at `t`, in draw order.
    pub fn integrand(&self, t: f64) -> Result<Vec<f64>> {
        let z_half = half_threshold_quantile(t)?;
        let model = self.model;
        if model.k() == 0 {
            // Every null term equals t exactly.
            let n = model.p() as f64 * t;
            return Ok(vec![self.ratio(n)]);
        }
        let values = match &self.etas {
            Some(etas) => etas
                .par_iter()
                .map(|eta| self.ratio(surrogate(model, eta, z_half, t)))
                .collect(),
            None => self
                .draws
                .par_iter()
                .map(|w| {
                    let eta = mat_vec(model.loadings(), w);
                    self.ratio(surrogate(model, &eta, z_half, t))
                })
                .collect(),
        };
        Ok(values)
    }

    pub fn evaluate(&self, t: f64) -> Result<McEstimate> {
        let values = self.integrand(t)?;
        let mean = crate::compensated_sum(values.iter().copied()) / values.len() as f64;
        Ok(McEstimate {
            mean,
            sd: sample_variance(&values).sqrt(),
        })
    }
}

fn surrogate(model: &FactorModel, eta: &[f64], z_half: f64, t: f64) -> f64 {
    let a = model.scales();
    let mut acc = NeumaierSum::new();
    for i in 0..eta.len() {
        if eta[i] == 0.0 && a[i] == 1.0 {
            acc.add(t);
        } else {
            acc.add(
                crate::gauss::norm_cdf(a[i] * (z_half + eta[i]))
                    + crate::gauss::norm_cdf(a[i] * (z_half - eta[i])),
            );
        }
    }
    acc.value()
}

/// Approximate FDR at threshold `t` when `p1` false nulls carry strong signals.
pub fn approx_fdr(t: f64, model: &FactorModel, p1: usize, n_mc: usize, seed: u64) -> Result<f64> {
    Ok(FdrCurve::new(model, p1, n_mc, seed)?.evaluate(t)?.mean)
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub alpha: f64,
    pub t_star: f64,
    pub fdr_at_t: f64,
    pub mc_draws: usize,
    pub seed: u64,
    pub iterations: usize,
}

/// Solves `FDR(t) = alpha` on `[1e-12, 0.5]` by bisection on the common
/// random numbers of one [`FdrCurve`].
///
/// The midpoint is taken geometrically since `t` spans many decades.
pub fn solve_threshold(
    alpha: f64,
    model: &FactorModel,
    p1: usize,
    n_mc: usize,
    tol: f64,
    seed: u64,
) -> Result<ControlResult> {
    let curve = FdrCurve::new(model, p1, n_mc, seed)?;
    solve_on_curve(alpha, &curve, tol, seed)
}

pub fn solve_on_curve(
    alpha: f64,
    curve: &FdrCurve<'_>,
    tol: f64,
    seed: u64,
) -> Result<ControlResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain("alpha", alpha, "(0, 1)"));
    }
    let fdr = |t: f64| curve.evaluate(t).map(|e| e.mean);
    let result = |t: f64, value: f64, iterations: usize| ControlResult {
        alpha,
        t_star: t,
        fdr_at_t: value,
        mc_draws: curve.draws(),
        seed,
        iterations,
    };

    let (mut lo, mut hi) = (T_MIN, T_MAX);
    let f_hi = fdr(hi)?;
    if f_hi < alpha - tol {
        return Err(Error::Unreachable {
            alpha,
            boundary_t: hi,
            boundary_fdr: f_hi,
        });
    }
    let f_lo = fdr(lo)?;
    if f_lo > alpha + tol {
        return Err(Error::Unreachable {
            alpha,
            boundary_t: lo,
            boundary_fdr: f_lo,
        });
    }
    if (f_lo - alpha).abs() <= tol {
        return Ok(result(lo, f_lo, 0));
    }
    if (f_hi - alpha).abs() <= tol {
        return Ok(result(hi, f_hi, 0));
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mid = (lo * hi).sqrt();
        let f_mid = fdr(mid)?;
        if (f_mid - alpha).abs() <= tol || hi - lo < 1e-14 || iterations >= 200 {
            return Ok(result(mid, f_mid, iterations));
        }
        if f_mid < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Rejected hypotheses and the p-value cutoff that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSet {
    pub indices: Vec<usize>,
    pub threshold: f64,
}

impl RejectionSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn at_threshold(pvalues: &[f64], threshold: f64) -> Self {
        let indices = pvalues
            .iter()
            .enumerate()
            .filter(|(_, &p)| p <= threshold)
            .map(|(i, _)| i)
            .collect();
        Self { indices, threshold }
    }
}

/// Step-up rule: with `p_(1) <= ... <= p_(p)` sorted, reject `p_(i)` for
/// `i <= max{i : p_(i) <= i alpha / m}` where `m = pvalues.len() * scale`.
fn step_up(pvalues: &[f64], alpha: f64, effective_nulls: f64) -> RejectionSet {
    let mut sorted: Vec<f64> = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k_hat = sorted
        .iter()
        .enumerate()
        .filter(|(i, &p)| p <= (*i as f64 + 1.0) * alpha / effective_nulls)
        .map(|(i, _)| i + 1)
        .last()
        .unwrap_or(0);
    if k_hat == 0 {
        return RejectionSet {
            indices: Vec::new(),
            threshold: 0.0,
        };
    }
    RejectionSet::at_threshold(pvalues, k_hat as f64 * alpha / effective_nulls)
}

/// Benjamini-Hochberg step-up procedure at level `alpha`.
pub fn bh_procedure(pvalues: &[f64], alpha: f64) -> RejectionSet {
    step_up(pvalues, alpha, pvalues.len() as f64)
}

/// Estimated number of true nulls `#{P_i > lambda} / (1 - lambda)`, capped at `p`.
pub fn storey_null_count(pvalues: &[f64], lambda_param: f64) -> f64 {
    let above = pvalues.iter().filter(|&&p| p > lambda_param).count() as f64;
    (above / (1.0 - lambda_param)).min(pvalues.len() as f64)
}

/// Storey's fixed-threshold estimate `p0_hat t / max(R(t), 1)`, at most one.
pub fn storey_estimate(pvalues: &[f64], t: f64, lambda_param: f64) -> Result<f64> {
    if !(lambda_param > 0.0 && lambda_param < 1.0) {
        return Err(Error::domain("lambda", lambda_param, "(0, 1)"));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let p0 = storey_null_count(pvalues, lambda_param);
    let r = pvalues.iter().filter(|&&p| p <= t).count().max(1) as f64;
    Ok((p0 * t / r).clamp(0.0, 1.0))
}

/// Storey's adaptive step-up procedure: Benjamini-Hochberg with the null
/// count `p` replaced by its estimate (at least one).
pub fn storey_procedure(pvalues: &[f64], alpha: f64, lambda_param: f64) -> Result<RejectionSet> {
    if !(lambda_param > 0.0 && lambda_param < 1.0) {
        return Err(Error::domain("lambda", lambda_param, "(0, 1)"));
    }
    let p0 = storey_null_count(pvalues, lambda_param).max(1.0);
    Ok(step_up(pvalues, alpha, p0))
}

/// Dispersion variate estimated from the central statistics `|z_i| <= x0`.
///
/// Under the dispersion model the null statistics look like
/// `N(0, 1 + sqrt(2) A)`. Linearizing the variance of that law truncated to
/// `[-x0, x0]` around `A = 0` gives
/// `A_hat = (s^2 - v0) / (sqrt(2) v0 r0)`, with `s^2` the sample variance of
/// the central statistics and `(v0, r0)` from
/// [`truncated_variance_sensitivity`].
pub fn efron_dispersion(z: &[f64], x0: f64) -> Result<f64> {
    if !(x0 > 0.0) {
        return Err(Error::domain("x0", x0, "(0, inf)"));
    }
    let central: Vec<f64> = z.iter().copied().filter(|v| v.abs() <= x0).collect();
    if central.len() < 2 {
        return Ok(0.0);
    }
    let s2 = sample_variance(&central);
    let (v0, r0) = truncated_variance_sensitivity(x0);
    Ok((s2 - v0) / (SQRT_2 * v0 * r0))
}

/// `p0 t [1 + 2 A (-z_{t/2}) phi(z_{t/2}) / (sqrt(2) t)] / R(t)` for a given
/// dispersion `A`, clipped to `[0, 1]`; zero when nothing is rejected.
pub fn efron_estimate_with_dispersion(
    z: &[f64],
    t: f64,
    p0: usize,
    dispersion: f64,
) -> Result<f64> {
    let z_half = half_threshold_quantile(t)?;
    let r = crate::pfa::count_rejections(z, t);
    if r == 0 {
        return Ok(0.0);
    }
    let inflation = 1.0 + 2.0 * dispersion * (-z_half) * norm_pdf(z_half) / (SQRT_2 * t);
    Ok((p0 as f64 * t * inflation / r as f64).clamp(0.0, 1.0))
}

/// Efron's dispersion-variate FDP estimate with `A` fitted on `|z| <= x0`.
pub fn efron_estimate(z: &[f64], t: f64, p0: usize, x0: f64) -> Result<f64> {
    let dispersion = efron_dispersion(z, x0)?;
    efron_estimate_with_dispersion(z, t, p0, dispersion)
}

/// The dispersion implied by the factor model for given shifts `eta_hat`:
/// `(sqrt(2) p0)^{-1} sum_{true nulls} (eta_i^2 - E eta_i^2)` with
/// `E eta_i^2 = sum_h b_ih^2`. Diagnostic only.
pub fn factor_implied_dispersion(
    model: &FactorModel,
    eta_hat: &[f64],
    true_nulls: &[usize],
) -> Result<f64> {
    if eta_hat.len() != model.p() {
        return Err(Error::DimensionMismatch {
            what: "shift vector length",
            expected: model.p(),
            got: eta_hat.len(),
        });
    }
    if true_nulls.is_empty() {
        return Ok(0.0);
    }
    let b = model.loadings();
    let mut acc = NeumaierSum::new();
    for &i in true_nulls {
        if i >= model.p() {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: model.p() - 1,
            });
        }
        let expected: f64 = b.row(i).iter().map(|v| v * v).sum();
        acc.add(eta_hat[i] * eta_hat[i] - expected);
    }
    Ok(acc.value() / (SQRT_2 * true_nulls.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{spectral_decompose, CorrelationMatrix};
    use crate::pfa::build_factor_model;
    use nalgebra::DMatrix;

    fn independent_model(p: usize) -> FactorModel {
        build_factor_model(
            &spectral_decompose(&CorrelationMatrix::identity(p)).unwrap(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn approx_fdr_without_factors_is_closed_form() {
        let model = independent_model(2000);
        let v = approx_fdr(0.001, &model, 10, 100, 1).unwrap();
        assert!((v - 2.0 / 12.0).abs() < 1e-12);
        let v = approx_fdr(0.01, &model, 0, 100, 1).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn approx_fdr_without_false_nulls_is_one() {
        let model = FactorModel::from_loadings(DMatrix::from_element(30, 1, 0.7)).unwrap();
        let v = approx_fdr(0.05, &model, 0, 200, 3).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_threshold_inversion() {
        let model = independent_model(2000);
        let res = solve_threshold(0.15, &model, 10, 100, 1e-4, 0).unwrap();
        // 2000 t / (2000 t + 10) = 0.15  =>  t = 1.5 / 1700.
        assert!((res.t_star - 1.5 / 1700.0).abs() < 1e-6, "{}", res.t_star);
        assert!((res.t_star - 8.824e-4).abs() < 1e-6);
        assert!((res.fdr_at_t - 0.15).abs() <= 1e-4);
    }

    #[test]
    fn unreachable_targets_report_the_boundary() {
        let model = independent_model(2000);
        match solve_threshold(1e-12, &model, 10, 100, 1e-14, 0) {
            Err(Error::Unreachable { boundary_t, .. }) => assert_eq!(boundary_t, T_MIN),
            other => panic!("unexpected {other:?}"),
        }
        // FDR(0.5) = 1000 / 1010 with p1 = 10.
        match solve_threshold(0.999, &model, 10, 100, 1e-6, 0) {
            Err(Error::Unreachable { boundary_t, .. }) => assert_eq!(boundary_t, T_MAX),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bh_examples() {
        let r = bh_procedure(&[0.001, 0.02, 0.9], 0.05);
        assert_eq!(r.indices, vec![0, 1]);
        assert!((r.threshold - 2.0 * 0.05 / 3.0).abs() < 1e-15);
        assert!(bh_procedure(&[1.0; 5], 0.05).is_empty());
        assert_eq!(bh_procedure(&[0.0; 4], 0.05).len(), 4);
    }

    #[test]
    fn storey_examples() {
        let p: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert_eq!(storey_null_count(&p, 0.5), 100.0);
        // R(0.001) = 0, so the denominator guard applies: 100 * 0.001 / 1.
        assert!((storey_estimate(&p, 0.001, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(storey_estimate(&p, 0.0, 0.5).unwrap(), 0.0);
        assert!(storey_estimate(&p, 0.1, 1.0).is_err());
    }

    #[test]
    fn efron_with_zero_dispersion_is_ratio() {
        let mut z = vec![0.1; 50];
        z[0] = 4.0;
        z[1] = -4.5;
        let v = efron_estimate_with_dispersion(&z, 0.01, 48, 0.0).unwrap();
        assert!((v - 48.0 * 0.01 / 2.0).abs() < 1e-15);
        assert_eq!(efron_estimate(&[0.0; 10], 0.001, 10, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn efron_dispersion_tracks_the_spread() {
        // Quantiles of N(0, s^2) at evenly spaced probabilities.
        let sample = |s: f64| -> Vec<f64> {
            (0..20_000)
                .map(|i| s * crate::gauss::norm_quantile((i as f64 + 0.5) / 20_000.0).unwrap())
                .collect()
        };
        let a0 = efron_dispersion(&sample(1.0), 1.0).unwrap();
        assert!(a0.abs() < 5e-3, "{a0}");
        // Small inflation: N(0, 1 + sqrt(2) A) with A = 0.02.
        let a = 0.02;
        let got = efron_dispersion(&sample((1.0 + SQRT_2 * a).sqrt()), 1.0).unwrap();
        assert!((got - a).abs() < 5e-3, "{got}");
    }
}

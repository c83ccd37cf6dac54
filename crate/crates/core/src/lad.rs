//! Recovery of the realized factors from observed statistics.
//!
//! Large `|z_i|` are where the signals live, so the factors are fitted on the
//! calibration set of statistics with the smallest absolute values, where
//! `z_i ~ b_i . W + K_i` holds approximately.

use crate::error::{Error, Result};
use crate::pfa::FactorModel;
use crate::NeumaierSum;
use nalgebra::{DMatrix, DVector};

/// Share of statistics used for fitting when nothing else is specified.
pub const DEFAULT_FRACTION: f64 = 0.75;

/// Indices of the `m = round(fraction p)` smallest `|z_i|`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub indices: Vec<usize>,
    pub fraction: f64,
}

impl CalibrationSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn select_calibration_set(z: &[f64], fraction: f64) -> Result<CalibrationSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain("fraction", fraction, "(0, 1]"));
    }
    let p = z.len();
    let m = ((fraction * p as f64).round() as usize).min(p);
    if m == 0 {
        return Err(Error::EmptySet { fraction, p });
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()).then(a.cmp(&b)));
    let mut indices = order[..m].to_vec();
    indices.sort_unstable();
    Ok(CalibrationSet { indices, fraction })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadOptions {
    /// Optimality tolerance on the subgradient certificate.
    pub tol: f64,
    /// Cap on basis-exchange steps.
    pub max_iter: usize,
    /// Reweighted least-squares passes used to find a starting basis.
    pub warm_start_iters: usize,
}

impl Default for LadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            warm_start_iters: 7,
        }
    }
}

/// Result of an L1 fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub w_hat: Vec<f64>,
    /// `sum_i |z_i - b_i . w_hat|` over the fitted rows.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `sum_i |z_i - x_i . w|`.
pub fn l1_objective(x: &DMatrix<f64>, z: &[f64], w: &[f64]) -> f64 {
    let r = residuals(x, z, w);
    crate::compensated_sum(r.iter().map(|v| v.abs()))
}

fn residuals(x: &DMatrix<f64>, z: &[f64], w: &[f64]) -> Vec<f64> {
    if x.ncols() == 0 {
        return z.to_vec();
    }
    let fitted = x * DVector::from_column_slice(w);
    z.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Residuals at or below this magnitude count as exact zeros.
fn zero_tolerance(z: &[f64]) -> f64 {
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-12 * (1.0 + scale)
}

/// Checks the L1 optimality conditions coordinate by coordinate:
/// `|sum_i x_ih sign(r_i)| <= sum_{r_i = 0} |x_ih| + tol sum_i |x_ih|`.
pub fn subgradient_certificate(x: &DMatrix<f64>, z: &[f64], w: &[f64], tol: f64) -> bool {
    let r = residuals(x, z, w);
    let zero = zero_tolerance(z);
    (0..x.ncols()).all(|h| {
        let mut signed = NeumaierSum::new();
        let mut slack = NeumaierSum::new();
        let mut total = NeumaierSum::new();
        for (i, &ri) in r.iter().enumerate() {
            let xih = x[(i, h)];
            total.add(xih.abs());
            if ri.abs() <= zero {
                slack.add(xih.abs());
            } else {
                signed.add(xih * ri.signum());
            }
        }
        signed.value().abs() <= slack.value() + tol * total.value()
    })
}

/// Least-absolute-deviation regression `argmin_w sum_i |z_i - x_i . w|`.
///
/// A few reweighted least-squares passes on the smoothed loss
/// `sqrt(r^2 + s^2)`, with `s` shrinking from 1e-2 towards 1e-8, locate a
/// good starting basis of `k` rows. Basis-exchange steps then move between
/// vertices of the L1 problem, each one a weighted-median line search along
/// an edge, until no edge descends. The result interpolates `k` rows
/// exactly and satisfies [`subgradient_certificate`].
pub fn lad_regress(x: &DMatrix<f64>, z: &[f64], opts: &LadOptions) -> Result<FactorFit> {
    let (m, k) = x.shape();
    if z.len() != m {
        return Err(Error::DimensionMismatch {
            what: "response length",
            expected: m,
            got: z.len(),
        });
    }
    if k == 0 {
        return Err(Error::RankDeficient { rank: 0, k });
    }
    if m < k {
        return Err(Error::RankDeficient { rank: m, k });
    }
    // Row i of x is column i of xt.
    let xt = x.transpose();
    let start = warm_start(x, z, opts.warm_start_iters);
    let r0 = residuals(x, z, &start);
    let basis = select_basis(&xt, &r0)?;
    let mut solver = Vertex::new(&xt, z, basis)?;
    let (iterations, converged) = solver.descend(opts.tol, opts.max_iter);

    let mut w_hat = solver.beta.as_slice().to_vec();
    let mut objective = l1_objective(x, z, &w_hat);
    let at_zero = crate::compensated_sum(z.iter().map(|v| v.abs()));
    if objective > at_zero {
        w_hat = vec![0.0; k];
        objective = at_zero;
    }
    Ok(FactorFit {
        w_hat,
        objective,
        iterations,
        converged,
    })
}

fn weighted_least_squares(
    x: &DMatrix<f64>,
    z: &[f64],
    weights: Option<&[f64]>,
) -> Option<DVector<f64>> {
    let mut xw = x.clone();
    let mut zw = DVector::from_column_slice(z);
    if let Some(wts) = weights {
        for (i, &wi) in wts.iter().enumerate() {
            let s = wi.sqrt();
            xw.row_mut(i).scale_mut(s);
            zw[i] *= s;
        }
    }
    let gram = xw.tr_mul(&xw);
    let rhs = xw.tr_mul(&zw);
    gram.cholesky().map(|c| c.solve(&rhs))
}

fn warm_start(x: &DMatrix<f64>, z: &[f64], iters: usize) -> Vec<f64> {
    let k = x.ncols();
    let mut beta = match weighted_least_squares(x, z, None) {
        Some(b) => b,
        None => return vec![0.0; k],
    };
    let mut smoothing = 1e-2;
    for _ in 0..iters {
        let r = residuals(x, z, beta.as_slice());
        let weights: Vec<f64> = r
            .iter()
            .map(|ri| (ri * ri + smoothing * smoothing).sqrt().recip())
            .collect();
        match weighted_least_squares(x, z, Some(&weights)) {
            Some(b) => beta = b,
            None => break,
        }
        smoothing = (smoothing * 0.1).max(1e-8);
    }
    beta.as_slice().to_vec()
}

/// Greedily picks `k` linearly independent rows, smallest residuals first.
fn select_basis(xt: &DMatrix<f64>, r: &[f64]) -> Result<Vec<usize>> {
    let (k, m) = xt.shape();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut basis = Vec::with_capacity(k);
    for &i in &order {
        let row = xt.column(i);
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone_owned();
        for _ in 0..2 {
            for qj in &q {
                let proj = qj.dot(&v);
                v.axpy(-proj, qj, 1.0);
            }
        }
        let vn = v.norm();
        if vn > 1e-9 * norm {
            q.push(v / vn);
            basis.push(i);
            if basis.len() == k {
                return Ok(basis);
            }
        }
    }
    Err(Error::RankDeficient {
        rank: basis.len(),
        k,
    })
}

/// A vertex of the L1 problem: `k` rows fitted exactly.
struct Vertex<'a> {
    xt: &'a DMatrix<f64>,
    z: &'a [f64],
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Inverse of the `k x k` matrix whose rows are the basis rows.
    inverse: DMatrix<f64>,
    beta: DVector<f64>,
    r: Vec<f64>,
    zero: f64,
}

const REFACTOR_EVERY: usize = 32;

impl<'a> Vertex<'a> {
    fn new(xt: &'a DMatrix<f64>, z: &'a [f64], basis: Vec<usize>) -> Result<Self> {
        let m = xt.ncols();
        let k = xt.nrows();
        let mut in_basis = vec![false; m];
        for &i in &basis {
            in_basis[i] = true;
        }
        let mut v = Self {
            xt,
            z,
            basis,
            in_basis,
            inverse: DMatrix::zeros(k, k),
            beta: DVector::zeros(k),
            r: vec![0.0; m],
            zero: zero_tolerance(z),
        };
        v.refactor()?;
        Ok(v)
    }

    fn refactor(&mut self) -> Result<()> {
        let k = self.xt.nrows();
        let rows = DMatrix::from_fn(k, k, |j, h| self.xt[(h, self.basis[j])]);
        let inverse = rows
            .try_inverse()
            .ok_or(Error::RankDeficient { rank: k - 1, k })?;
        let zb = DVector::from_fn(k, |j, _| self.z[self.basis[j]]);
        self.beta = &inverse * zb;
        self.inverse = inverse;
        let fitted = self.xt.tr_mul(&self.beta);
        for i in 0..self.r.len() {
            self.r[i] = if self.in_basis[i] {
                0.0
            } else {
                self.z[i] - fitted[i]
            };
        }
        Ok(())
    }

    /// Runs exchange steps until optimal or out of budget.
    fn descend(&mut self, tol: f64, max_iter: usize) -> (usize, bool) {
        let m = self.r.len();
        let k = self.xt.nrows();
        let mut iterations = 0;
        let mut breakpoints: Vec<(f64, f64, usize)> = Vec::with_capacity(m);
        loop {
            // g = sum over non-basis rows of sign(r_i) x_i, zero residuals excluded.
            let mut g = DVector::zeros(k);
            let mut zero_rows = Vec::new();
            for i in 0..m {
                if self.in_basis[i] {
                    continue;
                }
                let ri = self.r[i];
                if ri.abs() <= self.zero {
                    zero_rows.push(i);
                } else {
                    g.axpy(ri.signum(), &self.xt.column(i), 1.0);
                }
            }
            // u_j = g . d_j with d_j the j-th column of the inverse.
            let u = self.inverse.tr_mul(&g);
            let mut candidates: Vec<usize> = (0..k).filter(|&j| u[j].abs() > 1.0 + tol).collect();
            if candidates.is_empty() {
                return (iterations, true);
            }
            if iterations >= max_iter {
                return (iterations, false);
            }
            candidates.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()));

            let mut step = None;
            for &j in &candidates {
                let sign = u[j].signum();
                let d = self.inverse.column(j) * sign;
                let mut slope = 1.0 - u[j].abs();
                for &i in &zero_rows {
                    slope += self.xt.column(i).dot(&d).abs();
                }
                if slope < -tol {
                    step = Some((j, d, slope));
                    break;
                }
            }
            let Some((leave, d, mut slope)) = step else {
                return (iterations, true);
            };

            // Directional changes of every residual along d.
            let c = self.xt.tr_mul(&d);
            breakpoints.clear();
            for i in 0..m {
                if self.in_basis[i] || self.r[i].abs() <= self.zero {
                    continue;
                }
                let ci = c[i];
                if ci != 0.0 {
                    let tau = self.r[i] / ci;
                    if tau > 0.0 {
                        breakpoints.push((tau, 2.0 * ci.abs(), i));
                    }
                }
            }
            breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            let mut entering = None;
            for &(tau, weight, i) in &breakpoints {
                slope += weight;
                if slope >= 0.0 {
                    entering = Some((tau, i));
                    break;
                }
            }
            let Some((tau, enter)) = entering else {
                // Cannot happen for a full-rank basis; bail out with the current vertex.
                return (iterations, false);
            };

            // Move along the edge.
            self.beta.axpy(tau, &d, 1.0);
            for i in 0..m {
                if !self.in_basis[i] {
                    self.r[i] -= tau * c[i];
                }
            }
            let old = self.basis[leave];
            self.r[old] = -tau * self.xt.column(old).dot(&d);
            self.r[enter] = 0.0;

            // Rank-one update of the inverse for the replaced row.
            let v = self.xt.column(enter) - self.xt.column(old);
            let col = self.inverse.column(leave).clone_owned();
            let row = v.transpose() * &self.inverse;
            let denom = 1.0 + row[leave];
            self.inverse -= (&col * &row) / denom;

            self.in_basis[old] = false;
            self.in_basis[enter] = true;
            self.basis[leave] = enter;
            iterations += 1;

            if iterations % REFACTOR_EVERY == 0 && self.refactor().is_err() {
                return (iterations, false);
            }
        }
    }
}

/// Fits the factors of `model` on the calibration set of `z`.
///
/// With `k = 0` there is nothing to fit and the returned fit is empty.
pub fn estimate_factors(
    model: &FactorModel,
    z: &[f64],
    fraction: f64,
    opts: &LadOptions,
) -> Result<(CalibrationSet, FactorFit)> {
    if z.len() != model.p() {
        return Err(Error::DimensionMismatch {
            what: "z-statistic count",
            expected: model.p(),
            got: z.len(),
        });
    }
    let set = select_calibration_set(z, fraction)?;
    let z_sub: Vec<f64> = set.indices.iter().map(|&i| z[i]).collect();
    if model.k() == 0 {
        let objective = crate::compensated_sum(z_sub.iter().map(|v| v.abs()));
        return Ok((
            set,
            FactorFit {
                w_hat: Vec::new(),
                objective,
                iterations: 0,
                converged: true,
            },
        ));
    }
    let x = model.loadings_rows(&set.indices);
    let fit = lad_regress(&x, &z_sub, opts)?;
    Ok((set, fit))
}

/// Least-squares factors on all `p` statistics.
///
/// The loading columns are orthogonal with squared norms `lambda_h`, so the
/// normal equations are diagonal: `w_h = (b_h . z) / lambda_h`.
pub fn ls_regress(model: &FactorModel, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != model.p() {
        return Err(Error::DimensionMismatch {
            what: "z-statistic count",
            expected: model.p(),
            got: z.len(),
        });
    }
    let lambdas = model.eigenvalues();
    (0..model.k())
        .map(|h| {
            let lambda = lambdas[h];
            if lambda <= 0.0 {
                return Err(Error::ZeroEigenvalue { index: h });
            }
            let b = model.loadings().column(h);
            let dot = crate::compensated_sum(b.iter().zip(z).map(|(bi, zi)| bi * zi));
            Ok(dot / lambda)
        })
        .collect()
}

/// Bound `||mu||_2 (sum_{h<=k} 1/lambda_h)^{1/2}` on the least-squares bias
/// caused by ignoring the signals.
pub fn misspecification_bound(model: &FactorModel, mu: &[f64]) -> Result<f64> {
    if mu.len() != model.p() {
        return Err(Error::DimensionMismatch {
            what: "signal vector length",
            expected: model.p(),
            got: mu.len(),
        });
    }
    let mut inv = NeumaierSum::new();
    for (h, &lambda) in model.eigenvalues()[..model.k()].iter().enumerate() {
        if lambda <= 0.0 {
            return Err(Error::ZeroEigenvalue { index: h });
        }
        inv.add(lambda.recip());
    }
    let norm = crate::compensated_sum(mu.iter().map(|v| v * v)).sqrt();
    Ok(norm * inv.value().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_examples() {
        let set = select_calibration_set(&[3.0, -0.1, 0.5, -2.0], 0.5).unwrap();
        assert_eq!(set.indices, vec![1, 2]);
        let set = select_calibration_set(&[3.0, -0.1, 0.5, -2.0], 1.0).unwrap();
        assert_eq!(set.indices, vec![0, 1, 2, 3]);
        let z: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(select_calibration_set(&z, 0.75).unwrap().len(), 750);
    }

    #[test]
    fn calibration_ties_prefer_lower_index() {
        let set = select_calibration_set(&[1.0, -1.0, 1.0, 0.0], 0.5).unwrap();
        assert_eq!(set.indices, vec![0, 3]);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            select_calibration_set(&[1.0, 2.0], 0.1),
            Err(Error::EmptySet { .. })
        ));
        assert!(select_calibration_set(&[1.0], 0.0).is_err());
        assert!(select_calibration_set(&[1.0], 1.5).is_err());
    }

    #[test]
    fn single_constant_column_gives_median() {
        let c = 2.5;
        let z = [3.0, -1.0, 7.0, 0.5, 2.0, 10.0, -4.0];
        let x = DMatrix::from_element(z.len(), 1, c);
        let fit = lad_regress(&x, &z, &LadOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.w_hat[0] - 2.0 / c).abs() < 1e-12);
    }

    #[test]
    fn even_count_median_has_median_objective() {
        let z = [1.0, 4.0, -2.0, 9.0];
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = lad_regress(&x, &z, &LadOptions::default()).unwrap();
        let at_median = l1_objective(&x, &z, &[2.5]);
        assert!((fit.objective - at_median).abs() < 1e-12);
        assert!(fit.w_hat[0] >= 1.0 && fit.w_hat[0] <= 4.0);
    }

    #[test]
    fn exact_fit_is_recovered() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * (j + 2)) as f64 * 0.7).cos());
        let w0 = [0.4, -1.3, 2.2];
        let z: Vec<f64> = (0..30)
            .map(|i| (0..3).map(|j| x[(i, j)] * w0[j]).sum())
            .collect();
        let fit = lad_regress(&x, &z, &LadOptions::default()).unwrap();
        for (a, b) in fit.w_hat.iter().zip(w0) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(fit.objective < 1e-10);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DMatrix::from_fn(10, 2, |i, _| i as f64);
        let z: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(
            lad_regress(&x, &z, &LadOptions::default()),
            Err(Error::RankDeficient { rank: 1, k: 2 })
        ));
        let x = DMatrix::from_element(1, 2, 1.0);
        assert!(lad_regress(&x, &[1.0], &LadOptions::default()).is_err());
    }

    #[test]
    fn certificate_holds_at_the_solution_and_fails_elsewhere() {
        let x = DMatrix::from_fn(40, 2, |i, j| {
            ((i + 3 * j) as f64 * 1.3).sin() + 0.2 * j as f64
        });
        let z: Vec<f64> = (0..40)
            .map(|i| ((i * i) as f64 * 0.11).cos() * 3.0)
            .collect();
        let fit = lad_regress(&x, &z, &LadOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(subgradient_certificate(&x, &z, &fit.w_hat, 1e-8));
        let off = [fit.w_hat[0] + 0.5, fit.w_hat[1]];
        assert!(!subgradient_certificate(&x, &z, &off, 1e-8));
        assert!(fit.objective <= l1_objective(&x, &z, &[0.0, 0.0]));
    }

    #[test]
    fn least_squares_on_orthogonal_loadings() {
        // Two orthogonal columns with squared norms 4 and 1.
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, -0.5, 1.0, 0.5, 1.0, -0.5]);
        let model = FactorModel::from_loadings(b.clone() * 0.5).unwrap();
        let w0 = [1.5, -2.0];
        let z: Vec<f64> = (0..4)
            .map(|i| 0.5 * (b[(i, 0)] * w0[0] + b[(i, 1)] * w0[1]))
            .collect();
        let w = ls_regress(&model, &z).unwrap();
        assert!((w[0] - w0[0]).abs() < 1e-14 && (w[1] - w0[1]).abs() < 1e-14);
    }

    #[test]
    fn bound_examples() {
        // One flat factor with lambda_1 = 1000.5 on p = 2000 rows.
        let p = 2000;
        let lambda = 1000.5f64;
        let loadings = DMatrix::from_element(p, 1, (lambda / p as f64).sqrt());
        let model = FactorModel::from_loadings(loadings).unwrap();
        assert!((model.eigenvalues()[0] - lambda).abs() < 1e-9);
        let mut mu = vec![0.0; p];
        assert_eq!(misspecification_bound(&model, &mu).unwrap(), 0.0);
        mu[0] = 6.0;
        mu[1] = 8.0;
        let b = misspecification_bound(&model, &mu).unwrap();
        assert!((b - 10.0 / lambda.sqrt()).abs() < 1e-12);
        assert!((b - 0.3162).abs() < 1e-4);
        let zero = FactorModel::from_loadings(DMatrix::zeros(4, 1)).unwrap();
        assert!(matches!(
            misspecification_bound(&zero, &[1.0; 4]),
            Err(Error::ZeroEigenvalue { index: 0 })
        ));
    }
}

//! Dense symmetric linear algebra for correlation matrices.

use crate::error::{Error, Result};
use crate::NeumaierSum;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues above `-PSD_SLACK * p` are treated as rounding noise and
/// clamped to zero; anything lower is rejected.
pub const PSD_SLACK: f64 = 1e-8;

/// Tolerance on `|diag - 1|` accepted when wrapping an input matrix.
const DIAGONAL_SLACK: f64 = 1e-10;

/// A symmetric, unit-diagonal, positive semidefinite `p x p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Wraps `entries` after checking shape, finiteness, exact symmetry and
    /// the unit diagonal. The diagonal is snapped to exactly one.
    ///
    /// Positive semidefiniteness is only checked by [`spectral_decompose`].
    pub fn new(mut entries: DMatrix<f64>) -> Result<Self> {
        let p = entries.nrows();
        if entries.ncols() != p {
            return Err(Error::DimensionMismatch {
                what: "correlation matrix columns",
                expected: p,
                got: entries.ncols(),
            });
        }
        if p == 0 {
            return Err(Error::DimensionMismatch {
                what: "correlation matrix dimension",
                expected: 1,
                got: 0,
            });
        }
        for col in 0..p {
            for row in 0..p {
                if !entries[(row, col)].is_finite() {
                    return Err(Error::NonFinite { row, col });
                }
            }
        }
        for col in 0..p {
            for row in (col + 1)..p {
                if entries[(row, col)] != entries[(col, row)] {
                    return Err(Error::NotSymmetric { row, col });
                }
            }
        }
        for i in 0..p {
            let d = entries[(i, i)];
            if (d - 1.0).abs() > DIAGONAL_SLACK {
                return Err(Error::NotUnitDiagonal { index: i, value: d });
            }
            entries[(i, i)] = 1.0;
        }
        Ok(Self { entries })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            entries: DMatrix::identity(p, p),
        }
    }

    /// Off-diagonal entries all equal to `rho`.
    pub fn equicorrelation(p: usize, rho: f64) -> Self {
        let mut entries = DMatrix::from_element(p, p, rho);
        entries.fill_diagonal(1.0);
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }
}

/// Eigenvalues in descending order with their orthonormal eigenvectors.
///
/// `vectors` is `p x q` with `q <= p`. When `q < p` the system is thin: the
/// trailing `p - q` eigenvalues are exactly zero and their eigenvectors are
/// not stored, since they contribute nothing to `Sigma`, to the factor
/// loadings or to a square root of `Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// Builds a system from explicit parts, checking shapes and ordering.
    pub fn new(values: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        let p = values.len();
        if vectors.nrows() != p {
            return Err(Error::DimensionMismatch {
                what: "eigenvector length",
                expected: p,
                got: vectors.nrows(),
            });
        }
        if vectors.ncols() > p {
            return Err(Error::DimensionMismatch {
                what: "eigenvector count",
                expected: p,
                got: vectors.ncols(),
            });
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::domain(
                "eigenvalues",
                f64::NAN,
                "sorted in descending order",
            ));
        }
        let threshold = -PSD_SLACK * p as f64;
        if let Some(&v) = values.iter().find(|&&v| v < threshold) {
            return Err(Error::NotPsd {
                value: v,
                threshold,
            });
        }
        if values[vectors.ncols()..].iter().any(|&v| v != 0.0) {
            return Err(Error::domain(
                "eigenvalues",
                f64::NAN,
                "zero beyond the stored eigenvectors",
            ));
        }
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `p x q` matrix of stored eigenvectors, one per column.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Number of eigenvectors stored.
    pub fn stored(&self) -> usize {
        self.vectors.ncols()
    }

    /// `sum_i lambda_i gamma_i gamma_i^T` over the stored pairs.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = self.stored();
        let mut scaled = self.vectors.clone();
        for j in 0..q {
            let s = self.values[j];
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }
}

/// Full eigendecomposition of a correlation matrix.
///
/// Eigenvalues in `(-1e-8 p, 0)` are clamped to zero; lower ones are an error.
pub fn spectral_decompose(sigma: &CorrelationMatrix) -> Result<EigenSystem> {
    let p = sigma.dim();
    let eig = SymmetricEigen::new(sigma.as_matrix().clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let threshold = -PSD_SLACK * p as f64;
    let smallest = eig.eigenvalues[order[p - 1]];
    if smallest < threshold {
        return Err(Error::NotPsd {
            value: smallest,
            threshold,
        });
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(p, p, |row, col| eig.eigenvectors[(row, order[col])]);
    Ok(EigenSystem { values, vectors })
}

/// Eigendecomposition of `Sigma = F^T F` for a wide `n x p` factor `F`.
///
/// Works on the `n x n` Gram matrix `F F^T` and maps its eigenvectors back,
/// which costs `O(n^2 p)` instead of `O(p^3)`. A sample correlation matrix
/// built from `n` observations has this form with rank at most `n - 1`.
/// Eigenvalues below `1e-10 * trace` are treated as exact zeros.
pub fn spectral_decompose_factored(factor: &DMatrix<f64>) -> Result<EigenSystem> {
    let (n, p) = factor.shape();
    let gram = factor * factor.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let trace: f64 = eig.eigenvalues.iter().sum();
    let threshold = -PSD_SLACK * p as f64;
    if let Some(&i) = order.last() {
        if eig.eigenvalues[i] < threshold {
            return Err(Error::NotPsd {
                value: eig.eigenvalues[i],
                threshold,
            });
        }
    }
    let cutoff = 1e-10 * trace.max(f64::MIN_POSITIVE);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();

    let mut values = vec![0.0; p];
    let mut vectors = DMatrix::zeros(p, kept.len());
    for (j, &i) in kept.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        values[j] = lambda;
        let u = eig.eigenvectors.column(i);
        let mut gamma = factor.tr_mul(&u);
        gamma /= lambda.sqrt();
        vectors.set_column(j, &gamma);
    }
    Ok(EigenSystem { values, vectors })
}

/// `sqrt(lambda_{k+1}^2 + ... + lambda_p^2)`, the Frobenius norm of the
/// part of `Sigma` left after removing the leading `k` eigenpairs.
pub fn tail_energy(values: &[f64], k: usize) -> Result<f64> {
    if k > values.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            max: values.len(),
        });
    }
    let mut acc = NeumaierSum::new();
    acc.extend(values[k..].iter().map(|v| v * v));
    Ok(acc.value().sqrt())
}

/// Symmetric square root `M = sum_i sqrt(lambda_i) gamma_i gamma_i^T`.
pub fn symmetric_sqrt(system: &EigenSystem) -> Result<DMatrix<f64>> {
    let threshold = -PSD_SLACK * system.dim() as f64;
    if let Some(&v) = system.values.iter().find(|&&v| v < threshold) {
        return Err(Error::NotPsd {
            value: v,
            threshold,
        });
    }
    let q = system.stored();
    let mut scaled = system.vectors.clone();
    for j in 0..q {
        let s = system.values[j].max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * system.vectors.transpose())
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// `loadings * w` without allocating a matrix for `w`.
pub(crate) fn mat_vec(m: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), w.len());
    let v = m * DVector::from_column_slice(w);
    v.as_slice().to_vec()
}

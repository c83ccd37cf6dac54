use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },

    #[error("matrix is not a correlation matrix: diagonal entry {index} is {value}")]
    NotUnitDiagonal { index: usize, value: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {value} is below {threshold}")]
    NotPsd { value: f64, threshold: f64 },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("index {index} is out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("argument {name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("design matrix is rank deficient (rank {rank} < {k})")]
    RankDeficient { rank: usize, k: usize },

    #[error("eigenvalue {index} is zero; the factor cannot be inverted")]
    ZeroEigenvalue { index: usize },

    #[error("calibration set is empty (fraction {fraction} of {p} statistics)")]
    EmptySet { fraction: f64, p: usize },

    #[error("column {column} of the design is constant")]
    ConstantColumn { column: usize },

    #[error(
        "target FDR {alpha} is unreachable: FDR({boundary_t:e}) = {boundary_fdr} on the search boundary"
    )]
    Unreachable {
        alpha: f64,
        boundary_t: f64,
        boundary_fdr: f64,
    },
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            domain,
        }
    }
}

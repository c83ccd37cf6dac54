//! Simulation scenarios and sampling of correlated test statistics.
//!
//! A design `X` (`n x p`) is drawn from one of six dependence structures.
//! Conditional on the design, the marginal regression statistics are
//! `Z ~ N(mu, Sigma)` with `Sigma` the sample correlation of the columns and
//! `mu_i = sqrt(n) beta_i sd_i / sigma`. Statistics are sampled from that law
//! directly rather than by simulating responses and refitting.

use crate::error::{Error, Result};
use crate::gauss::two_sided_pvalue;
use crate::linalg::{
    spectral_decompose, spectral_decompose_factored, symmetric_sqrt, CorrelationMatrix, EigenSystem,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `X ~ N_p(0, Sigma)` with all off-diagonal correlations `rho`.
    EqualCorrelation { rho: f64 },
    /// Independent columns except the last 5%, which mix the first ten.
    FanSong,
    /// Independent standard Cauchy columns.
    IndependentCauchy,
    /// `X_j = sum_h rho_jh W_h + H_j` with `W ~ N((-2, 1, 4), I)`.
    ThreeFactor,
    /// `X_j = rho_j1 W_1 + rho_j2 W_2 + H_j` with `W ~ N(0, I)`.
    TwoFactor,
    /// `X_j = sin(rho_j1 W_1) + sgn(rho_j2) exp(|rho_j2| W_2) + H_j`.
    NonlinearFactor,
}

impl ScenarioKind {
    /// The six structures in their conventional order.
    pub fn all() -> [ScenarioKind; 6] {
        [
            ScenarioKind::EqualCorrelation { rho: 0.5 },
            ScenarioKind::FanSong,
            ScenarioKind::IndependentCauchy,
            ScenarioKind::ThreeFactor,
            ScenarioKind::TwoFactor,
            ScenarioKind::NonlinearFactor,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::EqualCorrelation { .. } => "equal_correlation",
            ScenarioKind::FanSong => "fan_song",
            ScenarioKind::IndependentCauchy => "independent_cauchy",
            ScenarioKind::ThreeFactor => "three_factor",
            ScenarioKind::TwoFactor => "two_factor",
            ScenarioKind::NonlinearFactor => "nonlinear_factor",
        }
    }

    /// Number of per-column coefficients drawn for factor structures.
    fn coefficient_count(&self) -> usize {
        match self {
            ScenarioKind::ThreeFactor => 3,
            ScenarioKind::TwoFactor | ScenarioKind::NonlinearFactor => 2,
            _ => 0,
        }
    }
}

/// Where the false nulls sit among the `p` hypotheses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullPlacement {
    /// Indices `0..p1`.
    #[default]
    First,
    /// A uniformly random subset, drawn per instance.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub p: usize,
    pub n: usize,
    pub p1: usize,
    pub beta: f64,
    pub sigma: f64,
    #[serde(default)]
    pub placement: NullPlacement,
}

impl Scenario {
    /// `p = 2000`, `n = 100`, `p1 = 10`, `beta = 1`, `sigma = 2`.
    pub fn standard(kind: ScenarioKind) -> Self {
        Self {
            kind,
            p: 2000,
            n: 100,
            p1: 10,
            beta: 1.0,
            sigma: 2.0,
            placement: NullPlacement::First,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::domain("p", 0.0, "at least 1"));
        }
        if self.p1 > self.p {
            return Err(Error::domain("p1", self.p1 as f64, "at most p"));
        }
        if self.n < 2 {
            return Err(Error::domain("n", self.n as f64, "at least 2"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::domain("sigma", self.sigma, "(0, inf)"));
        }
        if !self.beta.is_finite() {
            return Err(Error::domain("beta", self.beta, "finite"));
        }
        if let ScenarioKind::EqualCorrelation { rho } = self.kind {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::domain("rho", rho, "[0, 1)"));
            }
        }
        Ok(())
    }
}

/// Columns of the Fan & Song structure: `(independent, mixed_in)` where the
/// last `p - independent` columns mix the first `mixed_in` ones.
pub fn fan_song_layout(p: usize) -> (usize, usize) {
    let dependent = ((0.05 * p as f64).round() as usize).min(p.saturating_sub(1));
    let independent = p - dependent;
    (independent, independent.min(10))
}

/// Draws a design together with the per-column factor coefficients
/// (`p x r`, empty for structures without them).
pub fn generate_design_with_coefficients<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    scenario.validate()?;
    let (n, p) = (scenario.n, scenario.p);
    let r = scenario.kind.coefficient_count();
    let coefficients = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
    let mut x = DMatrix::zeros(n, p);
    let normal = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };

    for row in 0..n {
        match scenario.kind {
            ScenarioKind::EqualCorrelation { rho } => {
                let common = normal(rng);
                let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
                for j in 0..p {
                    x[(row, j)] = a * common + b * normal(rng);
                }
            }
            ScenarioKind::FanSong => {
                let (independent, mixed) = fan_song_layout(p);
                for j in 0..independent {
                    x[(row, j)] = normal(rng);
                }
                let residual = (1.0 - mixed as f64 / 25.0).sqrt();
                let mut mix = 0.0;
                for l in 0..mixed {
                    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                    mix += sign * x[(row, l)] / 5.0;
                }
                for j in independent..p {
                    x[(row, j)] = mix + residual * normal(rng);
                }
            }
            ScenarioKind::IndependentCauchy => {
                for j in 0..p {
                    let u: f64 = rng.random();
                    x[(row, j)] = (PI * (u - 0.5)).tan();
                }
            }
            ScenarioKind::ThreeFactor => {
                let w = [normal(rng) - 2.0, normal(rng) + 1.0, normal(rng) + 4.0];
                for j in 0..p {
                    let f: f64 = (0..3).map(|h| coefficients[(j, h)] * w[h]).sum();
                    x[(row, j)] = f + normal(rng);
                }
            }
            ScenarioKind::TwoFactor => {
                let w = [normal(rng), normal(rng)];
                for j in 0..p {
                    let f = coefficients[(j, 0)] * w[0] + coefficients[(j, 1)] * w[1];
                    x[(row, j)] = f + normal(rng);
                }
            }
            ScenarioKind::NonlinearFactor => {
                let w = [normal(rng), normal(rng)];
                for j in 0..p {
                    let (r1, r2) = (coefficients[(j, 0)], coefficients[(j, 1)]);
                    let f = (r1 * w[0]).sin() + r2.signum() * (r2.abs() * w[1]).exp();
                    x[(row, j)] = f + normal(rng);
                }
            }
        }
    }
    Ok((x, coefficients))
}

/// Draws an `n x p` design; each row is an independent copy of `X`.
pub fn generate_design<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<DMatrix<f64>> {
    generate_design_with_coefficients(scenario, rng).map(|(x, _)| x)
}

/// Centered, scaled design `F` with `F^T F` equal to the sample correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedDesign {
    factor: DMatrix<f64>,
    sds: Vec<f64>,
}

impl StandardizedDesign {
    pub fn new(design: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = design.shape();
        if n < 2 {
            return Err(Error::domain("n", n as f64, "at least 2"));
        }
        let mut factor = design.clone();
        let mut sds = Vec::with_capacity(p);
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let ss = col.norm_squared();
            let sd = (ss / (n - 1) as f64).sqrt();
            if !(sd > 1e-14 * (1.0 + mean.abs())) {
                return Err(Error::ConstantColumn { column: j });
            }
            col /= ss.sqrt();
            sds.push(sd);
        }
        Ok(Self { factor, sds })
    }

    /// `n x p` factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Column sample standard deviations (denominator `n - 1`).
    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Dense `p x p` sample correlation matrix.
    pub fn correlation(&self) -> CorrelationMatrix {
        let p = self.factor.ncols();
        let mut c = self.factor.tr_mul(&self.factor);
        for j in 0..p {
            c[(j, j)] = 1.0;
            for i in (j + 1)..p {
                c[(j, i)] = c[(i, j)];
            }
        }
        CorrelationMatrix::new(c).expect("standardized columns give a correlation matrix")
    }

    /// Eigensystem of the sample correlation without forming it.
    pub fn eigen(&self) -> Result<EigenSystem> {
        let (n, p) = self.factor.shape();
        if n < p {
            spectral_decompose_factored(&self.factor)
        } else {
            spectral_decompose(&self.correlation())
        }
    }
}

/// Sample correlation matrix and column sample standard deviations.
pub fn sample_correlation(design: &DMatrix<f64>) -> Result<(CorrelationMatrix, Vec<f64>)> {
    let std = StandardizedDesign::new(design)?;
    Ok((std.correlation(), std.sds))
}

/// False-null indices for a scenario, ascending.
pub fn select_false_nulls<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<usize> {
    match scenario.placement {
        NullPlacement::First => (0..scenario.p1).collect(),
        NullPlacement::Random => {
            let mut idx = sample_indices(rng, scenario.p, scenario.p1).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// `mu_i = sqrt(n) beta sd_i / sigma` on the false nulls, zero elsewhere.
pub fn signal_means(scenario: &Scenario, sds: &[f64], false_nulls: &[usize]) -> Vec<f64> {
    let mut mu = vec![0.0; sds.len()];
    let scale = (scenario.n as f64).sqrt() * scenario.beta / scenario.sigma;
    for &i in false_nulls {
        mu[i] = scale * sds[i];
    }
    mu
}

/// Complement of `false_nulls` in `0..p`.
pub fn true_null_indices(p: usize, false_nulls: &[usize]) -> Vec<usize> {
    let mut is_false = vec![false; p];
    for &i in false_nulls {
        is_false[i] = true;
    }
    (0..p).filter(|&i| !is_false[i]).collect()
}

/// One simulated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub sigma_hat_mat: CorrelationMatrix,
    pub mu: Vec<f64>,
    pub z: Vec<f64>,
    pub true_nulls: Vec<usize>,
    pub sds: Vec<f64>,
}

/// Places the signals and draws `Z = mu + M xi` with `M` the symmetric
/// square root of `sigma`.
pub fn make_test_statistics<R: Rng + ?Sized>(
    sigma: &CorrelationMatrix,
    sds: &[f64],
    scenario: &Scenario,
    rng: &mut R,
) -> Result<GeneratedInstance> {
    scenario.validate()?;
    let p = sigma.dim();
    if sds.len() != p || scenario.p != p {
        return Err(Error::DimensionMismatch {
            what: "scenario dimension",
            expected: p,
            got: if sds.len() != p {
                sds.len()
            } else {
                scenario.p
            },
        });
    }
    let root = symmetric_sqrt(&spectral_decompose(sigma)?)?;
    let false_nulls = select_false_nulls(scenario, rng);
    let mu = signal_means(scenario, sds, &false_nulls);
    let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = root * xi;
    let z = mu.iter().zip(noise.iter()).map(|(m, e)| m + e).collect();
    Ok(GeneratedInstance {
        sigma_hat_mat: sigma.clone(),
        mu,
        z,
        true_nulls: true_null_indices(p, &false_nulls),
        sds: sds.to_vec(),
    })
}

/// Draws `Z ~ N(mu, Sigma)` in the eigenbasis of `Sigma`:
/// `Z = mu + sum_h sqrt(lambda_h) gamma_h zeta_h` with `zeta` i.i.d. N(0, 1).
///
/// This is the same law as `mu + M xi` and exposes the realized factors:
/// for the `k`-factor model built from the same eigensystem, `W = zeta[..k]`.
#[derive(Debug, Clone)]
pub struct StatisticSampler {
    scaled: DMatrix<f64>,
    mu: Vec<f64>,
}

/// A sampled statistic vector and its eigenbasis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledStatistics {
    pub z: Vec<f64>,
    pub components: Vec<f64>,
}

impl StatisticSampler {
    pub fn new(system: &EigenSystem, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != system.dim() {
            return Err(Error::DimensionMismatch {
                what: "signal vector length",
                expected: system.dim(),
                got: mu.len(),
            });
        }
        let mut scaled = system.vectors().clone();
        for (h, mut col) in scaled.column_iter_mut().enumerate() {
            col *= system.values()[h].sqrt();
        }
        Ok(Self { scaled, mu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampledStatistics {
        let q = self.scaled.ncols();
        let components: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let noise = &self.scaled * DVector::from_column_slice(&components);
        let z = self
            .mu
            .iter()
            .zip(noise.iter())
            .map(|(m, e)| m + e)
            .collect();
        SampledStatistics { z, components }
    }
}

/// Realized false, true and total discoveries at threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryCounts {
    pub v: usize,
    pub s: usize,
    pub r: usize,
}

impl DiscoveryCounts {
    /// `V / R`, zero when nothing is rejected.
    pub fn fdp(&self) -> f64 {
        if self.r == 0 {
            0.0
        } else {
            self.v as f64 / self.r as f64
        }
    }
}

/// Counts by two-sided p-value at or below `t`.
pub fn realized_counts(z: &[f64], true_nulls: &[usize], t: f64) -> DiscoveryCounts {
    let mut is_null = vec![false; z.len()];
    for &i in true_nulls {
        is_null[i] = true;
    }
    let (mut v, mut s) = (0, 0);
    for (i, &zi) in z.iter().enumerate() {
        if two_sided_pvalue(zi) <= t {
            if is_null[i] {
                v += 1;
            } else {
                s += 1;
            }
        }
    }
    DiscoveryCounts { v, s, r: v + s }
}

//! Standard normal kernel.
//!
//! The CDF is evaluated through `erfc` so that lower-tail probabilities keep
//! full relative precision down to ~1e-300. Upper tails are always computed
//! as `Phi(-|x|)` to avoid cancellation near one.

use crate::error::{Error, Result};
use std::f64::consts::FRAC_1_SQRT_2;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal cumulative distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Two-sided p-value `2 Phi(-|z|)`.
#[inline]
pub fn two_sided_pvalue(z: f64) -> f64 {
    (2.0 * norm_cdf(-z.abs())).min(1.0)
}

/// Standard normal quantile function.
///
/// Wichura's AS 241 (PPND16) rational approximation, refined by one Newton
/// step against [`norm_cdf`].
pub fn norm_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain("q", q, "(0, 1)"));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    if q > 0.5 {
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

/// Quantile for `q` in (0, 0.5].
fn lower_quantile(q: f64) -> f64 {
    let x = ppnd16(q);
    if !x.is_finite() {
        return x;
    }
    let density = norm_pdf(x);
    if density > 0.0 {
        x - (norm_cdf(x) - q) / density
    } else {
        x
    }
}

#[allow(clippy::excessive_precision)]
fn ppnd16(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608_0;
        let den = ((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061_0e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083_0e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
            * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// `z_{t/2}`, the lower `t/2` quantile used by every FDP formula.
pub fn half_threshold_quantile(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::domain("t", t, "(0, 1)"));
    }
    norm_quantile(t / 2.0)
}

/// Variance and relative variance sensitivity of a standard normal truncated
/// to `[-x0, x0]`, as used by the dispersion-variate estimator.
///
/// Returns `(v0, r0)` where `v0` is the truncated variance and
/// `r0 = (dv/ds^2) / v0` is its derivative with respect to the scale `s^2`
/// of `N(0, s^2)` at `s = 1`, relative to `v0`. Both are evaluated by
/// composite Gauss-Legendre quadrature.
pub fn truncated_variance_sensitivity(x0: f64) -> (f64, f64) {
    let f = norm_pdf;
    let mass = integrate(f, -x0, x0);
    let m2 = integrate(|x| x * x * f(x), -x0, x0);
    // d/ds^2 of phi(x/s)/s at s = 1 is (x^2 - 1) phi(x) / 2.
    let d_mass = integrate(|x| 0.5 * (x * x - 1.0) * f(x), -x0, x0);
    let d_m2 = integrate(|x| 0.5 * x * x * (x * x - 1.0) * f(x), -x0, x0);
    let v0 = m2 / mass;
    let dv = (d_m2 * mass - m2 * d_mass) / (mass * mass);
    (v0, dv / v0)
}

/// Composite 5-point Gauss-Legendre rule on 64 panels.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_47,
        0.478_628_670_499_366_47,
        0.236_926_885_056_189_08,
        0.236_926_885_056_189_08,
    ];
    let panels = 64;
    let h = (b - a) / panels as f64;
    let mut acc = crate::NeumaierSum::new();
    for j in 0..panels {
        let mid = a + (j as f64 + 0.5) * h;
        for (node, weight) in NODES.iter().zip(WEIGHTS.iter()) {
            acc.add(weight * f(mid + 0.5 * h * node));
        }
    }
    acc.value() * 0.5 * h
}

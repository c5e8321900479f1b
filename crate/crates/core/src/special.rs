//! Normal-distribution special functions in linear and log space.
//!
//! The checked entry points (`normal_cdf`, `normal_quantile`, ...) validate
//! their arguments; the `std_*` variants skip validation and are used on the
//! likelihood hot paths.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// ln(2π)/2
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this point log Φ switches to the asymptotic tail expansion.
const LOG_CDF_TAIL: f64 = -30.0;

/// Standard normal Φ(z) without argument checks.
#[inline]
pub fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// log φ(z) for the standard normal.
#[inline]
pub fn std_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// log Φ(z), accurate in both tails.
pub fn std_log_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < LOG_CDF_TAIL {
        // Φ(z) = φ(z)/|z| · Σ (-1)^k (2k-1)!! / z^{2k}
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..10 {
            term *= -((2 * k - 1) as f64) / z2;
            sum += term;
        }
        std_log_pdf(z) - (-z).ln() + sum.ln()
    } else if z > 5.0 {
        (-std_cdf(-z)).ln_1p()
    } else {
        std_cdf(z).ln()
    }
}

/// Φ⁻¹(p) without argument checks; returns ±∞ at p ∈ {0, 1}.
///
/// The inverse-erfc estimate is polished by one Newton step on log Φ.
pub fn std_quantile(p: f64) -> f64 {
    if p > 0.5 {
        // 1 − p is exact for p ∈ [0.5, 1].
        return -std_quantile(1.0 - p);
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let log_cdf = std_log_cdf(x);
    x - (log_cdf - p.ln()) * (log_cdf - std_log_pdf(x)).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("normal_cdf needs a finite argument, got {z}")));
    }
    Ok(std_cdf(z))
}

/// Tail-safe log of the standard normal CDF.
pub fn log_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("log_normal_cdf needs a finite argument, got {z}")));
    }
    Ok(std_log_cdf(z))
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal_quantile needs p in (0, 1), got {p}")));
    }
    Ok(std_quantile(p))
}

/// log of the N(mean, sd²) density at x.
#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    std_log_pdf((x - mean) / sd) - sd.ln()
}

/// log(1 − e^d) for d ≤ 0.
#[inline]
fn log1m_exp(d: f64) -> f64 {
    if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

/// log(Φ(b) − Φ(a)) for standardized bounds a ≤ b (±∞ allowed).
pub fn log_std_interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        return log_std_interval(-b, -a);
    }
    if b <= 0.0 {
        let lb = std_log_cdf(b);
        let la = std_log_cdf(a);
        if la == f64::NEG_INFINITY {
            return lb;
        }
        return lb + log1m_exp(la - lb);
    }
    (-(std_cdf(a) + std_cdf(-b))).ln_1p()
}

/// Φ(b) − Φ(a) for standardized bounds, evaluated on the side of zero that
/// avoids cancellation against 1.
#[inline]
pub fn std_interval(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return 0.0;
    }
    if a >= 0.0 {
        std_cdf(-a) - std_cdf(-b)
    } else if b <= 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        1.0 - std_cdf(a) - std_cdf(-b)
    }
}

/// Log density of N(mean, sd²) truncated to `[lo, hi)`.
///
/// Returns `-∞` outside the support.
pub fn log_trunc_normal_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::Domain(format!("sd must be positive and finite, got {sd}")));
    }
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi})")));
    }
    let log_mass = log_std_interval((lo - mean) / sd, (hi - mean) / sd);
    if log_mass == f64::NEG_INFINITY {
        return Err(Error::SingularRegion(format!(
            "truncation mass of N({mean}, {sd}) on [{lo}, {hi}) is numerically zero"
        )));
    }
    if x < lo || x >= hi {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_normal_pdf(x, mean, sd) - log_mass)
}

/// log Σ exp(v) with max-shift; `-∞` iff every input is `-∞`.
#[inline]
pub fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Checked log-sum-exp.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty sequence".into()));
    }
    Ok(lse(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ by Taylor series of erf with many terms; independent of erfc.
    fn cdf_series(z: f64) -> f64 {
        let x = z / std::f64::consts::SQRT_2;
        // erf(x) = 2/√π Σ (-1)^n x^{2n+1} / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        0.5 + sum / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(normal_cdf(0.0).unwrap(), 0.5);
        assert!((normal_cdf(1.959964).unwrap() - 0.975).abs() < 1e-6);
        for &z in &[-3.0, -1.5, -0.3, 0.7, 1.959964, 2.5] {
            assert!((std_cdf(z) - cdf_series(z)).abs() < 1e-12, "z = {z}");
        }
        let far = normal_cdf(-37.0).unwrap();
        assert!(far > 0.0);
        assert!(normal_cdf(f64::NAN).is_err());
        assert!(normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn log_cdf_is_continuous_across_branch_points() {
        for &z in &[LOG_CDF_TAIL, 5.0] {
            let below = std_log_cdf(z - 1e-9);
            let above = std_log_cdf(z + 1e-9);
            assert!((below - above).abs() < 1e-6 * below.abs().max(1e-9), "z = {z}");
        }
        // Mills-ratio tail against direct erfc where erfc is still representable.
        let z = -35.0;
        let direct = std_cdf(z).ln();
        let mut tail = std_log_pdf(z) - (-z).ln();
        let z2 = z * z;
        tail += (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)).ln();
        assert!((direct - tail).abs() < 1e-9);
        assert!((std_log_cdf(z) - direct).abs() < 1e-9);
        assert!(std_log_cdf(-200.0).is_finite());
    }

    #[test]
    fn quantile_reference_points() {
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-15);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_quantile(0.95).unwrap() - 1.644854).abs() < 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let q = normal_quantile(p).unwrap();
            assert!((std_cdf(q) - p).abs() <= 1e-10);
        }
        for &p in &[1e-300, 1e-100, 1e-20, 1e-8] {
            let q = normal_quantile(p).unwrap();
            assert!(((std_log_cdf(q) - p.ln()) / p.ln()).abs() < 1e-10);
        }
        // Φ(z) rounds to within 1.1e-16 of 1 above z ≈ 5.5, so the upper end
        // of the range is checked through the reflected lower tail.
        let mut z: f64 = -8.0;
        while z <= 8.0 {
            let back = if z <= 5.0 { std_quantile(std_cdf(z)) } else { -std_quantile(std_cdf(-z)) };
            assert!((back - z).abs() < 1e-8, "z = {z}");
            z += 0.01;
        }
    }

    #[test]
    fn trunc_pdf_examples() {
        let v = log_trunc_normal_pdf(0.0, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((v + 0.918939).abs() < 1e-6);
        let v = log_trunc_normal_pdf(0.5, 0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        let half_normal = (2.0f64).ln() + std_log_pdf(0.5);
        assert!((v - half_normal).abs() < 1e-14);
        assert!((v + 0.350791).abs() < 1e-6);
        let v = log_trunc_normal_pdf(-1.0, 0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        assert!(matches!(
            log_trunc_normal_pdf(0.0, 0.0, 1.0, 1.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            log_trunc_normal_pdf(0.0, 0.0, -1.0, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            log_trunc_normal_pdf(100.0, 0.0, 1.0, 1e200, f64::INFINITY),
            Err(Error::SingularRegion(_))
        ));
        // Far tail remains finite.
        let v = log_trunc_normal_pdf(40.5, 0.0, 1.0, 40.0, f64::INFINITY).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn interval_forms_agree() {
        let cases = [(-1.0, 0.5), (2.0, 3.0), (-5.0, -4.0), (-0.1, 0.1), (8.0, f64::INFINITY)];
        for &(a, b) in &cases {
            let lin = std_interval(a, b);
            let log = log_std_interval(a, b);
            assert!((lin.ln() - log).abs() < 1e-12, "({a}, {b})");
        }
        assert_eq!(log_std_interval(1.0, 1.0), f64::NEG_INFINITY);
        let far = log_std_interval(-60.0, -59.0);
        assert!((far - std_log_cdf(-59.0)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - ln2).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]).unwrap() - (-1000.0 + ln2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[]).is_err());
    }
}

//! Reproducible random streams and the variate generators built on them.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{log_std_interval, std_cdf, std_quantile};

/// A seeded ChaCha stream. `(seed, stream)` pairs select disjoint keystreams,
/// so concurrent chains or replications never share variates.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        StreamRng { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    #[inline]
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.std_normal()
    }

    /// Uniform integer on the inclusive range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: u32, hi: u32) -> u32 {
        self.inner.random_range(lo..=hi)
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return i;
            }
            target -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer, used to derive child seeds from a master seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Inverse-CDF sampling works while Φ of the outer bound stays well above the
// subnormal range; past this point the exponential tail sampler takes over.
const INVERSE_CDF_LIMIT: f64 = 37.0;

/// Draw from N(mean, sd²) truncated to `[lo, hi)`.
pub fn sample_truncated_normal(
    rng: &mut StreamRng,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::Domain(format!("sd must be positive and finite, got {sd}")));
    }
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi})")));
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    if log_std_interval(a, b) == f64::NEG_INFINITY {
        return Err(Error::SingularRegion(format!(
            "truncation mass of N({mean}, {sd}) on [{lo}, {hi}) is numerically zero"
        )));
    }
    let z = std_truncated(rng, a, b);
    let x = mean + sd * z;
    Ok(x.clamp(lo, prev_float(hi)))
}

fn prev_float(x: f64) -> f64 {
    if x.is_infinite() || x == 0.0 {
        return if x == 0.0 { -f64::from_bits(1) } else { x };
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits - 1 } else { bits + 1 })
}

/// Standard normal restricted to (a, b), a < b.
fn std_truncated(rng: &mut StreamRng, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        // Reflect into the lower half where Φ carries full relative precision.
        return -std_truncated(rng, -b, -a);
    }
    if b < -INVERSE_CDF_LIMIT {
        return -upper_tail(rng, -b, -a);
    }
    let pa = std_cdf(a);
    let pb = std_cdf(b);
    let p = pa + rng.uniform() * (pb - pa);
    std_quantile(p).clamp(a, b)
}

/// Standard normal restricted to (a, b) with a > 0 deep in the tail.
fn upper_tail(rng: &mut StreamRng, a: f64, b: f64) -> f64 {
    if (b - a) * a <= 1.0 {
        loop {
            let z = a + rng.uniform() * (b - a);
            if rng.uniform().ln() <= -0.5 * (z * z - a * a) {
                return z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z >= b {
            continue;
        }
        if rng.uniform().ln() <= -0.5 * (z - lambda) * (z - lambda) {
            return z;
        }
    }
}

/// Draw a point on the probability simplex from Dirichlet(concentrations).
pub fn sample_dirichlet(rng: &mut StreamRng, concentrations: &[f64]) -> Result<Vec<f64>> {
    if concentrations.is_empty() {
        return Err(Error::Domain("Dirichlet needs at least one concentration".into()));
    }
    if let Some(bad) = concentrations.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::Domain(format!("Dirichlet concentration must be positive, got {bad}")));
    }
    if concentrations.len() == 1 {
        return Ok(vec![1.0]);
    }
    let mut draws: Vec<f64> = concentrations
        .iter()
        .map(|&c| {
            let g = Gamma::new(c, 1.0).expect("validated shape");
            let mut v: f64 = g.sample(rng);
            // Tiny shapes can underflow; keep components strictly positive.
            if v <= 0.0 {
                v = f64::MIN_POSITIVE;
            }
            v
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|v| *v /= total);
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_reproduce_and_differ() {
        let mut a = StreamRng::new(42, 3);
        let mut b = StreamRng::new(42, 3);
        let mut c = StreamRng::new(42, 4);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn untruncated_mean() {
        let mut rng = StreamRng::new(1, 0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_truncated_normal(&mut rng, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn extreme_truncation_support() {
        let mut rng = StreamRng::new(2, 0);
        for _ in 0..10_000 {
            let x = sample_truncated_normal(&mut rng, 0.0, 1.0, 8.0, f64::INFINITY).unwrap();
            assert!(x >= 8.0 && x.is_finite());
        }
        for _ in 0..10_000 {
            let x = sample_truncated_normal(&mut rng, 0.0, 1.0, 50.0, 50.01).unwrap();
            assert!((50.0..50.01).contains(&x));
            let y = sample_truncated_normal(&mut rng, 0.0, 1.0, f64::NEG_INFINITY, -45.0).unwrap();
            assert!(y < -45.0 && y.is_finite());
        }
    }

    #[test]
    fn truncated_errors() {
        let mut rng = StreamRng::new(3, 0);
        assert!(matches!(
            sample_truncated_normal(&mut rng, 0.0, 1.0, 2.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sample_truncated_normal(&mut rng, 0.0, 1.0, 1e200, f64::INFINITY),
            Err(Error::SingularRegion(_))
        ));
    }

    #[test]
    fn dirichlet_examples() {
        let mut rng = StreamRng::new(4, 0);
        assert_eq!(sample_dirichlet(&mut rng, &[1.0]).unwrap(), vec![1.0]);
        for _ in 0..100 {
            let d = sample_dirichlet(&mut rng, &[1e6, 1e6]).unwrap();
            assert!((d[0] - 0.5).abs() < 0.01 && (d[1] - 0.5).abs() < 0.01);
        }
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let d = sample_dirichlet(&mut rng, &[1.0, 1.0, 1.0]).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|v| *v > 0.0));
            for (s, v) in sums.iter_mut().zip(&d) {
                *s += v;
            }
        }
        // Var of a Dirichlet(1,1,1) marginal is (1/3)(2/3)/4 = 1/18.
        let se = (1.0f64 / 18.0 / n as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
        assert!(sample_dirichlet(&mut rng, &[1.0, 0.0]).is_err());
        assert!(sample_dirichlet(&mut rng, &[1.0, -2.0]).is_err());
    }
}

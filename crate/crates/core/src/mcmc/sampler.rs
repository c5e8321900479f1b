//! Adaptive random-walk Metropolis for a generic [`Target`].
//!
//! Each iteration makes one multivariate Gaussian move on the leading block
//! of coordinates, then (for targets with latent coordinates) a 1-D move on
//! every latent coordinate and a joint non-centred move of the latent
//! location and scale. During warmup the block proposal covariance is
//! learned from the chain and all step sizes follow Robbins–Monro updates;
//! everything is frozen afterwards.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

use super::SamplerConfig;

/// Unnormalized log density in ℝ^d.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Number of leading coordinates proposed jointly. Coordinates after
    /// them are latent and updated one at a time.
    fn block_dim(&self) -> usize {
        self.dim()
    }

    /// Log density up to terms that do not involve the leading block.
    fn block_log_density(&self, x: &[f64]) -> f64 {
        self.log_density(x)
    }

    /// Log density up to terms that do not involve latent coordinate `k`.
    fn latent_log_density(&self, x: &[f64], _k: usize) -> f64 {
        self.log_density(x)
    }

    /// Initial random-walk scale for latent coordinate `k`.
    fn latent_scale(&self, _k: usize) -> f64 {
        0.1
    }

    /// Indices of the latent location and log-scale within the block, when
    /// latent coordinates are conditionally `N(x[loc], exp(x[log_scale])²)`.
    fn location_log_scale(&self) -> Option<(usize, usize)> {
        None
    }
}

pub(crate) struct ChainOutput {
    pub samples: Vec<Vec<f64>>,
    pub block_accept: f64,
    pub latent_accept: Option<f64>,
}

const BLOCK_INIT_SCALE: f64 = 0.1;
const LATENT_TARGET: f64 = 0.44;
const MOVE_REPEATS: usize = 4;
/// Block moves per iteration when there is no latent sweep to amortize.
const MARGINAL_REPEATS: usize = 10;
const FAILURE_WINDOW: usize = 100;

#[inline]
fn accept(rng: &mut StreamRng, log_ratio: f64) -> (bool, f64) {
    if log_ratio.is_nan() {
        return (false, 0.0);
    }
    let prob = log_ratio.min(0.0).exp();
    (log_ratio >= 0.0 || rng.uniform().ln() < log_ratio, prob)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub(crate) fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Running mean and scatter of the block coordinates.
struct Welford {
    count: usize,
    mean: Vec<f64>,
    scatter: Vec<Vec<f64>>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford { count: 0, mean: vec![0.0; d], scatter: vec![vec![0.0; d]; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        for i in 0..delta.len() {
            for j in 0..delta.len() {
                self.scatter[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn proposal_factor(&self) -> Option<Vec<Vec<f64>>> {
        let d = self.mean.len();
        if self.count < 2 * d + 10 {
            return None;
        }
        let scale = 2.38 * 2.38 / d as f64 / (self.count as f64 - 1.0);
        let mut cov: Vec<Vec<f64>> = self
            .scatter
            .iter()
            .map(|row| row.iter().map(|v| v * scale).collect())
            .collect();
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] += 1e-10;
        }
        cholesky(&cov)
    }
}

#[inline]
fn step_size(t: usize) -> f64 {
    (t as f64 + 1.0).powf(-0.6)
}

pub(crate) fn run_chain<T: Target + ?Sized>(
    target: &T,
    init: Vec<f64>,
    config: &SamplerConfig,
    rng: &mut StreamRng,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let d = target.block_dim();
    let latent: Vec<usize> = (d..dim).collect();
    let nc_move = target.location_log_scale().filter(|_| !latent.is_empty());
    let warmup = config.warmup;

    let mut x = init;
    let mut block_lp = target.block_log_density(&x);
    let mut factor: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { BLOCK_INIT_SCALE } else { 0.0 }).collect())
        .collect();
    let mut log_lambda = (2.38 / (d as f64).sqrt()).ln();
    let mut adapt_origin = 0;
    let mut latent_log_scale: Vec<f64> = latent.iter().map(|&k| target.latent_scale(k).ln()).collect();
    let mut nc_log_scale = 0.0f64;
    let mut welford = Welford::new(d);

    let mut samples = Vec::with_capacity(config.draws);
    let mut block_accepts = 0usize;
    let mut latent_accepts = 0usize;
    let mut window_accepts = 0usize;
    let mut eps = vec![0.0; d];
    let mut proposal = x.clone();

    let repeats = if latent.is_empty() { MARGINAL_REPEATS } else { MOVE_REPEATS };
    for t in 0..warmup + config.draws {
        let adapting = t < warmup;

        // Joint move on the leading block, repeated several times per iteration.
        for _ in 0..repeats {
            for e in eps.iter_mut() {
                *e = rng.std_normal();
            }
            let lambda = log_lambda.exp();
            proposal.copy_from_slice(&x);
            for i in 0..d {
                let shift: f64 = (0..=i).map(|j| factor[i][j] * eps[j]).sum();
                proposal[i] += lambda * shift;
            }
            let prop_lp = target.block_log_density(&proposal);
            let (ok, prob) = accept(rng, prop_lp - block_lp);
            if ok {
                x.copy_from_slice(&proposal);
                block_lp = prop_lp;
                window_accepts += 1;
                if !adapting {
                    block_accepts += 1;
                }
            }
            if adapting {
                log_lambda += step_size(t - adapt_origin) * (prob - config.target_accept);
            }
        }

        if !latent.is_empty() {
            for (slot, &k) in latent.iter().enumerate() {
                let current = target.latent_log_density(&x, k);
                let old = x[k];
                let scale = latent_log_scale[slot].exp();
                x[k] = old + scale * rng.std_normal();
                let (ok, prob) = accept(rng, target.latent_log_density(&x, k) - current);
                if !ok {
                    x[k] = old;
                } else if !adapting {
                    latent_accepts += 1;
                }
                if adapting {
                    latent_log_scale[slot] += step_size(t) * (prob - LATENT_TARGET);
                }
            }

            for _ in 0..repeats {
                if let Some((loc, log_scale)) = nc_move {
                    let current = target.log_density(&x);
                    let sd = |i: usize| log_lambda.exp() * factor[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let step = nc_log_scale.exp();
                    proposal.copy_from_slice(&x);
                    proposal[loc] += step * sd(loc) * rng.std_normal();
                    proposal[log_scale] += step * sd(log_scale) * rng.std_normal();
                    let ratio = (proposal[log_scale] - x[log_scale]).exp();
                    for &k in &latent {
                        proposal[k] = proposal[loc] + ratio * (x[k] - x[loc]);
                    }
                    let jacobian = latent.len() as f64 * (proposal[log_scale] - x[log_scale]);
                    let (ok, prob) = accept(rng, target.log_density(&proposal) - current + jacobian);
                    if ok {
                        x.copy_from_slice(&proposal);
                    }
                    if adapting {
                        nc_log_scale += step_size(t) * (prob - config.target_accept);
                    }
                }
            }
            block_lp = target.block_log_density(&x);
        }

        if adapting {
            if t >= warmup / 4 {
                welford.push(&x[..d]);
            }
            if warmup >= 40 && (t + 1 == warmup / 2 || t + 1 == 3 * warmup / 4) {
                if let Some(l) = welford.proposal_factor() {
                    factor = l;
                    log_lambda = 0.0;
                    adapt_origin = t + 1;
                }
            }
            if (t + 1) % FAILURE_WINDOW == 0 {
                if window_accepts == 0 {
                    return Err(Error::AdaptationFailure {
                        chain,
                        message: format!(
                            "no block proposal accepted in warmup iterations {}..{}; step scale {:.3e}, log density {}",
                            t + 1 - FAILURE_WINDOW,
                            t + 1,
                            log_lambda.exp(),
                            block_lp
                        ),
                    });
                }
                window_accepts = 0;
            }
        } else {
            samples.push(x.clone());
        }
    }

    let n = config.draws as f64;
    Ok(ChainOutput {
        samples,
        block_accept: block_accepts as f64 / (n * repeats as f64),
        latent_accept: (!latent.is_empty()).then(|| latent_accepts as f64 / (n * latent.len() as f64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![vec![4.0, 2.0, 0.4], vec![2.0, 3.0, 0.5], vec![0.4, 0.5, 1.0]];
        let l = cholesky(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
    }
}

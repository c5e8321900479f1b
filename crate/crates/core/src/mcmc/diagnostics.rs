//! Rank-normalized split-R̂ and bulk effective sample size.

use serde::Serialize;

use crate::special::std_quantile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDiagnostics {
    /// `None` when unavailable: a single chain, or no variation at all.
    pub rhat: Option<f64>,
    pub ess: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits each chain into halves, dropping the middle draw of odd chains.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [c[..half].to_vec(), c[c.len() - half..].to_vec()]
        })
        .collect()
}

/// Normal scores of pooled fractional ranks, `Φ⁻¹((r − 3/8)/(S + 1/4))`,
/// with ties given their average rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, x)| (*x, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        let z = std_quantile((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &pooled[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = variance(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Split-R̂: the largest of the bulk and folded rank-normalized values and
/// the classic value on the raw draws. Rank normalization bounds how far a
/// single far-off chain can move R̂, so the raw value is kept as a floor.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return None;
    }
    let halves = split(chains);
    let bulk = rhat_basic(&rank_normalize(&halves))?;
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let median = pooled[pooled.len() / 2];
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - median).abs()).collect())
        .collect();
    let tail = rhat_basic(&rank_normalize(&folded)).unwrap_or(bulk);
    let raw = rhat_basic(&halves).unwrap_or(bulk);
    Some(bulk.max(tail).max(raw))
}

/// Biased autocovariance of `x` at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
pub fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return m as f64 * n as f64;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return 1.0;
    }
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    let rho = |lag: usize| {
        let acov = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocov(c, *mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - acov) / var_plus
    };

    let mut pair_sums = Vec::new();
    let mut lag = 0;
    while lag + 1 < n {
        let p = rho(lag) + rho(lag + 1);
        if p < 0.0 {
            break;
        }
        pair_sums.push(p);
        lag += 2;
    }
    for k in 1..pair_sums.len() {
        if pair_sums[k] > pair_sums[k - 1] {
            pair_sums[k] = pair_sums[k - 1];
        }
    }
    let tau_hat = (-1.0 + 2.0 * pair_sums.iter().sum::<f64>()).max(1.0 / total.log10());
    total / tau_hat
}

/// Bulk ESS: [`ess_raw`] on rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    if chains.iter().any(|c| c.len() < 4) {
        return ess_raw(chains);
    }
    let halves = split(chains);
    let flat_var = {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        variance(&pooled)
    };
    if !(flat_var > 0.0) {
        return 1.0;
    }
    ess_raw(&rank_normalize(&halves))
}

pub fn diagnose(chains: &[Vec<f64>]) -> ParamDiagnostics {
    ParamDiagnostics { rhat: split_rhat(chains), ess: bulk_ess(chains) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..chains)
            .map(|c| {
                let mut rng = StreamRng::new(seed, c as u64);
                (0..n).map(|_| rng.std_normal()).collect()
            })
            .collect()
    }

    #[test]
    fn iid_normal_draws() {
        let chains = iid(4, 1000, 3);
        let d = diagnose(&chains);
        let r = d.rhat.unwrap();
        assert!((0.99..=1.01).contains(&r), "rhat {r}");
        assert!(d.ess >= 0.8 * 4000.0, "ess {}", d.ess);
    }

    #[test]
    fn shifted_chain_detected() {
        let mut chains = iid(8, 500, 4);
        for x in chains[3].iter_mut() {
            *x += 5.0;
        }
        assert!(split_rhat(&chains).unwrap() > 1.5);
    }

    #[test]
    fn constant_chains_flagged() {
        let chains = vec![vec![2.0; 200]; 4];
        let d = diagnose(&chains);
        assert!(d.rhat.is_none());
        assert!(d.ess <= 1.0);
        assert!(split_rhat(&[vec![0.0, 1.0, 2.0, 3.0, 4.0]]).is_none());
    }

    #[test]
    fn autocorrelated_chain_has_lower_ess() {
        let mut rng = StreamRng::new(5, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        x = 0.9 * x + (1.0f64 - 0.81).sqrt() * rng.std_normal();
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with φ = 0.9 has ESS ≈ N(1 − φ)/(1 + φ) ≈ 421.
        let ess = bulk_ess(&chains);
        assert!((300.0..600.0).contains(&ess), "ess {ess}");
    }
}

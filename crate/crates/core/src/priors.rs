//! Prior densities and prior sampling.
//!
//! θ₀ ~ N(0, theta0_sd²), τ ~ half-normal(tau_scale), π ~ Dirichlet(α), and
//! the decreasing publication probabilities ρ are suffix sums
//! `ρ_j = Σ_{k≥j} d_k` of d ~ Dirichlet(α), so ρ₁ = 1 and the (ρ₂, …, ρ_J)
//! density is uniform on the ordered region when α = 1.

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{Error, Result};
use crate::model::{Family, HackingProbs, ModelSpec, ParamState, SelectionProbs, Weights};
use crate::rng::{sample_dirichlet, StreamRng};
use crate::special::log_normal_pdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub theta0_sd: f64,
    pub tau_scale: f64,
    /// Dirichlet concentrations; `None` means all ones of the grid's length.
    pub simplex_concentration: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { theta0_sd: 1.0, tau_scale: 1.0, simplex_concentration: None }
    }
}

impl PriorConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.theta0_sd > 0.0 && self.theta0_sd.is_finite()) {
            return Err(Error::Domain(format!("theta0_sd must be positive, got {}", self.theta0_sd)));
        }
        if !(self.tau_scale > 0.0 && self.tau_scale.is_finite()) {
            return Err(Error::Domain(format!("tau_scale must be positive, got {}", self.tau_scale)));
        }
        if let Some(c) = &self.simplex_concentration {
            if c.len() != spec.cutoffs.len() {
                return Err(Error::Domain(format!(
                    "need {} concentrations, got {}",
                    spec.cutoffs.len(),
                    c.len()
                )));
            }
            if c.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Domain(format!("concentrations must be positive: {c:?}")));
            }
        }
        Ok(())
    }

    pub fn concentrations(&self, len: usize) -> Vec<f64> {
        self.simplex_concentration.clone().unwrap_or_else(|| vec![1.0; len])
    }
}

/// Dirichlet log-density; zero components with unit concentration are allowed.
pub fn log_dirichlet(x: &[f64], conc: &[f64]) -> f64 {
    if x.len() != conc.len() || x.iter().any(|v| *v < 0.0) {
        return f64::NEG_INFINITY;
    }
    let total: f64 = conc.iter().sum();
    let mut lp = ln_gamma(total) - conc.iter().map(|c| ln_gamma(*c)).sum::<f64>();
    for (v, c) in x.iter().zip(conc) {
        if *c != 1.0 {
            lp += (c - 1.0) * v.ln();
        }
    }
    lp
}

/// Suffix-sum increments `d_j = ρ_j − ρ_{j+1}` with ρ_{J+1} = 0.
pub fn rho_increments(rho: &[f64]) -> Vec<f64> {
    (0..rho.len())
        .map(|j| rho[j] - rho.get(j + 1).copied().unwrap_or(0.0))
        .collect()
}

/// ρ from simplex increments; ρ₁ is pinned to exactly 1.
pub fn rho_from_increments(d: &[f64]) -> Vec<f64> {
    let mut rho = vec![0.0; d.len()];
    let mut acc = 0.0;
    for j in (0..d.len()).rev() {
        acc += d[j];
        rho[j] = acc.min(1.0);
    }
    rho[0] = 1.0;
    rho
}

pub fn log_half_normal(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + log_normal_pdf(x, 0.0, scale)
}

/// Joint log prior of a parameter state; −∞ when the state violates the
/// spec's constraints.
pub fn log_prior(state: &ParamState, config: &PriorConfig, spec: &ModelSpec) -> f64 {
    let mut lp = log_normal_pdf(state.theta0, 0.0, config.theta0_sd);
    if spec.has_tau() {
        lp += log_half_normal(state.tau, config.tau_scale);
    } else if state.tau != 0.0 {
        return f64::NEG_INFINITY;
    }
    let j = spec.cutoffs.len();
    let conc = config.concentrations(j);
    lp += match (spec.family, &state.weights) {
        (Family::Uncorrected, Weights::None) => 0.0,
        (Family::PubBias, Weights::Rho(rho)) if rho.len() == j && rho.is_decreasing() => {
            log_dirichlet(&rho_increments(rho.as_slice()), &conc)
        }
        (Family::PHack, Weights::Pi(pi)) if pi.len() == j => log_dirichlet(pi.as_slice(), &conc),
        _ => return f64::NEG_INFINITY,
    };
    if let Some(thetas) = &state.latent_thetas {
        if !(state.tau > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += thetas.iter().map(|t| log_normal_pdf(*t, state.theta0, state.tau)).sum::<f64>();
    }
    lp
}

/// Draw a parameter state from the prior.
pub fn sample_prior(
    rng: &mut StreamRng,
    config: &PriorConfig,
    spec: &ModelSpec,
    n_studies: usize,
) -> Result<ParamState> {
    if n_studies == 0 {
        return Err(Error::Domain("need at least one study".into()));
    }
    config.validate(spec)?;
    let theta0 = rng.normal(0.0, config.theta0_sd);
    let tau = if spec.has_tau() { rng.normal(0.0, config.tau_scale).abs() } else { 0.0 };
    let conc = config.concentrations(spec.cutoffs.len());
    let weights = match spec.family {
        Family::Uncorrected => Weights::None,
        Family::PubBias => {
            let d = sample_dirichlet(rng, &conc)?;
            Weights::Rho(SelectionProbs::new(rho_from_increments(&d))?)
        }
        Family::PHack => Weights::Pi(HackingProbs::normalized(sample_dirichlet(rng, &conc)?)?),
    };
    let latent_thetas = spec
        .uses_latent()
        .then(|| (0..n_studies).map(|_| rng.normal(theta0, tau)).collect());
    Ok(ParamState { theta0, tau, weights, latent_thetas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CutoffGrid, Effects};

    fn spec(family: Family, effects: Effects) -> ModelSpec {
        ModelSpec::new(family, effects, CutoffGrid::default())
    }

    #[test]
    fn log_prior_examples() {
        let s = ParamState { theta0: 0.0, tau: 0.0, weights: Weights::None, latent_thetas: None };
        let lp = log_prior(&s, &PriorConfig::default(), &spec(Family::Uncorrected, Effects::Fixed));
        assert!((lp + 0.918939).abs() < 1e-6);
        assert!((log_half_normal(0.0, 1.0) + 0.225791).abs() < 1e-6);
        let re = log_prior(&s, &PriorConfig::default(), &spec(Family::Uncorrected, Effects::Random));
        assert!((re - lp - log_half_normal(0.0, 1.0)).abs() < 1e-15);

        let bad = ParamState {
            theta0: 0.0,
            tau: 0.5,
            weights: Weights::Rho(SelectionProbs::unordered(vec![1.0, 0.7, 0.9]).unwrap()),
            latent_thetas: None,
        };
        assert_eq!(
            log_prior(&bad, &PriorConfig::default(), &spec(Family::PubBias, Effects::Random)),
            f64::NEG_INFINITY
        );
        // Uniform on the ordered triangle has density 2 = Γ(3).
        let ok = ParamState {
            weights: Weights::Rho(SelectionProbs::new(vec![1.0, 0.7, 0.1]).unwrap()),
            ..bad.clone()
        };
        let lp = log_prior(&ok, &PriorConfig::default(), &spec(Family::PubBias, Effects::Random));
        let expected = log_normal_pdf(0.0, 0.0, 1.0) + log_half_normal(0.5, 1.0) + 2f64.ln();
        assert!((lp - expected).abs() < 1e-12);
        // Mismatched weights.
        assert_eq!(
            log_prior(&ok, &PriorConfig::default(), &spec(Family::PHack, Effects::Random)),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn increments_round_trip() {
        let rho = [1.0, 0.7, 0.1];
        let d = rho_increments(&rho);
        assert!((d[0] - 0.3).abs() < 1e-15 && (d[1] - 0.6).abs() < 1e-15 && d[2] == 0.1);
        let back = rho_from_increments(&d);
        for (a, b) in back.iter().zip(rho) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_draws_have_finite_density_and_moments() {
        let mut rng = StreamRng::new(11, 0);
        let config = PriorConfig::default();
        let n = 100_000;
        let mut tau_sum = 0.0;
        let mut pi_sum = [0.0; 3];
        for fam in [Family::Uncorrected, Family::PubBias, Family::PHack] {
            for eff in [Effects::Fixed, Effects::Random] {
                let sp = spec(fam, eff);
                for _ in 0..200 {
                    let s = sample_prior(&mut rng, &config, &sp, 4).unwrap();
                    assert!(log_prior(&s, &config, &sp).is_finite(), "{sp:?} {s:?}");
                    if let Weights::Rho(r) = &s.weights {
                        let r = r.as_slice();
                        assert!(r[0] == 1.0 && r[0] >= r[1] && r[1] >= r[2] && r[2] >= 0.0);
                    }
                }
            }
        }
        let sp = spec(Family::PHack, Effects::Random);
        for _ in 0..n {
            let s = sample_prior(&mut rng, &config, &sp, 1).unwrap();
            tau_sum += s.tau;
            if let Weights::Pi(pi) = &s.weights {
                for (acc, v) in pi_sum.iter_mut().zip(pi.as_slice()) {
                    *acc += v;
                }
            }
        }
        let half_normal_mean = (2.0 / std::f64::consts::PI).sqrt();
        let half_normal_sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!((tau_sum / n as f64 - half_normal_mean).abs() < 4.0 * half_normal_sd / (n as f64).sqrt());
        let se = (1.0f64 / 18.0 / n as f64).sqrt();
        for s in pi_sum {
            assert!((s / n as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn rho_prior_uniform_on_triangle() {
        // χ² over a 10×10 grid of (ρ₂, ρ₃) cells intersecting the ordered region.
        let mut rng = StreamRng::new(12, 0);
        let sp = spec(Family::PubBias, Effects::Fixed);
        let n = 200_000;
        let k = 10;
        let mut counts = vec![0usize; k * k];
        for _ in 0..n {
            let s = sample_prior(&mut rng, &PriorConfig::default(), &sp, 1).unwrap();
            if let Weights::Rho(r) = s.weights {
                let (a, b) = (r.as_slice()[1], r.as_slice()[2]);
                let i = ((a * k as f64) as usize).min(k - 1);
                let j = ((b * k as f64) as usize).min(k - 1);
                counts[i * k + j] += 1;
            }
        }
        // Cell area inside {b ≤ a}: full below the diagonal, half on it.
        let mut chi2 = 0.0;
        let mut dof = 0;
        for i in 0..k {
            for j in 0..k {
                let area = if j < i { 1.0 } else if j == i { 0.5 } else { 0.0 } / (k * k) as f64;
                let expected = n as f64 * 2.0 * area;
                if expected == 0.0 {
                    assert_eq!(counts[i * k + j], 0);
                    continue;
                }
                chi2 += (counts[i * k + j] as f64 - expected).powi(2) / expected;
                dof += 1;
            }
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 = {chi2}, p = {p}");
    }
}

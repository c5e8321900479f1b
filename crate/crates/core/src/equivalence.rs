//! The fixed-σ correspondence between publication-bias weights ρ and
//! p-hacking propensities π.
//!
//! When every study shares one standard error, the publication-bias density
//! is a truncated-normal mixture with weights `π_j ∝ ρ_j m_j`, so each ρ has a
//! matching π and vice versa. With heterogeneous σ the interval masses `m_j`
//! differ across studies and no single π reproduces the selection model.

use serde::Serialize;

use crate::densities::interval_masses;
use crate::error::{Error, Result};
use crate::model::{CutoffGrid, HackingProbs, SelectionProbs};

fn masses(theta0: f64, tau: f64, sigma: f64, cutoffs: &CutoffGrid) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("tau must be nonnegative, got {tau}")));
    }
    let sd = (tau * tau + sigma * sigma).sqrt();
    Ok(interval_masses(theta0, sd, sigma, cutoffs))
}

/// π_j = ρ_j m_j / Σ_k ρ_k m_k with masses of N(θ₀, τ² + σ²).
pub fn rho_to_pi(rho: &SelectionProbs, theta0: f64, tau: f64, sigma: f64, cutoffs: &CutoffGrid) -> Result<HackingProbs> {
    check_len(rho.len(), cutoffs)?;
    let m = masses(theta0, tau, sigma, cutoffs)?;
    let raw: Vec<f64> = rho.as_slice().iter().zip(&m).map(|(r, m)| r * m).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::SingularRegion(format!(
            "selection-weighted mass vanishes at theta0 {theta0}, tau {tau}, sigma {sigma}"
        )));
    }
    HackingProbs::normalized(raw)
}

/// Inverse map; `ρ_j = (π_j/m_j) / (π₁/m₁)`.
#[derive(Debug, Clone, Serialize)]
pub struct RhoSolution {
    pub rho: SelectionProbs,
    /// Whether ρ satisfies 1 ≥ ρ₂ ≥ … ≥ ρ_J. Adversarial π yield increasing
    /// ρ, which is returned as is rather than clamped.
    pub decreasing: bool,
}

pub fn pi_to_rho(pi: &HackingProbs, theta0: f64, tau: f64, sigma: f64, cutoffs: &CutoffGrid) -> Result<RhoSolution> {
    check_len(pi.len(), cutoffs)?;
    let pi = pi.as_slice();
    if pi[0] == 0.0 {
        return Err(Error::NonNormalizable("pi_1 = 0 leaves rho unnormalizable".into()));
    }
    let m = masses(theta0, tau, sigma, cutoffs)?;
    if let Some(j) = (0..m.len()).find(|&j| m[j] == 0.0 && pi[j] > 0.0) {
        return Err(Error::SingularRegion(format!("interval {} has zero mass but pi > 0", j + 1)));
    }
    let base = pi[0] / m[0];
    let rho: Vec<f64> = pi
        .iter()
        .zip(&m)
        .enumerate()
        .map(|(j, (p, m))| if j == 0 { 1.0 } else if *p == 0.0 { 0.0 } else { p / m / base })
        .collect();
    let rho = SelectionProbs::unordered(rho)?;
    let decreasing = rho.is_decreasing();
    Ok(RhoSolution { rho, decreasing })
}

fn check_len(len: usize, cutoffs: &CutoffGrid) -> Result<()> {
    if len != cutoffs.len() {
        return Err(Error::Domain(format!(
            "weight vector has {len} entries but the cutoff grid has {} intervals",
            cutoffs.len()
        )));
    }
    Ok(())
}

/// Matched mixture weights for several standard errors and the largest
/// disagreement between them.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceGap {
    pub sigmas: Vec<f64>,
    pub matched_pi: Vec<Vec<f64>>,
    /// max over study pairs and intervals of |π_j(σ_a) − π_j(σ_b)|.
    pub max_discrepancy: f64,
}

/// Any single π misses the matched weights of some study by at least half of
/// `max_discrepancy`, so a positive gap certifies non-equivalence.
pub fn equivalence_gap(
    rho: &SelectionProbs,
    theta0: f64,
    tau: f64,
    sigmas: &[f64],
    cutoffs: &CutoffGrid,
) -> Result<EquivalenceGap> {
    let matched_pi = sigmas
        .iter()
        .map(|&s| rho_to_pi(rho, theta0, tau, s, cutoffs).map(|p| p.as_slice().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut max_discrepancy: f64 = 0.0;
    for (a, pa) in matched_pi.iter().enumerate() {
        for pb in &matched_pi[a + 1..] {
            for (x, y) in pa.iter().zip(pb) {
                max_discrepancy = max_discrepancy.max((x - y).abs());
            }
        }
    }
    Ok(EquivalenceGap { sigmas: sigmas.to_vec(), matched_pi, max_discrepancy })
}

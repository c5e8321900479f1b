//! Bijections between constrained parameter states and ℝ^d.
//!
//! Layout of the unconstrained vector: `[θ₀, log τ?, weight logits…,
//! latent θᵢ…]`. τ is present for random effects only; the J − 1 weight
//! logits stick-break π directly, or the Dirichlet increments of ρ; latent
//! θᵢ appear for random-effects p-hacking.

use crate::error::{Error, Result};
use crate::model::{Family, HackingProbs, ModelSpec, ParamState, SelectionProbs, Weights};
use crate::priors::{rho_from_increments, rho_increments};

/// Position of each block within the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub tau: Option<usize>,
    pub weights: usize,
    pub weight_len: usize,
    pub latent: usize,
    pub latent_len: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec, n_studies: usize) -> Self {
        let tau = spec.has_tau().then_some(1);
        let weights = 1 + usize::from(spec.has_tau());
        let weight_len = spec.weight_dim();
        let latent = weights + weight_len;
        let latent_len = if spec.uses_latent() { n_studies } else { 0 };
        Layout { tau, weights, weight_len, latent, latent_len }
    }

    pub fn dim(&self) -> usize {
        self.latent + self.latent_len
    }

    /// Coordinates updated as one block (everything except latent effects).
    pub fn hyper_dim(&self) -> usize {
        self.latent
    }
}

#[inline]
fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// log σ(y) and log(1 − σ(y)) without cancellation.
#[inline]
fn log_logistic_pair(y: f64) -> (f64, f64) {
    let softplus = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
    (-softplus(-y), -softplus(y))
}

/// Stick-breaking map from K − 1 logits onto the K-simplex, with the log
/// Jacobian of the map onto the first K − 1 coordinates.
pub fn stick_breaking(y: &[f64]) -> (Vec<f64>, f64) {
    let mut x = Vec::with_capacity(y.len() + 1);
    let mut remaining = 1.0f64;
    let mut log_jac = 0.0;
    for &yk in y {
        let z = logistic(yk);
        let (lz, l1z) = log_logistic_pair(yk);
        log_jac += lz + l1z + remaining.ln();
        let xk = remaining * z;
        x.push(xk);
        remaining -= xk;
    }
    x.push(remaining.max(0.0));
    (x, log_jac)
}

/// Inverse of [`stick_breaking`]; the simplex point must be interior.
pub fn stick_breaking_inverse(x: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0f64;
    let mut y = Vec::with_capacity(x.len().saturating_sub(1));
    for &xk in &x[..x.len() - 1] {
        let z = xk / remaining;
        y.push(z.ln() - (-z).ln_1p());
        remaining -= xk;
    }
    y
}

/// Constrained state → unconstrained vector.
pub fn to_unconstrained(state: &ParamState, spec: &ModelSpec) -> Result<Vec<f64>> {
    let n = state.latent_thetas.as_ref().map_or(0, Vec::len);
    if spec.uses_latent() != state.latent_thetas.is_some() {
        return Err(Error::Domain("latent effects present exactly when the spec samples them".into()));
    }
    let layout = Layout::new(spec, n);
    let mut v = Vec::with_capacity(layout.dim());
    v.push(state.theta0);
    if spec.has_tau() {
        if !(state.tau > 0.0) {
            return Err(Error::Domain(format!("tau must be positive, got {}", state.tau)));
        }
        v.push(state.tau.ln());
    }
    let j = spec.cutoffs.len();
    match (spec.family, &state.weights) {
        (Family::Uncorrected, Weights::None) => {}
        (Family::PubBias, Weights::Rho(rho)) if rho.len() == j => {
            v.extend(stick_breaking_inverse(&rho_increments(rho.as_slice())))
        }
        (Family::PHack, Weights::Pi(pi)) if pi.len() == j => v.extend(stick_breaking_inverse(pi.as_slice())),
        (family, w) => return Err(Error::Domain(format!("weights {w:?} do not fit family {family}"))),
    }
    if let Some(t) = &state.latent_thetas {
        v.extend_from_slice(t);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("state maps outside the interior: {v:?}")));
    }
    Ok(v)
}

/// Unconstrained vector → state, with the log Jacobian of the inverse map.
pub fn from_unconstrained(v: &[f64], spec: &ModelSpec, n_studies: usize) -> Result<(ParamState, f64)> {
    let layout = Layout::new(spec, n_studies);
    if v.len() != layout.dim() {
        return Err(Error::Domain(format!(
            "expected {} unconstrained coordinates, got {}",
            layout.dim(),
            v.len()
        )));
    }
    let mut log_jac = 0.0;
    let tau = match layout.tau {
        Some(i) => {
            log_jac += v[i];
            v[i].exp()
        }
        None => 0.0,
    };
    let logits = &v[layout.weights..layout.weights + layout.weight_len];
    let weights = match spec.family {
        Family::Uncorrected => Weights::None,
        Family::PubBias => {
            let (d, lj) = stick_breaking(logits);
            log_jac += lj;
            Weights::Rho(SelectionProbs::unordered(rho_from_increments(&d))?)
        }
        Family::PHack => {
            let (pi, lj) = stick_breaking(logits);
            log_jac += lj;
            Weights::Pi(HackingProbs::normalized(pi)?)
        }
    };
    let latent_thetas = spec
        .uses_latent()
        .then(|| v[layout.latent..].to_vec());
    Ok((ParamState { theta0: v[0], tau, weights, latent_thetas }, log_jac))
}

//! Observation densities for the uncorrected, publication-bias and p-hacking
//! models, in fixed- and random-effects form.
//!
//! A study's p-value is one-sided normal, `u = 1 − Φ(x/σ)`, so the p-value
//! cutoffs become effect-space thresholds `c_j = σ·Φ⁻¹(1 − α_j)` that scale
//! with the study's standard error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CutoffGrid, Effects, Family, HackingProbs, ModelSpec, SelectionProbs, Study, Weights};
use crate::quadrature::{integrate, integrate_panels, GaussHermite};
use crate::special::{log_normal_pdf, log_std_interval, lse, std_cdf, std_interval};

/// Default Gauss–Hermite order for the random-effects p-hacking marginal.
pub const DEFAULT_QUAD_ORDER: usize = 41;

/// One-sided normal p-value `1 − Φ(x/σ)`.
#[inline]
pub fn p_value_one_sided(study: &Study) -> f64 {
    std_cdf(-study.z())
}

/// Effect-space thresholds `(+∞, c_1, …, c_{J−1}, −∞)` for a study with
/// standard error `se`. `x > c_j` exactly when the p-value is below `α_j`.
pub fn cutoffs_in_effect_space(cutoffs: &CutoffGrid, se: f64) -> Vec<f64> {
    cutoffs.z_bounds().iter().map(|z| z * se).collect()
}

/// log ρ_j for the interval holding p-value `u`.
pub fn log_step_weight(u: f64, rho: &SelectionProbs, cutoffs: &CutoffGrid) -> f64 {
    rho.as_slice()[cutoffs.interval_of_u(u)].ln()
}

/// Standardized bounds of interval `j` for an observation with mean `mean`
/// and sd `sd` whose p-value uses standard error `se`.
#[inline]
fn bounds(cutoffs: &CutoffGrid, j: usize, mean: f64, sd: f64, se: f64) -> (f64, f64) {
    let z = cutoffs.z_bounds();
    ((z[j + 1] * se - mean) / sd, (z[j] * se - mean) / sd)
}

/// Probability that N(mean, sd²) lands in each p-value interval of a study
/// with standard error `study_se`.
pub fn interval_masses(mean: f64, sd: f64, study_se: f64, cutoffs: &CutoffGrid) -> Vec<f64> {
    (0..cutoffs.len())
        .map(|j| {
            let (a, b) = bounds(cutoffs, j, mean, sd, study_se);
            std_interval(a, b)
        })
        .collect()
}

/// Log of [`interval_masses`], accurate when masses underflow.
pub fn log_interval_masses(mean: f64, sd: f64, study_se: f64, cutoffs: &CutoffGrid) -> Vec<f64> {
    (0..cutoffs.len())
        .map(|j| {
            let (a, b) = bounds(cutoffs, j, mean, sd, study_se);
            log_std_interval(a, b)
        })
        .collect()
}

/// log Σ_j ρ_j m_j, the publication-bias normalizing constant.
fn log_selection_normalizer(mean: f64, sd: f64, se: f64, rho: &[f64], cutoffs: &CutoffGrid) -> f64 {
    let linear: f64 = (0..cutoffs.len())
        .filter(|&j| rho[j] > 0.0)
        .map(|j| {
            let (a, b) = bounds(cutoffs, j, mean, sd, se);
            rho[j] * std_interval(a, b)
        })
        .sum();
    if linear > 1e-250 {
        return linear.ln();
    }
    let terms: Vec<f64> = log_interval_masses(mean, sd, se, cutoffs)
        .iter()
        .zip(rho)
        .map(|(lm, r)| lm + r.ln())
        .collect();
    lse(&terms)
}

/// Mixture weights `π*_j = ρ_j m_j / Σ_k ρ_k m_k` of the publication-bias
/// model written as a mixture of truncated normals.
pub fn mixture_weights_pistar(
    mean: f64,
    sd: f64,
    study_se: f64,
    rho: &SelectionProbs,
    cutoffs: &CutoffGrid,
) -> Result<Vec<f64>> {
    Ok(log_mixture_weights_pistar(mean, sd, study_se, rho.as_slice(), cutoffs)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

pub(crate) fn log_mixture_weights_pistar(
    mean: f64,
    sd: f64,
    se: f64,
    rho: &[f64],
    cutoffs: &CutoffGrid,
) -> Result<Vec<f64>> {
    let terms: Vec<f64> = log_interval_masses(mean, sd, se, cutoffs)
        .iter()
        .zip(rho)
        .map(|(lm, r)| lm + r.ln())
        .collect();
    let norm = lse(&terms);
    if norm == f64::NEG_INFINITY {
        return Err(Error::SingularRegion(format!(
            "selection-weighted mass is zero at mean {mean}, sd {sd}"
        )));
    }
    Ok(terms.iter().map(|t| t - norm).collect())
}

#[inline]
fn total_sd(se: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        se
    } else {
        (tau * tau + se * se).sqrt()
    }
}

/// Normal random-effects (τ > 0) or fixed-effects (τ = 0) log-density with
/// no selection.
pub fn loglik_uncorrected(study: &Study, theta0: f64, tau: f64) -> f64 {
    log_normal_pdf(study.effect, theta0, total_sd(study.se, tau))
}

/// Publication-bias log-density in weight-function form:
/// `log φ(x; θ₀, s) + log ρ_{j(x)} − log Σ_j ρ_j m_j(θ₀, s, σ)` with
/// `s = √(τ² + σ²)`.
pub fn loglik_pubbias(
    study: &Study,
    theta0: f64,
    tau: f64,
    rho: &SelectionProbs,
    cutoffs: &CutoffGrid,
) -> Result<f64> {
    let sd = total_sd(study.se, tau);
    let rho = rho.as_slice();
    let j = cutoffs.interval_of_z(study.z());
    let norm = log_selection_normalizer(theta0, sd, study.se, rho, cutoffs);
    if norm == f64::NEG_INFINITY {
        return Err(Error::SingularRegion(format!(
            "publication-bias normalizer vanishes at theta0 {theta0}, tau {tau}"
        )));
    }
    Ok(log_normal_pdf(study.effect, theta0, sd) + rho[j].ln() - norm)
}

/// Publication-bias log-density in truncated-mixture form
/// `log Σ_j π*_j · TN(x; θ₀, s, [c_j, c_{j−1}))`.
pub fn loglik_pubbias_mixture_form(
    study: &Study,
    theta0: f64,
    tau: f64,
    rho: &SelectionProbs,
    cutoffs: &CutoffGrid,
) -> Result<f64> {
    let sd = total_sd(study.se, tau);
    let log_pistar = log_mixture_weights_pistar(theta0, sd, study.se, rho.as_slice(), cutoffs)?;
    Ok(log_truncated_mixture(study.effect, theta0, sd, study.se, &log_pistar, cutoffs))
}

/// `log Σ_j exp(log_w_j) · TN(x; mean, sd, [c_j, c_{j−1}))` where the
/// thresholds come from standard error `se`. The components have disjoint
/// supports, so only the one containing `x` contributes.
pub fn log_truncated_mixture(
    x: f64,
    mean: f64,
    sd: f64,
    se: f64,
    log_w: &[f64],
    cutoffs: &CutoffGrid,
) -> f64 {
    let j = cutoffs.interval_of_z(x / se);
    if log_w[j] == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let (a, b) = bounds(cutoffs, j, mean, sd, se);
    log_w[j] + log_normal_pdf(x, mean, sd) - log_std_interval(a, b)
}

/// Fixed-effects p-hacking log-density: a π-mixture of N(θ, σ²) truncated to
/// the p-value intervals.
pub fn loglik_phack_fixed(study: &Study, theta: f64, pi: &HackingProbs, cutoffs: &CutoffGrid) -> Result<f64> {
    let j = cutoffs.interval_of_z(study.z());
    let pj = pi.as_slice()[j];
    if pj == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (a, b) = bounds(cutoffs, j, theta, study.se, study.se);
    let log_mass = log_std_interval(a, b);
    if log_mass == f64::NEG_INFINITY {
        return Err(Error::SingularRegion(format!(
            "interval {j} has no mass under theta {theta}"
        )));
    }
    Ok(pj.ln() + log_normal_pdf(study.effect, theta, study.se) - log_mass)
}

/// Random-effects p-hacking log-density with θ ~ N(θ₀, τ²) integrated out by
/// Gauss–Hermite quadrature of order `quad_order`.
///
/// The rule is centred at the mode of the (log-concave) integrand in θ and
/// scaled by its curvature. A second rule at a wider scale checks the
/// estimate; integrands with a heavy prior-scale shoulder, which occur when
/// x sits near a cutoff and σ ≪ τ, fall back to Gauss–Kronrod panels that
/// widen from the mode out to the prior scale.
pub fn loglik_phack_random_marginal(
    study: &Study,
    theta0: f64,
    tau: f64,
    pi: &HackingProbs,
    cutoffs: &CutoffGrid,
    quad_order: usize,
) -> Result<f64> {
    if quad_order < 21 {
        return Err(Error::Domain(format!("quadrature order must be at least 21, got {quad_order}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be nonnegative, got {tau}")));
    }
    if tau == 0.0 {
        return loglik_phack_fixed(study, theta0, pi, cutoffs);
    }
    let gh = GaussHermite::cached(quad_order);
    Ok(phack_marginal_with_rule(study, theta0, tau, pi.as_slice(), cutoffs, &gh))
}

/// Largest disagreement (in log units) between two Gauss–Hermite scalings
/// accepted without switching to adaptive integration.
const GH_AGREEMENT: f64 = 1e-9;
const PANEL_LIMIT: usize = 200;

pub(crate) fn phack_marginal_with_rule(
    study: &Study,
    theta0: f64,
    tau: f64,
    pi: &[f64],
    cutoffs: &CutoffGrid,
    gh: &GaussHermite,
) -> f64 {
    let x = study.effect;
    let se = study.se;
    let j = cutoffs.interval_of_z(study.z());
    if pi[j] == 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = cutoffs.z_bounds();
    let (lo, hi) = (z[j + 1], z[j]);
    // Log integrand over the study effect. It is concave (truncated normal is
    // an exponential family in θ/σ²), so Gauss–Hermite is centred on its mode.
    let g = |theta: f64| {
        let shift = theta / se;
        log_normal_pdf(x, theta, se) - log_std_interval(lo - shift, hi - shift)
            + log_normal_pdf(theta, theta0, tau)
    };
    let (s2, t2) = (se * se, tau * tau);
    let total = s2 + t2;
    let mut mode = (theta0 * s2 + x * t2) / total;
    let h = 1e-4 * (s2 * t2 / total).sqrt();
    let curvature = |m: f64, gm: f64| (g(m + h) - 2.0 * gm + g(m - h)) / (h * h);
    let mut gm = g(mode);
    for _ in 0..100 {
        let grad = (g(mode + h) - g(mode - h)) / (2.0 * h);
        let curv = curvature(mode, gm).min(-1.0 / t2.max(s2));
        let mut step = -grad / curv;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = mode + step;
            let gc = g(cand);
            if gc >= gm {
                mode = cand;
                gm = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.abs() < 1e-10 * (1.0 + mode.abs()) {
            break;
        }
    }
    let scale = (-1.0 / curvature(mode, gm)).sqrt();
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { (s2 * t2 / total).sqrt() };
    let ln_sqrt_pi = 0.5 * std::f64::consts::PI.ln();
    let gh_estimate = |scale: f64| {
        let terms: Vec<f64> = gh
            .nodes
            .iter()
            .zip(&gh.log_weights)
            .map(|(t, lw)| lw + ln_sqrt_pi + t * t + g(mode + std::f64::consts::SQRT_2 * scale * t))
            .collect();
        (std::f64::consts::SQRT_2 * scale).ln() + lse(&terms)
    };
    let primary = gh_estimate(scale);
    let check = gh_estimate(1.25 * scale);
    if (primary - check).abs() <= GH_AGREEMENT && primary.is_finite() {
        return pi[j].ln() + primary;
    }
    // The integrand mixes the study-level scale with the heavier prior-scale
    // tail. Panels double in width away from the mode up to the prior scale
    // and stop once the (unimodal) integrand has dropped by e^-46.
    let cap = tau.max(scale);
    let mut edges = vec![mode];
    for dir in [-1.0, 1.0] {
        let (mut at, mut width) = (mode, scale);
        for _ in 0..PANEL_LIMIT {
            at += dir * width;
            edges.push(at);
            if g(at) - gm < -46.0 {
                break;
            }
            width = (2.0 * width).min(cap);
        }
    }
    edges.sort_by(f64::total_cmp);
    let q = integrate_panels(|t| (g(t) - gm).exp(), &edges);
    pi[j].ln() + gm + q.ln()
}

/// Marginal log-density of one study under `spec`, integrating out study
/// effects. Used for pointwise log-likelihoods.
pub fn marginal_loglik(
    study: &Study,
    spec: &ModelSpec,
    theta0: f64,
    tau: f64,
    weights: &Weights,
    quad_order: usize,
) -> Result<f64> {
    let tau = if spec.effects == Effects::Fixed { 0.0 } else { tau };
    match (spec.family, weights) {
        (Family::Uncorrected, _) => Ok(loglik_uncorrected(study, theta0, tau)),
        (Family::PubBias, Weights::Rho(rho)) => loglik_pubbias(study, theta0, tau, rho, &spec.cutoffs),
        (Family::PHack, Weights::Pi(pi)) => match spec.effects {
            Effects::Fixed => loglik_phack_fixed(study, theta0, pi, &spec.cutoffs),
            Effects::Random => loglik_phack_random_marginal(study, theta0, tau, pi, &spec.cutoffs, quad_order),
        },
        (family, w) => Err(Error::Domain(format!("weights {w:?} do not match family {family}"))),
    }
}

/// Posterior of a study's own effect θ given its observation and the
/// hyperparameters.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaPosterior {
    pub mean: f64,
    pub sd: f64,
    #[serde(skip)]
    shape: PosteriorShape,
}

#[derive(Debug, Clone)]
enum PosteriorShape {
    Normal,
    Numeric {
        x: f64,
        se: f64,
        theta0: f64,
        tau: f64,
        lo: f64,
        hi: f64,
        log_norm: f64,
    },
}

impl ThetaPosterior {
    pub fn log_density(&self, theta: f64) -> f64 {
        match &self.shape {
            PosteriorShape::Normal => log_normal_pdf(theta, self.mean, self.sd),
            PosteriorShape::Numeric { x, se, theta0, tau, lo, hi, log_norm } => {
                phack_theta_kernel(theta, *x, *se, *theta0, *tau, *lo, *hi) - log_norm
            }
        }
    }

    pub fn density(&self, theta: f64) -> f64 {
        self.log_density(theta).exp()
    }
}

fn phack_theta_kernel(theta: f64, x: f64, se: f64, theta0: f64, tau: f64, lo: f64, hi: f64) -> f64 {
    let shift = theta / se;
    log_normal_pdf(x, theta, se) - log_std_interval(lo - shift, hi - shift) + log_normal_pdf(theta, theta0, tau)
}

/// Posterior of θᵢ given xᵢ under a random-effects model.
///
/// For the uncorrected and publication-bias families the step weight depends
/// on x only, so it cancels and the posterior is the conjugate normal. The
/// p-hacking posterior is normalized numerically.
pub fn posterior_theta_given_x(
    study: &Study,
    theta0: f64,
    tau: f64,
    spec: &ModelSpec,
    weights: &Weights,
) -> Result<ThetaPosterior> {
    if spec.effects == Effects::Fixed {
        return Err(Error::Domain("study-level posterior needs a random-effects model".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let (s2, t2) = (study.se * study.se, tau * tau);
    let mean = (theta0 * s2 + study.effect * t2) / (s2 + t2);
    let sd = (s2 * t2 / (s2 + t2)).sqrt();
    match (spec.family, weights) {
        (Family::Uncorrected, _) | (Family::PubBias, _) => Ok(ThetaPosterior { mean, sd, shape: PosteriorShape::Normal }),
        (Family::PHack, Weights::Pi(pi)) => {
            let j = spec.cutoffs.interval_of_z(study.z());
            if pi.as_slice()[j] == 0.0 {
                return Err(Error::SingularRegion("observation lies in an interval with zero propensity".into()));
            }
            let z = spec.cutoffs.z_bounds();
            let (lo, hi) = (z[j + 1], z[j]);
            let (x, se) = (study.effect, study.se);
            let kernel = |th: f64| phack_theta_kernel(th, x, se, theta0, tau, lo, hi);
            let reference = kernel(mean);
            let span = 40.0 * tau.max(se);
            let (a, b) = (theta0.min(x) - span, theta0.max(x) + span);
            let mass = integrate(|th| (kernel(th) - reference).exp(), a, b, 1e-14, 1e-12).value;
            let log_norm = reference + mass.ln();
            let m1 = integrate(|th| th * (kernel(th) - log_norm).exp(), a, b, 1e-14, 1e-12).value;
            let m2 = integrate(|th| (th - m1).powi(2) * (kernel(th) - log_norm).exp(), a, b, 1e-14, 1e-12).value;
            Ok(ThetaPosterior {
                mean: m1,
                sd: m2.sqrt(),
                shape: PosteriorShape::Numeric { x, se, theta0, tau, lo, hi, log_norm },
            })
        }
        (family, w) => Err(Error::Domain(format!("weights {w:?} do not match family {family}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_pieces;

    fn grid() -> CutoffGrid {
        CutoffGrid::default()
    }

    fn rho() -> SelectionProbs {
        SelectionProbs::new(vec![1.0, 0.7, 0.1]).unwrap()
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(p_value_one_sided(&Study::new(0.0, 1.0).unwrap()), 0.5);
        assert!((p_value_one_sided(&Study::new(1.959964, 1.0).unwrap()) - 0.025).abs() < 1e-7);
        assert!((p_value_one_sided(&Study::new(3.289707, 2.0).unwrap()) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn effect_space_cutoffs() {
        let c = cutoffs_in_effect_space(&grid(), 1.0);
        assert_eq!(c[0], f64::INFINITY);
        assert!((c[1] - 1.959964).abs() < 1e-6);
        assert!((c[2] - 1.644854).abs() < 1e-6);
        assert_eq!(c[3], f64::NEG_INFINITY);
        let c = cutoffs_in_effect_space(&grid(), 2.0);
        assert!((c[1] - 3.919928).abs() < 1e-6);
        assert!((c[2] - 3.289707).abs() < 1e-6);
        let median = CutoffGrid::new(vec![0.5, 1.0]).unwrap();
        let c = cutoffs_in_effect_space(&median, 1.0);
        assert_eq!(c.len(), 3);
        assert!(c[1].abs() < 1e-15);
    }

    #[test]
    fn step_weight_examples() {
        assert_eq!(log_step_weight(0.01, &rho(), &grid()), 0.0);
        assert!((log_step_weight(0.03, &rho(), &grid()) - 0.7f64.ln()).abs() < 1e-15);
        assert!((log_step_weight(0.5, &rho(), &grid()) - 0.1f64.ln()).abs() < 1e-15);
        assert_eq!(log_step_weight(0.0, &rho(), &grid()), 0.0);
        assert!((log_step_weight(0.025, &rho(), &grid())).abs() < 1e-15);
    }

    #[test]
    fn mass_examples() {
        let m = interval_masses(0.0, 1.0, 1.0, &grid());
        for (a, b) in m.iter().zip([0.025, 0.025, 0.95]) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = interval_masses(0.0, 1.25f64.sqrt(), 1.0, &grid());
        assert!((m[0] - 0.039797).abs() < 1e-6);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = interval_masses(10.0, 1.0, 1.0, &grid());
        assert!((m[0] - 1.0).abs() < 1e-12 && m[1] < 1e-12 && m[2] < 1e-12);
    }

    #[test]
    fn pistar_examples() {
        let flat = SelectionProbs::new(vec![1.0, 1.0, 1.0]).unwrap();
        let p = mixture_weights_pistar(0.3, 1.1, 0.8, &flat, &grid()).unwrap();
        let m = interval_masses(0.3, 1.1, 0.8, &grid());
        for (a, b) in p.iter().zip(&m) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = mixture_weights_pistar(0.0, 1.0, 1.0, &rho(), &grid()).unwrap();
        let expected = [0.025 / 0.1375, 0.0175 / 0.1375, 0.095 / 0.1375];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.181818).abs() < 1e-6);
        let hard = SelectionProbs::new(vec![1.0, 0.0, 0.0]).unwrap();
        let p = mixture_weights_pistar(0.0, 1.0, 1.0, &hard, &grid()).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        // All-zero weighted mass: selection only on an interval with no mass.
        assert!(matches!(
            mixture_weights_pistar(-1e200, 1.0, 1.0, &hard, &grid()),
            Err(Error::SingularRegion(_))
        ));
    }

    #[test]
    fn uncorrected_examples() {
        let s = Study::new(0.0, 1.0).unwrap();
        assert!((loglik_uncorrected(&s, 0.0, 0.0) + 0.918939).abs() < 1e-6);
        let s = Study::new(1.0, 1.0).unwrap();
        let expected = -0.918_938_533_204_672_8 - 2f64.sqrt().ln() - 0.25;
        assert!((loglik_uncorrected(&s, 0.0, 1.0) - expected).abs() < 1e-14);
        assert!((loglik_uncorrected(&s, 0.0, 1.0) + 1.515513).abs() < 1e-6);
    }

    #[test]
    fn pubbias_examples() {
        let s = Study::new(0.0, 1.0).unwrap();
        let v = loglik_pubbias(&s, 0.0, 0.0, &rho(), &grid()).unwrap();
        let expected = -0.918_938_533_204_672_8 + 0.1f64.ln() - 0.1375f64.ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v + 1.237393).abs() < 1e-6);
        let flat = SelectionProbs::new(vec![1.0, 1.0, 1.0]).unwrap();
        for &(x, se, th, tau) in &[(0.3, 0.2, 0.1, 0.4), (2.5, 1.0, -1.0, 0.0), (-0.7, 0.5, 0.9, 1.3)] {
            let s = Study::new(x, se).unwrap();
            let a = loglik_pubbias(&s, th, tau, &flat, &grid()).unwrap();
            let b = loglik_uncorrected(&s, th, tau);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn phack_fixed_examples() {
        let pi = HackingProbs::new(vec![1.0, 0.0, 0.0]).unwrap();
        let s = Study::new(2.5, 1.0).unwrap();
        let v = loglik_phack_fixed(&s, 0.0, &pi, &grid()).unwrap();
        let c1 = crate::special::std_quantile(0.975);
        let reference = crate::special::log_trunc_normal_pdf(2.5, 0.0, 1.0, c1, f64::INFINITY).unwrap();
        assert!((v - reference).abs() < 1e-14);
        // Zero propensity interval gives -inf, not an error.
        let s = Study::new(0.1, 1.0).unwrap();
        assert_eq!(loglik_phack_fixed(&s, 0.0, &pi, &grid()).unwrap(), f64::NEG_INFINITY);
        // Natural masses reproduce the uncorrected fixed-effects density.
        for &(x, se, th) in &[(0.1, 1.0, 0.3), (1.7, 0.9, 0.0), (3.0, 1.2, 1.0)] {
            let s = Study::new(x, se).unwrap();
            let pi = HackingProbs::normalized(interval_masses(th, se, se, &grid())).unwrap();
            let a = loglik_phack_fixed(&s, th, &pi, &grid()).unwrap();
            assert!((a - loglik_uncorrected(&s, th, 0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn phack_random_reduces_at_zero_tau() {
        let pi = HackingProbs::new(vec![0.6, 0.3, 0.1]).unwrap();
        let s = Study::new(0.4, 0.2).unwrap();
        let a = loglik_phack_random_marginal(&s, 0.2, 0.0, &pi, &grid(), 41).unwrap();
        let b = loglik_phack_fixed(&s, 0.2, &pi, &grid()).unwrap();
        assert_eq!(a, b);
        assert!(loglik_phack_random_marginal(&s, 0.2, 0.1, &pi, &grid(), 11).is_err());
    }

    #[test]
    fn conjugate_posterior_example() {
        let spec = ModelSpec::new(Family::Uncorrected, Effects::Random, grid());
        let s = Study::new(0.62, 0.2).unwrap();
        let post = posterior_theta_given_x(&s, 0.0, 0.2, &spec, &Weights::None).unwrap();
        assert!((post.mean - 0.31).abs() < 1e-12);
        let pb = ModelSpec::new(Family::PubBias, Effects::Random, grid());
        let post_pb = posterior_theta_given_x(&s, 0.0, 0.2, &pb, &Weights::Rho(rho())).unwrap();
        assert_eq!(post.mean, post_pb.mean);
        assert_eq!(post.sd, post_pb.sd);
        let fixed = ModelSpec::new(Family::Uncorrected, Effects::Fixed, grid());
        assert!(posterior_theta_given_x(&s, 0.0, 0.2, &fixed, &Weights::None).is_err());
    }

    #[test]
    fn phack_posterior_against_grid_sum() {
        let spec = ModelSpec::new(Family::PHack, Effects::Random, grid());
        let pi = HackingProbs::new(vec![1.0, 0.0, 0.0]).unwrap();
        let s = Study::new(0.62, 0.2).unwrap();
        let post = posterior_theta_given_x(&s, 0.18, 0.45, &spec, &Weights::Pi(pi)).unwrap();
        // Brute-force Riemann sum of the unnormalized kernel.
        let c1 = 0.2 * crate::special::std_quantile(0.975);
        let h = 1e-4;
        let (mut z, mut m1) = (0.0, 0.0);
        let mut th = -5.0;
        while th < 5.0 {
            let mass = crate::special::std_cdf((th - c1) / 0.2);
            let k = (-(0.62 - th).powi(2) / 0.08 - (th - 0.18).powi(2) / (2.0 * 0.45 * 0.45)).exp() / mass;
            z += k;
            m1 += th * k;
            th += h;
        }
        assert!((post.mean - m1 / z).abs() < 1e-6);
        assert!(post.mean < 0.62);
        let total = integrate(|t| post.density(t), -5.0, 5.0, 1e-12, 1e-12).value;
        assert!((total - 1.0).abs() < 1e-8);
    }

    fn phack_random_oracle(s: &Study, theta0: f64, tau: f64, pi: &HackingProbs) -> f64 {
        let f = |th: f64| {
            (loglik_phack_fixed(s, th, pi, &grid()).unwrap() + log_normal_pdf(th, theta0, tau)).exp()
        };
        let mut breaks: Vec<f64> = (-40..=40).map(|k| s.effect + 0.25 * k as f64 * s.se).collect();
        breaks.extend((-40..=40).map(|k| theta0 + 0.25 * k as f64 * tau));
        breaks.sort_by(f64::total_cmp);
        integrate_pieces(f, f64::NEG_INFINITY, f64::INFINITY, &breaks, 1e-300, 1e-13).value.ln()
    }

    #[test]
    fn phack_random_matches_adaptive_oracle() {
        let pi = HackingProbs::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let s = Study::new(1.0, 0.5).unwrap();
        let gh = loglik_phack_random_marginal(&s, 0.2, 0.3, &pi, &grid(), 41).unwrap();
        let oracle = phack_random_oracle(&s, 0.2, 0.3, &pi);
        assert!((gh - oracle).abs() < 1e-6, "{gh} vs {oracle}");

        let mut rng = crate::rng::StreamRng::new(99, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..300 {
            let se = 0.05 + 0.5 * rng.uniform();
            let tau = 0.01 + 1.0 * rng.uniform();
            let theta0 = -1.0 + 2.0 * rng.uniform();
            let x = theta0 + 3.0 * (tau * tau + se * se).sqrt() * (2.0 * rng.uniform() - 1.0);
            let pi = HackingProbs::normalized(vec![rng.uniform(), rng.uniform(), rng.uniform()]).unwrap();
            let s = Study::new(x, se).unwrap();
            let gh = loglik_phack_random_marginal(&s, theta0, tau, &pi, &grid(), 41).unwrap();
            let oracle = phack_random_oracle(&s, theta0, tau, &pi);
            worst = worst.max((gh - oracle).abs());
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    #[test]
    fn phack_random_normalizes() {
        let mut rng = crate::rng::StreamRng::new(7, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let se = 0.05 + 0.5 * rng.uniform();
            let tau = 0.01 + 1.0 * rng.uniform();
            let theta0 = -1.0 + 2.0 * rng.uniform();
            let pi = HackingProbs::normalized(vec![rng.uniform(), rng.uniform(), rng.uniform()]).unwrap();
            let cuts = cutoffs_in_effect_space(&grid(), se);
            let sd = (tau * tau + se * se).sqrt();
            let mut breaks: Vec<f64> = cuts.clone();
            breaks.extend((-10..=10).map(|k| theta0 + k as f64 * sd));
            breaks.retain(|b| b.is_finite());
            breaks.sort_by(f64::total_cmp);
            let f = |x: f64| {
                let s = Study::new(x, se).unwrap();
                loglik_phack_random_marginal(&s, theta0, tau, &pi, &grid(), 41).unwrap().exp()
            };
            let q = integrate_pieces(f, f64::NEG_INFINITY, f64::INFINITY, &breaks, 1e-12, 1e-10);
            worst = worst.max((q.value - 1.0).abs());
        }
        assert!(worst < 1e-6, "worst {worst}");
    }
}

//! Selection sets for the two-variable normal-normal model
//! θ ~ N(μ, τ²), x | θ ~ N(θ, σ²), with selection s depending on the
//! one-sided p-value of x.
//!
//! For a selection set H ⊆ {x, θ} the selected density is
//! `q_H(x, θ) = p(s=1 | x) / p(s=1 | x_{Hᶜ}) · p(x, θ)`; the sampler draws
//! from it by resampling the coordinates in H until the study is accepted.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::integrate_pieces;
use crate::rng::StreamRng;
use crate::simulate::MAX_ATTEMPTS;
use crate::special::{log_normal_pdf, std_cdf, std_quantile};

const QUAD_TOL: f64 = 1e-14;

/// Variables resampled together until selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionSet {
    /// H = {x, θ}.
    Both,
    /// H = {x}; θ is held at its first draw.
    X,
    /// H = ∅.
    None,
}

impl FromStr for SelectionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" | "x,theta" => Ok(SelectionSet::Both),
            "x" => Ok(SelectionSet::X),
            "none" | "empty" => Ok(SelectionSet::None),
            other => Err(Error::Domain(format!("unknown selection set '{other}' (expected both, x or none)"))),
        }
    }
}

impl fmt::Display for SelectionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionSet::Both => "both",
            SelectionSet::X => "x",
            SelectionSet::None => "none",
        })
    }
}

/// Probability of selection as a function of the one-sided p-value u.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightRule {
    /// `weights[k]` applies on `[alphas[k-1], alphas[k])`, with
    /// `alphas` increasing in (0, 1) and one more weight than cutoff.
    Step { alphas: Vec<f64>, weights: Vec<f64> },
    Constant { value: f64 },
}

impl WeightRule {
    pub fn step(alphas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != alphas.len() + 1 {
            return Err(Error::Domain(format!(
                "a step rule with {} cutoffs needs {} weights, got {}",
                alphas.len(),
                alphas.len() + 1,
                weights.len()
            )));
        }
        if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!("step cutoffs must increase strictly inside (0, 1): {alphas:?}")));
        }
        check_probs(&weights)?;
        Ok(WeightRule::Step { alphas, weights })
    }

    pub fn constant(value: f64) -> Result<Self> {
        check_probs(&[value])?;
        Ok(WeightRule::Constant { value })
    }

    pub fn weight(&self, u: f64) -> f64 {
        match self {
            WeightRule::Constant { value } => *value,
            WeightRule::Step { alphas, weights } => weights[alphas.iter().take_while(|a| u >= **a).count()],
        }
    }

    /// Points in x where the rule jumps, for a study with standard error σ.
    fn x_breaks(&self, sigma: f64) -> Vec<f64> {
        match self {
            WeightRule::Constant { .. } => Vec::new(),
            WeightRule::Step { alphas, .. } => alphas.iter().map(|a| sigma * std_quantile(1.0 - a)).collect(),
        }
    }
}

fn check_probs(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Domain(format!("selection probabilities must lie in [0, 1], got {v}"))),
        None => Ok(()),
    }
}

/// `step:A1,A2,…:W1,W2,…` (the weight below the first cutoff is 1) or
/// `constant:V`.
impl FromStr for WeightRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let list = |text: &str| -> Result<Vec<f64>> {
            text.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Domain(format!("not a number: '{v}'"))))
                .collect()
        };
        match parts.as_slice() {
            ["constant", v] => WeightRule::constant(list(v)?[0]),
            ["step", alphas, weights] => {
                let mut all = vec![1.0];
                all.extend(list(weights)?);
                WeightRule::step(list(alphas)?, all)
            }
            _ => Err(Error::Domain(format!("cannot parse weight rule '{s}' (expected step:A:W or constant:V)"))),
        }
    }
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        match self {
            WeightRule::Constant { value } => write!(f, "constant:{value}"),
            WeightRule::Step { alphas, weights } if weights[0] == 1.0 => {
                write!(f, "step:{}:{}", join(alphas), join(&weights[1..]))
            }
            WeightRule::Step { alphas, weights } => write!(f, "step:{}:{} (leading {})", join(alphas), join(&weights[1..]), weights[0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionSpec {
    pub mu: f64,
    pub tau: f64,
    pub sigma: f64,
    pub rule: WeightRule,
    pub set: SelectionSet,
}

impl SelectionSpec {
    /// θ ~ N(0, 1), x | θ ~ N(θ, 1).
    pub fn standard(rule: WeightRule, set: SelectionSet) -> Self {
        SelectionSpec { mu: 0.0, tau: 1.0, sigma: 1.0, rule, set }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.tau > 0.0 && self.tau.is_finite() && self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "need finite mu and positive tau, sigma; got ({}, {}, {})",
                self.mu, self.tau, self.sigma
            )));
        }
        Ok(())
    }

    /// p(s = 1 | x).
    pub fn accept_given_x(&self, x: f64) -> f64 {
        self.rule.weight(1.0 - std_cdf(x / self.sigma))
    }

    fn accept_under_normal(&self, mean: f64, sd: f64) -> f64 {
        let mut breaks = self.rule.x_breaks(self.sigma);
        breaks.extend((-8..=8).map(|k| mean + k as f64 * sd));
        integrate_pieces(
            |x| self.accept_given_x(x) * log_normal_pdf(x, mean, sd).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &breaks,
            QUAD_TOL,
            1e-13,
        )
        .value
    }

    /// p(s = 1 | θ) = ∫ p(s=1 | x) p(x | θ) dx, by quadrature.
    pub fn accept_given_theta(&self, theta: f64) -> f64 {
        self.accept_under_normal(theta, self.sigma)
    }

    /// p(s = 1), by quadrature over the marginal of x.
    pub fn accept_marginal(&self) -> f64 {
        self.accept_under_normal(self.mu, self.tau.hypot(self.sigma))
    }

    pub fn base_density(&self, x: f64, theta: f64) -> f64 {
        (log_normal_pdf(theta, self.mu, self.tau) + log_normal_pdf(x, theta, self.sigma)).exp()
    }

    /// The normalizer p(s = 1 | x_{Hᶜ}) at θ.
    fn normalizer(&self, theta: f64) -> Result<f64> {
        let z = match self.set {
            SelectionSet::Both => self.accept_marginal(),
            SelectionSet::X => self.accept_given_theta(theta),
            SelectionSet::None => return Ok(f64::NAN),
        };
        if z > 0.0 {
            Ok(z)
        } else {
            Err(Error::SingularRegion(format!("selection probability is zero given {} (theta = {theta})", self.set)))
        }
    }

    /// Marginal density of θ under selection: p(θ) for H ∈ {∅, {x}} and
    /// p(θ) p(s=1 | θ) / p(s=1) for H = {x, θ}.
    pub fn theta_marginal(&self, theta: f64) -> Result<f64> {
        let prior = log_normal_pdf(theta, self.mu, self.tau).exp();
        match self.set {
            SelectionSet::Both => Ok(prior * self.accept_given_theta(theta) / self.normalizer(theta)?),
            _ => Ok(prior),
        }
    }

    /// E[θ] under the selected model.
    pub fn theta_mean(&self) -> Result<f64> {
        if self.set != SelectionSet::Both {
            return Ok(self.mu);
        }
        let z = self.normalizer(self.mu)?;
        let breaks: Vec<f64> = (-10..=10).map(|k| self.mu + k as f64 * self.tau).collect();
        Ok(integrate_pieces(
            |t| t * log_normal_pdf(t, self.mu, self.tau).exp() * self.accept_given_theta(t),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &breaks,
            1e-12,
            1e-10,
        )
        .value
            / z)
    }
}

/// q_H(x, θ).
pub fn q_h_density(spec: &SelectionSpec, x: f64, theta: f64) -> Result<f64> {
    spec.validate()?;
    let p = spec.base_density(x, theta);
    match spec.set {
        SelectionSet::None => {
            if spec.accept_given_x(x) > 0.0 {
                Ok(p)
            } else {
                Err(Error::SingularRegion(format!("selection probability is zero at x = {x}")))
            }
        }
        _ => Ok(spec.accept_given_x(x) / spec.normalizer(theta)? * p),
    }
}

/// A draw from q_H with the number of selection trials it took.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectedDraw {
    pub x: f64,
    pub theta: f64,
    pub attempts: u64,
}

fn one_draw(rng: &mut StreamRng, spec: &SelectionSpec) -> Result<SelectedDraw> {
    let mut theta = rng.normal(spec.mu, spec.tau);
    let mut x = rng.normal(theta, spec.sigma);
    for attempt in 1..=MAX_ATTEMPTS {
        let w = spec.accept_given_x(x);
        if w >= 1.0 || rng.uniform() < w {
            return Ok(SelectedDraw { x, theta, attempts: attempt });
        }
        match spec.set {
            SelectionSet::Both => {
                theta = rng.normal(spec.mu, spec.tau);
                x = rng.normal(theta, spec.sigma);
            }
            SelectionSet::X => x = rng.normal(theta, spec.sigma),
            SelectionSet::None if w == 0.0 => {
                return Err(Error::SingularRegion(format!("nothing can be resampled and p(s=1 | x = {x}) = 0")));
            }
            SelectionSet::None => {}
        }
    }
    Err(Error::PathologicalSelection { attempts: MAX_ATTEMPTS })
}

/// Rejection sampler for q_H: draw (x, θ) from the base model, then while
/// the study is not selected resample the coordinates in H, keeping the
/// others at their first values.
pub fn q_h_sampler(rng: &mut StreamRng, spec: &SelectionSpec, n: usize) -> Result<Vec<SelectedDraw>> {
    spec.validate()?;
    (0..n).map(|_| one_draw(rng, spec)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean_x: f64,
    pub sd_x: f64,
    pub mean_theta: f64,
    pub sd_theta: f64,
    pub mc_se_theta: f64,
    pub correlation: f64,
    pub mean_attempts: f64,
    /// E[θ] under q_H by quadrature.
    pub theta_mean_exact: f64,
}

pub fn summarize(spec: &SelectionSpec, draws: &[SelectedDraw]) -> Result<SampleSummary> {
    if draws.len() < 2 {
        return Err(Error::Domain("need at least two draws to summarize".into()));
    }
    let n = draws.len() as f64;
    let mean = |f: &dyn Fn(&SelectedDraw) -> f64| draws.iter().map(f).sum::<f64>() / n;
    let mx = mean(&|d| d.x);
    let mt = mean(&|d| d.theta);
    let vx = draws.iter().map(|d| (d.x - mx).powi(2)).sum::<f64>() / (n - 1.0);
    let vt = draws.iter().map(|d| (d.theta - mt).powi(2)).sum::<f64>() / (n - 1.0);
    let cov = draws.iter().map(|d| (d.x - mx) * (d.theta - mt)).sum::<f64>() / (n - 1.0);
    Ok(SampleSummary {
        n: draws.len(),
        mean_x: mx,
        sd_x: vx.sqrt(),
        mean_theta: mt,
        sd_theta: vt.sqrt(),
        mc_se_theta: (vt / n).sqrt(),
        correlation: cov / (vx * vt).sqrt(),
        mean_attempts: mean(&|d| d.attempts as f64),
        theta_mean_exact: spec.theta_mean()?,
    })
}

//! Posterior sampling by adaptive random-walk Metropolis in unconstrained
//! space, with multi-chain diagnostics.
//!
//! Models are sampled through [`ModelTarget`], which evaluates the log
//! posterior of an unconstrained vector (log-likelihood + log prior + log
//! Jacobian). Random-effects p-hacking carries one latent θᵢ per study; its
//! hyperparameters move as a block while the θᵢ get their own 1-D updates.

pub mod diagnostics;
mod sampler;
pub mod transform;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{loglik_phack_fixed, loglik_pubbias, loglik_uncorrected};
use crate::error::{Error, Result};
use crate::model::{Family, HackingProbs, ModelSpec, ParamState, SelectionProbs, Study, Weights};
use crate::priors::{log_prior, rho_from_increments, PriorConfig};
use crate::rng::{sample_dirichlet, StreamRng};
use crate::special::{log_normal_pdf, log_std_interval};

pub use diagnostics::{bulk_ess, diagnose, split_rhat, ParamDiagnostics};
pub use sampler::Target;
pub use transform::{from_unconstrained, to_unconstrained, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub seed: u64,
    /// Compute the draw × study log-likelihood matrix after sampling.
    pub pointwise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 8, warmup: 1000, draws: 1000, target_accept: 0.3, seed: 1, pointwise: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.warmup == 0 || self.draws == 0 {
            return Err(Error::Domain("chains, warmup and draws must all be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain(format!("target acceptance must lie in (0, 1), got {}", self.target_accept)));
        }
        Ok(())
    }
}

/// Log density of the observation given a state, using latent effects when
/// the state carries them.
fn conditional_loglik(study: &Study, state: &ParamState, spec: &ModelSpec, i: usize) -> f64 {
    let result = match (&state.weights, &state.latent_thetas) {
        (Weights::None, _) => Ok(loglik_uncorrected(study, state.theta0, state.tau)),
        (Weights::Rho(rho), _) => loglik_pubbias(study, state.theta0, state.tau, rho, &spec.cutoffs),
        (Weights::Pi(pi), Some(thetas)) => loglik_phack_fixed(study, thetas[i], pi, &spec.cutoffs),
        (Weights::Pi(pi), None) => loglik_phack_fixed(study, state.theta0, pi, &spec.cutoffs),
    };
    result.unwrap_or(f64::NEG_INFINITY)
}

/// Log posterior of an unconstrained vector: log-likelihood + log prior +
/// log Jacobian of the inverse transform.
pub fn log_posterior(v: &[f64], studies: &[Study], spec: &ModelSpec, prior: &PriorConfig) -> f64 {
    match from_unconstrained(v, spec, studies.len()) {
        Ok((state, log_jac)) => {
            let lp = log_prior(&state, prior, spec) + log_jac;
            if lp == f64::NEG_INFINITY || lp.is_nan() {
                return f64::NEG_INFINITY;
            }
            let mut total = lp;
            for (i, s) in studies.iter().enumerate() {
                total += conditional_loglik(s, &state, spec, i);
                if total == f64::NEG_INFINITY {
                    break;
                }
            }
            if total.is_nan() {
                f64::NEG_INFINITY
            } else {
                total
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// A model posterior as a sampler target.
pub struct ModelTarget<'a> {
    studies: &'a [Study],
    spec: &'a ModelSpec,
    prior: &'a PriorConfig,
    layout: Layout,
    intervals: Vec<usize>,
    interval_counts: Vec<f64>,
}

impl<'a> ModelTarget<'a> {
    pub fn new(studies: &'a [Study], spec: &'a ModelSpec, prior: &'a PriorConfig) -> Self {
        let layout = Layout::new(spec, studies.len());
        let intervals: Vec<usize> = studies.iter().map(|s| spec.cutoffs.interval_of_z(s.z())).collect();
        let mut interval_counts = vec![0.0; spec.cutoffs.len()];
        for &j in &intervals {
            interval_counts[j] += 1.0;
        }
        ModelTarget { studies, spec, prior, layout, intervals, interval_counts }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// log TN(xᵢ; θ, σᵢ) restricted to the interval holding xᵢ.
    fn latent_loglik(&self, i: usize, theta: f64) -> f64 {
        let s = &self.studies[i];
        let z = self.spec.cutoffs.z_bounds();
        let j = self.intervals[i];
        let shift = theta / s.se;
        log_normal_pdf(s.effect, theta, s.se) - log_std_interval(z[j + 1] - shift, z[j] - shift)
    }
}

impl Target for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        log_posterior(x, self.studies, self.spec, self.prior)
    }

    fn block_dim(&self) -> usize {
        self.layout.hyper_dim()
    }

    fn block_log_density(&self, x: &[f64]) -> f64 {
        if self.layout.latent_len == 0 {
            return self.log_density(x);
        }
        // Hyperparameters touch the likelihood only through log π_{j(i)}.
        let Ok((state, log_jac)) = from_unconstrained(x, self.spec, self.studies.len()) else {
            return f64::NEG_INFINITY;
        };
        let Weights::Pi(pi) = &state.weights else {
            return f64::NEG_INFINITY;
        };
        let counts: f64 = pi
            .as_slice()
            .iter()
            .zip(&self.interval_counts)
            .filter(|(_, c)| **c > 0.0)
            .map(|(p, c)| c * p.ln())
            .sum();
        let total = log_prior(&state, self.prior, self.spec) + log_jac + counts;
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    fn latent_log_density(&self, x: &[f64], k: usize) -> f64 {
        let i = k - self.layout.latent;
        let theta = x[k];
        let tau = x[1].exp();
        let v = log_normal_pdf(theta, x[0], tau) + self.latent_loglik(i, theta);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn latent_scale(&self, k: usize) -> f64 {
        self.studies[k - self.layout.latent].se
    }

    fn location_log_scale(&self) -> Option<(usize, usize)> {
        self.layout.tau.map(|t| (0, t))
    }
}

/// Posterior draws in constrained space, chain-major.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    /// `[chain][iteration][parameter]`.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// `[draw][study]` with draws ordered chain by chain.
    pub pointwise_loglik: Option<Vec<Vec<f64>>>,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub block_accept: Vec<f64>,
    pub latent_accept: Vec<Option<f64>>,
    pub spec: Option<ModelSpec>,
    pub n_studies: usize,
    pub config: SamplerConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: f64,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PosteriorDraws {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn total_draws(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    /// Per-chain traces of parameter `p`.
    pub fn chains_of(&self, p: usize) -> Vec<Vec<f64>> {
        self.samples.iter().map(|c| c.iter().map(|row| row[p]).collect()).collect()
    }

    /// All draws of parameter `p`, chain-major.
    pub fn pooled(&self, p: usize) -> Vec<f64> {
        self.samples.iter().flatten().map(|row| row[p]).collect()
    }

    pub fn mean_of(&self, name: &str) -> Option<f64> {
        let p = self.index_of(name)?;
        let v = self.pooled(p);
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn diagnostics_of(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.index_of(name).map(|p| &self.diagnostics[p])
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        self.param_names
            .iter()
            .enumerate()
            .map(|(p, name)| {
                let mut v = self.pooled(p);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                v.sort_by(f64::total_cmp);
                ParamSummary {
                    name: name.clone(),
                    mean,
                    sd,
                    q025: quantile_sorted(&v, 0.025),
                    q50: quantile_sorted(&v, 0.5),
                    q975: quantile_sorted(&v, 0.975),
                    rhat: self.diagnostics[p].rhat,
                    ess: self.diagnostics[p].ess,
                }
            })
            .collect()
    }

    /// Parameter states of every draw, chain-major. Only for model fits.
    pub fn states(&self) -> Result<Vec<ParamState>> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::Domain("draws do not come from a model fit".into()))?;
        Ok(self.samples.iter().flatten().map(|row| state_from_row(row, spec, self.n_studies)).collect())
    }

    /// One row per draw: chain, iteration, then the parameters.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iteration".to_string()];
        header.extend(self.param_names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.samples.iter().enumerate() {
            for (i, row) in chain.iter().enumerate() {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Summary statistics and diagnostics as JSON.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.spec.as_ref().map(ModelSpec::label),
            "cutoffs": self.spec.as_ref().map(|s| s.cutoffs.alphas().to_vec()),
            "n_studies": self.n_studies,
            "sampler": self.config,
            "block_accept": self.block_accept,
            "latent_accept": self.latent_accept,
            "parameters": self.summary(),
        })
    }
}

/// Parameter names of a model's constrained draws.
pub fn param_names(spec: &ModelSpec, n_studies: usize) -> Vec<String> {
    let mut names = vec!["theta0".to_string()];
    if spec.has_tau() {
        names.push("tau".into());
    }
    let j = spec.cutoffs.len();
    match spec.family {
        Family::Uncorrected => {}
        Family::PubBias => names.extend((2..=j).map(|k| format!("rho{k}"))),
        Family::PHack => names.extend((1..=j).map(|k| format!("pi{k}"))),
    }
    if spec.uses_latent() {
        names.extend((1..=n_studies).map(|i| format!("theta[{i}]")));
    }
    names
}

fn constrained_row(state: &ParamState, spec: &ModelSpec) -> Vec<f64> {
    let mut row = vec![state.theta0];
    if spec.has_tau() {
        row.push(state.tau);
    }
    match &state.weights {
        Weights::None => {}
        Weights::Rho(rho) => row.extend_from_slice(&rho.as_slice()[1..]),
        Weights::Pi(pi) => row.extend_from_slice(pi.as_slice()),
    }
    if let Some(t) = &state.latent_thetas {
        row.extend_from_slice(t);
    }
    row
}

fn state_from_row(row: &[f64], spec: &ModelSpec, n_studies: usize) -> ParamState {
    let mut pos = 1;
    let tau = if spec.has_tau() {
        pos += 1;
        row[1]
    } else {
        0.0
    };
    let j = spec.cutoffs.len();
    let weights = match spec.family {
        Family::Uncorrected => Weights::None,
        Family::PubBias => {
            let mut rho = vec![1.0];
            rho.extend_from_slice(&row[pos..pos + j - 1]);
            pos += j - 1;
            Weights::Rho(SelectionProbs::unordered(rho).expect("stored rho is valid"))
        }
        Family::PHack => {
            let pi = row[pos..pos + j].to_vec();
            pos += j;
            Weights::Pi(HackingProbs::normalized(pi).expect("stored pi is valid"))
        }
    };
    let latent_thetas = spec.uses_latent().then(|| row[pos..pos + n_studies].to_vec());
    ParamState { theta0: row[0], tau, weights, latent_thetas }
}

/// Overdispersed starting point around the data.
fn initial_state(rng: &mut StreamRng, studies: &[Study], spec: &ModelSpec) -> Result<ParamState> {
    let n = studies.len() as f64;
    let mean = studies.iter().map(|s| s.effect).sum::<f64>() / n;
    let sd = if studies.len() > 1 {
        (studies.iter().map(|s| (s.effect - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        studies[0].se
    };
    let theta0 = mean + 0.2 * rng.std_normal();
    let tau = if spec.has_tau() { sd * (0.5 + rng.uniform()) + 0.05 } else { 0.0 };
    let conc = vec![5.0; spec.cutoffs.len()];
    let weights = match spec.family {
        Family::Uncorrected => Weights::None,
        Family::PubBias => Weights::Rho(SelectionProbs::new(rho_from_increments(&sample_dirichlet(rng, &conc)?))?),
        Family::PHack => Weights::Pi(HackingProbs::normalized(sample_dirichlet(rng, &conc)?)?),
    };
    let latent_thetas = spec.uses_latent().then(|| studies.iter().map(|s| s.effect).collect());
    Ok(ParamState { theta0, tau, weights, latent_thetas })
}

const MAX_INIT_TRIES: usize = 100;

/// Samples any target with identity-named coordinates `x1, x2, …`.
pub fn sample_target<T, F>(target: &T, init: F, config: &SamplerConfig) -> Result<PosteriorDraws>
where
    T: Target,
    F: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    config.validate()?;
    let outputs = run_chains(target, &init, config)?;
    let names = (1..=target.dim()).map(|i| format!("x{i}")).collect();
    Ok(assemble(outputs, names, None, 0, config, |v| v.to_vec()))
}

fn run_chains<T, F>(target: &T, init: &F, config: &SamplerConfig) -> Result<Vec<sampler::ChainOutput>>
where
    T: Target,
    F: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamRng::new(config.seed, c as u64);
            let start = (0..MAX_INIT_TRIES)
                .map(|_| init(&mut rng))
                .find(|x| x.len() == target.dim() && target.log_density(x).is_finite())
                .ok_or_else(|| Error::AdaptationFailure {
                    chain: c,
                    message: format!("no finite-density starting point in {MAX_INIT_TRIES} attempts"),
                })?;
            sampler::run_chain(target, start, config, &mut rng, c)
        })
        .collect()
}

fn assemble(
    outputs: Vec<sampler::ChainOutput>,
    param_names: Vec<String>,
    spec: Option<ModelSpec>,
    n_studies: usize,
    config: &SamplerConfig,
    to_row: impl Fn(&[f64]) -> Vec<f64> + Sync,
) -> PosteriorDraws {
    let block_accept = outputs.iter().map(|o| o.block_accept).collect();
    let latent_accept = outputs.iter().map(|o| o.latent_accept).collect();
    let samples: Vec<Vec<Vec<f64>>> = outputs
        .into_par_iter()
        .map(|o| o.samples.iter().map(|v| to_row(v)).collect())
        .collect();
    let mut draws = PosteriorDraws {
        param_names,
        samples,
        pointwise_loglik: None,
        diagnostics: Vec::new(),
        block_accept,
        latent_accept,
        spec,
        n_studies,
        config: config.clone(),
    };
    draws.diagnostics = (0..draws.param_names.len())
        .into_par_iter()
        .map(|p| diagnose(&draws.chains_of(p)))
        .collect();
    draws
}

/// Fits `spec` to `studies`.
pub fn run_sampler(
    studies: &[Study],
    spec: &ModelSpec,
    prior: &PriorConfig,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    if studies.is_empty() {
        return Err(Error::Domain("cannot fit an empty dataset".into()));
    }
    config.validate()?;
    prior.validate(spec)?;
    let target = ModelTarget::new(studies, spec, prior);
    let init = |rng: &mut StreamRng| {
        initial_state(rng, studies, spec)
            .and_then(|s| to_unconstrained(&s, spec))
            .unwrap_or_default()
    };
    let outputs = run_chains(&target, &init, config)?;
    let n = studies.len();
    let mut draws = assemble(outputs, param_names(spec, n), Some(spec.clone()), n, config, |v| {
        let (state, _) = from_unconstrained(v, spec, n).expect("sampler stays in the parameter space");
        constrained_row(&state, spec)
    });
    if config.pointwise {
        draws.pointwise_loglik = Some(crate::loo::pointwise_loglik(&draws, studies, spec)?);
    }
    Ok(draws)
}

//! Bayesian selection models for publication bias and p-hacking in
//! meta-analysis.
//!
//! The crate provides the observation densities of the uncorrected,
//! publication-bias (step weight function) and p-hacking (truncated mixture)
//! models, their priors, an adaptive random-walk Metropolis sampler, PSIS
//! leave-one-out model comparison, data simulators for each selection
//! mechanism, the fixed-σ ρ↔π correspondence, and a small selection-set
//! laboratory for the normal-normal network.

pub mod densities;
pub mod equivalence;
pub mod error;
pub mod ingest;
pub mod loo;
pub mod mcmc;
pub mod model;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod selection_lab;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use model::{CutoffGrid, Effects, Family, HackingProbs, ModelSpec, ParamState, SelectionProbs, Study, Weights};
pub use rng::StreamRng;

//! Domain types shared by the likelihoods, priors, sampler and simulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::std_quantile;

/// One observed effect size with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub effect: f64,
    pub se: f64,
}

impl Study {
    pub fn new(effect: f64, se: f64) -> Result<Self> {
        if !effect.is_finite() {
            return Err(Error::Domain(format!("effect must be finite, got {effect}")));
        }
        if !(se > 0.0 && se.is_finite()) {
            return Err(Error::Domain(format!("standard error must be positive and finite, got {se}")));
        }
        Ok(Study { effect, se })
    }

    /// Standardized statistic x/σ.
    #[inline]
    pub fn z(&self) -> f64 {
        self.effect / self.se
    }
}

/// One-sided p-value thresholds `0 < α₁ < … < α_J = 1`.
///
/// Alongside the alphas the grid keeps the standardized thresholds
/// `z_j = Φ⁻¹(1 − α_j)` with `z_0 = +∞` and `z_J = −∞`; interval `j`
/// (zero-based) covers standardized statistics in `[z_{j+1}, z_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutoffGrid {
    alphas: Vec<f64>,
    z: Vec<f64>,
}

impl CutoffGrid {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::Domain("cutoff grid needs at least two intervals".into()));
        }
        if !(alphas[0] > 0.0) {
            return Err(Error::Domain(format!("first cutoff must be positive, got {}", alphas[0])));
        }
        if alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain(format!("cutoffs must be strictly increasing: {alphas:?}")));
        }
        if *alphas.last().unwrap() != 1.0 {
            return Err(Error::Domain("last cutoff must be exactly 1".into()));
        }
        let mut z = Vec::with_capacity(alphas.len() + 1);
        z.push(f64::INFINITY);
        z.extend(alphas[..alphas.len() - 1].iter().map(|a| std_quantile(1.0 - a)));
        z.push(f64::NEG_INFINITY);
        Ok(CutoffGrid { alphas, z })
    }

    /// Grid from interior cutoffs only; the terminal 1 is appended.
    pub fn from_interior(interior: &[f64]) -> Result<Self> {
        let mut alphas = interior.to_vec();
        alphas.push(1.0);
        Self::new(alphas)
    }

    /// Number of intervals J.
    #[inline]
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Standardized thresholds `(+∞, z_1, …, z_{J−1}, −∞)`.
    #[inline]
    pub fn z_bounds(&self) -> &[f64] {
        &self.z
    }

    /// Zero-based interval containing standardized statistic `z`.
    #[inline]
    pub fn interval_of_z(&self, z: f64) -> usize {
        // z_J = −∞ guarantees a match.
        (1..self.z.len()).find(|&k| z >= self.z[k]).unwrap_or(self.alphas.len()) - 1
    }

    /// Zero-based interval `j` with `u ∈ (α_{j−1}, α_j]`; `u = 0` maps to the first.
    #[inline]
    pub fn interval_of_u(&self, u: f64) -> usize {
        self.alphas.iter().position(|a| u <= *a).unwrap_or(self.alphas.len() - 1)
    }
}

impl Default for CutoffGrid {
    fn default() -> Self {
        CutoffGrid::new(vec![0.025, 0.05, 1.0]).expect("valid default grid")
    }
}

impl TryFrom<Vec<f64>> for CutoffGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        CutoffGrid::new(v)
    }
}

impl From<CutoffGrid> for Vec<f64> {
    fn from(g: CutoffGrid) -> Self {
        g.alphas
    }
}

/// Publication probabilities ρ per interval, with ρ₁ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProbs(Vec<f64>);

impl SelectionProbs {
    /// Validated ρ: ρ₁ = 1 and 1 ≥ ρ₂ ≥ … ≥ ρ_J ≥ 0.
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        let s = Self::unordered(rho)?;
        if !s.is_decreasing() {
            return Err(Error::Domain(format!("selection probabilities must be nonincreasing: {:?}", s.0)));
        }
        Ok(s)
    }

    /// ρ with ρ₁ = 1 and nonnegative entries, without the ordering constraint.
    pub fn unordered(rho: Vec<f64>) -> Result<Self> {
        if rho.len() < 2 {
            return Err(Error::Domain("need at least two selection probabilities".into()));
        }
        if rho[0] != 1.0 {
            return Err(Error::Domain(format!("rho_1 must equal 1, got {}", rho[0])));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Domain(format!("selection probabilities must be nonnegative: {rho:?}")));
        }
        Ok(SelectionProbs(rho))
    }

    pub fn is_decreasing(&self) -> bool {
        self.0.iter().all(|r| *r <= 1.0) && self.0.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// P-hacking propensities π on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HackingProbs(Vec<f64>);

impl HackingProbs {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.len() < 2 {
            return Err(Error::Domain("need at least two p-hacking probabilities".into()));
        }
        if pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Domain(format!("p-hacking probabilities must be nonnegative: {pi:?}")));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("p-hacking probabilities must sum to 1, got {total}")));
        }
        Ok(HackingProbs(pi))
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NonNormalizable(format!("weights {weights:?} have no positive mass")));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(len: usize) -> Self {
        HackingProbs(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Uncorrected,
    PubBias,
    PHack,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uncorrected => "uncorrected",
            Family::PubBias => "pubbias",
            Family::PHack => "phack",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncorrected" => Ok(Family::Uncorrected),
            "pubbias" => Ok(Family::PubBias),
            "phack" => Ok(Family::PHack),
            other => Err(Error::Domain(format!("unknown model family '{other}'"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effects {
    Fixed,
    Random,
}

impl std::str::FromStr for Effects {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Effects::Fixed),
            "random" => Ok(Effects::Random),
            other => Err(Error::Domain(format!("unknown effects type '{other}'"))),
        }
    }
}

impl std::fmt::Display for Effects {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Effects::Fixed => "fixed",
            Effects::Random => "random",
        })
    }
}

/// Family × effects type × cutoff grid: everything that pins down a likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub effects: Effects,
    pub cutoffs: CutoffGrid,
}

impl ModelSpec {
    pub fn new(family: Family, effects: Effects, cutoffs: CutoffGrid) -> Self {
        ModelSpec { family, effects, cutoffs }
    }

    pub fn has_tau(&self) -> bool {
        self.effects == Effects::Random
    }

    /// Random-effects p-hacking is sampled with one latent θᵢ per study.
    pub fn uses_latent(&self) -> bool {
        self.family == Family::PHack && self.effects == Effects::Random
    }

    /// Free coordinates of the weight vector (J − 1 for both ρ and π).
    pub fn weight_dim(&self) -> usize {
        match self.family {
            Family::Uncorrected => 0,
            Family::PubBias | Family::PHack => self.cutoffs.len() - 1,
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.family, self.effects)
    }
}

/// Selection weights carried by a parameter state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    None,
    Rho(SelectionProbs),
    Pi(HackingProbs),
}

/// A point in constrained parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub theta0: f64,
    /// Zero for fixed effects.
    pub tau: f64,
    pub weights: Weights,
    pub latent_thetas: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_validation() {
        assert!(Study::new(0.62, 0.2).is_ok());
        assert!(Study::new(0.1, 0.0).is_err());
        assert!(Study::new(f64::NAN, 1.0).is_err());
        assert!(Study::new(0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn cutoff_grid_validation() {
        assert!(CutoffGrid::new(vec![0.025, 0.05, 1.0]).is_ok());
        assert!(CutoffGrid::new(vec![1.0]).is_err());
        assert!(CutoffGrid::new(vec![0.0, 1.0]).is_err());
        assert!(CutoffGrid::new(vec![0.05, 0.025, 1.0]).is_err());
        assert!(CutoffGrid::new(vec![0.025, 0.05, 0.9]).is_err());
        assert_eq!(CutoffGrid::from_interior(&[0.025, 0.05]).unwrap(), CutoffGrid::default());
    }

    #[test]
    fn interval_lookup_boundaries() {
        let g = CutoffGrid::default();
        assert_eq!(g.interval_of_u(0.0), 0);
        assert_eq!(g.interval_of_u(0.025), 0);
        assert_eq!(g.interval_of_u(0.0250001), 1);
        assert_eq!(g.interval_of_u(0.05), 1);
        assert_eq!(g.interval_of_u(0.7), 2);
        assert_eq!(g.interval_of_u(1.0), 2);
        assert_eq!(g.interval_of_z(3.0), 0);
        assert_eq!(g.interval_of_z(1.8), 1);
        assert_eq!(g.interval_of_z(-40.0), 2);
        assert_eq!(g.interval_of_z(f64::NEG_INFINITY), 2);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(SelectionProbs::new(vec![1.0, 0.7, 0.1]).is_ok());
        assert!(SelectionProbs::new(vec![1.0, 0.7, 0.9]).is_err());
        assert!(SelectionProbs::unordered(vec![1.0, 0.7, 0.9]).is_ok());
        assert!(SelectionProbs::new(vec![0.9, 0.7, 0.1]).is_err());
        assert!(HackingProbs::new(vec![0.6, 0.3, 0.1]).is_ok());
        assert!(HackingProbs::new(vec![0.6, 0.3, 0.2]).is_err());
        assert!(HackingProbs::normalized(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn cutoff_grid_serde_round_trip() {
        let g = CutoffGrid::default();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, "[0.025,0.05,1.0]");
        let back: CutoffGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<CutoffGrid>("[0.5]").is_err());
    }
}

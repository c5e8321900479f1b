//! Data generation under no selection, publication bias and p-hacking, and
//! orchestration of simulation grids.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{run_sampler, SamplerConfig};
use crate::model::{CutoffGrid, HackingProbs, ModelSpec, SelectionProbs, Study};
use crate::priors::PriorConfig;
use crate::rng::{mix_seed, sample_truncated_normal, StreamRng};
use crate::selection_lab::{q_h_sampler, SelectedDraw, SelectionSet, SelectionSpec, WeightRule};

/// Attempts allowed per accepted study before the selection is declared
/// pathological.
pub const MAX_ATTEMPTS: u64 = 10_000_000;

/// How study standard errors are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeRule {
    /// s uniform on {20, …, 80}, σ = 1/√s.
    InfoSize,
    /// σ² uniform on {20, …, 80}.
    Literal,
    Fixed(f64),
}

impl Default for SeRule {
    fn default() -> Self {
        SeRule::InfoSize
    }
}

impl std::str::FromStr for SeRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "infosize" => Ok(SeRule::InfoSize),
            "literal" => Ok(SeRule::Literal),
            other => {
                let value = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| Error::Domain(format!("unknown se rule '{other}' (infosize, literal, fixed:V)")))?;
                Ok(SeRule::Fixed(value))
            }
        }
    }
}

impl std::fmt::Display for SeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SeRule::InfoSize => write!(f, "infosize"),
            SeRule::Literal => write!(f, "literal"),
            SeRule::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

pub fn draw_se(rng: &mut StreamRng, rule: SeRule) -> f64 {
    match rule {
        SeRule::InfoSize => 1.0 / (rng.int_inclusive(20, 80) as f64).sqrt(),
        SeRule::Literal => (rng.int_inclusive(20, 80) as f64).sqrt(),
        SeRule::Fixed(v) => v,
    }
}

fn draw_theta(rng: &mut StreamRng, theta0: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        theta0
    } else {
        rng.normal(theta0, tau)
    }
}

/// Publication-bias generator: θ and x are drawn together and the pair is
/// kept with probability ρ of the p-value's interval. Returns the study and
/// the number of attempts.
pub fn sample_pubbias_study(
    rng: &mut StreamRng,
    theta0: f64,
    tau: f64,
    sigma: f64,
    rho: &SelectionProbs,
    cutoffs: &CutoffGrid,
) -> Result<(Study, u64)> {
    let rho = rho.as_slice();
    for attempt in 1..=MAX_ATTEMPTS {
        let theta = draw_theta(rng, theta0, tau);
        let x = rng.normal(theta, sigma);
        let keep = rho[cutoffs.interval_of_z(x / sigma)];
        if keep >= 1.0 || rng.uniform() < keep {
            return Ok((Study::new(x, sigma)?, attempt));
        }
    }
    Err(Error::PathologicalSelection { attempts: MAX_ATTEMPTS })
}

/// P-hacking generator: θ ~ N(θ₀, τ²), interval j ~ π, then x is drawn from
/// N(θ, σ²) truncated to interval j.
pub fn sample_phack_study(
    rng: &mut StreamRng,
    theta0: f64,
    tau: f64,
    sigma: f64,
    pi: &HackingProbs,
    cutoffs: &CutoffGrid,
) -> Result<Study> {
    let theta = draw_theta(rng, theta0, tau);
    let j = rng.categorical(pi.as_slice());
    let z = cutoffs.z_bounds();
    let x = sample_truncated_normal(rng, theta, sigma, z[j + 1] * sigma, z[j] * sigma)?;
    Study::new(x, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    None,
    PubBias,
    PHack,
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Scenario::None),
            "pubbias" => Ok(Scenario::PubBias),
            "phack" => Ok(Scenario::PHack),
            other => Err(Error::Domain(format!("unknown scenario '{other}' (none, pubbias, phack)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::None => "none",
            Scenario::PubBias => "pubbias",
            Scenario::PHack => "phack",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub theta0: f64,
    pub tau: f64,
    /// ρ for publication bias, π for p-hacking, unused without selection.
    pub weights: Option<Vec<f64>>,
    pub cutoffs: CutoffGrid,
    pub se_rule: SeRule,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) || !self.theta0.is_finite() {
            return Err(Error::Domain(format!("invalid theta0 {} / tau {}", self.theta0, self.tau)));
        }
        match (self.scenario, &self.weights) {
            (Scenario::None, None) => Ok(()),
            (Scenario::None, Some(_)) => Err(Error::Domain("scenario none takes no weights".into())),
            (_, None) => Err(Error::Domain(format!("scenario {} needs weights", self.scenario))),
            (_, Some(w)) if w.len() != self.cutoffs.len() => Err(Error::Domain(format!(
                "{} weights for {} intervals",
                w.len(),
                self.cutoffs.len()
            ))),
            (Scenario::PubBias, Some(w)) => SelectionProbs::new(w.clone()).map(|_| ()),
            (Scenario::PHack, Some(w)) => HackingProbs::new(w.clone()).map(|_| ()),
        }
    }
}

/// One simulated dataset with its generating values.
#[derive(Debug, Clone, Serialize)]
pub struct Replication {
    pub dataset: Vec<Study>,
    pub theta0: f64,
    pub tau: f64,
    pub scenario: Scenario,
    pub weights: Option<Vec<f64>>,
    /// Rejected draws (publication bias only).
    pub rejections: u64,
}

/// Simulates `config.n` studies from `rng`; σᵢ are drawn per study.
pub fn simulate_with(config: &ScenarioConfig, rng: &mut StreamRng) -> Result<Replication> {
    config.validate()?;
    let mut dataset = Vec::with_capacity(config.n);
    let mut rejections = 0;
    let rho = (config.scenario == Scenario::PubBias)
        .then(|| SelectionProbs::new(config.weights.clone().unwrap_or_default()))
        .transpose()?;
    let pi = (config.scenario == Scenario::PHack)
        .then(|| HackingProbs::new(config.weights.clone().unwrap_or_default()))
        .transpose()?;
    for _ in 0..config.n {
        let sigma = draw_se(rng, config.se_rule);
        let study = match config.scenario {
            Scenario::None => {
                let theta = draw_theta(rng, config.theta0, config.tau);
                Study::new(rng.normal(theta, sigma), sigma)?
            }
            Scenario::PubBias => {
                let rho = rho.as_ref().expect("validated");
                let (s, attempts) = sample_pubbias_study(rng, config.theta0, config.tau, sigma, rho, &config.cutoffs)?;
                rejections += attempts - 1;
                s
            }
            Scenario::PHack => {
                let pi = pi.as_ref().expect("validated");
                sample_phack_study(rng, config.theta0, config.tau, sigma, pi, &config.cutoffs)?
            }
        };
        dataset.push(study);
    }
    Ok(Replication {
        dataset,
        theta0: config.theta0,
        tau: config.tau,
        scenario: config.scenario,
        weights: config.weights.clone(),
        rejections,
    })
}

/// Stream reserved for data generation; sampler chains use streams 0, 1, ….
pub const DATA_STREAM: u64 = u64::MAX;

/// Simulates from the configuration's own seed.
pub fn simulate(config: &ScenarioConfig) -> Result<Replication> {
    simulate_with(config, &mut StreamRng::new(config.seed, DATA_STREAM))
}

/// Selection-set demonstration on θ ~ N(0, 1), x | θ ~ N(θ, 1): H = {x, θ}
/// resamples the pair, H = {x} resamples x with θ held, H = ∅ resamples
/// nothing.
pub fn selection_set_demo(
    rng: &mut StreamRng,
    set: SelectionSet,
    rule: &WeightRule,
    n: usize,
) -> Result<Vec<SelectedDraw>> {
    q_h_sampler(rng, &SelectionSpec::standard(rule.clone(), set), n)
}

/// Seed of replication `rep` within grid cell `cell`.
pub fn replication_seed(master: u64, cell: usize, rep: usize) -> u64 {
    mix_seed(mix_seed(master, cell as u64), rep as u64)
}

/// Aggregated posterior summaries of one (cell, model) pair.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub scenario: Scenario,
    pub tau: f64,
    pub theta0: f64,
    pub n: usize,
    pub model: String,
    /// Mean over replications of the posterior mean of θ₀.
    pub mean_theta0: f64,
    /// Standard deviation over replications of the posterior mean of θ₀.
    pub sd_theta0: f64,
    pub mean_tau: Option<f64>,
    pub sd_tau: Option<f64>,
    pub replications: usize,
    pub failures: usize,
    /// Fit errors, one line per failed replication.
    pub failure_messages: Vec<String>,
    /// Posterior means of θ₀ per successful replication.
    pub theta0_means: Vec<f64>,
    /// Worst R̂ and smallest ESS of θ₀ across successful replications.
    pub max_rhat_theta0: Option<f64>,
    pub min_ess_theta0: Option<f64>,
}

struct FitSummary {
    theta0: f64,
    tau: Option<f64>,
    rhat: Option<f64>,
    ess: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Simulates every cell `replications` times, fits each model and summarizes
/// posterior means. Fit failures are counted per cell and never abort the
/// grid. Cell seeds derive from `master_seed`.
pub fn run_scenario_grid(
    grid: &[ScenarioConfig],
    replications: usize,
    fit_specs: &[ModelSpec],
    prior: &PriorConfig,
    sampler: &SamplerConfig,
    master_seed: u64,
) -> Result<Vec<GridRow>> {
    if replications == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    for cell in grid {
        cell.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..replications).map(move |r| (c, r))).collect();
    // fits[job][model]
    let fits: Vec<Vec<std::result::Result<FitSummary, String>>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let seed = replication_seed(master_seed, c, r);
            let cell = ScenarioConfig { seed, ..grid[c].clone() };
            let data = match simulate(&cell) {
                Ok(rep) => rep.dataset,
                Err(e) => return fit_specs.iter().map(|_| Err(format!("simulation: {e}"))).collect(),
            };
            fit_specs
                .iter()
                .map(|spec| {
                    let cfg = SamplerConfig { seed, pointwise: false, ..sampler.clone() };
                    let draws = run_sampler(&data, spec, prior, &cfg).map_err(|e| e.to_string())?;
                    let d = draws.diagnostics_of("theta0").expect("theta0 always sampled");
                    Ok(FitSummary {
                        theta0: draws.mean_of("theta0").expect("theta0 always sampled"),
                        tau: draws.mean_of("tau"),
                        rhat: d.rhat,
                        ess: d.ess,
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (c, cell) in grid.iter().enumerate() {
        for (m, spec) in fit_specs.iter().enumerate() {
            let results: Vec<&std::result::Result<FitSummary, String>> = jobs
                .iter()
                .zip(&fits)
                .filter(|((jc, _), _)| *jc == c)
                .map(|(_, f)| &f[m])
                .collect();
            let ok: Vec<&FitSummary> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
            let failure_messages: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
            let theta0_means: Vec<f64> = ok.iter().map(|f| f.theta0).collect();
            let taus: Vec<f64> = ok.iter().filter_map(|f| f.tau).collect();
            let (mean_theta0, sd_theta0) = mean_sd(&theta0_means);
            let (mean_tau, sd_tau) = if taus.is_empty() { (None, None) } else {
                let (m, s) = mean_sd(&taus);
                (Some(m), Some(s))
            };
            rows.push(GridRow {
                scenario: cell.scenario,
                tau: cell.tau,
                theta0: cell.theta0,
                n: cell.n,
                model: spec.label(),
                mean_theta0,
                sd_theta0,
                mean_tau,
                sd_tau,
                replications,
                failures: failure_messages.len(),
                failure_messages,
                theta0_means,
                max_rhat_theta0: ok.iter().filter_map(|f| f.rhat).reduce(f64::max),
                min_ess_theta0: ok.iter().map(|f| f.ess).reduce(f64::min),
            });
        }
    }
    Ok(rows)
}

/// Grid output with columns scenario, tau, theta0, n, model, mean_theta0,
/// sd_theta0, mean_tau, sd_tau, failures.
pub fn write_grid_csv<W: Write>(writer: W, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario", "tau", "theta0", "n", "model", "mean_theta0", "sd_theta0", "mean_tau", "sd_tau", "failures",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.scenario.to_string(),
            r.tau.to_string(),
            r.theta0.to_string(),
            r.n.to_string(),
            r.model.clone(),
            format!("{:.4}", r.mean_theta0),
            format!("{:.4}", r.sd_theta0),
            opt(r.mean_tau),
            opt(r.sd_tau),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cells of the simulation tables: table 2 has no selection, table 3
/// publication bias with ρ = (1, 0.7, 0.1), table 4 p-hacking with
/// π = (0.6, 0.3, 0.1); each crosses τ ∈ {0.1, 0.5}, θ₀ ∈ {0, 0.2, 0.8} and
/// n ∈ {5, 30, 100}.
pub fn table_grid(table: u8) -> Result<Vec<ScenarioConfig>> {
    let (scenario, weights) = match table {
        2 => (Scenario::None, None),
        3 => (Scenario::PubBias, Some(vec![1.0, 0.7, 0.1])),
        4 => (Scenario::PHack, Some(vec![0.6, 0.3, 0.1])),
        other => return Err(Error::Domain(format!("no simulation table {other} (expected 2, 3 or 4)"))),
    };
    let mut cells = Vec::new();
    for tau in [0.1, 0.5] {
        for theta0 in [0.0, 0.2, 0.8] {
            for n in [5, 30, 100] {
                cells.push(ScenarioConfig {
                    scenario,
                    n,
                    theta0,
                    tau,
                    weights: weights.clone(),
                    cutoffs: CutoffGrid::default(),
                    se_rule: SeRule::InfoSize,
                    seed: 0,
                });
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::interval_masses;

    #[test]
    fn se_rules() {
        let mut rng = StreamRng::new(1, 0);
        for _ in 0..1000 {
            let s = draw_se(&mut rng, SeRule::InfoSize);
            assert!((1.0 / 80f64.sqrt()..=1.0 / 20f64.sqrt()).contains(&s));
            let l = draw_se(&mut rng, SeRule::Literal);
            assert!((20f64.sqrt()..=80f64.sqrt()).contains(&l));
        }
        assert_eq!(draw_se(&mut rng, SeRule::Fixed(0.3)), 0.3);
        assert_eq!("fixed:0.25".parse::<SeRule>().unwrap(), SeRule::Fixed(0.25));
        assert!("fixed:-1".parse::<SeRule>().is_err());
        assert_eq!(SeRule::Fixed(0.25).to_string().parse::<SeRule>().unwrap(), SeRule::Fixed(0.25));
    }

    #[test]
    fn no_selection_accepts_immediately() {
        let mut rng = StreamRng::new(2, 0);
        let ones = SelectionProbs::new(vec![1.0, 1.0, 1.0]).unwrap();
        for _ in 0..100 {
            let (_, a) = sample_pubbias_study(&mut rng, 0.0, 0.2, 0.3, &ones, &CutoffGrid::default()).unwrap();
            assert_eq!(a, 1);
        }
    }

    #[test]
    fn acceptance_rate_identity() {
        let mut rng = StreamRng::new(3, 0);
        let rho = SelectionProbs::new(vec![1.0, 0.7, 0.1]).unwrap();
        let (theta0, tau, sigma): (f64, f64, f64) = (0.1, 0.2, 0.25);
        let m = interval_masses(theta0, (tau * tau + sigma * sigma).sqrt(), sigma, &CutoffGrid::default());
        let p: f64 = m.iter().zip(rho.as_slice()).map(|(m, r)| m * r).sum();
        let n = 20000;
        let attempts: u64 = (0..n)
            .map(|_| sample_pubbias_study(&mut rng, theta0, tau, sigma, &rho, &CutoffGrid::default()).unwrap().1)
            .sum();
        let rate = n as f64 / attempts as f64;
        let se = (p * (1.0 - p) / attempts as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se + 1e-3, "{rate} vs {p}");
    }

    #[test]
    fn pathological_selection_errors() {
        let mut rng = StreamRng::new(4, 0);
        let rho = SelectionProbs::new(vec![1.0, 0.0, 0.0]).unwrap();
        // θ far below zero: significance essentially never happens.
        let err = sample_pubbias_study(&mut rng, -40.0, 0.0, 1.0, &rho, &CutoffGrid::default()).unwrap_err();
        assert!(matches!(err, Error::PathologicalSelection { .. }));
    }

    #[test]
    fn phack_support() {
        let mut rng = StreamRng::new(5, 0);
        let only = HackingProbs::new(vec![1.0, 0.0, 0.0]).unwrap();
        for _ in 0..1000 {
            let s = sample_phack_study(&mut rng, 0.0, 0.1, 0.2, &only, &CutoffGrid::default()).unwrap();
            assert!(s.effect >= 1.959963984540054 * 0.2 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = ScenarioConfig {
            scenario: Scenario::PubBias,
            n: 30,
            theta0: 0.2,
            tau: 0.1,
            weights: Some(vec![1.0, 0.7, 0.1]),
            cutoffs: CutoffGrid::default(),
            se_rule: SeRule::InfoSize,
            seed: 77,
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.dataset.len(), 30);
        let bad = ScenarioConfig { weights: Some(vec![1.0, 0.2, 0.7]), ..cfg.clone() };
        assert!(simulate(&bad).is_err());
        let none_with_weights = ScenarioConfig { scenario: Scenario::None, ..cfg };
        assert!(simulate(&none_with_weights).is_err());
    }

    #[test]
    fn table_grids() {
        assert_eq!(table_grid(2).unwrap().len(), 18);
        assert!(table_grid(5).is_err());
    }
}

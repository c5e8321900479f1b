mod config;
mod plotdata;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use selmeta::equivalence::{equivalence_gap, pi_to_rho, rho_to_pi};
use selmeta::ingest::{read_dataset, write_dataset, InputFormat};
use selmeta::loo::importance_loo;
use selmeta::mcmc::{run_sampler, PosteriorDraws, SamplerConfig};
use selmeta::priors::PriorConfig;
use selmeta::selection_lab::{summarize, SelectionSet, SelectionSpec, WeightRule};
use selmeta::simulate::{
    run_scenario_grid, selection_set_demo, simulate, table_grid, write_grid_csv, Scenario, ScenarioConfig, SeRule,
    DATA_STREAM,
};
use selmeta::{CutoffGrid, Effects, Family, HackingProbs, ModelSpec, SelectionProbs, StreamRng};

/// Bayesian selection models for publication bias and p-hacking.
#[derive(Debug, Parser)]
#[command(name = "selmeta", version, args_override_self = true)]
struct Cli {
    /// File of key=value lines applied before the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for chains and replications.
    #[arg(long, global = true, env = "SELMETA_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model to a dataset and write draws, summary and LOO.
    Fit(FitArgs),
    /// Simulate a dataset under a selection scenario.
    Simulate(SimulateArgs),
    /// Run the simulation grid of table 2, 3 or 4.
    Replicate(ReplicateArgs),
    /// Fit several models and compare them by LOOIC.
    Compare(CompareArgs),
    /// Map publication probabilities ρ to p-hacking propensities π or back.
    ConvertWeights(ConvertArgs),
    /// Sample a selection-set model on the normal-normal network.
    DemoSelectionSet(DemoArgs),
}

/// Comma-separated numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
struct List(Vec<f64>);

impl std::str::FromStr for List {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("not a number: '{v}'")))
            .collect::<Result<Vec<f64>, String>>()
            .map(List)
    }
}

/// Comma-separated model families.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
struct Families(Vec<Family>);

impl std::str::FromStr for Families {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<Family>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<Family>, String>>()
            .map(Families)
    }
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    match s {
        "auto" => Ok(InputFormat::Auto),
        "effect-se" => Ok(InputFormat::EffectSe),
        "statistics" => Ok(InputFormat::Statistics),
        other => Err(format!("unknown format '{other}' (auto, effect-se, statistics)")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct SamplerArgs {
    /// Number of chains.
    #[arg(long, default_value_t = 8)]
    chains: usize,
    /// Warmup iterations per chain.
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    /// Retained draws per chain.
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Target acceptance rate of the joint proposal.
    #[arg(long, default_value_t = 0.3)]
    target_accept: f64,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl SamplerArgs {
    fn config(&self, pointwise: bool) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            warmup: self.warmup,
            draws: self.draws,
            target_accept: self.target_accept,
            seed: self.seed,
            pointwise,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct PriorArgs {
    /// Prior standard deviation of θ₀.
    #[arg(long)]
    theta0_sd: Option<f64>,
    /// Half-normal prior scale of τ (random effects only).
    #[arg(long)]
    tau_scale: Option<f64>,
    /// Dirichlet concentrations of the weight prior, one per interval.
    #[arg(long)]
    concentration: Option<List>,
}

impl PriorArgs {
    fn resolve(&self, families: &[Family], effects: Effects) -> Result<PriorConfig> {
        if effects == Effects::Fixed && self.tau_scale.is_some() {
            bail!("--tau-scale has no effect with --effects fixed");
        }
        if self.concentration.is_some() && families.iter().all(|f| *f == Family::Uncorrected) {
            bail!("--concentration has no effect on the uncorrected model");
        }
        let d = PriorConfig::default();
        Ok(PriorConfig {
            theta0_sd: self.theta0_sd.unwrap_or(d.theta0_sd),
            tau_scale: self.tau_scale.unwrap_or(d.tau_scale),
            simplex_concentration: self.concentration.clone().map(|c| c.0),
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Dataset CSV with columns effect,se or statistic,stat_type,df.
    #[arg(long)]
    data: PathBuf,
    /// Column layout of the dataset.
    #[arg(long, default_value = "auto", value_parser = parse_format)]
    #[serde(skip)]
    format: InputFormat,
    /// Interior one-sided p-value cutoffs.
    #[arg(long, default_value = "0.025,0.05")]
    cutoffs: List,
    /// Fixed or random effects.
    #[arg(long, default_value = "random")]
    effects: Effects,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model family: uncorrected, pubbias or phack.
    #[arg(long)]
    model: Family,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write posterior density curves to plotdata.json.
    #[arg(long)]
    emit_plotdata: bool,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Selection mechanism: none, pubbias or phack.
    #[arg(long)]
    scenario: Scenario,
    /// Number of studies.
    #[arg(long)]
    n: usize,
    /// Mean effect θ₀.
    #[arg(long)]
    theta0: f64,
    /// Effect heterogeneity τ; required with random effects.
    #[arg(long)]
    tau: Option<f64>,
    /// Fixed effects set τ = 0.
    #[arg(long, default_value = "random")]
    effects: Effects,
    /// ρ (pubbias) or π (phack), one per interval.
    #[arg(long)]
    weights: Option<List>,
    /// Interior one-sided p-value cutoffs.
    #[arg(long, default_value = "0.025,0.05")]
    cutoffs: List,
    /// Standard errors: infosize, literal or fixed:V.
    #[arg(long, default_value = "infosize")]
    se_rule: SeRule,
    /// Seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReplicateArgs {
    /// Simulation table: 2 (no selection), 3 (publication bias) or 4 (p-hacking).
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
    table: u8,
    /// Replications per cell.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Models fitted to every replication.
    #[arg(long, default_value = "pubbias,phack")]
    models: Families,
    /// Fixed or random effects for the fitted models.
    #[arg(long, default_value = "random")]
    effects: Effects,
    /// Only run cells with this number of studies.
    #[arg(long)]
    only_n: Option<usize>,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Models to compare.
    #[arg(long, default_value = "uncorrected,pubbias,phack")]
    models: Families,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output directory for comparison.csv and comparison.json; the table
    /// goes to standard output either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ConvertArgs {
    /// Convert from `rho` to π or from `pi` to ρ.
    #[arg(long, value_parser = ["rho", "pi"])]
    from: String,
    /// The weights to convert, one per interval.
    #[arg(long)]
    weights: List,
    #[arg(long, default_value_t = 0.0)]
    theta0: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Study standard error.
    #[arg(long)]
    sigma: f64,
    /// Further standard errors for the heterogeneous-σ discrepancy (ρ only).
    #[arg(long)]
    compare_sigmas: Option<List>,
    /// Interior one-sided p-value cutoffs.
    #[arg(long, default_value = "0.025,0.05")]
    cutoffs: List,
    /// Output JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DemoArgs {
    /// Selection set: both, x or none.
    #[arg(long = "H", value_name = "SET")]
    set: SelectionSet,
    /// Selection probability by p-value: step:A1,..:W1,.. or constant:V.
    #[arg(long, default_value = "step:0.05:0.1")]
    weight: WeightRule,
    /// Number of draws.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure after inputs were accepted; reported as diagnostics JSON.
#[derive(Debug)]
struct NumericalFailure(serde_json::Value);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn load(data: &DataArgs) -> Result<(Vec<selmeta::Study>, CutoffGrid)> {
    let studies = read_dataset(&data.data, data.format)
        .with_context(|| format!("cannot load dataset {}", data.data.display()))?;
    let cutoffs = CutoffGrid::from_interior(&data.cutoffs.0)?;
    Ok((studies, cutoffs))
}

fn loo_json(draws: &PosteriorDraws, label: &str) -> serde_json::Value {
    let Some(pointwise) = &draws.pointwise_loglik else {
        return json!({ "model": label, "error": "pointwise log-likelihood unavailable" });
    };
    match importance_loo(pointwise) {
        Ok(r) => {
            let mut v = r.report(label);
            v["lpd"] = json!(r.lpd);
            v["pointwise_elpd"] = json!(r.pointwise_elpd);
            v
        }
        Err(e) => json!({ "model": label, "error": e.to_string() }),
    }
}

fn sampler_warnings(draws: &PosteriorDraws) -> Vec<String> {
    let mut w = Vec::new();
    for (name, d) in draws.param_names.iter().zip(&draws.diagnostics) {
        if name.starts_with("theta[") {
            continue;
        }
        match d.rhat {
            Some(r) if r >= 1.01 => w.push(format!("{name}: rhat {r:.4} >= 1.01")),
            _ => {}
        }
        if d.ess < 400.0 {
            w.push(format!("{name}: bulk ess {:.0} < 400", d.ess));
        }
    }
    w
}

fn fit_failure(out: &Path, resolved: &serde_json::Value, err: selmeta::Error) -> anyhow::Error {
    let diag = json!({ "status": "failed", "error": err.to_string(), "config": resolved });
    let _ = write_json(&out.join("diagnostics.json"), &diag);
    NumericalFailure(diag).into()
}

fn run_fit(args: &FitArgs, threads: Option<usize>) -> Result<()> {
    let (studies, cutoffs) = load(&args.data)?;
    let spec = ModelSpec::new(args.model, args.data.effects, cutoffs);
    let prior = args.prior.resolve(&[args.model], args.data.effects)?;
    let sampler = args.sampler.config(true);
    sampler.validate()?;
    prior.validate(&spec)?;
    create_dir(&args.out)?;
    let resolved = json!({ "command": "fit", "args": args, "threads": threads, "prior": prior, "sampler": sampler });
    let draws = run_sampler(&studies, &spec, &prior, &sampler).map_err(|e| fit_failure(&args.out, &resolved, e))?;

    let mut draws_csv = BufWriter::new(File::create(args.out.join("draws.csv"))?);
    draws.write_csv(&mut draws_csv)?;
    draws_csv.flush()?;
    let mut summary = draws.summary_json();
    summary["config"] = resolved.clone();
    summary["warnings"] = json!(sampler_warnings(&draws));
    write_json(&args.out.join("summary.json"), &summary)?;
    let mut loo = loo_json(&draws, &spec.label());
    loo["config"] = resolved.clone();
    write_json(&args.out.join("loo.json"), &loo)?;
    if args.emit_plotdata {
        let curves = plotdata::posterior_curves(&draws);
        write_json(&args.out.join("plotdata.json"), &json!({ "config": resolved, "curves": curves }))?;
    }
    for w in sampler_warnings(&draws) {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs, threads: Option<usize>) -> Result<()> {
    let tau = match (args.effects, args.tau) {
        (Effects::Fixed, Some(_)) => bail!("--tau contradicts --effects fixed"),
        (Effects::Fixed, None) => 0.0,
        (Effects::Random, Some(t)) => t,
        (Effects::Random, None) => bail!("--tau is required with --effects random"),
    };
    if args.scenario == Scenario::None && args.weights.is_some() {
        bail!("--weights has no meaning with --scenario none");
    }
    let config = ScenarioConfig {
        scenario: args.scenario,
        n: args.n,
        theta0: args.theta0,
        tau,
        weights: args.weights.clone().map(|w| w.0),
        cutoffs: CutoffGrid::from_interior(&args.cutoffs.0)?,
        se_rule: args.se_rule,
        seed: args.seed,
    };
    let rep = simulate(&config)?;
    let header = json!({ "command": "simulate", "args": args, "threads": threads, "rejections": rep.rejections });
    let mut buf = Vec::new();
    writeln!(buf, "# selmeta {header}")?;
    write_dataset(&mut buf, &rep.dataset)?;
    match &args.out {
        Some(p) => fs::write(p, buf).with_context(|| format!("cannot write {}", p.display()))?,
        None => io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn run_replicate(args: &ReplicateArgs, threads: Option<usize>) -> Result<()> {
    let mut grid = table_grid(args.table)?;
    if let Some(n) = args.only_n {
        grid.retain(|c| c.n == n);
        if grid.is_empty() {
            bail!("no cells with n = {n} (cells use n = 5, 30, 100)");
        }
    }
    let specs: Vec<ModelSpec> = args
        .models.0
        .iter()
        .map(|f| ModelSpec::new(*f, args.effects, CutoffGrid::default()))
        .collect();
    let sampler = args.sampler.config(false);
    sampler.validate()?;
    create_dir(&args.out)?;
    let rows = run_scenario_grid(&grid, args.reps, &specs, &PriorConfig::default(), &sampler, args.sampler.seed)?;
    let resolved = json!({ "command": "replicate", "args": args, "threads": threads, "cells": grid });
    let csv_path = args.out.join(format!("table{}.csv", args.table));
    let mut buf = Vec::new();
    writeln!(buf, "# selmeta {}", json!({ "command": "replicate", "args": args, "threads": threads }))?;
    write_grid_csv(&mut buf, &rows)?;
    fs::write(&csv_path, buf)?;
    write_json(&args.out.join(format!("table{}.json", args.table)), &json!({ "config": resolved, "rows": rows }))?;
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} fits failed; see table{}.json", args.table);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    model: String,
    elpd_loo: f64,
    looic: f64,
    se_looic: f64,
    p_loo: f64,
    delta_looic: f64,
    high_k: usize,
    theta0_mean: f64,
    max_rhat: Option<f64>,
}

fn run_compare(args: &CompareArgs, threads: Option<usize>) -> Result<()> {
    if args.models.0.is_empty() {
        bail!("--models must name at least one model");
    }
    let (studies, cutoffs) = load(&args.data)?;
    let prior = args.prior.resolve(&args.models.0, args.data.effects)?;
    let sampler = args.sampler.config(true);
    sampler.validate()?;
    let resolved = json!({ "command": "compare", "args": args, "threads": threads, "prior": prior, "sampler": sampler });
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for family in &args.models.0 {
        let spec = ModelSpec::new(*family, args.data.effects, cutoffs.clone());
        let fit_prior = if *family == Family::Uncorrected {
            PriorConfig { simplex_concentration: None, ..prior.clone() }
        } else {
            prior.clone()
        };
        let draws = run_sampler(&studies, &spec, &fit_prior, &sampler)
            .map_err(|e| NumericalFailure(json!({ "status": "failed", "model": spec.label(), "error": e.to_string(), "config": resolved })))?;
        let pointwise = draws.pointwise_loglik.as_ref().expect("requested");
        let loo = importance_loo(pointwise)?;
        rows.push(ComparisonRow {
            model: spec.label(),
            elpd_loo: loo.elpd_loo,
            looic: loo.looic,
            se_looic: loo.se_looic,
            p_loo: loo.p_loo(),
            delta_looic: 0.0,
            high_k: loo.pareto_k.iter().filter(|k| k.map_or(true, |k| k > selmeta::loo::K_THRESHOLD)).count(),
            theta0_mean: draws.mean_of("theta0").expect("theta0 always sampled"),
            max_rhat: draws
                .param_names
                .iter()
                .zip(&draws.diagnostics)
                .filter(|(n, _)| !n.starts_with("theta["))
                .filter_map(|(_, d)| d.rhat)
                .reduce(f64::max),
        });
        details.push(json!({ "loo": loo.report(&spec.label()), "summary": draws.summary_json(), "warnings": sampler_warnings(&draws) }));
    }
    let best = rows.iter().map(|r| r.looic).fold(f64::INFINITY, f64::min);
    for r in rows.iter_mut() {
        r.delta_looic = r.looic - best;
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].looic.total_cmp(&rows[b].looic));

    let mut table = csv::Writer::from_writer(Vec::new());
    for &i in &order {
        table.serialize(&rows[i])?;
    }
    let table = table.into_inner()?;
    io::stdout().write_all(&table)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        fs::write(dir.join("comparison.csv"), &table)?;
        let sorted: Vec<&ComparisonRow> = order.iter().map(|&i| &rows[i]).collect();
        write_json(&dir.join("comparison.json"), &json!({ "config": resolved, "comparison": sorted, "fits": details }))?;
    }
    Ok(())
}

fn run_convert(args: &ConvertArgs, threads: Option<usize>) -> Result<()> {
    let cutoffs = CutoffGrid::from_interior(&args.cutoffs.0)?;
    let resolved = json!({ "command": "convert-weights", "args": args, "threads": threads });
    let result = if args.from == "rho" {
        let rho = SelectionProbs::new(args.weights.0.clone())?;
        let pi = rho_to_pi(&rho, args.theta0, args.tau, args.sigma, &cutoffs)?;
        let mut v = json!({ "rho": rho, "pi": pi });
        if let Some(extra) = &args.compare_sigmas {
            let mut sigmas = vec![args.sigma];
            sigmas.extend(&extra.0);
            v["gap"] = json!(equivalence_gap(&rho, args.theta0, args.tau, &sigmas, &cutoffs)?);
        }
        v
    } else {
        if args.compare_sigmas.is_some() {
            bail!("--compare-sigmas applies only with --from rho");
        }
        let pi = HackingProbs::new(args.weights.0.clone())?;
        let sol = pi_to_rho(&pi, args.theta0, args.tau, args.sigma, &cutoffs)?;
        json!({ "pi": pi, "rho": sol.rho, "decreasing": sol.decreasing })
    };
    let mut out = result;
    out["config"] = resolved;
    emit_json(args.out.as_deref(), &out)
}

fn run_demo(args: &DemoArgs, threads: Option<usize>) -> Result<()> {
    let mut rng = StreamRng::new(args.seed, DATA_STREAM);
    let draws = selection_set_demo(&mut rng, args.set, &args.weight, args.n)?;
    let spec = SelectionSpec::standard(args.weight.clone(), args.set);
    let summary = summarize(&spec, &draws)?;
    let out = json!({
        "config": { "command": "demo-selection-set", "args": args, "threads": threads, "weight": args.weight.to_string() },
        "summary": summary,
    });
    emit_json(args.out.as_deref(), &out)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let t = cli.threads;
    match &cli.command {
        Command::Fit(a) => run_fit(a, t),
        Command::Simulate(a) => run_simulate(a, t),
        Command::Replicate(a) => run_replicate(a, t),
        Command::Compare(a) => run_compare(a, t),
        Command::ConvertWeights(a) => run_convert(a, t),
        Command::DemoSelectionSet(a) => run_demo(a, t),
    }
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(NumericalFailure(diag)) = e.downcast_ref::<NumericalFailure>() {
                eprintln!("{}", serde_json::to_string_pretty(diag).unwrap_or_default());
                return ExitCode::from(3);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

//! Command-line front end and the file formats it reads and writes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bayes_engine::{posterior_multi, Branch, Observation, PosteriorMeasure};
use crate::cov_model::CovarianceModel;
use crate::error::{BridgeError, Result};
use crate::length_law::{LawSpec, LengthLaw};
use crate::mc_oracle::suite::{run_suite, SuiteConfig, VerificationRecord};
use crate::random_bridge::{sample_random_bridge, uniform_grid, BridgePath};
use crate::rng::PathSeed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MATH: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Parser)]
#[command(name = "rlbridge", version, about = "Gaussian bridges of random length: simulation and Bayesian inference")]
struct Cli {
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths to CSV (`path_id,t,value,tau`).
    Simulate(SimulateArgs),
    /// Posterior of the pinning time given observations, as JSON.
    Posterior(PosteriorArgs),
    /// Run the verification suite and print a JSON report.
    Verify(VerifyArgs),
    /// Check a covariance model's assumptions on a grid.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// brownian | scaled-brownian:SIGMA | ou:THETA,SIGMA | table:FILE.csv
    #[arg(long)]
    model: Option<String>,
    /// atoms:R=P,... | exp:RATE | uniform:A:B | JSON
    #[arg(long)]
    tau: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// START:END:STEP
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PosteriorArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Observation `T=X`; repeat for several.
    #[arg(long = "obs")]
    obs: Vec<String>,
    /// CSV file with header `t,value`.
    #[arg(long)]
    obs_file: Option<PathBuf>,
    /// Times `s` at which to report `P(τ > s)`.
    #[arg(long, value_delimiter = ',')]
    survival: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Run only this check; repeat for several.
    #[arg(long = "check")]
    checks: Vec<String>,
    /// Path count for every Monte Carlo check.
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings that may come from a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    /// Short form string or a law object.
    pub tau: Option<serde_json::Value>,
    pub grid: Option<String>,
    pub paths: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub observations: Option<Vec<Observation>>,
    pub survival: Option<Vec<f64>>,
    pub checks: Option<Vec<String>>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BridgeError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BridgeError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

fn config_err(msg: impl Into<String>) -> BridgeError {
    BridgeError::Config(msg.into())
}

/// Builds a model from `brownian`, `scaled-brownian:σ`, `ou:θ,σ` or
/// `table:path.csv`.
pub fn parse_model(spec: &str) -> Result<CovarianceModel> {
    let spec = spec.trim();
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| config_err(format!("invalid number `{v}` in model `{spec}`: {e}")))
    };
    let model = match kind {
        "brownian" if rest.is_empty() => Ok(CovarianceModel::brownian()),
        "scaled-brownian" => CovarianceModel::scaled_brownian(num(rest)?),
        "ou" => {
            let (theta, sigma) = rest
                .split_once(',')
                .ok_or_else(|| config_err(format!("model `{spec}`: expected ou:THETA,SIGMA")))?;
            CovarianceModel::ou_from_zero(num(theta)?, num(sigma)?)
        }
        "table" => {
            let file = File::open(rest).map_err(|e| config_err(format!("cannot open model table {rest}: {e}")))?;
            CovarianceModel::from_csv(rest, file)
        }
        _ => return Err(config_err(format!("unknown model `{spec}`"))),
    };
    model.map_err(|e| match e {
        BridgeError::Domain(m) => config_err(m),
        other => other,
    })
}

fn parse_law_value(v: &serde_json::Value) -> Result<LawSpec> {
    match v {
        serde_json::Value::String(s) => LawSpec::from_str(s),
        other => serde_json::from_value(other.clone()).map_err(|e| config_err(format!("invalid tau law: {e}"))),
    }
}

fn build_law(spec: &LawSpec) -> Result<LengthLaw> {
    spec.build().map_err(|e| match e {
        BridgeError::Domain(m) => config_err(format!("invalid tau law: {m}")),
        other => other,
    })
}

/// `START:END:STEP` with `n = round((END − START)/STEP) + 1` points.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, b, h] = parts[..] else {
        return Err(config_err(format!("grid `{spec}`: expected START:END:STEP")));
    };
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| config_err(format!("grid `{spec}`: invalid number `{v}`: {e}")))
    };
    let (start, end, step) = (num(a)?, num(b)?, num(h)?);
    if !(start >= 0.0 && step > 0.0 && start < end) {
        return Err(config_err(format!("grid `{spec}`: need start >= 0, step > 0 and start < end")));
    }
    let n = ((end - start) / step).round() as usize;
    if ((start + n as f64 * step) - end).abs() > 1e-9 * step.max(end.abs()) {
        return Err(config_err(format!("grid `{spec}`: step does not divide the range")));
    }
    uniform_grid(start, end, step).map_err(|e| config_err(e.to_string()))
}

fn parse_observation(s: &str) -> Result<Observation> {
    let (t, x) = s
        .split_once('=')
        .or_else(|| s.split_once(','))
        .ok_or_else(|| config_err(format!("observation `{s}`: expected T=X")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| config_err(format!("observation `{s}`: {e}")))
    };
    Observation::new(num(t)?, num(x)?).map_err(|e| config_err(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    t: f64,
    value: f64,
}

/// Reads observations from CSV with header `t,value`.
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ObservationRow = row?;
        out.push(Observation::new(row.t, row.value).map_err(|e| config_err(e.to_string()))?);
    }
    Ok(out)
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes paths as CSV `path_id,t,value,tau`, 17 significant digits.
pub fn write_paths_csv<W: Write>(paths: &[BridgePath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "t", "value", "tau"])?;
    for p in paths {
        let id = p.seed().path_index.to_string();
        let tau = fmt_float(p.tau());
        for (&t, &v) in p.grid().iter().zip(p.values()) {
            w.write_record([id.as_str(), &fmt_float(t), &fmt_float(v), &tau])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PathRow {
    path_id: u64,
    t: f64,
    value: f64,
    tau: f64,
}

/// Reads paths written by [`write_paths_csv`]. The CSV does not carry the
/// master seed, so it is supplied by the caller.
pub fn read_paths_csv<R: Read>(reader: R, seed: u64) -> Result<Vec<BridgePath>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut groups: Vec<(u64, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: PathRow = row?;
        match groups.last_mut() {
            Some(g) if g.0 == row.path_id => {
                if g.1.to_bits() != row.tau.to_bits() {
                    return Err(BridgeError::Integrity(format!("path {} has more than one tau", row.path_id)));
                }
                g.2.push(row.t);
                g.3.push(row.value);
            }
            _ => groups.push((row.path_id, row.tau, vec![row.t], vec![row.value])),
        }
    }
    let mut shared: Option<Arc<[f64]>> = None;
    groups
        .into_iter()
        .map(|(id, tau, grid, values)| {
            let grid = match &shared {
                Some(g) if g[..] == grid[..] => Arc::clone(g),
                _ => {
                    let g: Arc<[f64]> = grid.into();
                    shared = Some(Arc::clone(&g));
                    g
                }
            };
            BridgePath::new(grid, values, tau, PathSeed { seed, path_index: id })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub lo: f64,
    /// `None` for an unbounded window.
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomMass {
    pub location: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub s: f64,
    pub probability: f64,
}

/// JSON summary of a posterior of `τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub branch: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub window: WindowSummary,
    pub total_mass: f64,
    pub atoms: Vec<AtomMass>,
    pub quantiles: BTreeMap<String, f64>,
    pub mean: f64,
    pub survival: Vec<SurvivalPoint>,
}

impl PosteriorSummary {
    pub fn new(post: &PosteriorMeasure, survival: &[f64]) -> Result<Self> {
        let w = post.window();
        let quantiles = QUANTILE_LEVELS
            .iter()
            .map(|&p| Ok((format!("p{:02}", (p * 100.0).round() as u32), post.quantile(p)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            branch: post.branch().label(),
            k: match post.branch() {
                Branch::Interval { k } => Some(k),
                _ => None,
            },
            window: WindowSummary {
                lo: w.lo,
                hi: w.hi.is_finite().then_some(w.hi),
            },
            total_mass: post.total_mass()?,
            atoms: post
                .atom_masses()
                .into_iter()
                .map(|a| AtomMass {
                    location: a.location,
                    mass: a.mass,
                })
                .collect(),
            quantiles,
            mean: post.mean()?,
            survival: survival
                .iter()
                .map(|&s| {
                    Ok(SurvivalPoint {
                        s,
                        probability: post.survival(s)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub seed: u64,
    pub records: Vec<VerificationRecord>,
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| config_err(format!("cannot write {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn resolve_model(flag: &Option<String>, cfg: &RunConfig) -> Result<CovarianceModel> {
    let spec = flag
        .clone()
        .or_else(|| cfg.model.clone())
        .unwrap_or_else(|| "brownian".to_string());
    parse_model(&spec)
}

fn resolve_law(flag: &Option<String>, cfg: &RunConfig) -> Result<LengthLaw> {
    let spec = match (flag, &cfg.tau) {
        (Some(s), _) => LawSpec::from_str(s)?,
        (None, Some(v)) => parse_law_value(v)?,
        (None, None) => return Err(config_err("a tau law is required (--tau)")),
    };
    build_law(&spec)
}

fn cmd_simulate(args: &SimulateArgs, cfg: &RunConfig) -> Result<i32> {
    let model = resolve_model(&args.model.model, cfg)?;
    let law = resolve_law(&args.model.tau, cfg)?;
    let grid_spec = args
        .grid
        .clone()
        .or_else(|| cfg.grid.clone())
        .ok_or_else(|| config_err("a grid is required (--grid START:END:STEP)"))?;
    let grid = parse_grid(&grid_spec)?;
    let n = args.paths.or(cfg.paths).unwrap_or(1);
    if n == 0 {
        return Err(config_err("--paths must be at least 1"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let out = args.out.clone().or_else(|| cfg.out.clone());
    let paths = sample_random_bridge(&model, &law, &grid, n, seed)?;
    let mut w = open_out(out.as_deref())?;
    write_paths_csv(&paths, &mut w)?;
    w.flush()?;
    Ok(EXIT_OK)
}

fn cmd_posterior(args: &PosteriorArgs, cfg: &RunConfig) -> Result<i32> {
    let model = resolve_model(&args.model.model, cfg)?;
    let law = resolve_law(&args.model.tau, cfg)?;
    let observations = if let Some(path) = &args.obs_file {
        let f = File::open(path).map_err(|e| config_err(format!("cannot open {}: {e}", path.display())))?;
        read_observations_csv(f)?
    } else if !args.obs.is_empty() {
        args.obs.iter().map(|s| parse_observation(s)).collect::<Result<_>>()?
    } else {
        cfg.observations
            .clone()
            .ok_or_else(|| config_err("observations are required (--obs T=X or --obs-file)"))?
    };
    let survival = if args.survival.is_empty() {
        cfg.survival.clone().unwrap_or_default()
    } else {
        args.survival.clone()
    };
    let post = posterior_multi(&model, &law, &observations)?;
    let summary = PosteriorSummary::new(&post, &survival)?;
    write_json(&summary, args.out.as_deref().or(cfg.out.as_deref()))?;
    Ok(EXIT_OK)
}

fn cmd_verify(args: &VerifyArgs, cfg: &RunConfig) -> Result<i32> {
    let mut suite = SuiteConfig::default();
    if let Some(s) = args.seed.or(cfg.seed) {
        suite.seed = s;
    }
    suite.n_paths = args.paths.or(cfg.paths);
    let checks = if args.checks.is_empty() {
        cfg.checks.clone().unwrap_or_default()
    } else {
        args.checks.clone()
    };
    let records = run_suite(&checks, &suite)?;
    let pass = records.iter().all(|r| r.pass);
    let report = VerificationReport {
        pass,
        seed: suite.seed,
        records,
    };
    write_json(&report, args.out.as_deref().or(cfg.out.as_deref()))?;
    Ok(if pass { EXIT_OK } else { EXIT_VERIFY })
}

fn cmd_validate(args: &ValidateArgs, cfg: &RunConfig) -> Result<i32> {
    let model = resolve_model(&args.model, cfg)?;
    let horizon = args.horizon.or(cfg.horizon).unwrap_or(3.0);
    let step = args.step.or(cfg.step).unwrap_or(0.01);
    if !(horizon > 0.0 && step > 0.0 && step < horizon) {
        return Err(config_err("need 0 < step < horizon"));
    }
    let report = model.validate(horizon, step);
    write_json(&report, args.out.as_deref().or(cfg.out.as_deref()))?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFY })
}

/// Exit code for a library error.
pub fn exit_code(e: &BridgeError) -> i32 {
    match e {
        BridgeError::Config(_) | BridgeError::Io(_) | BridgeError::Csv(_) | BridgeError::Json(_) => EXIT_CONFIG,
        _ => EXIT_MATH,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = cli
        .config
        .as_deref()
        .map(RunConfig::load)
        .transpose()
        .map(Option::unwrap_or_default)
        .and_then(|cfg| match &cli.command {
            Command::Simulate(a) => cmd_simulate(a, &cfg),
            Command::Posterior(a) => cmd_posterior(a, &cfg),
            Command::Verify(a) => cmd_verify(a, &cfg),
            Command::Validate(a) => cmd_validate(a, &cfg),
        });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

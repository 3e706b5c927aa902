//! Brute-force Monte Carlo oracles for the closed forms: binned conditional
//! laws, a conditional-independence test of the Markov property, the
//! small-time convergence identities, the tower property and sampler
//! cross-checks.

pub mod stats;
pub mod suite;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::bayes_engine::{filtration_estimate, posterior_single, predict, Observation, PosteriorMeasure};
use crate::cov_model::CovarianceModel;
use crate::det_bridge::{b_raw, BridgeSpec, CholeskySampler, SequentialSampler};
use crate::error::{domain, BridgeError, Result};
use crate::length_law::{LengthLaw, Window};
use crate::random_bridge::{BridgePath, PathSampler};
use crate::rng::{path_rng, PathSeed};
use stats::{ks_two_sample, proportion_se, KsResult, MeanAcc};

/// Fewer retained paths than this is an error rather than an estimate.
pub const MIN_RETAINED: usize = 100;

const HISTOGRAM_BINS: usize = 40;

/// What a binned conditional describes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    Tau,
    Value { u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub location: f64,
    pub frequency: f64,
    pub std_error: f64,
}

/// Fixed-edge histogram of the non-atomic part; frequencies are fractions
/// of all retained paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl Histogram {
    fn build(values: &[f64], lo: f64, hi: f64, total: usize) -> Self {
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &v in values {
            // bins are (e_i, e_{i+1}]
            let i = (((v - lo) / width).ceil() as isize - 1).clamp(0, HISTOGRAM_BINS as isize - 1) as usize;
            counts[i] += 1;
        }
        let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let std_errors = frequencies.iter().map(|&p| proportion_se(p, total)).collect();
        Self {
            edges,
            frequencies,
            std_errors,
        }
    }
}

/// Empirical conditional law given `|ξ_t − x| < h` (or `ξ_t = 0` exactly).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedConditional {
    pub t: f64,
    pub target: Target,
    pub half_width: f64,
    pub center: f64,
    pub count: usize,
    pub n_paths: u64,
    pub seed: u64,
    /// Atom frequencies (for `τ`: the prior's atoms; for `ξ_u`: the mass at 0).
    pub atoms: Vec<Frequency>,
    pub histogram: Option<Histogram>,
    pub mean: f64,
    pub mean_std_error: f64,
    /// Retained target values in path order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl BinnedConditional {
    /// Total variation distance to a posterior of `τ` over the same atoms
    /// and histogram bins.
    pub fn tv_to(&self, posterior: &PosteriorMeasure) -> Result<f64> {
        if self.target != Target::Tau {
            return domain("total variation against a posterior needs a τ conditional");
        }
        let atoms = posterior.atom_masses();
        let atom_mass = |loc: f64| atoms.iter().find(|a| a.location == loc).map_or(0.0, |a| a.mass);
        let mut emp = Vec::new();
        let mut exact = Vec::new();
        for f in &self.atoms {
            emp.push(f.frequency);
            exact.push(atom_mass(f.location));
        }
        if let Some(h) = &self.histogram {
            for (i, w) in h.edges.windows(2).enumerate() {
                let window = Window::new(w[0], w[1]);
                let inside: f64 = atoms.iter().filter(|a| window.contains(a.location)).map(|a| a.mass).sum();
                emp.push(h.frequencies[i]);
                exact.push(posterior.mass(window)? - inside);
            }
        }
        // mass the binning cannot see (e.g. beyond the histogram range)
        let covered: f64 = exact.iter().sum();
        emp.push(0.0);
        exact.push((1.0 - covered).max(0.0));
        Ok(stats::tv_distance(&emp, &exact))
    }
}

fn retains(x: f64, h: f64, v: f64) -> bool {
    if x == 0.0 {
        v == 0.0
    } else {
        v != 0.0 && (v - x).abs() < h
    }
}

fn check_binning(x: f64, h: f64, n_paths: u64) -> Result<()> {
    if x != 0.0 && !(h > 0.0 && h.is_finite()) {
        return domain(format!("bin half-width must be positive, got {h}"));
    }
    if n_paths == 0 {
        return domain("n_paths must be at least 1");
    }
    Ok(())
}

fn enough(count: usize) -> Result<()> {
    if count < MIN_RETAINED {
        return Err(BridgeError::InsufficientSample {
            retained: count,
            needed: MIN_RETAINED,
        });
    }
    Ok(())
}

fn concat<T>(mut a: Vec<T>, b: Vec<T>) -> Vec<T> {
    a.extend(b);
    a
}

/// Empirical law of `τ` among simulated paths with `ξ_t` near `x`.
pub fn empirical_posterior(
    model: &CovarianceModel,
    law: &LengthLaw,
    t: f64,
    x: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
) -> Result<BinnedConditional> {
    check_binning(x, h, n_paths)?;
    let sampler = PathSampler::new(model, law, &[t], seed)?;
    let taus = sampler.fold(
        n_paths,
        Vec::new,
        |acc: &mut Vec<f64>, _, tau, v| {
            if retains(x, h, v[0]) {
                acc.push(tau);
            }
            Ok(())
        },
        concat,
    )?;
    let count = taus.len();
    enough(count)?;
    let mut atoms: Vec<Frequency> = law
        .atom_list()
        .iter()
        .map(|a| {
            let c = taus.iter().filter(|&&r| r == a.location).count();
            let p = c as f64 / count as f64;
            Frequency {
                location: a.location,
                frequency: p,
                std_error: proportion_se(p, count),
            }
        })
        .collect();
    atoms.retain(|f| if x == 0.0 { f.location <= t } else { f.location > t });
    let histogram = (!law.pieces().is_empty()).then(|| {
        let rest: Vec<f64> = taus
            .iter()
            .copied()
            .filter(|r| !law.atom_list().iter().any(|a| a.location == *r))
            .collect();
        let (lo, hi) = if x == 0.0 { (0.0, t) } else { (t, law.support_upper()) };
        Histogram::build(&rest, lo, hi, count)
    });
    let mut acc = MeanAcc::default();
    taus.iter().for_each(|&r| acc.push(r));
    Ok(BinnedConditional {
        t,
        target: Target::Tau,
        half_width: h,
        center: x,
        count,
        n_paths,
        seed,
        atoms,
        histogram,
        mean: acc.mean(),
        mean_std_error: acc.std_error(),
        samples: taus,
    })
}

/// Empirical law of `ξ_u` among simulated paths with `ξ_t` near `x`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_predictive(
    model: &CovarianceModel,
    law: &LengthLaw,
    t: f64,
    x: f64,
    u: f64,
    h: f64,
    n_paths: u64,
    seed: u64,
) -> Result<BinnedConditional> {
    check_binning(x, h, n_paths)?;
    if !(u > t) {
        return domain(format!("u = {u} must exceed t = {t}"));
    }
    let sampler = PathSampler::new(model, law, &[t, u], seed)?;
    let ys = sampler.fold(
        n_paths,
        Vec::new,
        |acc: &mut Vec<f64>, _, _, v| {
            if retains(x, h, v[0]) {
                acc.push(v[1]);
            }
            Ok(())
        },
        concat,
    )?;
    let count = ys.len();
    enough(count)?;
    let zeros = ys.iter().filter(|&&y| y == 0.0).count();
    let p0 = zeros as f64 / count as f64;
    let live: Vec<f64> = ys.iter().copied().filter(|&y| y != 0.0).collect();
    let histogram = (!live.is_empty()).then(|| {
        let lo = live.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Histogram::build(&live, lo - 1e-12, hi, count)
    });
    let mut acc = MeanAcc::default();
    ys.iter().for_each(|&y| acc.push(y));
    Ok(BinnedConditional {
        t,
        target: Target::Value { u },
        half_width: h,
        center: x,
        count,
        n_paths,
        seed,
        atoms: vec![Frequency {
            location: 0.0,
            frequency: p0,
            std_error: proportion_se(p0, count),
        }],
        histogram,
        mean: acc.mean(),
        mean_std_error: acc.std_error(),
        samples: ys,
    })
}

/// `Var(ξ_t) = ∫_{(t,∞)} ρ(t) B(t,r) / ρ(r) P_τ(dr)`.
pub fn marginal_variance(model: &CovarianceModel, law: &LengthLaw, t: f64) -> Result<f64> {
    model.check_time(t)?;
    let rho_t = model.rho(t);
    law.integrate(|r| rho_t * b_raw(model, t, r) / model.rho(r), Window::above(t))
}

/// Default bin half-width `0.01 · sd(ξ_t)`.
pub fn default_half_width(model: &CovarianceModel, law: &LengthLaw, t: f64) -> Result<f64> {
    Ok(0.01 * marginal_variance(model, law, t)?.sqrt())
}

/// How the conditional-independence test conditions on the past.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// `ξ_{t₂}` versus `(ξ_{t₁}, ξ_{t₂})`.
    Markov,
    /// Negative control: `ξ_{t₂} − ξ_{t₁}` versus `(ξ_{t₁}, ξ_{t₂} − ξ_{t₁})`.
    Increment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CiCell {
    pub bin: usize,
    pub group: usize,
    pub count: usize,
    pub discrepancy: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiReport {
    pub conditioning: Conditioning,
    pub times: [f64; 3],
    pub n_paths: u64,
    pub seed: u64,
    pub cells: Vec<CiCell>,
    pub excluded_cells: usize,
    pub max_abs_z: f64,
    pub band: f64,
    pub pass: bool,
}

/// Bins of the conditioning variable.
const CI_BINS: usize = 10;
/// Groups of the extra variable within each bin.
const CI_GROUPS: usize = 2;
const CI_MIN_CELL: usize = 200;

/// Least-squares cubic fit `y ≈ Σ c_k z^k` after centering and scaling `z`.
fn cubic_residuals(z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = z.len();
    let mean = z.iter().sum::<f64>() / n as f64;
    let scale = z.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-300);
    let basis = |v: f64| {
        let w = (v - mean) / scale;
        [1.0, w, w * w, w * w * w]
    };
    let mut gram = nalgebra::Matrix4::<f64>::zeros();
    let mut rhs = nalgebra::Vector4::<f64>::zeros();
    for (&zi, &yi) in z.iter().zip(y) {
        let b = nalgebra::Vector4::from(basis(zi));
        gram += b * b.transpose();
        rhs += b * yi;
    }
    let coef = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| BridgeError::Numeric("local regression is singular".into()))?;
    Ok(z.iter()
        .zip(y)
        .map(|(&zi, &yi)| yi - nalgebra::Vector4::from(basis(zi)).dot(&coef))
        .collect())
}

/// Tests `E[g(ξ_u) | ξ_{t₁}, ξ_{t₂}] = E[g(ξ_u) | ξ_{t₂}]`.
///
/// Paths are binned into deciles of the conditioning variable; within each
/// bin `g(ξ_u)` is regressed on that variable by a local cubic. Residual
/// means are then compared across groups of the extra variable; any
/// populated cell more than `band` standard errors from 0 fails the test.
/// Paths already pinned at `t₂` are dropped (`ξ_u = 0` is then certain).
#[allow(clippy::too_many_arguments)]
pub fn markov_ci_test<G: Fn(f64) -> f64 + Sync>(
    model: &CovarianceModel,
    law: &LengthLaw,
    times: [f64; 3],
    g: G,
    conditioning: Conditioning,
    n_paths: u64,
    seed: u64,
) -> Result<CiReport> {
    let [t1, t2, u] = times;
    if !(0.0 < t1 && t1 < t2 && t2 < u) {
        return domain(format!("times must satisfy 0 < t1 < t2 < u, got {times:?}"));
    }
    let sampler = PathSampler::new(model, law, &times, seed)?;
    let rows = sampler.fold(
        n_paths,
        Vec::new,
        |acc: &mut Vec<[f64; 3]>, _, _, v| {
            if v[1] != 0.0 {
                let (extra, cond) = match conditioning {
                    Conditioning::Markov => (v[0], v[1]),
                    Conditioning::Increment => (v[0], v[1] - v[0]),
                };
                acc.push([cond, extra, g(v[2])]);
            }
            Ok(())
        },
        concat,
    )?;
    enough(rows.len())?;
    let mut rows = rows;
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let band = 3.0;
    let mut cells = Vec::new();
    let mut excluded = 0;
    let per_bin = rows.len() / CI_BINS;
    for bin in 0..CI_BINS {
        let end = if bin + 1 == CI_BINS { rows.len() } else { (bin + 1) * per_bin };
        let chunk = &rows[bin * per_bin..end];
        if chunk.len() < CI_GROUPS * CI_MIN_CELL {
            excluded += CI_GROUPS;
            continue;
        }
        let z: Vec<f64> = chunk.iter().map(|r| r[0]).collect();
        let y: Vec<f64> = chunk.iter().map(|r| r[2]).collect();
        let resid = cubic_residuals(&z, &y)?;
        let mut order: Vec<usize> = (0..chunk.len()).collect();
        order.sort_by(|&a, &b| chunk[a][1].total_cmp(&chunk[b][1]));
        let per_group = chunk.len() / CI_GROUPS;
        for group in 0..CI_GROUPS {
            let end = if group + 1 == CI_GROUPS { chunk.len() } else { (group + 1) * per_group };
            let mut acc = MeanAcc::default();
            order[group * per_group..end].iter().for_each(|&i| acc.push(resid[i]));
            let se = acc.std_error();
            let z = if se > 0.0 { acc.mean() / se } else { 0.0 };
            cells.push(CiCell {
                bin,
                group,
                count: acc.n as usize,
                discrepancy: acc.mean(),
                std_error: se,
                z,
            });
        }
    }
    if cells.is_empty() {
        return Err(BridgeError::InsufficientSample {
            retained: rows.len(),
            needed: CI_BINS * CI_GROUPS * CI_MIN_CELL,
        });
    }
    let max_abs_z = cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    Ok(CiReport {
        conditioning,
        times,
        n_paths,
        seed,
        cells,
        excluded_cells: excluded,
        max_abs_z,
        band,
        pass: max_abs_z <= band,
    })
}

/// One step of the small-time convergence sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceStep {
    pub n: u32,
    pub t: f64,
    /// Path average of `∫_{(ε,u]} φ dP_τ`.
    pub mean_mass: f64,
    /// Path average of `|∫_{(ε,u]} φ dP_τ − F(u)|`.
    pub mean_abs_gap: f64,
    /// Path averages of `|∫_{(u,∞)} E_K[g] φ dP_τ − limit|` for `g = y, y²`.
    pub kernel_gap_y: f64,
    pub kernel_gap_y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub epsilon: f64,
    pub u: f64,
    pub target: f64,
    pub limit_y: f64,
    pub limit_y2: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub steps: Vec<ConvergenceStep>,
    pub terminal_gap: f64,
    pub terminal_kernel_gap: f64,
    pub tolerance: f64,
    pub warnings: Vec<String>,
    pub pass: bool,
}

#[derive(Default, Clone)]
struct GapAcc {
    mass: Vec<f64>,
    gap: Vec<f64>,
    gap_y: Vec<f64>,
    gap_y2: Vec<f64>,
}

impl GapAcc {
    fn sized(n: usize) -> Self {
        Self {
            mass: vec![0.0; n],
            gap: vec![0.0; n],
            gap_y: vec![0.0; n],
            gap_y2: vec![0.0; n],
        }
    }

    fn merge(mut self, other: GapAcc) -> GapAcc {
        for (a, b) in [
            (&mut self.mass, &other.mass),
            (&mut self.gap, &other.gap),
            (&mut self.gap_y, &other.gap_y),
            (&mut self.gap_y2, &other.gap_y2),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

/// Follows `∫_{(ε,u]} φ_{ξ_{t_n}^r}(ξ_{t_n}) P_τ(dr)` along `t_n = 2^{−n}`
/// on simulated paths and compares it with `F(u)`. Also tracks the kernel
/// part of the predictive law of `ξ_u` against its small-time limit
/// `∫_{(u,∞)} E[g(N(0, ρ(u) B(u,r) / ρ(r)))] P_τ(dr)` for `g = y, y²`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_check(
    model: &CovarianceModel,
    law: &LengthLaw,
    epsilon: f64,
    u: f64,
    n_max: u32,
    n_paths: u64,
    seed: u64,
    tolerance: f64,
) -> Result<ConvergenceReport> {
    if !(epsilon > 0.0 && u > epsilon) {
        return domain(format!("need 0 < ε < u, got ε={epsilon}, u={u}"));
    }
    if law.cdf(epsilon) > 0.0 {
        return Err(BridgeError::Precondition(format!(
            "the law must satisfy P(τ > ε) = 1, but F({epsilon}) = {}",
            law.cdf(epsilon)
        )));
    }
    let mut warnings = Vec::new();
    match model.q_inf() {
        Some(a) if a > 0.0 => {}
        Some(_) => warnings.push(format!(
            "inf q = 0 for model `{}`; convergence relies on q staying positive on the horizon",
            model.name()
        )),
        None => warnings.push(format!("inf q unknown for model `{}`", model.name())),
    }
    let ns: Vec<u32> = (1..=n_max).rev().filter(|&n| 0.5f64.powi(n as i32) < epsilon.min(u)).collect();
    if ns.is_empty() {
        return domain("no t_n = 2^-n lies below ε");
    }
    let grid: Vec<f64> = ns.iter().map(|&n| 0.5f64.powi(n as i32)).collect();
    let target = law.cdf(u);
    let rho_u = model.rho(u);
    let limit_y = 0.0;
    let limit_y2 = law.integrate(|r| rho_u * b_raw(model, u, r) / model.rho(r), Window::above(u))?;
    let sampler = PathSampler::new(model, law, &grid, seed)?;
    let k = grid.len();
    let acc = sampler.fold(
        n_paths,
        || GapAcc::sized(k),
        |acc, _, _, v| {
            for (i, (&t, &x)) in grid.iter().zip(v).enumerate() {
                let obs = Observation { time: t, value: x };
                let post = posterior_single(model, law, obs)?;
                let mass = post.mass(Window::new(epsilon, u))?;
                let pred = predict(model, law, obs, u)?;
                acc.mass[i] += mass;
                acc.gap[i] += (mass - target).abs();
                acc.gap_y[i] += (pred.expect(|y| y) - limit_y).abs();
                acc.gap_y2[i] += (pred.expect(|y| y * y) - limit_y2).abs();
            }
            Ok(())
        },
        GapAcc::merge,
    )?;
    let nf = n_paths as f64;
    // report from the largest t_n down to the smallest
    let steps: Vec<ConvergenceStep> = (0..k)
        .rev()
        .map(|i| ConvergenceStep {
            n: ns[i],
            t: grid[i],
            mean_mass: acc.mass[i] / nf,
            mean_abs_gap: acc.gap[i] / nf,
            kernel_gap_y: acc.gap_y[i] / nf,
            kernel_gap_y2: acc.gap_y2[i] / nf,
        })
        .collect();
    let last = steps[steps.len() - 1];
    let terminal_kernel_gap = last.kernel_gap_y.max(last.kernel_gap_y2);
    Ok(ConvergenceReport {
        epsilon,
        u,
        target,
        limit_y,
        limit_y2,
        n_paths,
        seed,
        terminal_gap: last.mean_abs_gap,
        terminal_kernel_gap,
        tolerance,
        pass: last.mean_abs_gap < tolerance && terminal_kernel_gap < tolerance,
        steps,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TowerReport {
    pub t: f64,
    pub n_paths: u64,
    pub seed: u64,
    pub mean: f64,
    pub std_error: f64,
    pub expected: f64,
    pub z: f64,
    pub pinned_fraction: f64,
    pub pass: bool,
}

/// Averages `E[τ | ℱ_t]` over simulated paths and compares with `E[τ]`.
pub fn tower_check(
    model: &CovarianceModel,
    law: &LengthLaw,
    grid: &[f64],
    n_paths: u64,
    seed: u64,
) -> Result<TowerReport> {
    let sampler = PathSampler::new(model, law, grid, seed)?;
    let shared: Arc<[f64]> = grid.into();
    let t_index = grid.len() - 1;
    let (acc, pinned) = sampler.fold(
        n_paths,
        || (MeanAcc::default(), 0u64),
        |(acc, pinned), i, tau, v| {
            let path = BridgePath::new(Arc::clone(&shared), v.to_vec(), tau, PathSeed { seed, path_index: i })?;
            acc.push(filtration_estimate(model, law, &path, t_index, |r| r)?);
            *pinned += u64::from(v[t_index] == 0.0);
            Ok(())
        },
        |(a, p), (b, q)| (a.merge(b), p + q),
    )?;
    let expected = law.mean()?;
    let se = acc.std_error();
    let z = (acc.mean() - expected) / se;
    Ok(TowerReport {
        t: grid[t_index],
        n_paths,
        seed,
        mean: acc.mean(),
        std_error: se,
        expected,
        z,
        pinned_fraction: pinned as f64 / n_paths as f64,
        pass: z.abs() <= 3.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroFrequencyReport {
    pub n_paths: u64,
    pub seed: u64,
    pub grid_points: usize,
    /// Largest `|P̂(ξ_t = 0) − F(t)| / s.e.` over grid points with `0 < F < 1`.
    pub max_z: f64,
    /// Grid points where `F ∈ {0, 1}` but the empirical frequency differs.
    pub exact_mismatches: usize,
    pub pass: bool,
}

/// Compares the empirical frequency of `ξ_t = 0` with `F(t)` on a grid.
pub fn stopping_time_check(
    model: &CovarianceModel,
    law: &LengthLaw,
    grid: &[f64],
    n_paths: u64,
    seed: u64,
) -> Result<ZeroFrequencyReport> {
    let sampler = PathSampler::new(model, law, grid, seed)?;
    let counts = sampler.fold(
        n_paths,
        || vec![0u64; grid.len()],
        |acc, _, _, v| {
            for (c, &x) in acc.iter_mut().zip(v) {
                *c += u64::from(x == 0.0);
            }
            Ok(())
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    )?;
    let mut max_z: f64 = 0.0;
    let mut exact_mismatches = 0;
    for (&t, &c) in grid.iter().zip(&counts) {
        let p_hat = c as f64 / n_paths as f64;
        let f = if t == 0.0 { 1.0 } else { law.cdf(t) };
        let se = proportion_se(f, n_paths as usize);
        if se == 0.0 {
            exact_mismatches += usize::from(p_hat != f);
        } else {
            max_z = max_z.max((p_hat - f).abs() / se);
        }
    }
    Ok(ZeroFrequencyReport {
        n_paths,
        seed,
        grid_points: grid.len(),
        max_z,
        exact_mismatches,
        pass: max_z <= 3.0 && exact_mismatches == 0,
    })
}

/// KS comparison of the marginal at `grid[index]` between the sequential
/// and the Cholesky sampler of a fixed-length bridge. The Cholesky paths
/// use streams `n_paths..2·n_paths` so the two samples are independent.
pub fn sampler_ks_check(
    model: &CovarianceModel,
    length: f64,
    grid: &[f64],
    index: usize,
    n_paths: u64,
    seed: u64,
) -> Result<KsResult> {
    if index >= grid.len() {
        return domain("marginal index is past the grid");
    }
    let spec = BridgeSpec::new(model, length)?;
    let seq = SequentialSampler::new(spec, grid)?;
    let chol = CholeskySampler::new(spec, grid)?;
    let a: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; grid.len()];
            seq.sample_into(&mut path_rng(seed, i), &mut buf);
            buf[index]
        })
        .collect();
    let b: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; grid.len()];
            chol.sample_into(&mut path_rng(seed, n_paths + i), &mut buf);
            buf[index]
        })
        .collect();
    ks_two_sample(&a, &b)
}

/// Dense bridge covariance matrix `R(s,t) − R(s,r) R(t,r) / R(r,r)` on `times`.
pub fn dense_bridge_covariance(spec: &BridgeSpec<'_>, times: &[f64]) -> Result<DMatrix<f64>> {
    let n = times.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = spec.projected_covariance(times[i], times[j])?;
        }
    }
    Ok(m)
}

/// Joint log density of `(ξ^r_{t_1}, …, ξ^r_{t_n})` by dense Cholesky.
pub fn dense_joint_log_density(spec: &BridgeSpec<'_>, times: &[f64], values: &[f64]) -> Result<f64> {
    stats::dense_gaussian_log_density(&dense_bridge_covariance(spec, times)?, values)
}

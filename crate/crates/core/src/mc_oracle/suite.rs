//! The registered verification checks behind `rlbridge verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    convergence_check, dense_joint_log_density, empirical_posterior, markov_ci_test, sampler_ks_check,
    stopping_time_check, tower_check, Conditioning,
};
use crate::bayes_engine::{
    expect_joint, phi_weight_fn, posterior_single, predict, predict_multi, psi_weight_fn, Observation,
};
use crate::cov_model::CovarianceModel;
use crate::det_bridge::BridgeSpec;
use crate::error::{BridgeError, Result};
use crate::length_law::{LengthLaw, Window};
use crate::random_bridge::uniform_grid;

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRecord {
    pub check: String,
    pub parameters: Value,
    pub statistic: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Wall-clock seconds; kept out of the JSON so reports stay byte-stable.
    #[serde(skip)]
    pub seconds: f64,
}

/// Settings shared by all checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Overrides the path count of every Monte Carlo check.
    pub n_paths: Option<u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 20_240_601, n_paths: None }
    }
}

impl SuiteConfig {
    fn paths(&self, default: u64) -> u64 {
        self.n_paths.unwrap_or(default)
    }
}

type CheckFn = fn(&SuiteConfig) -> Result<VerificationRecord>;

/// Check names in execution order.
pub const CHECKS: [(&str, CheckFn); 12] = [
    ("covariance", covariance),
    ("kernel", kernel),
    ("joint_density", joint_density),
    ("sampler_ks", sampler_ks),
    ("stopping_time", stopping_time),
    ("posterior", posterior),
    ("normalization", normalization),
    ("markov_reduction", markov_reduction),
    ("markov", markov),
    ("convergence", convergence),
    ("tower", tower),
    ("determinism", determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs one named check. Errors inside the check become a failing record.
pub fn run_check(name: &str, config: &SuiteConfig) -> Result<VerificationRecord> {
    let (_, f) = CHECKS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| BridgeError::Config(format!("unknown check `{name}`; known: {}", check_names().join(", "))))?;
    let start = Instant::now();
    let mut record = f(config).unwrap_or_else(|e| VerificationRecord {
        check: name.to_string(),
        parameters: json!({ "seed": config.seed, "n_paths": config.n_paths }),
        statistic: f64::NAN,
        tolerance: f64::NAN,
        pass: false,
        detail: Some(e.to_string()),
        seconds: 0.0,
    });
    record.seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Runs the selected checks (all when `names` is empty).
pub fn run_suite(names: &[String], config: &SuiteConfig) -> Result<Vec<VerificationRecord>> {
    if names.is_empty() {
        return check_names().into_iter().map(|n| run_check(n, config)).collect();
    }
    names.iter().map(|n| run_check(n, config)).collect()
}

fn record(check: &str, parameters: Value, statistic: f64, tolerance: f64, pass: bool) -> VerificationRecord {
    VerificationRecord {
        check: check.to_string(),
        parameters,
        statistic,
        tolerance,
        pass,
        detail: None,
        seconds: 0.0,
    }
}

fn two_atoms() -> LengthLaw {
    LengthLaw::atoms(&[(1.0, 0.5), (2.0, 0.5)]).expect("valid law")
}

fn random_model(rng: &mut ChaCha8Rng) -> CovarianceModel {
    match rng.random_range(0..3) {
        0 => CovarianceModel::brownian(),
        1 => CovarianceModel::scaled_brownian(rng.random_range(0.3..3.0)).expect("valid sigma"),
        _ => CovarianceModel::ou_from_zero(rng.random_range(0.1..2.0), rng.random_range(0.3..2.0)).expect("valid OU"),
    }
}

fn random_law(rng: &mut ChaCha8Rng) -> LengthLaw {
    let atoms = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(1..5);
        let w = 1.0 / k as f64;
        let pts: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.2..4.0), w)).collect();
        LengthLaw::atoms(&pts).expect("valid atoms")
    };
    match rng.random_range(0..4) {
        0 => atoms(rng),
        1 => LengthLaw::exponential(rng.random_range(0.3..2.0)).expect("valid rate"),
        2 => {
            let a = rng.random_range(0.1..2.0);
            LengthLaw::uniform(a, a + rng.random_range(0.2..3.0)).expect("valid uniform")
        }
        _ => {
            let w = rng.random_range(0.2..0.8);
            let a = rng.random_range(0.1..1.5);
            LengthLaw::mixture(&[
                (w, atoms(rng)),
                (1.0 - w, LengthLaw::uniform(a, a + rng.random_range(0.5..3.0)).expect("valid uniform")),
            ])
            .expect("valid mixture")
        }
    }
}

/// Sorted draws from `(lo, hi)` that keep a relative gap from each other
/// and from both ends.
fn spread_times(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    loop {
        let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        t.sort_by(f64::total_cmp);
        let mut edges = vec![lo];
        edges.extend(&t);
        edges.push(hi);
        if edges.windows(2).all(|w| w[1] - w[0] > gap * (hi - lo)) {
            return t;
        }
    }
}

fn covariance(_: &SuiteConfig) -> Result<VerificationRecord> {
    let models = [CovarianceModel::brownian(), CovarianceModel::ou_from_zero(1.0, 1.0)?];
    let r = 1.0;
    let grid: Vec<f64> = (1..=50).map(|i| i as f64 / 51.0).collect();
    let mut worst: f64 = 0.0;
    for m in &models {
        let spec = BridgeSpec::new(m, r)?;
        for &s in &grid {
            for &t in &grid {
                let a = spec.bridge_covariance(s, t)?;
                let b = spec.projected_covariance(s, t)?;
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            }
        }
    }
    let tol = 1e-12;
    Ok(record(
        "covariance",
        json!({ "models": ["brownian", "ou(1,1)"], "length": r, "grid_points": grid.len() }),
        worst,
        tol,
        worst <= tol,
    ))
}

fn kernel(config: &SuiteConfig) -> Result<VerificationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cases = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = random_model(&mut rng);
        let tur = spread_times(&mut rng, 3, 0.0, 3.0, 0.005);
        let spec = BridgeSpec::new(&m, tur[2])?;
        let (t, u) = (tur[0], tur[1]);
        let markov = spec.transition_kernel(t, u)?;
        let general = spec.general_kernel(t, u)?;
        let scale = spec.marginal_variance(u)?;
        worst = worst
            .max((markov.slope - general.slope).abs() / markov.slope.abs().max(1.0))
            .max((markov.variance - general.variance).abs() / scale);
    }
    let tol = 1e-12;
    Ok(record(
        "kernel",
        json!({ "cases": cases, "seed": config.seed, "variance_scale": "marginal variance at u" }),
        worst,
        tol,
        worst <= tol,
    ))
}

fn joint_density(config: &SuiteConfig) -> Result<VerificationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x3);
    let cases = 1000;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = random_model(&mut rng);
        let r = rng.random_range(0.5..3.0);
        let n = rng.random_range(1..=5);
        let times = spread_times(&mut rng, n, 0.0, r, 0.02);
        let spec = BridgeSpec::new(&m, r)?;
        let mut values = Vec::with_capacity(n);
        for &t in &times {
            let sd = spec.marginal_variance(t)?.sqrt();
            values.push(rng.random_range(-2.0..2.0) * sd);
        }
        let closed = spec.log_joint_density(&times, &values)?;
        let dense = dense_joint_log_density(&spec, &times, &values)?;
        // |p/q − 1| for the densities themselves
        worst = worst.max((closed - dense).exp_m1().abs());
    }
    let tol = 1e-10;
    Ok(record(
        "joint_density",
        json!({ "cases": cases, "max_points": 5, "seed": config.seed }),
        worst,
        tol,
        worst <= tol,
    ))
}

fn sampler_ks(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(50_000);
    let bm = CovarianceModel::brownian();
    let grid = uniform_grid(0.0, 1.0, 0.05)?;
    let index = 10;
    let seeds = 10;
    let mut passing = 0;
    let mut p_values = Vec::new();
    for k in 0..seeds {
        let ks = sampler_ks_check(&bm, 1.0, &grid, index, n, config.seed.wrapping_add(k))?;
        p_values.push(ks.p_value);
        passing += usize::from(ks.p_value > 0.01);
    }
    Ok(record(
        "sampler_ks",
        json!({ "model": "brownian", "length": 1.0, "t": grid[index], "n_paths": n, "seeds": seeds,
                "seed": config.seed, "p_values": p_values }),
        passing as f64,
        9.0,
        passing >= 9,
    ))
}

fn stopping_time(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(50_000);
    let grid = uniform_grid(0.0, 2.5, 0.01)?;
    let rep = stopping_time_check(&CovarianceModel::brownian(), &two_atoms(), &grid, n, config.seed)?;
    let mut r = record(
        "stopping_time",
        json!({ "model": "brownian", "law": "atoms:1=0.5,2=0.5", "grid": "0:2.5:0.01", "n_paths": n,
                "seed": config.seed }),
        rep.max_z,
        3.0,
        rep.pass,
    );
    if rep.exact_mismatches > 0 {
        r.detail = Some(format!("{} grid points with F in {{0,1}} disagree", rep.exact_mismatches));
    }
    Ok(r)
}

fn posterior(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(1_000_000);
    let (t, x, h) = (0.5, 0.8, 0.01);
    let bm = CovarianceModel::brownian();
    let law = two_atoms();
    let emp = empirical_posterior(&bm, &law, t, x, h, n, config.seed)?;
    let post = posterior_single(&bm, &law, Observation { time: t, value: x })?;
    let tv = emp.tv_to(&post)?;
    let exact = post.atom_masses()[0].mass;
    let f = emp.atoms[0];
    let tol = 0.05;
    let mut r = record(
        "posterior",
        json!({ "model": "brownian", "law": "atoms:1=0.5,2=0.5", "t": t, "x": x, "h": h, "n_paths": n,
                "seed": config.seed, "retained": emp.count, "formula_mass_at_1": exact,
                "empirical_mass_at_1": f.frequency, "std_error": f.std_error }),
        tv,
        tol,
        tv < tol,
    );
    r.detail = Some(format!(
        "P(τ=1 | ξ_0.5=0.8): formula {exact:.5}, empirical {:.5} ± {:.5}",
        f.frequency, f.std_error
    ));
    Ok(r)
}

/// `∫ f dP_τ` for an integrand that may fail; the first failure is returned.
fn integrate_fallible<F: Fn(f64) -> Result<f64>>(law: &LengthLaw, window: Window, f: F) -> Result<f64> {
    let failure = std::cell::RefCell::new(None);
    let total = law.integrate(
        |r| {
            f(r).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            })
        },
        window,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => total,
    }
}

fn normalization(config: &SuiteConfig) -> Result<VerificationRecord> {
    let cases = 1000u64;
    let errors: Vec<f64> = (0..cases)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7);
            rng.set_stream(i);
            let m = random_model(&mut rng);
            let law = random_law(&mut rng);
            let top = law.support_upper().min(6.0);
            let t = rng.random_range(0.02..0.9) * top;
            if i % 2 == 0 {
                let sd = super::marginal_variance(&m, &law, t)?.sqrt();
                let x = rng.random_range(0.05..2.5) * sd * if rng.random::<bool>() { 1.0 } else { -1.0 };
                let w = phi_weight_fn(&m, &law, t, x)?;
                let total = integrate_fallible(&law, w.window(), |r| w.eval(r))?;
                Ok((total - 1.0).abs())
            } else {
                // ψ_k on a window that carries prior mass
                let t_prev = rng.random_range(0.0..0.9) * t;
                let mut t_next = t + rng.random_range(0.1..2.0);
                while law.mass(Window::new(t, t_next)) == 0.0 {
                    t_next += 0.5;
                }
                let spec_sd = (m.rho(t) * crate::det_bridge::b_raw(&m, t, t_next) / m.rho(t_next)).sqrt();
                let x = rng.random_range(0.05..2.5) * spec_sd;
                let w = psi_weight_fn(&m, &law, t_prev, t, t_next, x)?;
                let total = integrate_fallible(&law, w.window(), |r| w.eval(r))?;
                Ok((total - 1.0).abs())
            }
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let tol = 1e-9;
    Ok(record(
        "normalization",
        json!({ "cases": cases, "seed": config.seed, "weights": ["phi", "psi_k"] }),
        worst,
        tol,
        worst <= tol,
    ))
}

fn markov_reduction(config: &SuiteConfig) -> Result<VerificationRecord> {
    let cases = 1000u64;
    let errors: Vec<f64> = (0..cases)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x11);
            rng.set_stream(i);
            let m = random_model(&mut rng);
            let law = random_law(&mut rng);
            let top = law.support_upper().min(6.0);
            let n = rng.random_range(2..=4);
            let times = spread_times(&mut rng, n, 0.0, 0.9 * top, 0.01);
            let observations: Vec<Observation> = times
                .iter()
                .map(|&t| -> Result<Observation> {
                    let sd = super::marginal_variance(&m, &law, t)?.sqrt();
                    let x = rng.random_range(0.05..2.0) * sd * if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Observation::new(t, x)
                })
                .collect::<Result<_>>()?;
            let last = observations[n - 1];
            let u = last.time + rng.random_range(0.05..1.5);
            let multi = predict_multi(&m, &law, &observations, u)?;
            let single = predict(&m, &law, last, u)?;
            let mut worst = (multi.zero_mass - single.zero_mass).abs();
            for g in [|y: f64| y, |y: f64| y * y, |y: f64| y.cos()] {
                worst = worst.max((multi.expect(g) - single.expect(g)).abs());
            }
            let h = |r: f64, y: f64| r.min(5.0) * y + (r * y).sin();
            let joint_multi = expect_joint(&m, &law, &observations, u, h)?;
            let joint_single = expect_joint(&m, &law, &[last], u, h)?;
            Ok(worst.max((joint_multi - joint_single).abs()))
        })
        .collect::<Result<_>>()?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let tol = 1e-8;
    Ok(record(
        "markov_reduction",
        json!({ "cases": cases, "max_observations": 4, "seed": config.seed,
                "functionals": ["zero mass", "y", "y^2", "cos y", "joint min(r,5) y + sin(r y)"] }),
        worst,
        tol,
        worst <= tol,
    ))
}

fn markov(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(1_000_000);
    let bm = CovarianceModel::brownian();
    let law = two_atoms();
    let times = [0.3, 0.6, 0.9];
    let pos = markov_ci_test(&bm, &law, times, |y| y, Conditioning::Markov, n, config.seed)?;
    let neg = markov_ci_test(&bm, &law, times, |y| y, Conditioning::Increment, n, config.seed)?;
    let mut r = record(
        "markov",
        json!({ "model": "brownian", "law": "atoms:1=0.5,2=0.5", "times": times, "g": "y", "n_paths": n,
                "seed": config.seed, "control_max_abs_z": neg.max_abs_z,
                "excluded_cells": pos.excluded_cells }),
        pos.max_abs_z,
        pos.band,
        pos.pass && !neg.pass,
    );
    r.detail = Some(format!(
        "Markov conditioning max |z| = {:.3}; increment control max |z| = {:.1} (must exceed {})",
        pos.max_abs_z, neg.max_abs_z, neg.band
    ));
    Ok(r)
}

fn convergence(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(1000);
    let tol = 0.02;
    let rep = convergence_check(&CovarianceModel::brownian(), &two_atoms(), 0.5, 1.5, 14, n, config.seed, tol)?;
    let mut r = record(
        "convergence",
        json!({ "model": "brownian", "law": "atoms:1=0.5,2=0.5", "epsilon": 0.5, "u": 1.5, "n_max": 14,
                "n_paths": n, "seed": config.seed, "target": rep.target,
                "terminal_kernel_gap": rep.terminal_kernel_gap }),
        rep.terminal_gap,
        tol,
        rep.pass,
    );
    if !rep.warnings.is_empty() {
        r.detail = Some(rep.warnings.join("; "));
    }
    Ok(r)
}

fn tower(config: &SuiteConfig) -> Result<VerificationRecord> {
    let n = config.paths(100_000);
    let law = LengthLaw::mixture(&[(0.5, two_atoms()), (0.5, LengthLaw::uniform(0.5, 3.0)?)])?;
    let grid = uniform_grid(0.0, 1.5, 0.05)?;
    let rep = tower_check(&CovarianceModel::brownian(), &law, &grid, n, config.seed)?;
    Ok(record(
        "tower",
        json!({ "model": "brownian", "law": "0.5 atoms:1=0.5,2=0.5 + 0.5 uniform:0.5:3", "t": rep.t,
                "n_paths": n, "seed": config.seed, "mean": rep.mean, "expected": rep.expected,
                "std_error": rep.std_error, "pinned_fraction": rep.pinned_fraction }),
        rep.z.abs(),
        3.0,
        rep.pass,
    ))
}

fn determinism(config: &SuiteConfig) -> Result<VerificationRecord> {
    let bm = CovarianceModel::brownian();
    let law = two_atoms();
    let grid = uniform_grid(0.0, 2.0, 0.01)?;
    let csv = || -> Result<Vec<u8>> {
        let paths = crate::random_bridge::sample_random_bridge(&bm, &law, &grid, 100, config.seed)?;
        let mut buf = Vec::new();
        crate::cli::write_paths_csv(&paths, &mut buf)?;
        Ok(buf)
    };
    let summary = || -> Result<Vec<u8>> {
        let post = posterior_single(&bm, &law, Observation { time: 0.5, value: 0.8 })?;
        let s = crate::cli::PosteriorSummary::new(&post, &[1.5])?;
        Ok(serde_json::to_vec(&s)?)
    };
    let same = csv()? == csv()? && summary()? == summary()?;
    Ok(record(
        "determinism",
        json!({ "seed": config.seed, "outputs": ["paths csv", "posterior json"] }),
        if same { 0.0 } else { 1.0 },
        0.0,
        same,
    ))
}


//! Closed-form Bayesian inference on the pinning time `τ` and on future
//! values of the bridge, for Gaussian–Markov `X`.
//!
//! Likelihood weights are always handled in log space. The live-branch
//! weight `φ` is evaluated through differences of `ρ`/`q` products relative
//! to a reference length, never as a ratio of two tiny densities.

use serde::{Deserialize, Serialize};

use crate::cov_model::CovarianceModel;
use crate::det_bridge::{b_raw, BridgeSpec};
use crate::error::{domain, BridgeError, Result};
use crate::length_law::{Atom, LengthLaw, Window};
use crate::quad::{gauss_hermite_64, GaussHermite};
use crate::random_bridge::{zero_set_detector, BridgePath};

/// Candidate points per density piece used to locate the weight's peak.
const PEAK_PROBES: usize = 257;

/// A single observation `ξ_t = x`; `x = 0` is the pinned event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return domain(format!("observation time must be positive, got {time}"));
        }
        if !value.is_finite() {
            return domain(format!("observation value must be finite, got {value}"));
        }
        Ok(Self { time, value })
    }

    pub fn is_pinned(&self) -> bool {
        self.value == 0.0
    }
}

/// Which regime of the posterior applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `τ ≤ t₁`: every observation is 0.
    Pinned,
    /// `τ ∈ (t_k, t_{k+1}]`: the first zero is observation `k + 1` (1-based).
    Interval { k: usize },
    /// `τ > t_n`: no observation is 0.
    Live,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Pinned => "pinned",
            Branch::Interval { .. } => "psi_k",
            Branch::Live => "live",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum LogForm {
    /// `log φ(r)` at `(t, x)` up to a constant, as exponent differences
    /// relative to `reference`.
    Phi { t: f64, x: f64, reference: f64 },
    /// `log ψ_k(r)` up to a constant: `½ ln(ρ(r)/B(t,r)) − ½ x² B(prev,r) / (B(t,r) B(prev,t))`.
    Psi { prev: f64, t: f64, x: f64 },
}

impl LogForm {
    fn eval(&self, m: &CovarianceModel, r: f64) -> f64 {
        match *self {
            LogForm::Phi { t, x, reference } => phi_log_ratio(m, t, x, r, reference),
            LogForm::Psi { prev, t, x } => {
                let b_tr = b_raw(m, t, r);
                if !(b_tr > 0.0) {
                    return f64::NEG_INFINITY;
                }
                0.5 * (m.rho(r) / b_tr).ln() - 0.5 * x * x * b_raw(m, prev, r) / (b_tr * b_raw(m, prev, t))
            }
        }
    }
}

/// `ln(varphi_r(x) / varphi_s(x))` for the bridge marginals at time `t`:
/// `½ ln(ρ(r) B(t,s) / (ρ(s) B(t,r))) − ½ x² (ρ(s) q(r) − ρ(r) q(s)) / (B(t,r) B(t,s))`.
fn phi_log_ratio(m: &CovarianceModel, t: f64, x: f64, r: f64, s: f64) -> f64 {
    let b_tr = b_raw(m, t, r);
    let b_ts = b_raw(m, t, s);
    if !(b_tr > 0.0) {
        return f64::NEG_INFINITY;
    }
    if !(b_ts > 0.0) {
        return f64::INFINITY;
    }
    let (rho_r, rho_s) = (m.rho(r), m.rho(s));
    0.5 * (rho_r * b_ts / (rho_s * b_tr)).ln() - 0.5 * x * x * (rho_s * m.q(r) - rho_r * m.q(s)) / (b_tr * b_ts)
}

/// Plain log marginal density of `ξ^r_t` at `x` without the `2π` term; only
/// used to pick a reference length.
fn log_marginal(m: &CovarianceModel, t: f64, x: f64, r: f64) -> f64 {
    let v = m.rho(t) * b_raw(m, t, r) / m.rho(r);
    if !(v > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * (v.ln() + x * x / v)
}

#[derive(Debug, Clone, Copy)]
enum Weight {
    Flat { value: f64 },
    Log { form: LogForm, log_norm: f64 },
}

/// A posterior law of `τ`: `P_τ` reweighted by `w` on `window`.
#[derive(Debug, Clone)]
pub struct PosteriorMeasure {
    model: CovarianceModel,
    base: LengthLaw,
    window: Window,
    branch: Branch,
    weight: Weight,
}

impl PosteriorMeasure {
    fn flat(model: &CovarianceModel, law: &LengthLaw, window: Window, branch: Branch) -> Result<Self> {
        let mass = law.mass(window);
        if !(mass > 0.0) {
            return Err(BridgeError::Precondition(format!(
                "F({}) > 0 is required in the pinned branch, but the prior puts no mass on (0, {}]",
                window.hi, window.hi
            )));
        }
        Ok(Self {
            model: model.clone(),
            base: law.clone(),
            window,
            branch,
            weight: Weight::Flat { value: 1.0 / mass },
        })
    }

    fn weighted(
        model: &CovarianceModel,
        law: &LengthLaw,
        window: Window,
        branch: Branch,
        form: LogForm,
    ) -> Result<Self> {
        if !(law.mass(window) > 0.0) {
            return Err(BridgeError::Inconsistent(format!(
                "the prior puts no mass on ({}, {}], yet the observations require τ there",
                window.lo, window.hi
            )));
        }
        let probes = probe_points(law, window);
        let shift = probes
            .iter()
            .map(|&r| form.eval(model, r))
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(BridgeError::Numeric(format!(
                "weight is not finite anywhere on ({}, {}]",
                window.lo, window.hi
            )));
        }
        let z = law.integrate(|r| (form.eval(model, r) - shift).exp(), window)?;
        if !(z > 0.0 && z.is_finite()) {
            return Err(BridgeError::Numeric(format!(
                "posterior normalizer is {z:e} after shifting by {shift:e}; the observation is too far in the tail"
            )));
        }
        Ok(Self {
            model: model.clone(),
            base: law.clone(),
            window,
            branch,
            weight: Weight::Log {
                form,
                log_norm: shift + z.ln(),
            },
        })
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn base(&self) -> &LengthLaw {
        &self.base
    }

    /// Density of the posterior with respect to `P_τ`; 0 off the window.
    pub fn weight(&self, r: f64) -> f64 {
        if !self.window.contains(r) {
            return 0.0;
        }
        match self.weight {
            Weight::Flat { value } => value,
            Weight::Log { form, log_norm } => (form.eval(&self.model, r) - log_norm).exp(),
        }
    }

    /// `∫ f(r) w(r) P_τ(dr)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.expect_on(f, self.window)
    }

    fn expect_on<F: Fn(f64) -> f64>(&self, f: F, window: Window) -> Result<f64> {
        let w = window.intersect(&self.window);
        self.base.integrate(|r| f(r) * self.weight(r), w)
    }

    /// Posterior probability of `τ ∈ window`.
    pub fn mass(&self, window: Window) -> Result<f64> {
        self.expect_on(|_| 1.0, window)
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.mass(self.window)
    }

    /// `P(τ ≤ s | observations)`.
    pub fn cdf(&self, s: f64) -> Result<f64> {
        if s <= self.window.lo {
            return Ok(0.0);
        }
        self.mass(Window::new(0.0, s))
    }

    /// `P(τ > s | observations)`.
    pub fn survival(&self, s: f64) -> Result<f64> {
        Ok(1.0 - self.cdf(s)?)
    }

    pub fn mean(&self) -> Result<f64> {
        self.expect(|r| r)
    }

    /// Posterior masses of the prior's atoms inside the window.
    pub fn atom_masses(&self) -> Vec<Atom> {
        self.base
            .atom_list()
            .iter()
            .filter(|a| self.window.contains(a.location))
            .map(|a| Atom {
                location: a.location,
                mass: a.mass * self.weight(a.location),
            })
            .collect()
    }

    /// Smallest `s` with `P(τ ≤ s | ·) ≥ p`, found by bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("quantile level must lie in (0, 1), got {p}"));
        }
        let mut lo = self.window.lo;
        let mut hi = self.window.hi.min(self.base.support_upper());
        for _ in 0..200 {
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // a bisection that lands on an atom converges just to its right edge
        if let Some(a) = self
            .base
            .atom_list()
            .iter()
            .find(|a| self.window.contains(a.location) && (a.location - hi).abs() <= 1e-10 * hi.max(1.0))
        {
            return Ok(a.location);
        }
        Ok(hi)
    }
}

/// Points spread over the part of the prior inside `window`.
fn probe_points(law: &LengthLaw, window: Window) -> Vec<f64> {
    let mut out: Vec<f64> = law
        .atom_list()
        .iter()
        .map(|a| a.location)
        .filter(|&r| window.contains(r))
        .collect();
    for piece in law.pieces() {
        let (a, b) = piece.effective_interval();
        let lo = a.max(window.lo);
        let hi = b.min(window.hi);
        if hi > lo {
            let n = PEAK_PROBES as f64;
            out.extend((0..PEAK_PROBES).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n));
        }
    }
    out
}

fn check_setup(model: &CovarianceModel, law: &LengthLaw) -> Result<()> {
    if let Some(h) = model.horizon() {
        let top = law.support_upper();
        if top > h {
            return domain(format!(
                "the length law reaches {top}, past the model horizon {h}; extend the table or truncate the law"
            ));
        }
    }
    Ok(())
}

fn check_live(model: &CovarianceModel, law: &LengthLaw, t: f64, x: f64) -> Result<()> {
    check_setup(model, law)?;
    model.check_time(t)?;
    if !(t > 0.0) {
        return domain(format!("observation time must be positive, got {t}"));
    }
    if x == 0.0 {
        return domain("x = 0 is the pinned event; use the pinned branch");
    }
    Ok(())
}

/// `φ(r) = varphi_r(x) / ∫_{(t,∞)} varphi_s(x) P_τ(ds)` where `varphi_r` is
/// the density of `ξ^r_t`, evaluated as
/// `1 / ∫ exp(½ ln(ρ(s)B(t,r) / (ρ(r)B(t,s))) + ½ x² (ρ(s)q(r) − ρ(r)q(s)) / (B(t,r)B(t,s))) P_τ(ds)`.
pub fn phi_weight(model: &CovarianceModel, law: &LengthLaw, t: f64, r: f64, x: f64) -> Result<f64> {
    check_live(model, law, t, x)?;
    if !(r > t) {
        return domain(format!("phi weight needs r > t, got r={r}, t={t}"));
    }
    model.check_time(r)?;
    reciprocal_integral(law, Window::above(t), |s| phi_log_ratio(model, t, x, s, r))
        .map_err(|e| BridgeError::Numeric(format!("phi at t={t}, r={r}, x={x}: {e}")))
}

/// `1 / ∫ exp(g) dP_τ` over `window`, with `g` shifted by its largest probed
/// value so the integral cannot overflow. The result may underflow to 0.
fn reciprocal_integral<G: Fn(f64) -> f64>(law: &LengthLaw, window: Window, g: G) -> Result<f64> {
    let shift = probe_points(law, window)
        .into_iter()
        .map(&g)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(BridgeError::Numeric("exponent is not finite on the window".into()));
    }
    let z = law.integrate(|s| (g(s) - shift).exp(), window)?;
    if !(z > 0.0 && z.is_finite()) {
        return Err(BridgeError::Numeric(format!("denominator is {z:e} after shifting by {shift:e}")));
    }
    Ok((-shift - z.ln()).exp())
}

/// A live weight as a function of `r` with `(t, x)` fixed. The quadrature
/// rule for the denominator is built once; each evaluation is then a single
/// weighted sum, which is exact for every `r` because the integrands for
/// different `r` differ only by a constant factor.
#[derive(Debug, Clone)]
pub struct WeightFn {
    model: CovarianceModel,
    window: Window,
    form: LogForm,
    nodes: Vec<(f64, f64)>,
}

impl WeightFn {
    fn build(model: &CovarianceModel, law: &LengthLaw, window: Window, form: LogForm) -> Result<Self> {
        let reference = probe_points(law, window)
            .into_iter()
            .map(|r| (r, form.eval(model, r)))
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(r, _)| r)
            .ok_or_else(|| BridgeError::Numeric("weight exponent is not finite on the window".into()))?;
        let at_ref = form.eval(model, reference);
        let nodes = law.nodes(|s| (form.eval(model, s) - at_ref).exp(), window)?;
        Ok(Self {
            model: model.clone(),
            window,
            form,
            nodes,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// The weight at `r`; 0 outside the window.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !self.window.contains(r) {
            return Ok(0.0);
        }
        let at_r = self.form.eval(&self.model, r);
        if !at_r.is_finite() {
            return Err(BridgeError::Numeric(format!("weight exponent is {at_r} at r={r}")));
        }
        let g: Vec<f64> = self.nodes.iter().map(|&(s, _)| self.form.eval(&self.model, s) - at_r).collect();
        let shift = g.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = self.nodes.iter().zip(&g).map(|(&(_, w), &v)| w * (v - shift).exp()).sum();
        if !(z > 0.0 && z.is_finite()) {
            return Err(BridgeError::Numeric(format!("denominator is {z:e} at r={r}")));
        }
        Ok((-shift - z.ln()).exp())
    }
}

/// `φ(·)` at `(t, x)` as a reusable function of `r`; see [`phi_weight`].
pub fn phi_weight_fn(model: &CovarianceModel, law: &LengthLaw, t: f64, x: f64) -> Result<WeightFn> {
    check_live(model, law, t, x)?;
    let window = Window::above(t);
    let reference = probe_points(law, window)
        .into_iter()
        .map(|r| (r, log_marginal(model, t, x, r)))
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r)
        .ok_or_else(|| BridgeError::Inconsistent(format!("no prior mass above t={t}")))?;
    WeightFn::build(model, law, window, LogForm::Phi { t, x, reference })
}

/// `ψ_k(·, x)` as a reusable function of `r`; see [`psi_weight`].
pub fn psi_weight_fn(
    model: &CovarianceModel,
    law: &LengthLaw,
    t_prev: f64,
    t_k: f64,
    t_next: f64,
    x: f64,
) -> Result<WeightFn> {
    check_live(model, law, t_k, x)?;
    model.check_time(t_next)?;
    if !(t_prev >= 0.0 && t_prev < t_k && t_k < t_next) {
        return domain(format!("psi needs 0 <= t_prev < t_k < t_next, got {t_prev}, {t_k}, {t_next}"));
    }
    WeightFn::build(model, law, Window::new(t_k, t_next), LogForm::Psi { prev: t_prev, t: t_k, x })
}

/// `ψ_k(r, x)` on `(t_k, t_{k+1}]` built from `(t_{k−1}, t_k)`; pass
/// `t_prev = 0` for `k = 1`.
pub fn psi_weight(
    model: &CovarianceModel,
    law: &LengthLaw,
    t_prev: f64,
    t_k: f64,
    t_next: f64,
    x: f64,
    r: f64,
) -> Result<f64> {
    check_live(model, law, t_k, x)?;
    model.check_time(t_next)?;
    if !(t_prev >= 0.0 && t_prev < t_k && t_k < t_next) {
        return domain(format!("psi needs 0 <= t_prev < t_k < t_next, got {t_prev}, {t_k}, {t_next}"));
    }
    let window = Window::new(t_k, t_next);
    if !window.contains(r) {
        return Ok(0.0);
    }
    let form = LogForm::Psi { prev: t_prev, t: t_k, x };
    let at_r = form.eval(model, r);
    reciprocal_integral(law, window, |s| form.eval(model, s) - at_r)
        .map_err(|e| BridgeError::Numeric(format!("psi at r={r}, x={x}: {e}")))
}

/// Posterior of `τ` given `ξ_t = x`.
pub fn posterior_single(model: &CovarianceModel, law: &LengthLaw, obs: Observation) -> Result<PosteriorMeasure> {
    let Observation { time: t, value: x } = obs;
    if x == 0.0 {
        check_setup(model, law)?;
        model.check_time(t)?;
        return PosteriorMeasure::flat(model, law, Window::new(0.0, t), Branch::Pinned);
    }
    check_live(model, law, t, x)?;
    let window = Window::above(t);
    let reference = probe_points(law, window)
        .into_iter()
        .map(|r| (r, log_marginal(model, t, x, r)))
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r)
        .ok_or_else(|| {
            BridgeError::Inconsistent(format!("ξ_{t} = {x} ≠ 0 but the prior puts no mass beyond t"))
        })?;
    PosteriorMeasure::weighted(model, law, window, Branch::Live, LogForm::Phi { t, x, reference })
}

fn validate_observations(observations: &[Observation]) -> Result<()> {
    if observations.is_empty() {
        return domain("at least one observation is required");
    }
    let mut seen_zero = false;
    let mut prev = 0.0;
    for o in observations {
        if !(o.time > prev) {
            return domain(format!("observation times must be positive and strictly increasing at t = {}", o.time));
        }
        if seen_zero && !o.is_pinned() {
            return domain(format!(
                "ξ = {} at t = {} after an earlier zero; once pinned the bridge stays at 0",
                o.value, o.time
            ));
        }
        seen_zero |= o.is_pinned();
        prev = o.time;
    }
    Ok(())
}

/// Posterior of `τ` given `ξ_{t_1}, …, ξ_{t_n}`.
pub fn posterior_multi(
    model: &CovarianceModel,
    law: &LengthLaw,
    observations: &[Observation],
) -> Result<PosteriorMeasure> {
    validate_observations(observations)?;
    if observations.len() == 1 {
        return posterior_single(model, law, observations[0]);
    }
    check_setup(model, law)?;
    for o in observations {
        model.check_time(o.time)?;
    }
    let time = |i: usize| if i == 0 { 0.0 } else { observations[i - 1].time };
    match observations.iter().position(|o| o.is_pinned()) {
        Some(0) => PosteriorMeasure::flat(model, law, Window::new(0.0, observations[0].time), Branch::Pinned),
        Some(j) => {
            // first zero is observation j + 1 (1-based), so k = j
            let k = j;
            let form = LogForm::Psi {
                prev: time(k - 1),
                t: time(k),
                x: observations[k - 1].value,
            };
            let window = Window::new(time(k), time(k + 1));
            PosteriorMeasure::weighted(model, law, window, Branch::Interval { k }, form)
        }
        None => {
            let n = observations.len();
            let form = LogForm::Psi {
                prev: time(n - 1),
                t: time(n),
                x: observations[n - 1].value,
            };
            PosteriorMeasure::weighted(model, law, Window::above(time(n)), Branch::Live, form)
        }
    }
}

/// One Gaussian component of a predictive law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictiveComponent {
    /// Pinning time the component conditions on.
    pub length: f64,
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Conditional law of `ξ_u`: a point mass at 0 plus a Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveLaw {
    pub zero_mass: f64,
    pub components: Vec<PredictiveComponent>,
}

impl PredictiveLaw {
    pub fn total_mass(&self) -> f64 {
        self.zero_mass + self.components.iter().map(|c| c.weight).sum::<f64>()
    }

    /// `E[g(ξ_u) | ·]` with the default 64-node Gauss–Hermite rule.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.expect_with(gauss_hermite_64(), g)
    }

    pub fn expect_with<G: Fn(f64) -> f64>(&self, rule: &GaussHermite, g: G) -> f64 {
        let cont: f64 = self
            .components
            .iter()
            .map(|c| c.weight * rule.expect(c.mean, c.variance, &g))
            .sum();
        self.zero_mass * g(0.0) + cont
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }
}

fn predictive_from(posterior: &PosteriorMeasure, t: f64, x: f64, u: f64) -> Result<PredictiveLaw> {
    if posterior.branch() != Branch::Live {
        return Ok(PredictiveLaw {
            zero_mass: 1.0,
            components: Vec::new(),
        });
    }
    let model = &posterior.model;
    model.check_time(u)?;
    let zero_mass = posterior.mass(Window::new(t, u))?;
    let nodes = posterior.base.nodes(|r| posterior.weight(r), Window::above(u))?;
    let mut components = Vec::with_capacity(nodes.len());
    for (r, w) in nodes {
        let weight = w * posterior.weight(r);
        if weight == 0.0 {
            continue;
        }
        let k = BridgeSpec::new(model, r)?.transition_kernel(t, u)?;
        components.push(PredictiveComponent {
            length: r,
            weight,
            mean: k.mean(x),
            variance: k.variance,
        });
    }
    Ok(PredictiveLaw { zero_mass, components })
}

/// Conditional law of `ξ_u` given `ξ_t = x`, `u > t`.
pub fn predict(model: &CovarianceModel, law: &LengthLaw, obs: Observation, u: f64) -> Result<PredictiveLaw> {
    if !(u > obs.time) {
        return domain(format!("prediction time u = {u} must exceed t = {}", obs.time));
    }
    let posterior = posterior_single(model, law, obs)?;
    predictive_from(&posterior, obs.time, obs.value, u)
}

/// Conditional law of `ξ_u` given several observations, `u > t_n`.
pub fn predict_multi(
    model: &CovarianceModel,
    law: &LengthLaw,
    observations: &[Observation],
    u: f64,
) -> Result<PredictiveLaw> {
    let posterior = posterior_multi(model, law, observations)?;
    let last = observations[observations.len() - 1];
    if !(u > last.time) {
        return domain(format!("prediction time u = {u} must exceed t_n = {}", last.time));
    }
    predictive_from(&posterior, last.time, last.value, u)
}

/// `E[g(τ, ξ_u) | observations]` for `u` past the last observation: the
/// pinned and interval branches see `ξ_u = 0`; the live branch splits into
/// absorption on `(t_n, u]` and a kernel integral on `(u, ∞)`.
pub fn expect_joint<G: Fn(f64, f64) -> f64>(
    model: &CovarianceModel,
    law: &LengthLaw,
    observations: &[Observation],
    u: f64,
    g: G,
) -> Result<f64> {
    expect_joint_with(model, law, observations, u, gauss_hermite_64(), g)
}

pub fn expect_joint_with<G: Fn(f64, f64) -> f64>(
    model: &CovarianceModel,
    law: &LengthLaw,
    observations: &[Observation],
    u: f64,
    rule: &GaussHermite,
    g: G,
) -> Result<f64> {
    let posterior = posterior_multi(model, law, observations)?;
    let last = observations[observations.len() - 1];
    if !(u > last.time) {
        return domain(format!("u = {u} must exceed the last observation time {}", last.time));
    }
    model.check_time(u)?;
    if posterior.branch() != Branch::Live {
        return posterior.expect(|r| g(r, 0.0));
    }
    let (t, x) = (last.time, last.value);
    let absorbed = posterior.expect_on(|r| g(r, 0.0), Window::new(t, u))?;
    let failed = std::cell::Cell::new(None);
    let alive = posterior.expect_on(
        |r| match BridgeSpec::new(model, r).and_then(|s| s.transition_kernel(t, u)) {
            Ok(k) => rule.expect(k.mean(x), k.variance, |y| g(r, y)),
            Err(e) => {
                failed.set(Some(e.to_string()));
                f64::NAN
            }
        },
        Window::above(u),
    );
    if let Some(msg) = failed.take() {
        return Err(BridgeError::Numeric(format!("kernel evaluation failed: {msg}")));
    }
    Ok(absorbed + alive?)
}

/// `E[g(τ) | ℱ_t]` from a path observed up to grid index `t_index`: `g(τ)`
/// when the path is already pinned, otherwise the live posterior at the last
/// value alone.
pub fn filtration_estimate<G: Fn(f64) -> f64>(
    model: &CovarianceModel,
    law: &LengthLaw,
    path: &BridgePath,
    t_index: usize,
    g: G,
) -> Result<f64> {
    let grid = path.grid();
    if t_index >= grid.len() {
        return domain(format!("index {t_index} is past the grid ({} points)", grid.len()));
    }
    let t = grid[t_index];
    if !(t > 0.0) {
        return domain("the prefix must end at a positive time");
    }
    let x = path.values()[t_index];
    if x == 0.0 {
        match zero_set_detector(path)? {
            Some(k) if k <= t_index => Ok(g(path.tau())),
            _ => Err(BridgeError::Integrity(format!(
                "value 0 at t = {t} but the zero set says the path is not pinned there"
            ))),
        }
    } else {
        posterior_single(model, law, Observation { time: t, value: x })?.expect(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_atoms() -> LengthLaw {
        LengthLaw::atoms(&[(1.0, 0.5), (2.0, 0.5)]).unwrap()
    }

    fn obs(t: f64, x: f64) -> Observation {
        Observation::new(t, x).unwrap()
    }

    /// Same split from the Gaussian densities N(0, 0.25) and N(0, 0.375).
    fn split_oracle() -> f64 {
        let n = |v: f64| (-0.64 / (2.0 * v)).exp() / v.sqrt();
        n(0.25) / (n(0.25) + n(0.375))
    }

    #[test]
    fn reusable_weights_match_pointwise() {
        let ou = CovarianceModel::ou_from_zero(0.7, 1.3).unwrap();
        let law = LengthLaw::mixture(&[
            (0.4, LengthLaw::atoms(&[(1.2, 0.5), (2.5, 0.5)]).unwrap()),
            (0.6, LengthLaw::exponential(0.8).unwrap()),
        ])
        .unwrap();
        let w = phi_weight_fn(&ou, &law, 0.6, -0.9).unwrap();
        for r in [0.61, 1.0, 1.2, 2.5, 4.0, 9.0] {
            let a = w.eval(r).unwrap();
            let b = phi_weight(&ou, &law, 0.6, r, -0.9).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "r={r}: {a} vs {b}");
        }
        assert_eq!(w.eval(0.5).unwrap(), 0.0);
        let w = psi_weight_fn(&ou, &law, 0.3, 0.9, 3.0, 0.4).unwrap();
        for r in [0.95, 1.2, 2.5, 2.99] {
            let a = w.eval(r).unwrap();
            let b = psi_weight(&ou, &law, 0.3, 0.9, 3.0, 0.4, r).unwrap();
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "r={r}: {a} vs {b}");
        }
    }

    #[test]
    fn two_atom_split() {
        let bm = CovarianceModel::brownian();
        let post = posterior_single(&bm, &two_atoms(), obs(0.5, 0.8)).unwrap();
        let atoms = post.atom_masses();
        assert_eq!(atoms.len(), 2);
        let p1 = split_oracle();
        assert!((atoms[0].mass - p1).abs() < 1e-13);
        assert!((atoms[0].mass - 0.444).abs() < 1e-3);
        assert!((atoms[1].mass - (1.0 - p1)).abs() < 1e-13);
        assert!((post.total_mass().unwrap() - 1.0).abs() < 1e-12);
        // literal φ agrees with the measure's weight
        let phi1 = phi_weight(&bm, &two_atoms(), 0.5, 1.0, 0.8).unwrap();
        assert!((phi1 - post.weight(1.0)).abs() < 1e-13);
    }

    #[test]
    fn single_atom_phi_is_one() {
        let bm = CovarianceModel::brownian();
        let law = LengthLaw::atoms(&[(1.3, 1.0)]).unwrap();
        assert!((phi_weight(&bm, &law, 0.4, 1.3, -2.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pinned_branch() {
        let bm = CovarianceModel::brownian();
        let post = posterior_single(&bm, &two_atoms(), obs(1.5, 0.0)).unwrap();
        assert_eq!(post.branch(), Branch::Pinned);
        let atoms = post.atom_masses();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].location, 1.0);
        assert!((atoms[0].mass - 1.0).abs() < 1e-15);

        let expo = LengthLaw::exponential(1.0).unwrap();
        let post = posterior_single(&bm, &expo, obs(1.0, 0.0)).unwrap();
        let oracle = (1.0 - 2.0 * (-1.0f64).exp()) / (1.0 - (-1.0f64).exp());
        assert!((post.mean().unwrap() - oracle).abs() < 1e-10);
        assert!((post.mean().unwrap() - 0.41802).abs() < 1e-5);

        let err = posterior_single(&bm, &two_atoms(), obs(0.5, 0.0)).unwrap_err();
        assert!(matches!(err, BridgeError::Precondition(_)));
    }

    #[test]
    fn psi_interval_example() {
        let bm = CovarianceModel::brownian();
        let law = LengthLaw::atoms(&[(0.75, 0.4), (1.25, 0.3), (3.0, 0.3)]).unwrap();
        let post = posterior_multi(&bm, &law, &[obs(0.5, 0.6), obs(1.0, 0.0)]).unwrap();
        assert_eq!(post.branch(), Branch::Interval { k: 1 });
        let atoms = post.atom_masses();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].location, 0.75);
        assert!((atoms[0].mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_zeros_rejected() {
        let bm = CovarianceModel::brownian();
        let err = posterior_multi(&bm, &two_atoms(), &[obs(0.5, 0.0), obs(1.0, 0.3)]).unwrap_err();
        assert!(matches!(err, BridgeError::Domain(_)));
        let err = posterior_multi(&bm, &two_atoms(), &[obs(1.0, 0.3), obs(0.5, 0.3)]).unwrap_err();
        assert!(matches!(err, BridgeError::Domain(_)));
    }

    #[test]
    fn live_past_support_is_inconsistent() {
        let bm = CovarianceModel::brownian();
        let err = posterior_single(&bm, &two_atoms(), obs(2.5, 0.3)).unwrap_err();
        assert!(matches!(err, BridgeError::Inconsistent(_)));
    }

    #[test]
    fn multi_live_matches_single_at_last() {
        let bm = CovarianceModel::brownian();
        let law = LengthLaw::mixture(&[(0.4, two_atoms()), (0.6, LengthLaw::exponential(0.7).unwrap())]).unwrap();
        let observations = [obs(0.3, -0.4), obs(0.8, 0.5)];
        let multi = posterior_multi(&bm, &law, &observations).unwrap();
        let single = posterior_single(&bm, &law, observations[1]).unwrap();
        for r in [0.81, 1.0, 1.7, 2.0, 4.0, 9.0] {
            assert!((multi.weight(r) - single.weight(r)).abs() < 1e-10 * single.weight(r).max(1.0), "r={r}");
        }
    }

    #[test]
    fn predict_example() {
        let bm = CovarianceModel::brownian();
        let pred = predict(&bm, &two_atoms(), obs(0.5, 0.8), 1.5).unwrap();
        assert!((pred.zero_mass - split_oracle()).abs() < 1e-13);
        assert_eq!(pred.components.len(), 1);
        let c = pred.components[0];
        assert!((c.mean - 0.8 / 3.0).abs() < 1e-14);
        assert!((c.variance - 1.0 / 3.0).abs() < 1e-14);
        assert!((pred.expect(|_| 1.0) - 1.0).abs() < 1e-13);

        let pinned = predict(&bm, &two_atoms(), obs(1.5, 0.0), 1.8).unwrap();
        assert_eq!(pinned.zero_mass, 1.0);
        assert!(pinned.components.is_empty());
    }

    #[test]
    fn predictive_mass_with_density_prior() {
        let bm = CovarianceModel::brownian();
        let law = LengthLaw::exponential(1.0).unwrap();
        let pred = predict(&bm, &law, obs(0.4, 0.3), 1.1).unwrap();
        assert!((pred.total_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expect_joint_examples() {
        let bm = CovarianceModel::brownian();
        let atom = LengthLaw::atoms(&[(2.0, 1.0)]).unwrap();
        let o = [obs(0.5, 0.8)];
        let mean = expect_joint(&bm, &atom, &o, 1.5, |_, y| y).unwrap();
        assert!((mean - 0.8 / 3.0).abs() < 1e-13);
        let one = expect_joint(&bm, &two_atoms(), &o, 1.5, |_, _| 1.0).unwrap();
        assert!((one - 1.0).abs() < 1e-12);

        let expo = LengthLaw::exponential(1.0).unwrap();
        let post = posterior_single(&bm, &expo, o[0]).unwrap();
        for s in [0.7, 1.4, 3.0] {
            let via_g = expect_joint(&bm, &expo, &o, 1.0, |r, _| if r <= s { 1.0 } else { 0.0 }).unwrap();
            assert!((via_g - post.cdf(s).unwrap()).abs() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn non_homogeneous_in_time() {
        let bm = CovarianceModel::brownian();
        let a = predict(&bm, &two_atoms(), obs(0.3, 0.5), 0.5).unwrap();
        let b = predict(&bm, &two_atoms(), obs(0.5, 0.5), 0.7).unwrap();
        assert!(a.zero_mass == 0.0 && b.zero_mass == 0.0);
        // both windows miss the atoms; the kernels still differ
        assert!((a.components[0].variance - b.components[0].variance).abs() > 1e-3);
        let law = LengthLaw::atoms(&[(0.6, 0.5), (2.0, 0.5)]).unwrap();
        let a = predict(&bm, &law, obs(0.3, 0.5), 0.5).unwrap();
        let b = predict(&bm, &law, obs(0.5, 0.5), 0.7).unwrap();
        assert!((a.zero_mass - b.zero_mass).abs() > 1e-3);
    }

    #[test]
    fn quantiles_and_survival() {
        let bm = CovarianceModel::brownian();
        let post = posterior_single(&bm, &two_atoms(), obs(0.5, 0.8)).unwrap();
        assert_eq!(post.quantile(0.25).unwrap(), 1.0);
        assert_eq!(post.quantile(0.75).unwrap(), 2.0);
        assert!((post.survival(1.5).unwrap() - (1.0 - split_oracle())).abs() < 1e-13);

        let expo = LengthLaw::exponential(1.0).unwrap();
        let post = posterior_single(&bm, &expo, obs(1.0, 0.0)).unwrap();
        let q = post.quantile(0.5).unwrap();
        assert!((post.cdf(q).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn tiny_time_stays_finite() {
        let bm = CovarianceModel::brownian();
        let law = LengthLaw::mixture(&[(0.5, two_atoms()), (0.5, LengthLaw::uniform(0.5, 3.0).unwrap())]).unwrap();
        let t = 2f64.powi(-20);
        let post = posterior_single(&bm, &law, obs(t, 3.0 * t.sqrt())).unwrap();
        assert!((post.total_mass().unwrap() - 1.0).abs() < 1e-9);
    }
}

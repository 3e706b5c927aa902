//! The bridge `ξ^r` of deterministic length `r`: covariance, densities,
//! Markov transition kernels and two exact grid samplers.
//!
//! For a Gaussian–Markov model everything is expressed through
//! `B(s, t) = ρ(max) q(min) − ρ(min) q(max)`. The general (non-Markov)
//! conditioning formulas built from `A(t, s) = R(s,s)R(t,t) − R(s,t)²` are
//! kept alongside as an independent route to the same numbers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cov_model::CovarianceModel;
use crate::error::{domain, BridgeError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

// Relative size below which a negative variance is treated as round-off.
const VARIANCE_FLOOR: f64 = 1e-15;

/// `B(s, t)` without argument checks.
pub(crate) fn b_raw(model: &CovarianceModel, s: f64, t: f64) -> f64 {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    model.rho(hi) * model.q(lo) - model.rho(lo) * model.q(hi)
}

/// `B(s, t) = ρ(max(s,t)) q(min(s,t)) − ρ(min(s,t)) q(max(s,t))`.
pub fn b_factor(model: &CovarianceModel, s: f64, t: f64) -> Result<f64> {
    model.check_time(s)?;
    model.check_time(t)?;
    Ok(b_raw(model, s, t))
}

/// `A(t, s) = R(s,s) R(t,t) − R(s,t)²`.
pub fn a_factor(model: &CovarianceModel, t: f64, s: f64) -> Result<f64> {
    model.check_time(s)?;
    model.check_time(t)?;
    Ok(model.cov(s, s) * model.cov(t, t) - model.cov(s, t).powi(2))
}

fn clamp_variance(v: f64, scale: f64, what: &str) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_FLOOR * scale.abs().max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(BridgeError::Integrity(format!(
            "{what}: negative variance {v:e} (scale {scale:e}); is rho/q strictly increasing?"
        )))
    }
}

/// One-step conditional law `Y | X = x ~ Normal(slope · x, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub slope: f64,
    pub variance: f64,
}

impl GaussianKernel {
    pub fn mean(&self, x: f64) -> f64 {
        self.slope * x
    }

    pub fn log_density(&self, y: f64, x: f64) -> f64 {
        let d = y - self.mean(x);
        -0.5 * (LN_2PI + self.variance.ln() + d * d / self.variance)
    }

    pub fn density(&self, y: f64, x: f64) -> f64 {
        self.log_density(y, x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(x) + self.variance.sqrt() * z
    }
}

/// A bridge of deterministic length over a covariance model.
#[derive(Debug, Clone, Copy)]
pub struct BridgeSpec<'a> {
    pub model: &'a CovarianceModel,
    pub length: f64,
}

impl<'a> BridgeSpec<'a> {
    pub fn new(model: &'a CovarianceModel, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return domain(format!("bridge length must be positive, got {length}"));
        }
        model.check_time(length)?;
        Ok(Self { model, length })
    }

    fn check_in_bridge(&self, t: f64) -> Result<()> {
        self.model.check_time(t)?;
        if t > self.length {
            return domain(format!("time {t} exceeds bridge length {}", self.length));
        }
        Ok(())
    }

    fn check_interior(&self, t: f64) -> Result<()> {
        self.check_in_bridge(t)?;
        if t <= 0.0 || t >= self.length {
            return domain(format!(
                "time {t} is not strictly inside (0, {}); the bridge is a point mass there",
                self.length
            ));
        }
        Ok(())
    }

    /// `q̃(u) = q(u) − ρ(u) q(r)/ρ(r)`.
    fn q_tilde(&self, u: f64) -> f64 {
        let r = self.length;
        self.model.q(u) - self.model.rho(u) * self.model.q(r) / self.model.rho(r)
    }

    /// Bridge covariance in factorized form `ρ(min) · q̃(max)`.
    pub fn bridge_covariance(&self, s: f64, t: f64) -> Result<f64> {
        self.check_in_bridge(s)?;
        self.check_in_bridge(t)?;
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        if hi == self.length {
            return Ok(0.0);
        }
        Ok(self.model.rho(lo) * self.q_tilde(hi))
    }

    /// Bridge covariance by orthogonal projection: `R(s,t) − R(s,r)R(t,r)/R(r,r)`.
    pub fn projected_covariance(&self, s: f64, t: f64) -> Result<f64> {
        self.check_in_bridge(s)?;
        self.check_in_bridge(t)?;
        let m = self.model;
        let r = self.length;
        Ok(m.cov(s, t) - m.cov(s, r) * m.cov(t, r) / m.cov(r, r))
    }

    /// Marginal variance `v(t) = ρ(t) B(t, r) / ρ(r)` for `0 < t < r`.
    pub fn marginal_variance(&self, t: f64) -> Result<f64> {
        self.check_interior(t)?;
        let m = self.model;
        let r = self.length;
        let v = m.rho(t) * b_raw(m, t, r) / m.rho(r);
        clamp_variance(v, m.cov(t, t), "marginal variance")
    }

    /// Marginal variance through `A(t, r) / R(r, r)`.
    pub fn marginal_variance_from_a(&self, t: f64) -> Result<f64> {
        self.check_interior(t)?;
        let r = self.length;
        let v = a_factor(self.model, t, r)? / self.model.cov(r, r);
        clamp_variance(v, self.model.cov(t, t), "marginal variance")
    }

    /// Density of `ξ^r_t` at `x` (centered Gaussian with variance `v(t)`).
    pub fn marginal_density(&self, t: f64, x: f64) -> Result<f64> {
        let v = self.marginal_variance(t)?;
        Ok((-0.5 * (LN_2PI + v.ln() + x * x / v)).exp())
    }

    /// Markov transition kernel from `t` to `u`:
    /// slope `B(u,r)/B(t,r)`, variance `B(t,u) B(u,r) / B(t,r)`.
    pub fn transition_kernel(&self, t: f64, u: f64) -> Result<GaussianKernel> {
        self.check_in_bridge(t)?;
        self.check_in_bridge(u)?;
        if !(t < u && u < self.length) {
            return domain(format!(
                "transition kernel needs 0 <= t < u < r, got t={t}, u={u}, r={}",
                self.length
            ));
        }
        self.kernel_unchecked(t, u)
    }

    pub(crate) fn kernel_unchecked(&self, t: f64, u: f64) -> Result<GaussianKernel> {
        let m = self.model;
        let r = self.length;
        let b_tr = b_raw(m, t, r);
        let b_ur = b_raw(m, u, r);
        let b_tu = b_raw(m, t, u);
        if !(b_tr > 0.0) {
            return Err(BridgeError::Integrity(format!("B({t}, {r}) = {b_tr:e} is not positive")));
        }
        let slope = b_ur / b_tr;
        let variance = clamp_variance(b_tu * b_ur / b_tr, m.cov(u, u), "transition kernel")?;
        Ok(GaussianKernel { slope, variance })
    }

    /// Conditional law of `ξ^r_u` given `ξ^r_t` from raw covariances and `A`
    /// (valid for any Gaussian bridge with an invertible 2×2 covariance).
    pub fn general_kernel(&self, t: f64, u: f64) -> Result<GaussianKernel> {
        self.check_interior(t)?;
        self.check_in_bridge(u)?;
        if u == t || u >= self.length {
            return domain(format!("general kernel needs u != t and u < r, got t={t}, u={u}"));
        }
        let m = self.model;
        let r = self.length;
        let rrr = m.cov(r, r);
        let a_tr = a_factor(m, t, r)?;
        let a_ur = a_factor(m, u, r)?;
        let cross = m.cov(u, t) * rrr - m.cov(u, r) * m.cov(t, r);
        let slope = cross / a_tr;
        let variance = a_ur / rrr - cross * cross / (rrr * a_tr);
        let variance = clamp_variance(variance, a_ur / rrr, "general kernel")?;
        Ok(GaussianKernel { slope, variance })
    }

    fn check_times(&self, times: &[f64]) -> Result<()> {
        if times.is_empty() {
            return domain("need at least one time");
        }
        for &t in times {
            self.check_interior(t)?;
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("times must be strictly increasing");
        }
        Ok(())
    }

    /// Log of the joint density of `(ξ^r_{t_1}, …, ξ^r_{t_n})`, evaluated from
    /// its closed form (tridiagonal precision written in terms of `B`).
    pub fn log_joint_density(&self, times: &[f64], values: &[f64]) -> Result<f64> {
        self.check_times(times)?;
        if times.len() != values.len() {
            return domain(format!("{} times but {} values", times.len(), values.len()));
        }
        let n = times.len();
        if n == 1 {
            let v = self.marginal_variance(times[0])?;
            return Ok(-0.5 * (LN_2PI + v.ln() + values[0] * values[0] / v));
        }
        let m = self.model;
        let r = self.length;
        let b = |s: f64, t: f64| b_raw(m, s, t);
        let (t, x) = (times, values);

        let mut log_det = m.rho(r).ln() - m.rho(t[0]).ln() - b(t[n - 1], r).ln();
        for k in 1..n {
            log_det -= b(t[k - 1], t[k]).ln();
        }
        let mut quad = -0.5 * m.rho(t[1]) / (m.rho(t[0]) * b(t[0], t[1])) * x[0] * x[0];
        for k in 1..n - 1 {
            quad -= 0.5 * b(t[k - 1], t[k + 1]) / (b(t[k - 1], t[k]) * b(t[k], t[k + 1])) * x[k] * x[k];
        }
        for k in 0..n - 1 {
            quad += x[k] * x[k + 1] / b(t[k], t[k + 1]);
        }
        quad -= 0.5 * b(t[n - 2], r) / (b(t[n - 1], r) * b(t[n - 2], t[n - 1])) * x[n - 1] * x[n - 1];
        let out = -0.5 * n as f64 * LN_2PI + 0.5 * log_det + quad;
        if out.is_nan() {
            return Err(BridgeError::Numeric("joint density evaluated to NaN".into()));
        }
        Ok(out)
    }

    pub fn joint_density(&self, times: &[f64], values: &[f64]) -> Result<f64> {
        Ok(self.log_joint_density(times, values)?.exp())
    }

    /// One path on `grid` by sequential kernel sampling from `ξ_0 = 0`;
    /// grid points at or after `r` are exactly 0.
    pub fn sample_path<R: Rng + ?Sized>(&self, grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let sampler = SequentialSampler::new(*self, grid)?;
        let mut out = vec![0.0; grid.len()];
        sampler.sample_into(rng, &mut out);
        Ok(out)
    }
}

pub(crate) fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return domain("grid is empty");
    }
    if !(grid[0].is_finite() && grid[0] >= 0.0) {
        return domain(format!("grid must start at t >= 0, got {}", grid[0]));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return domain("grid must be strictly increasing and finite");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Zero,
    Kernel { slope: f64, sd: f64 },
}

/// Sequential-kernel sampler with kernels precomputed for one grid.
#[derive(Debug, Clone)]
pub struct SequentialSampler {
    steps: Vec<Step>,
}

impl SequentialSampler {
    pub fn new(spec: BridgeSpec<'_>, grid: &[f64]) -> Result<Self> {
        validate_grid(grid)?;
        let mut steps = Vec::with_capacity(grid.len());
        let mut prev = 0.0;
        for &t in grid {
            if t == 0.0 || t >= spec.length {
                steps.push(Step::Zero);
                continue;
            }
            spec.model.check_time(t)?;
            let k = spec.kernel_unchecked(prev, t)?;
            steps.push(Step::Kernel {
                slope: k.slope,
                sd: k.variance.sqrt(),
            });
            prev = t;
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fills `out` (same length as the grid).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut prev = 0.0;
        for (slot, step) in out.iter_mut().zip(&self.steps) {
            *slot = match *step {
                Step::Zero => 0.0,
                Step::Kernel { slope, sd } => {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = slope * prev + sd * z;
                    prev
                }
            };
        }
    }
}

/// Sampler through the Cholesky factor of the joint bridge covariance on the
/// interior grid points.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    len: usize,
    interior: Vec<usize>,
    factor: DMatrix<f64>,
}

impl CholeskySampler {
    pub fn new(spec: BridgeSpec<'_>, grid: &[f64]) -> Result<Self> {
        validate_grid(grid)?;
        let interior: Vec<usize> = (0..grid.len())
            .filter(|&i| grid[i] > 0.0 && grid[i] < spec.length)
            .collect();
        let n = interior.len();
        let mut cov = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..=a {
                let c = spec.bridge_covariance(grid[interior[a]], grid[interior[b]])?;
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        let factor = cov
            .cholesky()
            .ok_or_else(|| BridgeError::Numeric("bridge covariance matrix is not positive definite".into()))?
            .l();
        Ok(Self {
            len: grid.len(),
            interior,
            factor,
        })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        out.fill(0.0);
        let z = DVector::from_fn(self.interior.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &self.factor * z;
        for (k, &i) in self.interior.iter().enumerate() {
            out[i] = y[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::path_rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn b_factor_examples() {
        let bm = CovarianceModel::brownian();
        assert_eq!(b_factor(&bm, 0.25, 1.0).unwrap(), 0.75);
        assert_eq!(b_factor(&bm, 0.4, 0.4).unwrap(), 0.0);
        let ou = CovarianceModel::ou_from_zero(1.0, 1.0).unwrap();
        let direct = 1.0f64.sinh() * (-0.5f64).exp() - 0.5f64.sinh() * (-1.0f64).exp();
        // (ρ/q(t) − ρ/q(s)) · q(s) q(t)
        let via_ratio = (ou.ratio(1.0) - ou.ratio(0.5)) * ou.q(0.5) * ou.q(1.0);
        let b = b_factor(&ou, 0.5, 1.0).unwrap();
        assert!(close(b, direct, 1e-14) && close(b, via_ratio, 1e-14));
        assert!((b - 0.52109).abs() < 1e-5, "{b}");
        assert!(b_factor(&bm, -1.0, 1.0).is_err());
    }

    #[test]
    fn bridge_covariance_examples() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        assert!(close(spec.bridge_covariance(0.25, 0.5).unwrap(), 0.125, 1e-15));
        assert_eq!(spec.bridge_covariance(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(spec.bridge_covariance(0.3, 1.0).unwrap(), 0.0);
        assert!(spec.bridge_covariance(0.3, 1.1).is_err());
    }

    #[test]
    fn marginal_examples() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        assert!(close(spec.marginal_variance(0.5).unwrap(), 0.25, 1e-15));
        let mode = spec.marginal_density(0.5, 0.0).unwrap();
        assert!(close(mode, 1.0 / (2.0 * std::f64::consts::PI * 0.25).sqrt(), 1e-14));
        let d = spec.marginal_density(0.5, 0.8).unwrap();
        let expected = (0.5 * std::f64::consts::PI).sqrt().recip() * (-1.28f64).exp();
        assert!(close(d, expected, 1e-14));
        assert!((d - 0.22184).abs() < 1e-5);
        assert!(spec.marginal_density(1.0, 0.0).is_err());
        assert!(spec.marginal_density(0.0, 0.0).is_err());
    }

    #[test]
    fn kernel_example_matches_brute_force_conditioning() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        let k = spec.transition_kernel(0.25, 0.5).unwrap();
        assert!(close(k.slope, 2.0 / 3.0, 1e-15));
        assert!(close(k.variance, 1.0 / 6.0, 1e-15));
        // brute force: 2x2 Gaussian conditioning from the bridge covariance
        let ctt = spec.bridge_covariance(0.25, 0.25).unwrap();
        let ctu = spec.bridge_covariance(0.25, 0.5).unwrap();
        let cuu = spec.bridge_covariance(0.5, 0.5).unwrap();
        assert!(close(k.slope, ctu / ctt, 1e-14));
        assert!(close(k.variance, cuu - ctu * ctu / ctt, 1e-14));
        let g = spec.general_kernel(0.25, 0.5).unwrap();
        assert!(close(g.slope, k.slope, 1e-12) && close(g.variance, k.variance, 1e-12));
    }

    #[test]
    fn kernel_degenerates_as_u_approaches_t() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        let k = spec.transition_kernel(0.4, 0.4 + 1e-9).unwrap();
        assert!((k.slope - 1.0).abs() < 1e-8);
        assert!(k.variance < 1e-8);
        assert!(spec.transition_kernel(0.4, 1.0).is_err());
        assert!(spec.transition_kernel(0.4, 0.3).is_err());
    }

    #[test]
    fn kernel_from_zero_is_marginal() {
        let ou = CovarianceModel::ou_from_zero(0.7, 1.3).unwrap();
        let spec = BridgeSpec::new(&ou, 2.0).unwrap();
        let k = spec.transition_kernel(0.0, 0.8).unwrap();
        assert!(close(k.variance, spec.marginal_variance(0.8).unwrap(), 1e-13));
    }

    #[test]
    fn joint_density_reduces() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        let one = spec.joint_density(&[0.3], &[0.2]).unwrap();
        assert!(close(one, spec.marginal_density(0.3, 0.2).unwrap(), 1e-15));
        let two = spec.joint_density(&[0.3, 0.6], &[0.2, -0.1]).unwrap();
        let k = spec.transition_kernel(0.3, 0.6).unwrap();
        let chain = spec.marginal_density(0.3, 0.2).unwrap() * k.density(-0.1, 0.2);
        assert!(close(two, chain, 1e-12), "{two} vs {chain}");
        assert!(spec.joint_density(&[0.6, 0.3], &[0.0, 0.0]).is_err());
        assert!(spec.joint_density(&[0.3, 0.3], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn sampler_pins_after_length() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        let mut rng = path_rng(1, 0);
        let path = spec.sample_path(&[1.0, 1.5, 2.0], &mut rng).unwrap();
        assert_eq!(path, vec![0.0, 0.0, 0.0]);
        let path = spec.sample_path(&[0.0, 0.5, 1.0, 1.5], &mut rng).unwrap();
        assert_eq!(path[0], 0.0);
        assert_ne!(path[1], 0.0);
        assert_eq!(&path[2..], &[0.0, 0.0]);
        assert!(spec.sample_path(&[], &mut rng).is_err());
    }

    #[test]
    fn sequential_sampler_variance_at_midpoint() {
        let bm = CovarianceModel::brownian();
        let spec = BridgeSpec::new(&bm, 1.0).unwrap();
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let sampler = SequentialSampler::new(spec, &grid).unwrap();
        let n = 50_000;
        let mut buf = vec![0.0; grid.len()];
        let mut sum2 = 0.0;
        let mut sum4 = 0.0;
        for i in 0..n {
            let mut rng = path_rng(7, i);
            sampler.sample_into(&mut rng, &mut buf);
            let x2 = buf[50] * buf[50];
            sum2 += x2;
            sum4 += x2 * x2;
        }
        let mean = sum2 / n as f64;
        let se = ((sum4 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "var {mean} se {se}");
        assert_eq!(buf[100], 0.0);
    }
}

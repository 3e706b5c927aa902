//! Small statistics toolkit for the oracles.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::error::{BridgeError, Result};

/// Running mean and variance (Welford), mergeable across chunks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAcc {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: MeanAcc) -> MeanAcc {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        MeanAcc {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Standard error of a frequency `p` estimated from `n` draws.
pub fn proportion_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value for a KS statistic `d` with effective size `ne`
/// (Stephens' small-sample correction).
fn ks_p_value(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// Result of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS test. Inputs need not be sorted.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(BridgeError::InsufficientSample {
            retained: a.len().min(b.len()),
            needed: 1,
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    })
}

/// One-sample KS test against a continuous distribution function.
pub fn ks_one_sample<F: Fn(f64) -> f64>(data: &[f64], cdf: F) -> Result<KsResult> {
    if data.is_empty() {
        return Err(BridgeError::InsufficientSample { retained: 0, needed: 1 });
    }
    let mut x = data.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    })
}

/// Total variation distance `½ Σ |p_i − q_i|` between two mass vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "mass vectors differ in length");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Log density of `N(0, cov)` at `x` through a dense Cholesky factor.
pub fn dense_gaussian_log_density(cov: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
    let n = x.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| BridgeError::Numeric("covariance matrix is not positive definite".into()))?;
    let l = chol.l();
    let z = l
        .solve_lower_triangular(&DVector::from_column_slice(x))
        .ok_or_else(|| BridgeError::Numeric("singular Cholesky factor".into()))?;
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()))
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn welford_merge_matches_direct() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = MeanAcc::default();
        data.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (MeanAcc::default(), MeanAcc::default());
        data[..300].iter().for_each(|&x| a.push(x));
        data[300..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert!((m.mean() - all.mean()).abs() < 1e-12);
        assert!((m.variance() - all.variance()).abs() < 1e-10);
    }

    #[test]
    fn ks_known_values() {
        // Q(λ) at the 5% critical value 1.358
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        let a = [0.1, 0.2, 0.3];
        let b = [0.4, 0.5, 0.6];
        assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, 1.0);
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn ks_is_calibrated_for_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rejections = 0;
        for _ in 0..200 {
            let a: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
            if ks_two_sample(&a, &b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        assert!(rejections < 25, "{rejections}");
        let c: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_one_sample(&c, normal_cdf).unwrap().p_value > 0.001);
        let shifted: Vec<f64> = c.iter().map(|x| x + 0.2).collect();
        assert!(ks_one_sample(&shifted, normal_cdf).unwrap().p_value < 1e-6);
    }

    #[test]
    fn dense_density_matches_univariate() {
        let cov = DMatrix::from_row_slice(1, 1, &[0.25]);
        let v = dense_gaussian_log_density(&cov, &[0.8]).unwrap();
        let direct = -0.5 * ((2.0 * std::f64::consts::PI * 0.25).ln() + 0.64 / 0.25);
        assert!((v - direct).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let v = normal_cdf(1.96);
        assert!((v - 0.975_002_104_851_779_5).abs() < 1e-11, "{v:e}");
    }
}

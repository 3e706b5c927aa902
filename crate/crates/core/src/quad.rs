//! Quadrature primitives: adaptive Gauss–Kronrod on finite intervals and
//! Gauss–Hermite rules for Gaussian expectations.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{BridgeError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod abscissae (XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct QuadTolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self {
            abs: 1e-13,
            rel: 1e-12,
            max_segments: 4000,
        }
    }
}

/// One cell of the final adaptive partition.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    if !value.is_finite() {
        return Err(BridgeError::Numeric(format!(
            "integrand not finite on [{a}, {b}]"
        )));
    }
    Ok(Segment { a, b, value, error })
}

/// Adaptive 15-point Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Returns the final partition; the integral is the sum of segment values.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: QuadTolerance) -> Result<Vec<Segment>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(BridgeError::Numeric(format!(
            "quadrature bounds must be finite, got [{a}, {b}]"
        )));
    }
    if b <= a {
        return Ok(Vec::new());
    }
    let mut heap = BinaryHeap::new();
    let first = gk15(&f, a, b)?;
    let mut total = first.value;
    let mut err = first.error;
    heap.push(first);
    let mut frozen: Vec<Segment> = Vec::new();
    while err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() + frozen.len() >= tol.max_segments {
            return Err(BridgeError::Numeric(format!(
                "adaptive quadrature on [{a}, {b}] did not converge: estimate {total:e}, error {err:e}"
            )));
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            frozen.push(worst);
            if heap.is_empty() {
                break;
            }
            continue;
        }
        let left = gk15(&f, worst.a, mid)?;
        let right = gk15(&f, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    let mut segments: Vec<Segment> = heap.into_vec();
    segments.extend(frozen);
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    Ok(segments)
}

/// Integral of `f` over `[a, b]` by [`adaptive`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: QuadTolerance) -> Result<f64> {
    Ok(adaptive(f, a, b, tol)?.iter().map(|s| s.value).sum())
}

/// Kronrod nodes and weights of one segment, for building discrete mixtures.
pub fn kronrod_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..15).map(move |i| {
        if i < 7 {
            (center - half * XGK[i], half * WGK[i])
        } else if i == 7 {
            (center, half * WGK[7])
        } else {
            let j = 14 - i;
            (center + half * XGK[j], half * WGK[j])
        }
    })
}

/// Physicists' Gauss–Hermite rule: nodes `x_i`, weights `w_i` with
/// `∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Self { nodes: x, weights: w }
    }

    /// `E[f(Y)]` for `Y ~ Normal(mean, variance)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, mean: f64, variance: f64, f: F) -> f64 {
        if variance <= 0.0 {
            return f(mean);
        }
        let scale = (2.0 * variance).sqrt();
        let norm = std::f64::consts::PI.sqrt().recip();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum::<f64>()
            * norm
    }
}

/// Shared 64-node rule.
pub fn gauss_hermite_64() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 2.0 * x * x, -1.0, 2.0, QuadTolerance::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - 2.0 * (8.0 + 1.0) / 3.0;
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn gk_handles_inverse_sqrt_singularity() {
        let v = integrate(|x| x.powf(-0.5), 0.0, 1.0, QuadTolerance { abs: 1e-10, rel: 1e-10, max_segments: 4000 }).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn gk_step_function() {
        let v = integrate(|x| if x <= 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, QuadTolerance::default()).unwrap();
        assert!((v - 0.3).abs() < 1e-12, "{v}");
    }

    #[test]
    fn kronrod_nodes_integrate_cubic() {
        let s: f64 = kronrod_nodes(1.0, 3.0).map(|(x, w)| w * x.powi(3)).sum();
        assert!((s - 20.0).abs() < 1e-12);
    }

    #[test]
    fn hermite_weights_and_moments() {
        let gh = gauss_hermite_64();
        let total: f64 = gh.weights.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gh.expect(0.3, 2.0, |y| y) - 0.3).abs() < 1e-12);
        assert!((gh.expect(0.3, 2.0, |y| y * y) - 2.09).abs() < 1e-12);
        assert!((gh.expect(1.0, 0.5, |y| y.powi(4)) - (1.0 + 6.0 * 0.5 + 3.0 * 0.25)).abs() < 1e-11);
    }
}

//! The random-length bridge `ξ = ξ^τ`: draw `τ` from its law, then the
//! deterministic-length bridge pinned at the drawn `τ`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::cov_model::CovarianceModel;
use crate::det_bridge::{validate_grid, BridgeSpec};
use crate::error::{domain, BridgeError, Result};
use crate::length_law::LengthLaw;
use crate::rng::{PathRng, PathSeed};

/// Paths handed to one worker at a time; fixes the reduction order.
const CHUNK: u64 = 512;

/// One sampled trajectory of `ξ` on a grid together with its realized `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgePath {
    grid: Arc<[f64]>,
    values: Vec<f64>,
    tau: f64,
    seed: PathSeed,
}

impl BridgePath {
    /// Checks that values vanish exactly at and after `tau` and at `t = 0`.
    pub fn new(grid: Arc<[f64]>, values: Vec<f64>, tau: f64, seed: PathSeed) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != values.len() {
            return domain(format!("grid has {} points but path has {} values", grid.len(), values.len()));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return domain(format!("tau must be strictly positive, got {tau}"));
        }
        for (&t, &v) in grid.iter().zip(&values) {
            if (t >= tau || t == 0.0) && v != 0.0 {
                return Err(BridgeError::Integrity(format!(
                    "value {v} at t = {t} but the path is pinned (tau = {tau})"
                )));
            }
        }
        Ok(Self { grid, values, tau, seed })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<[f64]> {
        Arc::clone(&self.grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seed(&self) -> PathSeed {
        self.seed
    }

    /// Index of the first grid point at or after `tau` (`None` when `tau`
    /// lies past the grid).
    pub fn tau_index(&self) -> Option<usize> {
        let k = self.grid.partition_point(|&t| t < self.tau);
        (k < self.grid.len()).then_some(k)
    }
}

/// Locates the pinning time from the zero set of a path: the first grid
/// index `k` with `t_k > 0` such that every value from `k` on is exactly 0.
/// Returns `None` ("not yet stopped") when the last value is non-zero.
///
/// The result is cross-checked against the stored `tau`; a mismatch is an
/// integrity error.
pub fn zero_set_detector(path: &BridgePath) -> Result<Option<usize>> {
    let grid = path.grid();
    let values = path.values();
    let mut k = values.len();
    while k > 0 && values[k - 1] == 0.0 && grid[k - 1] > 0.0 {
        k -= 1;
    }
    let detected = (k < values.len()).then_some(k);
    let expected = path.tau_index();
    if detected != expected {
        return Err(BridgeError::Integrity(format!(
            "zero set gives index {detected:?} but tau = {} gives {expected:?}",
            path.tau
        )));
    }
    Ok(detected)
}

/// Draws random-length bridge paths on a fixed grid. Path `i` uses the
/// stream `(seed, i)`.
#[derive(Debug, Clone)]
pub struct PathSampler<'a> {
    model: &'a CovarianceModel,
    law: &'a LengthLaw,
    grid: Arc<[f64]>,
    seed: u64,
}

impl<'a> PathSampler<'a> {
    pub fn new(model: &'a CovarianceModel, law: &'a LengthLaw, grid: &[f64], seed: u64) -> Result<Self> {
        validate_grid(grid)?;
        for &t in grid {
            model.check_time(t)?;
        }
        Ok(Self {
            model,
            law,
            grid: grid.into(),
            seed,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Fills `out` with path `index` and returns its `τ`.
    pub fn sample_into(&self, index: u64, out: &mut [f64]) -> Result<f64> {
        let mut rng = PathSeed {
            seed: self.seed,
            path_index: index,
        }
        .rng();
        self.draw(&mut rng, out)
    }

    fn draw(&self, rng: &mut PathRng, out: &mut [f64]) -> Result<f64> {
        let tau = self.law.sample_tau(rng);
        let spec = BridgeSpec::new(self.model, tau)?;
        let mut prev_t = 0.0;
        let mut prev_x = 0.0;
        for (slot, &t) in out.iter_mut().zip(self.grid.iter()) {
            if t == 0.0 || t >= tau {
                *slot = 0.0;
                continue;
            }
            let kernel = spec.kernel_unchecked(prev_t, t)?;
            prev_x = kernel.sample(prev_x, rng);
            prev_t = t;
            *slot = prev_x;
        }
        Ok(tau)
    }

    pub fn path(&self, index: u64) -> Result<BridgePath> {
        let mut values = vec![0.0; self.grid.len()];
        let tau = self.sample_into(index, &mut values)?;
        Ok(BridgePath {
            grid: Arc::clone(&self.grid),
            values,
            tau,
            seed: PathSeed {
                seed: self.seed,
                path_index: index,
            },
        })
    }

    /// Paths `0..n_paths`, generated in parallel.
    pub fn paths(&self, n_paths: u64) -> Result<Vec<BridgePath>> {
        (0..n_paths).into_par_iter().map(|i| self.path(i)).collect()
    }

    /// Parallel fold over paths `0..n_paths` without storing them. Chunks are
    /// folded independently and combined in index order, so the result does
    /// not depend on scheduling.
    pub fn fold<T, Id, F, Red>(&self, n_paths: u64, identity: Id, fold: F, reduce: Red) -> Result<T>
    where
        T: Send,
        Id: Fn() -> T + Sync,
        F: Fn(&mut T, u64, f64, &[f64]) -> Result<()> + Sync,
        Red: Fn(T, T) -> T,
    {
        let n_chunks = n_paths.div_ceil(CHUNK);
        let parts: Vec<T> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = identity();
                let mut buf = vec![0.0; self.grid.len()];
                for i in c * CHUNK..((c + 1) * CHUNK).min(n_paths) {
                    let tau = self.sample_into(i, &mut buf)?;
                    fold(&mut acc, i, tau, &buf)?;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().fold(identity(), reduce))
    }
}

/// Samples `n_paths` independent random-length bridges on `grid`.
pub fn sample_random_bridge(
    model: &CovarianceModel,
    law: &LengthLaw,
    grid: &[f64],
    n_paths: u64,
    seed: u64,
) -> Result<Vec<BridgePath>> {
    if n_paths == 0 {
        return domain("n_paths must be at least 1");
    }
    PathSampler::new(model, law, grid, seed)?.paths(n_paths)
}

/// `n + 1` equally spaced points `start, start + step, …, end`.
pub fn uniform_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(start >= 0.0 && step > 0.0 && end > start && start.is_finite() && end.is_finite()) {
        return domain(format!("invalid grid {start}:{end}:{step}"));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| start + k as f64 * step).collect();
    if let Some(last) = grid.last_mut() {
        if (*last - end).abs() < 1e-9 * step {
            *last = end;
        }
    }
    Ok(grid)
}

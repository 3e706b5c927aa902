//! Closed forms against brute-force computations built directly from the
//! covariance matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlbridge::mc_oracle::{dense_bridge_covariance, dense_joint_log_density};
use rlbridge::{posterior_multi, predict_multi, BridgeSpec, CovarianceModel, LengthLaw, Observation};

fn models() -> Vec<CovarianceModel> {
    vec![
        CovarianceModel::brownian(),
        CovarianceModel::scaled_brownian(1.7).unwrap(),
        CovarianceModel::ou_from_zero(0.8, 1.2).unwrap(),
    ]
}

/// `log p(observations | τ = r)` or `None` when the observations are
/// impossible under `r`.
fn brute_log_likelihood(m: &CovarianceModel, r: f64, obs: &[Observation]) -> Option<f64> {
    let (live, pinned): (Vec<&Observation>, Vec<&Observation>) = obs.iter().partition(|o| o.time < r);
    if pinned.iter().any(|o| o.value != 0.0) || live.iter().any(|o| o.value == 0.0) {
        return None;
    }
    if live.is_empty() {
        return Some(0.0);
    }
    let spec = BridgeSpec::new(m, r).unwrap();
    let t: Vec<f64> = live.iter().map(|o| o.time).collect();
    let x: Vec<f64> = live.iter().map(|o| o.value).collect();
    Some(dense_joint_log_density(&spec, &t, &x).unwrap())
}

fn brute_posterior(m: &CovarianceModel, atoms: &[(f64, f64)], obs: &[Observation]) -> Vec<f64> {
    let logs: Vec<Option<f64>> = atoms
        .iter()
        .map(|&(r, p)| brute_log_likelihood(m, r, obs).map(|l| l + p.ln()))
        .collect();
    let top = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| l.map_or(0.0, |l| (l - top).exp())).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

fn random_atoms(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let k = rng.random_range(2..6);
    let mut locs: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..3.0)).collect();
    locs.sort_by(f64::total_cmp);
    locs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let w = 1.0 / locs.len() as f64;
    locs.into_iter().map(|r| (r, w)).collect()
}

fn random_obs(rng: &mut ChaCha8Rng, m: &CovarianceModel, atoms: &[(f64, f64)], zero_tail: bool) -> Vec<Observation> {
    let n = rng.random_range(1..5);
    let hi = atoms.last().unwrap().0 + 0.5;
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..hi)).collect();
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| (*a - *b).abs() < 1e-2);
    // values follow a bridge of a random atom so the data are plausible
    let r = atoms[rng.random_range(0..atoms.len())].0;
    t.iter()
        .map(|&ti| {
            let value = if ti >= r && zero_tail {
                0.0
            } else {
                let s = m.covariance(ti, ti).unwrap().sqrt();
                let v: f64 = rng.random_range(0.1..1.5) * s;
                if rng.random::<bool>() { v } else { -v }
            };
            Observation::new(ti, value).unwrap()
        })
        .collect()
}

#[test]
fn discrete_posterior_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for case in 0..400 {
        let m = &models()[case % 3];
        let atoms = random_atoms(&mut rng);
        let obs = random_obs(&mut rng, m, &atoms, case % 2 == 0);
        let law = LengthLaw::atoms(&atoms).unwrap();
        let expected = brute_posterior(m, &atoms, &obs);
        let Ok(post) = posterior_multi(m, &law, &obs) else {
            // only inconsistent data may be rejected
            assert!(expected.iter().all(|p| !p.is_finite() || *p == 0.0), "case {case}: {obs:?}");
            continue;
        };
        let got = post.atom_masses();
        for (&(r, _), e) in atoms.iter().zip(&expected) {
            let g = got.iter().find(|a| a.location == r).map_or(0.0, |a| a.mass);
            assert!((g - e).abs() < 1e-9, "case {case} r={r}: {g} vs {e}; obs {obs:?}");
        }
        checked += 1;
    }
    assert!(checked > 300);
}

/// Conditional law of `ξ^r_u` given live observations, by Gaussian conditioning.
fn conditional_moments(m: &CovarianceModel, r: f64, obs: &[Observation], u: f64) -> (f64, f64) {
    if u >= r {
        return (0.0, 0.0);
    }
    let spec = BridgeSpec::new(m, r).unwrap();
    let live: Vec<&Observation> = obs.iter().filter(|o| o.time < r).collect();
    let mut times: Vec<f64> = live.iter().map(|o| o.time).collect();
    times.push(u);
    let c = dense_bridge_covariance(&spec, &times).unwrap();
    let n = live.len();
    let s11: DMatrix<f64> = c.view((0, 0), (n, n)).into_owned();
    let s21 = c.view((n, 0), (1, n)).into_owned();
    let x = DVector::from_iterator(n, live.iter().map(|o| o.value));
    let inv = s11.cholesky().unwrap().inverse();
    let mean = (&s21 * &inv * x)[(0, 0)];
    let var = c[(n, n)] - (&s21 * &inv * s21.transpose())[(0, 0)];
    (mean, var)
}

#[test]
fn prediction_matches_gaussian_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..200 {
        let m = &models()[case % 3];
        let atoms = random_atoms(&mut rng);
        let law = LengthLaw::atoms(&atoms).unwrap();
        let mut obs = random_obs(&mut rng, m, &atoms, false);
        obs.retain(|o| o.time < atoms.last().unwrap().0 - 0.05);
        if obs.is_empty() {
            continue;
        }
        let u = obs.last().unwrap().time + rng.random_range(0.05..1.0);
        let post = brute_posterior(m, &atoms, &obs);
        let (mut m1, mut m2) = (0.0, 0.0);
        for (&(r, _), p) in atoms.iter().zip(&post) {
            let (mu, v) = conditional_moments(m, r, &obs, u);
            m1 += p * mu;
            m2 += p * (v + mu * mu);
        }
        let law_u = predict_multi(m, &law, &obs, u).unwrap();
        assert!((law_u.total_mass() - 1.0).abs() < 1e-10);
        assert!((law_u.mean() - m1).abs() < 1e-8, "case {case}: {} vs {m1}", law_u.mean());
        let second = law_u.expect(|y| y * y);
        assert!((second - m2).abs() < 1e-8 * m2.max(1.0), "case {case}: {second} vs {m2}");
    }
}

#[test]
fn joint_density_matches_dense_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..300 {
        let m = &models()[case % 3];
        let r = rng.random_range(0.5..4.0);
        let spec = BridgeSpec::new(m, r).unwrap();
        let n = rng.random_range(1..6);
        let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98) * r).collect();
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-3 * r);
        let x: Vec<f64> = t.iter().map(|_| rng.random_range(-1.5..1.5)).collect();
        let a = spec.log_joint_density(&t, &x).unwrap();
        let b = dense_joint_log_density(&spec, &t, &x).unwrap();
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "case {case}: {a} vs {b}");
    }
}

#[test]
fn kernel_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..300 {
        let m = &models()[case % 3];
        let r = rng.random_range(0.5..4.0);
        let spec = BridgeSpec::new(m, r).unwrap();
        let t = rng.random_range(0.05..0.9) * r;
        let u = t + rng.random_range(0.05..0.95) * (r - t);
        let a = spec.transition_kernel(t, u).unwrap();
        let b = spec.general_kernel(t, u).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-10, "case {case}");
        assert!((a.variance - b.variance).abs() < 1e-10 * m.covariance(u, u).unwrap().max(1.0), "case {case}");
    }
}

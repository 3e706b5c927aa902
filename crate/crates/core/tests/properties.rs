use proptest::prelude::*;
use rlbridge::det_bridge::{a_factor, b_factor};
use rlbridge::random_bridge::uniform_grid;
use rlbridge::{
    phi_weight, phi_weight_fn, posterior_single, predict, psi_weight_fn, zero_set_detector, BridgeSpec,
    CovarianceModel, LengthLaw, Observation, PathSampler, Window,
};

fn model() -> impl Strategy<Value = CovarianceModel> {
    prop_oneof![
        Just(CovarianceModel::brownian()),
        (0.3..3.0f64).prop_map(|s| CovarianceModel::scaled_brownian(s).unwrap()),
        (0.1..2.0f64, 0.3..2.0f64).prop_map(|(th, s)| CovarianceModel::ou_from_zero(th, s).unwrap()),
    ]
}

fn atoms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.2..4.0f64, 0.1..1.0f64), 1..5).prop_map(|v| {
        let z: f64 = v.iter().map(|p| p.1).sum();
        v.into_iter().map(|(r, p)| (r, p / z)).collect()
    })
}

fn law() -> impl Strategy<Value = LengthLaw> {
    prop_oneof![
        atoms().prop_map(|a| LengthLaw::atoms(&a).unwrap()),
        (0.3..2.0f64).prop_map(|l| LengthLaw::exponential(l).unwrap()),
        (0.1..1.5f64, 0.3..3.0f64).prop_map(|(a, w)| LengthLaw::uniform(a, a + w).unwrap()),
        (atoms(), 0.2..0.8f64, 0.1..1.5f64).prop_map(|(a, w, lo)| LengthLaw::mixture(&[
            (w, LengthLaw::atoms(&a).unwrap()),
            (1.0 - w, LengthLaw::uniform(lo, lo + 1.5).unwrap()),
        ])
        .unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chapman_kolmogorov(m in model(), r in 0.5..4.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
        let mut p = [a, b, c].map(|v| 0.02 + 0.96 * v * r);
        p.sort_by(f64::total_cmp);
        prop_assume!(p[1] - p[0] > 1e-3 * r && p[2] - p[1] > 1e-3 * r);
        let spec = BridgeSpec::new(&m, r).unwrap();
        let ts = spec.transition_kernel(p[0], p[1]).unwrap();
        let su = spec.transition_kernel(p[1], p[2]).unwrap();
        let tu = spec.transition_kernel(p[0], p[2]).unwrap();
        prop_assert!((ts.slope * su.slope - tu.slope).abs() < 1e-10);
        let composed = su.slope * su.slope * ts.variance + su.variance;
        prop_assert!((composed - tu.variance).abs() < 1e-10 * tu.variance.max(1e-3));
    }

    #[test]
    fn bridge_covariance_symmetric_and_projected(m in model(), r in 0.5..4.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let spec = BridgeSpec::new(&m, r).unwrap();
        let (s, t) = (a * r, b * r);
        let st = spec.bridge_covariance(s, t).unwrap();
        prop_assert_eq!(st, spec.bridge_covariance(t, s).unwrap());
        let proj = spec.projected_covariance(s, t).unwrap();
        let scale = m.covariance(r, r).unwrap();
        prop_assert!((st - proj).abs() < 1e-12 * scale.max(1.0), "{} vs {}", st, proj);
    }

    #[test]
    fn a_factor_is_b_factor_scaled(m in model(), t in 0.01..4.0f64, dr in 0.01..3.0f64) {
        let r = t + dr;
        let a = a_factor(&m, t, r).unwrap();
        let b = b_factor(&m, t, r).unwrap();
        let expected = m.rho(t) * m.q(r) * b;
        prop_assert!((a - expected).abs() < 1e-10 * (m.covariance(t, t).unwrap() * m.covariance(r, r).unwrap()).max(1.0));
        prop_assert!(b >= 0.0);
        prop_assert_eq!(b, b_factor(&m, r, t).unwrap());
    }

    #[test]
    fn phi_integrates_to_one(m in model(), law in law(), frac in 0.05..0.9f64, z in 0.05..2.5f64, neg in any::<bool>()) {
        let t = frac * law.support_upper().min(6.0);
        prop_assume!(law.mass(Window::above(t)) > 1e-6);
        let sd = m.covariance(t, t).unwrap().sqrt();
        let x = if neg { -z * sd } else { z * sd };
        let w = phi_weight_fn(&m, &law, t, x).unwrap();
        let total = law.integrate(|r| w.eval(r).unwrap(), w.window()).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        if law.is_discrete() {
            let direct: f64 = law.atom_list().iter().filter(|a| a.location > t)
                .map(|a| a.mass * phi_weight(&m, &law, t, a.location, x).unwrap()).sum();
            prop_assert!((direct - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_integrates_to_one(m in model(), law in law(), a in 0.0..1.0f64, b in 0.05..0.9f64, z in 0.05..2.5f64, span in 0.1..3.0f64) {
        let t = b * law.support_upper().min(6.0);
        let t_next = t + span;
        prop_assume!(law.mass(Window::new(t, t_next)) > 1e-6);
        let t_prev = a * 0.9 * t;
        let x = z * m.covariance(t, t).unwrap().sqrt();
        let w = psi_weight_fn(&m, &law, t_prev, t, t_next, x).unwrap();
        let total = law.integrate(|r| w.eval(r).unwrap(), w.window()).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn posterior_is_a_probability(m in model(), law in law(), frac in 0.05..0.9f64, z in -2.0..2.0f64) {
        let t = frac * law.support_upper().min(6.0);
        let x = z * m.covariance(t, t).unwrap().sqrt();
        let live = x != 0.0 && law.mass(Window::above(t)) > 1e-6;
        let pinned = x == 0.0 && law.cdf(t) > 0.0;
        prop_assume!(live || pinned);
        let post = posterior_single(&m, &law, Observation::new(t, x).unwrap()).unwrap();
        prop_assert!((post.total_mass().unwrap() - 1.0).abs() < 1e-9);
        let mut last = 0.0;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let q = post.quantile(p).unwrap();
            prop_assert!(q >= last);
            prop_assert!(post.cdf(q).unwrap() >= p - 1e-9);
            last = q;
        }
    }

    #[test]
    fn predictive_mass_is_one(m in model(), law in law(), frac in 0.05..0.9f64, z in 0.1..2.0f64, du in 0.05..2.0f64) {
        let t = frac * law.support_upper().min(6.0);
        prop_assume!(law.mass(Window::above(t)) > 1e-6);
        let x = z * m.covariance(t, t).unwrap().sqrt();
        let p = predict(&m, &law, Observation::new(t, x).unwrap(), t + du).unwrap();
        prop_assert!((p.total_mass() - 1.0).abs() < 1e-9);
        prop_assert!(p.zero_mass >= -1e-12);
        prop_assert!(p.components.iter().all(|c| c.variance >= 0.0 && c.weight >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn detector_finds_first_zero_after_tau(m in model(), law in law(), seed in any::<u64>()) {
        let grid = uniform_grid(0.0, 3.0, 0.01).unwrap();
        let sampler = PathSampler::new(&m, &law, &grid, seed).unwrap();
        for p in sampler.paths(50).unwrap() {
            let k = zero_set_detector(&p).unwrap();
            prop_assert_eq!(k, grid.iter().position(|&t| t >= p.tau()));
            if let Some(k) = k {
                prop_assert!(p.values()[k..].iter().all(|&v| v == 0.0));
                prop_assert!(p.values()[1..k].iter().all(|&v| v != 0.0));
            }
        }
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sns_lab::stats::Estimate;
use sns_lab::toy::*;

fn default_cfg() -> ToyConfig {
    ToyConfig::from_params(&ToyParams::default()).unwrap()
}

#[test]
fn fixed_seed_reproduces_path() {
    let c = default_cfg();
    let a = simulate_toy(&c, ToyState::new(0.3, -0.2), 0.01, 500, 11, 4);
    let b = simulate_toy(&c, ToyState::new(0.3, -0.2), 0.01, 500, 11, 4);
    assert_eq!(a, b);
    let d = simulate_toy(&c, ToyState::new(0.3, -0.2), 0.01, 500, 11, 5);
    assert_ne!(a.l, d.l);
}

#[test]
fn step_halving_converges() {
    // Brownian path on the finest grid, summed pairwise for coarser grids.
    let c = default_cfg();
    let fine = 1 << 12;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dt = 1.0 / fine as f64;
    let xi: Vec<f64> = (0..fine).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
    let eta: Vec<f64> = (0..fine).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
    let run = |stride: usize| {
        let mut s = ToyState::new(0.5, 1.0);
        for i in (0..fine).step_by(stride) {
            let dx: f64 = xi[i..i + stride].iter().sum();
            let de: f64 = eta[i..i + stride].iter().sum();
            s = step_toy(s, &c, dx, de, dt * stride as f64);
        }
        s
    };
    let reference = run(1);
    let errs: Vec<f64> = [64, 32, 16]
        .iter()
        .map(|&k| {
            let s = run(k);
            (s.l - reference.l).abs() + (s.h - reference.h).abs()
        })
        .collect();
    assert!(errs[0] / errs[1] > 1.5 && errs[1] / errs[2] > 1.5, "{errs:?}");
}

#[test]
fn contraction_slope_with_default_f1() {
    let c = default_cfg();
    for seed in 0..5 {
        let p = simulate_toy(&c, ToyState::new(0.0, 0.0), 0.001, 10_000, seed, 0);
        let fit = contraction_rate(&c, &p.l, &p.deta, 1.0, -1.0, 0.001).unwrap();
        assert!(fit.slope <= -(2.0 - 1.0) * 0.95, "seed {seed}: {}", fit.slope);
    }
}

#[test]
fn contraction_slope_without_f1_matches_linear_ode() {
    let c = default_cfg().without_f1();
    let p = simulate_toy(&c, ToyState::new(0.0, 0.0), 0.001, 5000, 3, 0);
    let fit = contraction_rate(&c, &p.l, &p.deta, 2.0, -0.5, 0.001).unwrap();
    assert!((fit.slope + 2.0).abs() < 1e-9, "{}", fit.slope);
    // Closed form of the linear h-equation: the distance is 2.5 e^{-2t}.
    for (t, d) in fit.times.iter().zip(&fit.distances) {
        assert!((d - 2.5 * (-2.0 * t).exp()).abs() <= 1e-9 * d);
    }
}

#[test]
fn memory_functional_forgets_initial_condition() {
    let c = default_cfg();
    let dt = 0.01;
    for seed in 0..20 {
        let p = simulate_toy(&c, ToyState::new(0.0, 0.0), dt, 2000, seed, 1);
        let a = memory_functional(&c, &p.l, &p.deta, 0.4, dt, None).unwrap();
        let b = memory_functional(&c, &p.l, &p.deta, 1.4, dt, None).unwrap();
        assert!((a.value - b.value).abs() <= a.sensitivity, "seed {seed}");
        assert!((a.sensitivity - (-20.0f64).exp()).abs() < 1e-20);
    }
}

#[test]
fn doubling_horizon_squares_sensitivity() {
    let c = default_cfg();
    let p = simulate_toy(&c, ToyState::new(0.0, 0.0), 0.01, 2000, 1, 2);
    let short = memory_functional(&c, &p.l[..1001], &p.deta[..1000], 0.0, 0.01, None).unwrap();
    let long = memory_functional(&c, &p.l, &p.deta, 0.0, 0.01, None).unwrap();
    assert!((long.sensitivity - short.sensitivity.powi(2)).abs() < 1e-18);
}

#[test]
fn memory_values_form_cauchy_sequence() {
    // Starting further in the past changes the value by at most a geometric amount.
    let c = default_cfg();
    let dt = 0.01;
    let p = simulate_toy(&c, ToyState::new(0.0, 0.0), dt, 3000, 5, 0);
    let mut prev: Option<f64> = None;
    for span in [500usize, 1000, 1500, 2000, 2500, 3000] {
        let start = 3000 - span;
        let v = memory_functional(&c, &p.l[start..], &p.deta[start..], 0.0, dt, None).unwrap();
        if let Some(q) = prev {
            // The earlier start passes through some h at time -(span-500)·dt.
            let bound = 10.0 * (-(c.contraction()) * (span - 500) as f64 * dt).exp();
            assert!((v.value - q).abs() <= bound);
        }
        prev = Some(v.value);
    }
}

#[test]
fn stochastic_exponent_has_unit_mean() {
    let c = default_cfg();
    let samples = girsanov_ensemble(&c, 0.0, 1.0, -1.0, 0.01, 400, 99, 20_000);
    let e = Estimate::of(&samples.iter().map(|s| s.value).collect::<Vec<_>>());
    assert!((e.mean - 1.0).abs() <= 3.0 * e.se, "{e:?}");
}

#[test]
fn novikov_quantity_is_uniformly_bounded() {
    let c = default_cfg();
    let d_star = c.novikov_bound(2.0);
    assert!((d_star - std::f64::consts::E).abs() < 1e-15);
    let samples = girsanov_ensemble(&c, 0.0, 1.0, -1.0, 0.01, 600, 3, 10_000);
    let max = samples.iter().map(|s| s.novikov).fold(0.0, f64::max).exp();
    assert!(max <= d_star * (1.0 + 1e-6), "{max}");
}

#[test]
fn moment_bound_at_p_two() {
    let c = default_cfg();
    let samples = girsanov_ensemble(&c, 0.0, 1.0, -1.0, 0.01, 600, 4, 20_000);
    let check = rn_moment_bound_check(&samples, 2.0, c.novikov_bound(2.0));
    assert!((check.bound - std::f64::consts::E.powi(2)).abs() < 1e-12);
    assert!(check.pass, "{check:?}");
}

#[test]
fn moment_check_trivial_cases() {
    let ones = vec![StochasticExponent { value: 1.0, log_value: 0.0, novikov: 0.0 }; 50];
    for p in [1.0, 1.5, 3.0] {
        let m = rn_moment_bound_check(&ones, p, 2.0);
        assert_eq!(m.estimate.mean, 1.0);
        assert!(m.pass);
    }
    assert_eq!(rn_moment_bound_check(&ones, 1.0, 5.0).bound, 1.0);
    let bad = vec![StochasticExponent { value: 1.0, log_value: 0.0, novikov: 2.0 }; 5];
    assert!(rn_moment_bound_check(&bad, 2.0, 2.0).integrand_violation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_step_contraction_is_exact(l in -5.0f64..5.0, h in -5.0f64..5.0, g in -5.0f64..5.0, e in -0.3f64..0.3, dt in 1e-4f64..0.2) {
        let c = default_cfg();
        let a = step_h(l, h, &c, e, dt);
        let b = step_h(l, g, &c, e, dt);
        prop_assert!((a - b).abs() <= (-(c.contraction()) * dt).exp() * (h - g).abs() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn exponent_is_exact_likelihood_ratio(l in -3.0f64..3.0, h in -3.0f64..3.0, g in -3.0f64..3.0, x in -2.0f64..2.0, dt in 1e-3f64..0.1) {
        // Ratio of the two Gaussian transition densities of ℓ at the realized point.
        let c = default_cfg();
        let dxi = x * dt.sqrt();
        let next = step_l(l, h, &c, dxi, dt);
        let decay = (-c.nu2 * dt).exp();
        let var = (decay * c.sigma2).powi(2) * dt;
        let logq = |mean: f64| -(next - mean).powi(2) / (2.0 * var);
        let m1 = decay * (l + dt * (c.f2)(l, h));
        let m2 = decay * (l + dt * (c.f2)(l, g));
        let d = (c.f2)(l, g) - (c.f2)(l, h);
        let e = stochastic_exponent(&[d], c.sigma2, &[dxi], dt).unwrap();
        prop_assert!((e.log_value - (logq(m2) - logq(m1))).abs() < 1e-10);
    }
}

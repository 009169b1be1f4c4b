use num_complex::Complex64;
use sns_lab::dynamics::{SolverConfig, Terms};
use sns_lab::estimators::*;
use sns_lab::forcing::ForcingSpec;
use sns_lab::spectral::{norm_sq, SpectralField, WaveGrid};
use sns_lab::toy::{simulate_toy, ToyConfig, ToyParams, ToyState};

fn band_cfg(n: usize, nu: f64, dt: f64) -> SolverConfig {
    SolverConfig::new(nu, dt, WaveGrid::new(n).unwrap(), ForcingSpec::band(1.0, 4.0, 2.0).unwrap()).unwrap()
}

fn synthetic(n: usize, d: f64, tau: f64) -> SpectralField {
    let grid = WaveGrid::new(n).unwrap();
    let mut w = SpectralField::zeros(grid);
    for k in grid.active_half_modes() {
        let r = norm_sq(k).sqrt();
        // Vorticity |ω_k| = |k| |u_k|.
        w.set_mode(k, Complex64::from_polar(r * d * (-tau * r).exp(), 0.3 * k[0] as f64));
    }
    w
}

#[test]
fn decay_fit_recovers_exact_exponential() {
    let fit = spectral_decay_fit(&synthetic(32, 1.0, 0.5)).unwrap();
    assert!((fit.tau_hat - 0.5).abs() / 0.5 < 1e-6, "{fit:?}");
    assert!((fit.d_hat - 1.0).abs() < 1e-6);
    assert!(fit.residual < 1e-10);
    let fit = spectral_decay_fit(&synthetic(64, 3.0, 0.2)).unwrap();
    assert!((fit.tau_hat - 0.2).abs() / 0.2 < 1e-6 && (fit.d_hat - 3.0).abs() / 3.0 < 1e-6);
}

#[test]
fn decay_fit_flags_under_resolved_spectra() {
    let grid = WaveGrid::new(16).unwrap();
    let w = SpectralField::from_modes(grid, &[([1, 0], Complex64::new(1.0, 0.0)), ([2, 1], Complex64::new(0.1, 0.0))]);
    assert!(spectral_decay_fit(&w).is_err());
}

#[test]
fn energy_bound_at_time_zero_and_infinity() {
    let cfg = band_cfg(16, 1.0, 0.01);
    let w = SpectralField::from_modes(*cfg.grid(), &[([1, 1], Complex64::new(0.7, 0.2))]);
    assert_eq!(energy_bound(&cfg, w.energy(), 0.0), w.energy());
    assert!((energy_bound(&cfg, 0.0, 1e3) - 1.0).abs() < 1e-12);
}

#[test]
fn energy_moments_respect_bound() {
    let cfg = band_cfg(16, 0.5, 0.02);
    let zero = SpectralField::zeros(*cfg.grid());
    let r = energy_moment_bound_check(&cfg, &zero, &[0.2, 0.5, 1.0, 2.0, 4.0], 200, 5).unwrap();
    assert!(r.pass, "{:?}", r.checks);
    assert!(r.slack.iter().all(|&s| s < 0.05), "{:?}", r.slack);
}

#[test]
fn noiseless_energy_decays_pathwise() {
    let cfg = band_cfg(16, 0.5, 0.02).with_terms(Terms { nonlinear: true, viscous: true, noise: false });
    let grid = *cfg.grid();
    let u0 = SpectralField::from_modes(grid, &[([1, 0], Complex64::new(1.0, 0.5)), ([2, 1], Complex64::new(-0.5, 1.0))]);
    let r = energy_moment_bound_check(&cfg, &u0, &[0.5, 1.0, 2.0, 3.0, 4.0], 100, 1).unwrap();
    for c in &r.checks {
        assert!(c.ci_high - c.ci_low < 1e-12, "all members coincide without noise");
    }
    assert!(r.pass, "{:?}", r.checks);
}

#[test]
fn zero_trajectory_is_in_every_forward_envelope() {
    let spec = LyapunovSpec::new(2.0, 1.0, 0.5, 0.3).unwrap();
    let z = LyapunovSeries { dt: 0.1, v: vec![0.0; 100], u: vec![0.0; 100] };
    for n in [0.0, 1.0, 10.0] {
        assert!(envelope_membership(&z, EnvelopeSet::Forward(n), &spec).inside);
        assert!(envelope_membership(&z, EnvelopeSet::Backward(n), &spec).inside);
    }
}

#[test]
fn membership_is_a_pure_predicate() {
    let cfg = ToyConfig::from_params(&ToyParams::default()).unwrap();
    let spec = LyapunovSpec::toy(&cfg, 0.2).unwrap();
    let p = simulate_toy(&cfg, ToyState::new(2.0, -1.0), 0.01, 2000, 4, 0);
    let s = LyapunovSeries::toy(&p, &cfg);
    let a = envelope_membership(&s, EnvelopeSet::Exponential(1.0), &spec);
    let b = envelope_membership(&s.clone(), EnvelopeSet::Exponential(1.0), &spec);
    assert_eq!(a, b);
}

#[test]
fn noiseless_growth_statistic_is_nonpositive() {
    let cfg = band_cfg(16, 0.5, 0.01).with_terms(Terms { nonlinear: true, viscous: true, noise: false });
    let grid = *cfg.grid();
    let u0 = SpectralField::from_modes(grid, &[([1, 0], Complex64::new(2.0, 0.5)), ([1, 2], Complex64::new(-1.0, 1.0))]);
    let spec = LyapunovSpec::sns(&cfg, 0.5).unwrap();
    let ens = sns_lyapunov_ensemble(&cfg, &u0, 500, 1, 1, 0).unwrap();
    for eps in [0.1, 0.5, 0.9] {
        assert!(growth_statistic(&ens[0], spec.c1, eps) <= 0.0);
    }
}

#[test]
fn huge_level_is_never_exceeded() {
    let cfg = ToyConfig::from_params(&ToyParams::default()).unwrap();
    let spec = LyapunovSpec::toy(&cfg, 0.2).unwrap();
    let ens: Vec<LyapunovSeries> =
        (0..200).map(|p| LyapunovSeries::toy(&simulate_toy(&cfg, ToyState::new(0.0, 0.0), 0.01, 500, 1, p), &cfg)).collect();
    let c = martingale_envelope_check(&ens, &spec, 0.5, 1e6).unwrap();
    assert_eq!(c.estimate, 0.0);
    assert!(c.pass);
}

#[test]
fn exponential_envelope_exits_have_decaying_tail() {
    let cfg = ToyConfig::from_params(&ToyParams::default()).unwrap();
    let spec = LyapunovSpec::toy(&cfg, 0.05).unwrap();
    let exits: Vec<Option<f64>> = (0..4000)
        .map(|p| {
            let s = LyapunovSeries::toy(&simulate_toy(&cfg, ToyState::new(0.0, 0.0), 0.05, 400, 8, p), &cfg);
            envelope_membership(&s, EnvelopeSet::Exponential(0.5), &spec).first_exit
        })
        .collect();
    let tail = exit_tail(&exits, &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    assert!(tail.slope.unwrap() < 0.0, "{tail:?}");
}

#[test]
fn constant_functional_has_zero_distance() {
    let cfg = band_cfg(16, 1.0, 0.02);
    let modes = shell_modes(&cfg, 2.0);
    let paths = paired_mode_paths(&cfg, &modes, 20, 10, 8, 3, Pairing::SharedNoise).unwrap();
    for p in &paths {
        let d = functional_distance(p, Functional::Constant(0.7));
        assert_eq!(d.mean, 0.0);
    }
}

#[test]
fn unforced_modes_are_refused() {
    let cfg = band_cfg(16, 1.0, 0.02);
    assert!(paired_mode_paths(&cfg, &[[5, 0]], 1, 1, 2, 0, Pairing::SharedNoise).is_err());
}

#[test]
fn independent_ou_baseline_shows_no_trend() {
    let f = ForcingSpec::complex_from_fn(5, 1.0, 6.0, |k| 1.0 / norm_sq(k)).unwrap();
    let cfg = SolverConfig::new(1.0, 0.02, WaveGrid::new(16).unwrap(), f).unwrap();
    let r = small_scale_ou_compare(&cfg, &[1.0, 2.0, 3.0, 4.0], Functional::TanhReal, 150, 50, 400, 2, Pairing::IndependentOu, 0.05)
        .unwrap();
    let lo = r.distances.iter().map(|d| d.mean - 3.0 * d.se).fold(f64::NEG_INFINITY, f64::max);
    let hi = r.distances.iter().map(|d| d.mean + 3.0 * d.se).fold(f64::INFINITY, f64::min);
    assert!(lo <= hi, "baseline distances differ across shells: {:?}", r.distances);
}

#[test]
fn stationary_identity_on_small_grid() {
    let cfg = band_cfg(16, 1.0, 0.02);
    let zero = SpectralField::zeros(*cfg.grid());
    let r = stationary_enstrophy_check(&cfg, &zero, 5.0, 105.0, 8, 1, 0.05, StationaryQuantity::Enstrophy).unwrap();
    assert!(r.pass, "{r:?}");
    let p = stationary_enstrophy_check(&cfg, &zero, 5.0, 105.0, 8, 1, 0.05, StationaryQuantity::Palinstrophy).unwrap();
    assert!(p.pass, "{p:?}");
}

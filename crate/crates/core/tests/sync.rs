use num_complex::Complex64;
use sns_lab::dynamics::{HighModeProblem, SolverConfig};
use sns_lab::error::Error;
use sns_lab::forcing::{sample_increment, ForcingSpec, NoiseStream};
use sns_lab::spectral::{SpectralField, WaveGrid};
use sns_lab::sync::*;

fn sync_cfg(n: usize) -> SolverConfig {
    SolverConfig::new(1.0, 0.01, WaveGrid::new(n).unwrap(), ForcingSpec::band(1.0, 4.0, 1.0).unwrap()).unwrap()
}

fn high_variants(grid: WaveGrid, n_star: f64) -> Vec<SpectralField> {
    let pairs = random_pairs(grid, 2, 77);
    vec![
        SpectralField::zeros(grid),
        pairs[0].0.project_high(n_star).scale(0.5),
        pairs[1].1.project_high(n_star).scale(2.0),
    ]
}

#[test]
fn high_modes_synchronize_with_pinned_low_modes() {
    let cfg = sync_cfg(32);
    let grid = *cfg.grid();
    let e = SyncExperiment {
        h0: high_variants(grid, 4.0),
        source: SyncSource::Extracted { w0: SpectralField::zeros(grid), seed: 3, burn_in: 500 },
        n_star: 4.0,
        steps: 2000,
        c_hat: None,
        cfg,
    };
    let r = run_sync(&e).unwrap();
    assert!(r.passes(1e-4, 0.95), "ratio {} r2 {}", r.ratio, r.r2);
    assert!(r.rate < -10.0, "rate {}", r.rate);
    for d in &r.distances {
        assert!(d[d.len() - 1] < 1e-4 * d[0]);
    }
}

#[test]
fn measured_rate_beats_foias_prodi_prediction() {
    let cfg = sync_cfg(16);
    let grid = *cfg.grid();
    let c = estimate_nonlinearity_constant(&sample_pairs(grid, 1000, 1, 20).unwrap()).unwrap();
    let e = SyncExperiment {
        h0: high_variants(grid, 4.0),
        source: SyncSource::Extracted { w0: SpectralField::zeros(grid), seed: 9, burn_in: 200 },
        n_star: 4.0,
        steps: 500,
        c_hat: Some(c.c_hat),
        cfg,
    };
    let r = run_sync(&e).unwrap();
    let predicted = r.predicted_rate.unwrap();
    assert!(predicted < 0.0, "{predicted}");
    assert!(r.rate <= predicted, "measured {} predicted {predicted}", r.rate);
}

#[test]
fn mismatched_noise_aborts() {
    let cfg = sync_cfg(16);
    let grid = *cfg.grid();
    let f = cfg.forcing();
    let low = vec![SpectralField::zeros(grid); 3];
    let eta = |seed| (0..2).map(|s| sample_increment(f, cfg.dt(), NoiseStream::new(seed, 0), s).unwrap()).collect::<Vec<_>>();
    let h0 = SpectralField::zeros(grid);
    let p = |seed| HighModeProblem { n_star: 2.0, low: low.clone(), eta: eta(seed), h0: h0.clone() };
    assert!(verify_shared_inputs(&[p(1), p(1)], &cfg).is_ok());
    assert!(matches!(verify_shared_inputs(&[p(1), p(2)], &cfg), Err(Error::SharedInputMismatch(_))));
}

#[test]
fn low_mode_noise_does_not_enter_the_checksum() {
    let cfg = sync_cfg(16);
    let grid = *cfg.grid();
    let f = cfg.forcing();
    let a = sample_increment(f, cfg.dt(), NoiseStream::new(1, 0), 0).unwrap();
    let b = sample_increment(f, cfg.dt(), NoiseStream::new(2, 0), 0).unwrap();
    let low = vec![SpectralField::zeros(grid); 2];
    let h0 = SpectralField::zeros(grid);
    // Forcing lives on |k| < 4, so with N* = 4 the high-mode noise is empty.
    let p = |e| HighModeProblem { n_star: 4.0, low: low.clone(), eta: vec![e], h0: h0.clone() };
    assert!(verify_shared_inputs(&[p(a), p(b)], &cfg).is_ok());
}

#[test]
fn nonlinearity_constant_is_stable_across_samples() {
    let grid = WaveGrid::new(16).unwrap();
    let a = estimate_nonlinearity_constant(&sample_pairs(grid, 10_000, 10, 20).unwrap()).unwrap();
    let b = estimate_nonlinearity_constant(&sample_pairs(grid, 10_000, 11, 20).unwrap()).unwrap();
    assert!(a.c_hat > 0.0 && a.c_hat.is_finite());
    assert!((a.c_hat - b.c_hat).abs() < 0.2 * a.c_hat.max(b.c_hat), "{} vs {}", a.c_hat, b.c_hat);
}

#[test]
fn ascent_never_lowers_the_sample_max() {
    let grid = WaveGrid::new(8).unwrap();
    let plain = estimate_nonlinearity_constant(&sample_pairs(grid, 300, 2, 0).unwrap()).unwrap();
    let refined = estimate_nonlinearity_constant(&sample_pairs(grid, 300, 2, 10).unwrap()).unwrap();
    assert!(refined.c_hat >= plain.c_hat);
}

#[test]
fn ratio_is_scale_invariant() {
    let grid = WaveGrid::new(16).unwrap();
    for (u, r) in random_pairs(grid, 20, 4) {
        let x = nonlinear_ratio(&u, &r).unwrap();
        let y = nonlinear_ratio(&u.scale(3.0), &r.scale(0.01)).unwrap();
        assert!((x - y).abs() <= 1e-9 * x.max(1e-300), "{x} vs {y}");
    }
}

#[test]
fn single_mode_difference_against_itself_is_zero() {
    // ρ on the same wavevector as u: B(ρ, u) pairs only parallel modes.
    let grid = WaveGrid::new(16).unwrap();
    let u = SpectralField::from_modes(grid, &[([2, 1], Complex64::new(1.0, 0.0))]);
    let r = SpectralField::from_modes(grid, &[([2, 1], Complex64::new(0.0, 0.3))]);
    assert_eq!(nonlinear_ratio(&u, &r).unwrap(), 0.0);
}

fn large_nu_cfg() -> SolverConfig {
    SolverConfig::new(4.0, 0.01, WaveGrid::new(16).unwrap(), ForcingSpec::band(1.0, 4.0, 2.0).unwrap()).unwrap()
}

#[test]
fn large_viscosity_contracts_and_pulls_back() {
    let cfg = large_nu_cfg();
    let grid = *cfg.grid();
    let c = estimate_nonlinearity_constant(&sample_pairs(grid, 1000, 5, 20).unwrap()).unwrap();
    let pairs = random_pairs(grid, 2, 8);
    let u0 = vec![SpectralField::zeros(grid), pairs[0].0.scale(2.0), pairs[1].1.clone()];
    let r = large_nu_contraction(&cfg, &u0, c.c_hat, 0.5, 10.0, 5, 2).unwrap();
    assert!(r.final_distance < 1e-8, "{}", r.final_distance);
    assert!(r.rate < 0.0);
    assert!(r.pullback_rate < 0.0 && r.pullback_r2 > 0.9, "{:?}", r.pullback);
    for w in r.pullback.windows(2) {
        assert!(w[1] < w[0] || w[1] < 1e-12, "{:?}", r.pullback);
    }
}

#[test]
fn large_viscosity_precondition_is_enforced() {
    let cfg = large_nu_cfg().with_nu(0.1).unwrap();
    let grid = *cfg.grid();
    let u0 = vec![SpectralField::zeros(grid); 2];
    assert!(large_nu_contraction(&cfg, &u0, 1.0, 0.5, 1.0, 2, 0).is_err());
}

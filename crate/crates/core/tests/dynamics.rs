mod common;

use common::random_field;
use num_complex::Complex64;
use rayon::prelude::*;
use sns_lab::dynamics::*;
use sns_lab::forcing::{sample_increment, ForcingSpec, NoiseIncrement, NoiseStream};
use sns_lab::spectral::{SpectralField, WaveGrid};
use sns_lab::stats::{linear_fit, Estimate};

fn four_mode() -> ForcingSpec {
    let s = 0.5f64.sqrt();
    ForcingSpec::complex(&[[1.0, 0.0, s, 0.0], [-1.0, 0.0, s, 0.0], [0.0, 1.0, s, 0.0], [0.0, -1.0, s, 0.0]]).unwrap()
}

fn broad(n: usize, nu: f64, dt: f64) -> SolverConfig {
    let f = ForcingSpec::complex_from_fn(3, 1.0, 3.0, |k| 0.3 / (1.0 + (k[0] * k[0] + k[1] * k[1]) as f64)).unwrap();
    SolverConfig::new(nu, dt, WaveGrid::new(n).unwrap(), f).unwrap()
}

#[test]
fn splitting_reproduces_full_run() {
    let cfg = broad(16, 0.2, 0.01);
    let n_star = 2.5;
    let w0 = random_field(*cfg.grid(), 4).scale(0.3);
    let traj = simulate(&cfg, &w0, NoiseStream::new(5, 0), 0, 300, 1, true).unwrap();
    let p = HighModeProblem {
        n_star,
        low: traj.fields.iter().map(|f| f.project_low(n_star)).collect(),
        eta: traj.noise.clone(),
        h0: w0.project_high(n_star),
    };
    let h = solve_high_mode(&p, &cfg).unwrap();
    for (hi, full) in h.iter().zip(&traj.fields) {
        let err = hi.sub(&full.project_high(n_star)).enstrophy().sqrt();
        assert!(err < 1e-6, "{err:e}");
        assert!(hi.project_low(n_star).enstrophy() == 0.0);
    }
}

#[test]
fn inviscid_noiseless_run_conserves_invariants() {
    let grid = WaveGrid::new(16).unwrap();
    let cfg = SolverConfig::new(1.0, 5e-5, grid, four_mode())
        .unwrap()
        .with_terms(Terms { nonlinear: true, viscous: false, noise: false });
    let w0 = SpectralField::from_modes(
        grid,
        &[
            ([1, 0], Complex64::new(0.3, 0.1)),
            ([1, 1], Complex64::new(-0.2, 0.25)),
            ([0, 2], Complex64::new(0.1, -0.3)),
            ([2, -1], Complex64::new(0.15, 0.05)),
        ],
    );
    let (e0, z0) = (w0.energy(), w0.enstrophy());
    let mut w = w0.clone();
    let mut s = Stepper::new(&cfg).unwrap();
    let dw = NoiseIncrement::zero(cfg.forcing(), cfg.dt());
    for _ in 0..1000 {
        s.step_sns(&mut w, &dw).unwrap();
    }
    assert!((w.energy() - e0).abs() / e0 < 1e-6, "{:e}", (w.energy() - e0) / e0);
    assert!((w.enstrophy() - z0).abs() / z0 < 1e-6);
    assert!(w.sub(&w0).enstrophy() > 1e-10, "the field should have moved");
}

#[test]
fn identical_seeds_are_bitwise_identical() {
    let cfg = broad(16, 0.1, 0.01);
    let w0 = random_field(*cfg.grid(), 1).scale(0.2);
    let a = simulate(&cfg, &w0, NoiseStream::new(9, 2), 0, 200, 10, false).unwrap();
    let b = simulate(&cfg, &w0, NoiseStream::new(9, 2), 0, 200, 10, false).unwrap();
    for (x, y) in a.fields.iter().zip(&b.fields) {
        for (p, q) in x.coeffs().iter().zip(y.coeffs()) {
            assert_eq!(p.re.to_bits(), q.re.to_bits());
            assert_eq!(p.im.to_bits(), q.im.to_bits());
        }
    }
}

#[test]
fn ou_stationary_variance_per_mode() {
    let cfg = broad(8, 0.5, 0.05);
    let modes: Vec<[i32; 2]> = cfg.forcing().modes().iter().map(|m| m.k).collect();
    let paths = 4000;
    let samples: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut s = Stepper::new(&cfg).unwrap();
            let mut z = SpectralField::zeros(*cfg.grid());
            for i in 0..200 {
                let dw = sample_increment(cfg.forcing(), cfg.dt(), NoiseStream::new(31, p), i).unwrap();
                s.step_ou(&mut z, &dw).unwrap();
            }
            modes.iter().map(|&k| z.get(k).norm_sqr()).collect()
        })
        .collect();
    for (i, &k) in modes.iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|r| r[i]).collect();
        let est = Estimate::of(&col);
        let target = cfg.ou_stationary_variance(k);
        assert!((est.mean - target).abs() <= 3.0 * est.se, "k={k:?}: {est:?} vs {target}");
    }
}

#[test]
fn ou_without_noise_is_exact_decay() {
    let cfg = broad(8, 0.5, 0.05).with_terms(Terms { nonlinear: false, viscous: true, noise: false });
    let z0 = random_field(*cfg.grid(), 2);
    let mut z = z0.clone();
    let mut s = Stepper::new(&cfg).unwrap();
    let dw = NoiseIncrement::zero(cfg.forcing(), cfg.dt());
    for _ in 0..10 {
        s.step_ou(&mut z, &dw).unwrap();
    }
    for k in cfg.grid().active_modes() {
        let r = (-0.5 * (k[0] * k[0] + k[1] * k[1]) as f64 * 0.5).exp();
        assert!((z.get(k) - z0.get(k) * r).norm() <= 1e-14 * z0.get(k).norm().max(1e-300));
    }
}

#[test]
fn noise_only_energy_grows_at_injection_rate() {
    let flat = ForcingSpec::complex_from_fn(3, 1.0, 3.0, |_| 0.1).unwrap();
    let cfg = SolverConfig::new(1.0, 0.01, WaveGrid::new(8).unwrap(), flat)
        .unwrap()
        .with_terms(Terms { nonlinear: false, viscous: false, noise: true });
    let e0 = cfg.forcing().injection_rate();
    let steps = 10_000;
    let marks: Vec<usize> = (1..=10).map(|i| i * steps / 10).collect();
    let runs: Vec<Vec<f64>> = (0..1000u64)
        .into_par_iter()
        .map(|p| {
            let mut s = Stepper::new(&cfg).unwrap();
            let mut w = SpectralField::zeros(*cfg.grid());
            let mut out = Vec::new();
            for i in 0..steps {
                let dw = sample_increment(cfg.forcing(), cfg.dt(), NoiseStream::new(77, p), i as i64).unwrap();
                s.step_sns(&mut w, &dw).unwrap();
                if marks.contains(&(i + 1)) {
                    out.push(w.energy());
                }
            }
            out
        })
        .collect();
    let t: Vec<f64> = marks.iter().map(|&m| m as f64 * cfg.dt()).collect();
    let means: Vec<f64> = (0..marks.len()).map(|j| runs.iter().map(|r| r[j]).sum::<f64>() / runs.len() as f64).collect();
    let fit = linear_fit(&t, &means).unwrap();
    let last: Vec<f64> = runs.iter().map(|r| r[marks.len() - 1]).collect();
    let se = Estimate::of(&last).se / t[t.len() - 1];
    assert!((fit.slope - e0).abs() / e0 < 0.02 && (fit.slope - e0).abs() < 4.0 * se + 1e-12, "slope {} vs E0 {}", fit.slope, e0);
}

#[test]
fn real_and_complex_forms_inject_the_same_energy() {
    let c = broad(8, 1.0, 0.01);
    let real = c.forcing().to_real();
    assert!((real.injection_rate() - c.forcing().injection_rate()).abs() < 1e-12);
    assert!((real.enstrophy_injection_rate() - c.forcing().enstrophy_injection_rate()).abs() < 1e-12);
}

#[test]
fn strong_order_one_under_step_halving() {
    // Increments at the finest step are combined exactly for coarser steps.
    let fine_dt = 0.01 / 8.0;
    let base = broad(8, 0.3, fine_dt);
    let w0 = random_field(*base.grid(), 6).scale(0.5);
    let fine_steps = 800;
    let mut inc: Vec<NoiseIncrement> = (0..fine_steps)
        .map(|i| sample_increment(base.forcing(), fine_dt, NoiseStream::new(3, 0), i).unwrap())
        .collect();
    let mut cfg = base.clone();
    let mut finals = Vec::new();
    loop {
        let mut s = Stepper::new(&cfg).unwrap();
        let mut w = w0.clone();
        for dw in &inc {
            s.step_sns(&mut w, dw).unwrap();
        }
        finals.push(w);
        if inc.len() == 100 {
            break;
        }
        inc = inc.chunks(2).map(|p| cfg.coarsen(&p[0], &p[1])).collect();
        cfg = cfg.clone().with_dt(cfg.dt() * 2.0).unwrap();
    }
    let reference = &finals[0];
    let errs: Vec<f64> = finals[1..].iter().map(|w| w.sub(reference).enstrophy().sqrt()).collect();
    // dt/4, dt/2, dt relative to the dt/8 reference.
    let r1 = errs[2] / errs[1];
    let r2 = errs[1] / errs[0];
    assert!(r1 > 1.6 && r2 > 1.6, "{errs:?}");
}

#[test]
fn galerkin_with_forcing_outside_truncation_is_deterministic() {
    let grid = WaveGrid::new(16).unwrap();
    let f = ForcingSpec::complex(&[[2.0, 0.0, 1.0, 0.0], [1.0, 2.0, 0.5, 0.5]]).unwrap();
    let cfg = SolverConfig::new(0.5, 0.01, grid, f).unwrap();
    let w = SpectralField::from_modes(grid, &[([1, 0], Complex64::new(0.4, 0.1)), ([1, 1], Complex64::new(0.0, 0.3))]);
    let dw = sample_increment(cfg.forcing(), cfg.dt(), NoiseStream::new(1, 1), 0).unwrap();
    let noisy = step_galerkin(&w, &cfg, 2.0, &dw).unwrap();
    let quiet = step_galerkin(&w, &cfg, 2.0, &NoiseIncrement::zero(cfg.forcing(), cfg.dt())).unwrap();
    assert_eq!(noisy, quiet);
}

#[test]
fn galerkin_and_full_runs_diverge_but_stay_valid() {
    let cfg = broad(16, 0.1, 0.01);
    let w0 = random_field(*cfg.grid(), 8).scale(0.3);
    let mut g = w0.clone();
    truncate(&mut g, 4.0);
    let mut f = g.clone();
    let mut s = Stepper::new(&cfg).unwrap();
    let mut dist = Vec::new();
    for i in 0..400 {
        let dw = sample_increment(cfg.forcing(), cfg.dt(), NoiseStream::new(12, 0), i).unwrap();
        s.step_galerkin(&mut g, 4.0, &dw).unwrap();
        s.step_sns(&mut f, &dw).unwrap();
        if i % 100 == 99 {
            dist.push(g.sub(&f).energy());
        }
    }
    assert!(dist.iter().all(|&d| d > 1e-8), "{dist:?}");
    for w in [&g, &f] {
        assert!(w.reality_defect() < 1e-12 && w.is_finite());
    }
}

#[test]
fn increments_have_unit_rate_variance() {
    let spec = four_mode();
    let dt = 0.01;
    let n = 100_000;
    let draws: Vec<NoiseIncrement> =
        (0..n).map(|i| sample_increment(&spec, dt, NoiseStream::new(2024, 0), i).unwrap()).collect();
    for m in 0..spec.modes().len() {
        for c in 0..2 {
            let sq: Vec<f64> = draws.iter().map(|d| d.brownian(m)[c].powi(2)).collect();
            let est = Estimate::of(&sq);
            assert!((est.mean - dt).abs() <= 3.0 * est.se, "mode {m} comp {c}: {est:?}");
        }
    }
}

#[test]
fn applied_noise_is_conjugate_symmetric() {
    let cfg = broad(16, 0.1, 0.01).with_terms(Terms { nonlinear: false, viscous: false, noise: true });
    let dw = sample_increment(cfg.forcing(), cfg.dt(), NoiseStream::new(4, 4), 17).unwrap();
    let w = step_sns(&SpectralField::zeros(*cfg.grid()), &cfg, &dw).unwrap();
    assert_eq!(w.reality_defect(), 0.0);
}

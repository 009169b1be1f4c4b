mod common;

use common::{direct_nonlinear, loop_sum, random_field};
use num_complex::Complex64;
use proptest::prelude::*;
use sns_lab::spectral::{nonlinear_term, SpectralField, WaveGrid};

fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn fft_matches_direct_convolution_up_to_16() {
    for n in [4, 6, 8, 10, 12, 16] {
        let grid = WaveGrid::new(n).unwrap();
        for seed in 0..4 {
            let w = random_field(grid, seed);
            let fast = nonlinear_term(&w).unwrap();
            let slow = direct_nonlinear(&w);
            let d = max_diff(&fast, &slow);
            assert!(d < 1e-10, "N={n} seed={seed}: {d:e}");
        }
    }
}

#[test]
fn fft_matches_direct_with_wide_cutoff() {
    let grid = WaveGrid::with_cutoff(12, 6.0).unwrap();
    let w = random_field(grid, 9);
    assert!(max_diff(&nonlinear_term(&w).unwrap(), &direct_nonlinear(&w)) < 1e-10);
}

fn support(f: &SpectralField) -> Vec<[i32; 2]> {
    let mut out: Vec<[i32; 2]> = f
        .nonzero_modes()
        .into_iter()
        .filter(|&(_, _, re, im)| re.abs() > 1e-12 || im.abs() > 1e-12)
        .map(|(a, b, _, _)| [a, b])
        .collect();
    out.sort();
    out
}

#[test]
fn axis_modes_interact_only_on_diagonals() {
    let grid = WaveGrid::new(8).unwrap();
    let w = SpectralField::from_modes(
        grid,
        &[([1, 0], Complex64::new(1.0, 0.5)), ([0, 1], Complex64::new(-0.25, 2.0))],
    );
    let n = nonlinear_term(&w).unwrap();
    let oracle = direct_nonlinear(&w);
    assert!(max_diff(&n, &oracle) < 1e-14);
    let diagonals = [[-1, -1], [-1, 1], [1, -1], [1, 1]];
    assert!(support(&oracle).iter().all(|k| diagonals.contains(k)));
    // Equal-length wave vectors transfer nothing: both orderings cancel.
    assert!(support(&oracle).is_empty());
}

#[test]
fn unequal_shells_interact() {
    let grid = WaveGrid::new(8).unwrap();
    let a = Complex64::new(1.0, 0.5);
    let b = Complex64::new(-0.25, 2.0);
    let w = SpectralField::from_modes(grid, &[([1, 0], a), ([1, 1], b)]);
    let n = nonlinear_term(&w).unwrap();
    assert!(max_diff(&n, &direct_nonlinear(&w)) < 1e-14);
    // k = (2,1) from ℓ = (1,0), j = (1,1) and the reverse ordering.
    let k = [2, 1];
    let weight = |l: [i32; 2]| (k[0] * l[1] - k[1] * l[0]) as f64 / (l[0] * l[0] + l[1] * l[1]) as f64;
    let (c1, c2) = (weight([1, 0]), weight([1, 1]));
    let expect = a * b * (c1 + c2);
    assert!((n.get(k) - expect).norm() < 1e-14);
    assert_eq!(support(&n), vec![[-2, -1], [0, -1], [0, 1], [2, 1]]);
}

#[test]
fn energy_and_enstrophy_match_scalar_loops() {
    for n in [8, 16, 32] {
        let grid = WaveGrid::new(n).unwrap();
        let w = random_field(grid, n as u64);
        let e = loop_sum(&w, |k2| 1.0 / k2);
        let z = loop_sum(&w, |_| 1.0);
        assert!((w.energy() - e).abs() <= 1e-12 * e);
        assert!((w.enstrophy() - z).abs() <= 1e-12 * z);
    }
}

#[test]
fn projection_membership_per_mode() {
    let grid = WaveGrid::new(16).unwrap();
    let w = random_field(grid, 3);
    let lo = w.project_low(2.0);
    let hi = w.project_high(2.0);
    for k in grid.active_modes() {
        let r = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
        if r < 2.0 {
            assert_eq!(lo.get(k), w.get(k));
            assert_eq!(hi.get(k), Complex64::new(0.0, 0.0));
        } else {
            assert_eq!(hi.get(k), w.get(k));
            assert_eq!(lo.get(k), Complex64::new(0.0, 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nonlinearity_conserves_energy_and_enstrophy(seed in any::<u64>(), n in prop::sample::select(vec![8usize, 12, 16, 24, 32])) {
        let grid = WaveGrid::new(n).unwrap();
        let w = random_field(grid, seed);
        let nl = nonlinear_term(&w).unwrap();
        let scale = w.enstrophy() * w.enstrophy().sqrt();
        prop_assert!(w.energy_pairing(&nl).abs() < 1e-8, "{:e} (scale {scale:e})", w.energy_pairing(&nl));
        prop_assert!(w.enstrophy_pairing(&nl).abs() < 1e-8);
    }

    #[test]
    fn nonlinearity_preserves_reality(seed in any::<u64>()) {
        let grid = WaveGrid::new(16).unwrap();
        let nl = nonlinear_term(&random_field(grid, seed)).unwrap();
        prop_assert!(nl.reality_defect() < 1e-12);
        prop_assert_eq!(nl.get([0, 0]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn projections_are_complementary(seed in any::<u64>(), r in 0.1f64..12.0) {
        let grid = WaveGrid::new(16).unwrap();
        let w = random_field(grid, seed);
        let lo = w.project_low(r);
        let hi = w.project_high(r);
        prop_assert_eq!(lo.add(&hi), w.clone());
        prop_assert_eq!(lo.project_high(r), SpectralField::zeros(grid));
        prop_assert!(lo.reality_defect() == 0.0 && hi.reality_defect() == 0.0);
    }
}

//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sns_lab::spectral::{SpectralField, WaveGrid};

/// Direct convolution N_k = Σ_{ℓ+j=k} (k^⊥·ℓ)/|ℓ|² ω_ℓ ω_j over the
/// retained modes, evaluated with nested loops over every (k, ℓ) pair.
pub fn direct_nonlinear(w: &SpectralField) -> SpectralField {
    let grid = *w.grid();
    let m = grid.max_index();
    let mut out = SpectralField::zeros(grid);
    let inside = |k: [i32; 2]| k != [0, 0] && k[0].abs() <= m && k[1].abs() <= m;
    let mut vals = Vec::new();
    for k1 in -m..=m {
        for k2 in -m..=m {
            let k = [k1, k2];
            if !inside(k) {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for l1 in -m..=m {
                for l2 in -m..=m {
                    let l = [l1, l2];
                    let j = [k1 - l1, k2 - l2];
                    if !inside(l) || !inside(j) {
                        continue;
                    }
                    let kperp_l = (-k2 * l1 + k1 * l2) as f64;
                    let lsq = (l1 * l1 + l2 * l2) as f64;
                    acc += w.get(l) * w.get(j) * (kperp_l / lsq);
                }
            }
            vals.push((k, acc));
        }
    }
    let c = out.coeffs_mut();
    for (k, v) in vals {
        c[grid.index(k)] = v;
    }
    out
}

/// Σ |ω_k|² w(|k|²) with an explicit double loop over wave numbers.
pub fn loop_sum(w: &SpectralField, weight: impl Fn(f64) -> f64) -> f64 {
    let h = w.grid().n() as i32 / 2;
    let mut s = 0.0;
    for k1 in -h..h {
        for k2 in -h..h {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            s += w.get([k1, k2]).norm_sqr() * weight((k1 * k1 + k2 * k2) as f64);
        }
    }
    s
}

/// Random real field supported on the dealiased modes.
pub fn random_field(grid: WaveGrid, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = SpectralField::zeros(grid);
    for k in grid.active_half_modes() {
        let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        w.set_mode(k, c);
    }
    w
}

/// Closure of the K-rule computed by sweeping over every ordered pair of the
/// current set until nothing changes, on a boolean grid.
pub fn brute_force_k_closure(seed: &[[i32; 2]], n: i32) -> Vec<[i32; 2]> {
    let size = (2 * n + 1) as usize;
    let at = |k: [i32; 2]| ((k[0] + n) as usize) * size + (k[1] + n) as usize;
    let in_ball = |k: [i32; 2]| k[0] * k[0] + k[1] * k[1] < n * n;
    let upper = |k: [i32; 2]| k[1] > 0 || (k[1] == 0 && k[0] > 0);
    let canon = |k: [i32; 2]| if upper(k) { k } else { [-k[0], -k[1]] };
    let mut member = vec![false; size * size];
    for &s in seed {
        let s = canon(s);
        if s != [0, 0] && in_ball(s) {
            member[at(s)] = true;
        }
    }
    loop {
        let current: Vec<[i32; 2]> = (-n..=n)
            .flat_map(|a| (-n..=n).map(move |b| [a, b]))
            .filter(|&k| member[at(k)])
            .collect();
        let mut changed = false;
        for &l in &current {
            for &j in &current {
                let cross = l[0] * j[1] - l[1] * j[0];
                let ll = l[0] * l[0] + l[1] * l[1];
                let jj = j[0] * j[0] + j[1] * j[1];
                let p = [l[0] + j[0], l[1] + j[1]];
                let q = [l[0] - j[0], l[1] - j[1]];
                if cross == 0 || ll == jj || !in_ball(p) || !in_ball(q) {
                    continue;
                }
                for c in [p, q, [-q[0], -q[1]]] {
                    let c = canon(c);
                    if !member[at(c)] {
                        member[at(c)] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut out: Vec<[i32; 2]> = (-n..=n)
        .flat_map(|a| (-n..=n).map(move |b| [a, b]))
        .filter(|&k| member[at(k)])
        .collect();
    out.sort();
    out
}

/// {k ∈ ℤ²_* : |k| < n}, sorted.
pub fn upper_ball(n: i32) -> Vec<[i32; 2]> {
    let mut out = Vec::new();
    for a in -n..=n {
        for b in 0..=n {
            let k = [a, b];
            if (b > 0 || a > 0) && a * a + b * b < n * n {
                out.push(k);
            }
        }
    }
    out.sort();
    out
}

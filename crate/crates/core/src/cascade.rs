//! Sets of wave numbers reached by the randomness as it spreads from the
//! forced modes through the triad interactions of the nonlinearity.
//!
//! Two growth rules are provided. [`grow_z`] pairs the seed with the
//! previous generation and is unbounded. [`grow_k`] pairs the previous
//! generation with itself and keeps only products whose sum and difference
//! both lie inside the Galerkin ball `|k| < N`.
//!
//! A pair `(ℓ, j)` is admissible when `ℓ^⊥·j ≠ 0` and `|ℓ| ≠ |j|`, and it
//! contributes `ℓ + j`, `ℓ - j` and `j - ℓ`. Since `ω_{-k}` is the conjugate of
//! `ω_k`, the modes `k` and `-k` are the same degree of freedom. Every mode is
//! stored by its representative with `k₂ > 0`, or with `k₂ = 0, k₁ > 0`.
//!
//! ```
//! use sns_lab::cascade::{grow_k, WaveSet};
//!
//! let seed = WaveSet::from_modes(&[[1, 0], [1, 1]]);
//! let k = grow_k(&seed, 8, usize::MAX);
//! assert!(k.missing_in_ball(8).is_empty());
//! assert_eq!(k.generation([1, 1]), Some(0));
//! ```

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::forcing::ForcingSpec;
use crate::spectral::is_upper;

/// Representative of `{k, -k}` in the upper half plane.
pub fn canonical(k: [i32; 2]) -> [i32; 2] {
    if is_upper(k) {
        k
    } else {
        [-k[0], -k[1]]
    }
}

fn sq(k: [i32; 2]) -> i64 {
    let (a, b) = (k[0] as i64, k[1] as i64);
    a * a + b * b
}

fn in_ball(k: [i32; 2], radius: i32) -> bool {
    sq(k) < (radius as i64) * (radius as i64)
}

/// Modes produced by the pair `(l, j)`, or nothing when the pair is not
/// admissible.
pub fn triad_products(l: [i32; 2], j: [i32; 2]) -> Option<[[i32; 2]; 3]> {
    let cross = l[0] as i64 * j[1] as i64 - l[1] as i64 * j[0] as i64;
    if cross == 0 || sq(l) == sq(j) {
        return None;
    }
    let p = [l[0] + j[0], l[1] + j[1]];
    let q = [l[0] - j[0], l[1] - j[1]];
    Some([p, q, [-q[0], -q[1]]])
}

/// A set of modes with the generation at which each one first appeared.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WaveSet {
    members: BTreeMap<[i32; 2], usize>,
}

impl WaveSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Generation-zero set. The zero mode is dropped and `-k` is stored as `k`.
    pub fn from_modes(modes: &[[i32; 2]]) -> Self {
        let mut s = Self::new();
        for &k in modes {
            s.insert(k, 0);
        }
        s
    }

    /// Seed of the forced modes, the intersection of the cos and sin families.
    pub fn from_forcing(spec: &ForcingSpec) -> Self {
        Self::from_modes(&spec.to_real().cos_sin_intersection())
    }

    /// Inserts `k` unless it is already present; returns whether it was new.
    pub fn insert(&mut self, k: [i32; 2], generation: usize) -> bool {
        if k == [0, 0] {
            return false;
        }
        let k = canonical(k);
        if self.members.contains_key(&k) {
            return false;
        }
        self.members.insert(k, generation);
        true
    }

    pub fn contains(&self, k: [i32; 2]) -> bool {
        self.members.contains_key(&canonical(k))
    }

    pub fn generation(&self, k: [i32; 2]) -> Option<usize> {
        self.members.get(&canonical(k)).copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members with their generations, sorted by `(k₁, k₂)`.
    pub fn iter(&self) -> impl Iterator<Item = ([i32; 2], usize)> + '_ {
        self.members.iter().map(|(&k, &g)| (k, g))
    }

    pub fn modes(&self) -> Vec<[i32; 2]> {
        self.members.keys().copied().collect()
    }

    pub fn max_generation(&self) -> Option<usize> {
        self.members.values().copied().max()
    }

    /// Members of generation exactly `g`.
    pub fn frontier(&self, g: usize) -> Vec<[i32; 2]> {
        self.iter().filter(|&(_, h)| h == g).map(|(k, _)| k).collect()
    }

    /// Members with `|k| < radius`, generations kept.
    pub fn restrict(&self, radius: i32) -> WaveSet {
        WaveSet { members: self.members.iter().filter(|(&k, _)| in_ball(k, radius)).map(|(&k, &g)| (k, g)).collect() }
    }

    /// Modes with `|k| < radius` that are not members.
    pub fn missing_in_ball(&self, radius: i32) -> Vec<[i32; 2]> {
        ball(radius).into_iter().filter(|k| !self.contains(*k)).collect()
    }

    pub fn is_subset(&self, other: &WaveSet) -> bool {
        self.members.keys().all(|k| other.members.contains_key(k))
    }

    /// Writes `k1,k2,generation` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k1,k2,generation")?;
        for (k, g) in self.iter() {
            writeln!(w, "{},{},{}", k[0], k[1], g)?;
        }
        Ok(())
    }
}

/// Upper-half-plane modes with `0 < |k| < radius`, sorted by `(k₁, k₂)`.
pub fn ball(radius: i32) -> Vec<[i32; 2]> {
    let r = radius.max(0);
    let mut out = Vec::new();
    for a in -r..=r {
        for b in 0..=r {
            let k = [a, b];
            if is_upper(k) && in_ball(k, r) {
                out.push(k);
            }
        }
    }
    out
}

/// `Z_n` after `n` iterations from `seed`: each step pairs the
/// generation-zero modes with the previous set. A set returned by an
/// earlier call can be passed back in to continue growing it.
pub fn grow_z(seed: &WaveSet, n: usize) -> WaveSet {
    let base = seed.frontier(0);
    let mut set = seed.clone();
    let start = set.max_generation().unwrap_or(0);
    let mut fresh = set.modes();
    for g in start + 1..=start.saturating_add(n) {
        let mut next = Vec::new();
        for &l in &fresh {
            for &j in &base {
                if let Some(ks) = triad_products(l, j) {
                    for k in ks {
                        if set.insert(k, g) {
                            next.push(canonical(k));
                        }
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        fresh = next;
    }
    set
}

/// `K_n^N` after `n` iterations from `seed ∩ {|k| < N}`: each step pairs the
/// previous set with itself under the ball constraint. Pass `usize::MAX` to
/// run to the fixed point, which always exists since the ball is finite.
pub fn grow_k(seed: &WaveSet, radius: i32, n: usize) -> WaveSet {
    let mut set = seed.restrict(radius);
    let start = set.max_generation().unwrap_or(0);
    let mut all = set.modes();
    let mut fresh = all.clone();
    let mut g = start;
    let mut left = n;
    while left > 0 {
        g += 1;
        left -= 1;
        let mut next = Vec::new();
        for &l in &fresh {
            for &j in &all {
                let Some(ks) = triad_products(l, j) else { continue };
                if !in_ball(ks[0], radius) || !in_ball(ks[1], radius) {
                    continue;
                }
                for k in ks {
                    if set.insert(k, g) {
                        next.push(canonical(k));
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        all.extend_from_slice(&next);
        fresh = next;
    }
    set
}

/// Whether the forced modes reach every mode of the order-`N` Galerkin system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub radius: i32,
    pub complete: bool,
    pub reached: usize,
    pub total: usize,
    pub generations: usize,
    pub missing: Vec<[i32; 2]>,
}

/// Runs [`grow_k`] to its fixed point from the forced modes of `spec` and
/// compares the result with the ball `|k| < N`.
pub fn galerkin_ergodicity_precheck(spec: &ForcingSpec, radius: i32) -> (Coverage, WaveSet) {
    let set = grow_k(&WaveSet::from_forcing(spec), radius, usize::MAX);
    (coverage(&set, radius), set)
}

/// Coverage of the ball `|k| < radius` by `set`.
pub fn coverage(set: &WaveSet, radius: i32) -> Coverage {
    let missing = set.missing_in_ball(radius);
    let total = ball(radius).len();
    Coverage {
        radius,
        complete: missing.is_empty(),
        reached: total - missing.len(),
        total,
        generations: set.restrict(radius).max_generation().unwrap_or(0),
        missing,
    }
}

/// `Z_n` grown until it covers the ball of `radius`, or for at most
/// `max_iter` iterations.
pub fn z_cover(seed: &WaveSet, radius: i32, max_iter: usize) -> (Coverage, WaveSet) {
    let mut set = seed.clone();
    for _ in 0..max_iter {
        if set.missing_in_ball(radius).is_empty() {
            break;
        }
        set = grow_z(&set, 1);
    }
    (coverage(&set, radius), set)
}

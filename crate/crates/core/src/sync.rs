//! Determining modes: with the low modes ℓ = Π_ℓu and the high-mode noise
//! η = Π_hW held fixed, the high-mode equation forgets its initial value.
//! For ρ = u₁ - u₂,
//!
//! d‖ρ‖² ≤ -ν‖Λρ‖² + (𝒞/ν)‖Λu₂‖²‖ρ‖²,
//!
//! and on the high modes ‖Λρ‖² ≥ N*²‖ρ‖², which gives the Foias–Prodi rate
//! νN*² - (𝒞/ν)⟨‖Λu‖²⟩. The constant 𝒞 is measured here, never assumed.
//!
//! ```
//! use num_complex::Complex64;
//! use sns_lab::spectral::{SpectralField, WaveGrid};
//! use sns_lab::sync::nonlinear_ratio;
//!
//! // A difference parallel to the reference field does not interact with it.
//! let g = WaveGrid::new(16).unwrap();
//! let u = SpectralField::from_modes(g, &[([1, 0], Complex64::new(1.0, 0.0))]);
//! let rho = SpectralField::from_modes(g, &[([3, 0], Complex64::new(0.0, 1.0))]);
//! assert_eq!(nonlinear_ratio(&u, &rho).unwrap(), 0.0);
//! ```

use std::hash::{Hash, Hasher};

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, solve_high_mode, HighModeProblem, SolverConfig};
use crate::error::{Error, Result};
use crate::forcing::{NoiseIncrement, NoiseStream};
use crate::rng::stream_rng;
use crate::spectral::{norm_sq, NonlinearEvaluator, SpectralField, WaveGrid};
use crate::stats::{linear_fit, variance};

/// Values of ‖ρ‖/‖ρ(0)‖ below this are treated as round-off and left out of fits.
pub const ROUND_OFF_FLOOR: f64 = 1e-12;

/// Where the pinned low modes come from.
#[derive(Debug, Clone)]
pub enum SyncSource {
    /// Run the full equation from `w0` for `burn_in` steps, then record ℓ and η.
    Extracted { w0: SpectralField, seed: u64, burn_in: usize },
    /// Given low-mode samples and increments on the solver grid.
    Synthetic { low: Vec<SpectralField>, eta: Vec<NoiseIncrement> },
}

#[derive(Debug, Clone)]
pub struct SyncExperiment {
    pub cfg: SolverConfig,
    pub n_star: f64,
    pub h0: Vec<SpectralField>,
    pub source: SyncSource,
    pub steps: usize,
    /// Measured nonlinearity constant used for the predicted rate.
    pub c_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub times: Vec<f64>,
    /// ‖Φ(h₀⁽ⁱ⁾) - Φ(h₀⁽⁰⁾)‖ in the velocity L² norm for i ≥ 1.
    pub distances: Vec<Vec<f64>>,
    /// Same differences in the enstrophy norm.
    pub enstrophy_distances: Vec<Vec<f64>>,
    /// Least-squares slope of log‖ρ‖ for the first pair, above the round-off floor.
    pub rate: f64,
    pub r2: f64,
    /// ‖ρ(T)‖/‖ρ(0)‖ for the first pair.
    pub ratio: f64,
    /// -(νN*² - (𝒞̂/ν)⟨‖Λu‖²⟩) when 𝒞̂ is known.
    pub predicted_rate: Option<f64>,
    pub mean_enstrophy: f64,
    pub low_checksum: u64,
    pub eta_checksum: u64,
}

impl SyncReport {
    /// Decay below `ratio_max` with a log-linear fit better than `r2_min`.
    pub fn passes(&self, ratio_max: f64, r2_min: f64) -> bool {
        self.ratio < ratio_max && self.r2 > r2_min
    }
}

fn low_checksum(low: &[SpectralField]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for f in low {
        for c in f.coeffs() {
            c.re.to_bits().hash(&mut h);
            c.im.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn eta_checksum(p: &HighModeProblem, cfg: &SolverConfig) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for e in &p.eta {
        e.checksum(cfg.forcing(), |k| norm_sq(k).sqrt() >= p.n_star).hash(&mut h);
    }
    h.finish()
}

/// Check that every problem sees bitwise the same ℓ and η; returns the two checksums.
pub fn verify_shared_inputs(problems: &[HighModeProblem], cfg: &SolverConfig) -> Result<(u64, u64)> {
    let sums: Vec<(u64, u64)> = problems.iter().map(|p| (low_checksum(&p.low), eta_checksum(p, cfg))).collect();
    if let Some(i) = sums.iter().position(|s| *s != sums[0]) {
        return Err(Error::SharedInputMismatch(format!(
            "variant {i} has checksums {:x?}, variant 0 has {:x?}",
            sums[i], sums[0]
        )));
    }
    Ok(sums.first().copied().unwrap_or((0, 0)))
}

/// Fit log d against t over the samples with d/d(0) above the round-off floor.
pub fn log_linear_rate(times: &[f64], d: &[f64]) -> Option<(f64, f64)> {
    let d0 = d.first().copied()?;
    let (x, y): (Vec<f64>, Vec<f64>) =
        times.iter().zip(d).filter(|(_, &v)| v > ROUND_OFF_FLOOR * d0).map(|(&t, &v)| (t, v.ln())).unzip();
    linear_fit(&x, &y).map(|f| (f.slope, f.r2))
}

/// Solve the high-mode equation from every h₀ with shared inputs and
/// measure the decay of the pairwise differences.
pub fn run_sync(e: &SyncExperiment) -> Result<SyncReport> {
    if e.h0.len() < 2 {
        return Err(Error::InvalidConfig("need at least two initial high-mode fields".into()));
    }
    let cfg = &e.cfg;
    let (low, eta, full_enstrophy) = match &e.source {
        SyncSource::Extracted { w0, seed, burn_in } => {
            let stream = NoiseStream::new(*seed, 0);
            let warm = simulate(cfg, w0, stream, 0, *burn_in, (*burn_in).max(1), false)?;
            let start = warm.fields.last().unwrap().clone();
            let run = simulate(cfg, &start, stream, *burn_in as i64, e.steps, 1, true)?;
            let z = run.fields.iter().map(|f| f.enstrophy()).sum::<f64>() / run.fields.len() as f64;
            (run.fields.iter().map(|f| f.project_low(e.n_star)).collect::<Vec<_>>(), run.noise, Some(z))
        }
        SyncSource::Synthetic { low, eta } => (low.clone(), eta.clone(), None),
    };
    let problems: Vec<HighModeProblem> = e
        .h0
        .iter()
        .map(|h| HighModeProblem { n_star: e.n_star, low: low.clone(), eta: eta.clone(), h0: h.clone() })
        .collect();
    let (low_sum, eta_sum) = verify_shared_inputs(&problems, cfg)?;
    let paths: Vec<Vec<SpectralField>> =
        problems.par_iter().map(|p| solve_high_mode(p, cfg)).collect::<Result<_>>()?;
    let times: Vec<f64> = (0..paths[0].len()).map(|i| i as f64 * cfg.dt()).collect();
    let mut distances = Vec::new();
    let mut enstrophy_distances = Vec::new();
    for p in &paths[1..] {
        let diffs: Vec<SpectralField> = p.iter().zip(&paths[0]).map(|(a, b)| a.sub(b)).collect();
        distances.push(diffs.iter().map(|d| d.energy().sqrt()).collect::<Vec<_>>());
        enstrophy_distances.push(diffs.iter().map(|d| d.enstrophy().sqrt()).collect::<Vec<_>>());
    }
    let d = &distances[0];
    let ratio = if d[0] == 0.0 { 0.0 } else { d[d.len() - 1] / d[0] };
    let (rate, r2) = if d[0] == 0.0 { (f64::NEG_INFINITY, 1.0) } else { log_linear_rate(&times, d).unwrap_or((f64::NAN, 0.0)) };
    let mean_enstrophy = full_enstrophy.unwrap_or_else(|| {
        paths[0].iter().zip(&low).map(|(h, l)| h.add(l).enstrophy()).sum::<f64>() / paths[0].len() as f64
    });
    let nu = cfg.nu();
    let predicted_rate = e.c_hat.map(|c| -(nu * e.n_star * e.n_star - c / nu * mean_enstrophy));
    Ok(SyncReport {
        times,
        distances,
        enstrophy_distances,
        rate,
        r2,
        ratio,
        predicted_rate,
        mean_enstrophy,
        low_checksum: low_sum,
        eta_checksum: eta_sum,
    })
}

/// Ratio r₊²/(4‖Λρ‖²‖Λu‖²‖ρ‖²) with r = 2⟨N(u+ρ) - N(u), ρ⟩ in the velocity
/// inner product. The inequality holds with 𝒞 at least this ratio.
pub fn nonlinear_ratio(u: &SpectralField, rho: &SpectralField) -> Result<f64> {
    let mut ev = NonlinearEvaluator::new(*u.grid())?;
    nonlinear_ratio_with(&mut ev, u, rho)
}

fn nonlinear_ratio_with(ev: &mut NonlinearEvaluator, u: &SpectralField, rho: &SpectralField) -> Result<f64> {
    let a = ev.eval(&u.add(rho))?;
    let b = ev.eval(u)?;
    let r = (2.0 * rho.energy_pairing(&a.sub(&b))).max(0.0);
    let denom = 4.0 * rho.enstrophy() * u.enstrophy() * rho.energy();
    Ok(if r == 0.0 || denom == 0.0 { 0.0 } else { r * r / denom })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityEstimate {
    /// 𝒞̂: the sample maximum.
    pub c_hat: f64,
    pub samples: usize,
    /// Quantiles at 0.5, 0.9, 0.99.
    pub quantiles: [f64; 3],
    pub mean: f64,
    pub variance: f64,
}

/// Maximal ratio over the given (u, ρ) pairs.
pub fn estimate_nonlinearity_constant(pairs: &[(SpectralField, SpectralField)]) -> Result<NonlinearityEstimate> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no sample pairs".into()));
    }
    let grid = *pairs[0].0.grid();
    let mut ratios: Vec<f64> = pairs
        .par_iter()
        .map_init(|| NonlinearEvaluator::new(grid).expect("grid validated"), |ev, (u, r)| nonlinear_ratio_with(ev, u, r))
        .collect::<Result<_>>()?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = variance(&ratios);
    ratios.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| ratios[((ratios.len() - 1) as f64 * p).round() as usize];
    Ok(NonlinearityEstimate {
        c_hat: *ratios.last().unwrap(),
        samples: ratios.len(),
        quantiles: [q(0.5), q(0.9), q(0.99)],
        mean,
        variance: var,
    })
}

/// Dense random pairs: coefficient moduli |k|^{-s} times a uniform factor,
/// s uniform in [0, 3] per field, uniform phases.
pub fn random_pairs(grid: WaveGrid, count: usize, seed: u64) -> Vec<(SpectralField, SpectralField)> {
    let modes = grid.active_half_modes();
    (0..count as u64)
        .map(|i| {
            let mut rng = stream_rng(seed, i, 0x5c);
            let mut field = || {
                let s: f64 = rng.random_range(0.0..3.0);
                let mut w = SpectralField::zeros(grid);
                for &k in &modes {
                    let amp = norm_sq(k).powf(-s / 2.0) * rng.random::<f64>();
                    w.set_mode(k, Complex64::from_polar(amp, rng.random_range(0.0..TAU)));
                }
                w
            };
            let u = field();
            let r = field();
            (u, r)
        })
        .collect()
}

/// Gaussian vorticity blob of width `w` centred at `x`, multiplied by the
/// Hermite-type factor (i k'₁w)^{m₁}(i k'₂w)^{m₂} in axes rotated by `rot`.
pub fn blob(grid: WaveGrid, w: f64, x: [f64; 2], m: [i32; 2], rot: f64) -> SpectralField {
    let (c, s) = (rot.cos(), rot.sin());
    let mut f = SpectralField::zeros(grid);
    for k in grid.active_half_modes() {
        let (k1, k2) = (k[0] as f64, k[1] as f64);
        let poly = Complex64::new(0.0, (k1 * c + k2 * s) * w).powi(m[0]) * Complex64::new(0.0, (k2 * c - k1 * s) * w).powi(m[1]);
        let shift = Complex64::from_polar(1.0, -(k1 * x[0] + k2 * x[1]));
        f.set_mode(k, poly * shift * (-0.5 * w * w * norm_sq(k)).exp());
    }
    f
}

#[derive(Debug, Clone, Copy)]
struct BlobPair {
    wu: f64,
    wr: f64,
    offset: [f64; 2],
    mu: [i32; 2],
    mr: [i32; 2],
    rot: f64,
}

impl BlobPair {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let wu = rng.random_range(0.1..1.5);
        BlobPair {
            wu,
            wr: wu * rng.random_range(0.2..2.0),
            offset: [rng.random_range(-2.0..2.0) * wu, rng.random_range(-2.0..2.0) * wu],
            mu: [rng.random_range(0..2), rng.random_range(0..2)],
            mr: [rng.random_range(0..3), rng.random_range(0..3)],
            rot: rng.random_range(0.0..TAU),
        }
    }

    fn perturb(&self, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let mut q = *self;
        q.wu = (q.wu * (1.0 + scale * rng.random_range(-1.0..1.0))).clamp(0.08, 2.0);
        q.wr = (q.wr * (1.0 + scale * rng.random_range(-1.0..1.0))).clamp(0.05, 3.0);
        for d in &mut q.offset {
            *d += scale * q.wu * rng.random_range(-1.0..1.0);
        }
        q.rot += scale * rng.random_range(-1.0..1.0);
        q
    }

    fn fields(&self, grid: WaveGrid) -> (SpectralField, SpectralField) {
        (blob(grid, self.wu, [0.0, 0.0], self.mu, self.rot), blob(grid, self.wr, self.offset, self.mr, self.rot))
    }
}

/// Localized pairs: a blob u and a Hermite blob ρ near it, each refined by
/// `ascent` steps of randomized hill climbing on the ratio. Random phases
/// spread fields over the whole torus and almost never come close to the
/// maximal ratio; localized pairs do.
pub fn sample_pairs(grid: WaveGrid, count: usize, seed: u64, ascent: usize) -> Result<Vec<(SpectralField, SpectralField)>> {
    (0..count as u64)
        .into_par_iter()
        .map_init(
            || NonlinearEvaluator::new(grid),
            |ev, i| {
                let ev = ev.as_mut().map_err(|e| Error::InvalidGrid(e.to_string()))?;
                let mut rng = stream_rng(seed, i, 0x5d);
                let mut p = BlobPair::draw(&mut rng);
                let (u, r) = p.fields(grid);
                let mut best = nonlinear_ratio_with(ev, &u, &r)?;
                for j in 0..ascent {
                    let q = p.perturb(&mut rng, 0.3 * (1.0 - j as f64 / ascent as f64) + 0.02);
                    let (u, r) = q.fields(grid);
                    let v = nonlinear_ratio_with(ev, &u, &r)?;
                    if v > best {
                        best = v;
                        p = q;
                    }
                }
                Ok(p.fields(grid))
            },
        )
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeNuReport {
    /// 𝒞̂E₀/ν³.
    pub criterion: f64,
    pub times: Vec<f64>,
    /// ‖u₁(t) - u₀(t)‖ for every variant against the first.
    pub distances: Vec<Vec<f64>>,
    pub rate: f64,
    pub final_distance: f64,
    /// sup over [-1, 0] of ‖u_{n+1} - u_n‖ for n = 1, 2, ...
    pub pullback: Vec<f64>,
    pub pullback_rate: f64,
    pub pullback_r2: f64,
}

/// Full solutions from every `u0` under one noise path, plus the pullback
/// sequence u_n started from zero at time -n with noise indexed by the
/// absolute step. Errors when 𝒞̂E₀/ν³ is not below `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn large_nu_contraction(
    cfg: &SolverConfig,
    u0: &[SpectralField],
    c_hat: f64,
    threshold: f64,
    horizon: f64,
    pullback_max: usize,
    seed: u64,
) -> Result<LargeNuReport> {
    let criterion = c_hat * cfg.forcing().injection_rate() / cfg.nu().powi(3);
    if !(criterion < threshold) {
        return Err(Error::InvalidConfig(format!(
            "contraction criterion C E0/nu^3 = {criterion:.4} is not below {threshold}"
        )));
    }
    if u0.len() < 2 {
        return Err(Error::InvalidConfig("need at least two initial conditions".into()));
    }
    let dt = cfg.dt();
    let steps = (horizon / dt).round() as usize;
    let stream = NoiseStream::new(seed, 0);
    let runs: Vec<Vec<SpectralField>> = u0
        .par_iter()
        .map(|w| simulate(cfg, w, stream, 0, steps, 1, false).map(|t| t.fields))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let distances: Vec<Vec<f64>> = runs[1..]
        .iter()
        .map(|r| r.iter().zip(&runs[0]).map(|(a, b)| a.sub(b).energy().sqrt()).collect())
        .collect();
    let (rate, _) = log_linear_rate(&times, &distances[0]).unwrap_or((f64::NAN, 0.0));
    let final_distance = distances.iter().map(|d| d[d.len() - 1]).fold(0.0, f64::max);

    // u_n on [-1, 0] for n = 1..=pullback_max+1.
    let per_unit = (1.0 / dt).round() as usize;
    let windows: Vec<Vec<SpectralField>> = (1..=pullback_max + 1)
        .into_par_iter()
        .map(|n| {
            let run = simulate(cfg, &SpectralField::zeros(*cfg.grid()), stream, -((n * per_unit) as i64), n * per_unit, 1, false)?;
            Ok(run.fields[(n - 1) * per_unit..].to_vec())
        })
        .collect::<Result<_>>()?;
    let pullback: Vec<f64> = windows
        .windows(2)
        .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| a.sub(b).energy().sqrt()).fold(0.0, f64::max))
        .collect();
    let idx: Vec<f64> = (1..=pullback.len()).map(|n| n as f64).collect();
    let (pullback_rate, pullback_r2) = log_linear_rate(&idx, &pullback).unwrap_or((f64::NAN, 0.0));
    Ok(LargeNuReport { criterion, times, distances, rate, final_distance, pullback, pullback_rate, pullback_r2 })
}

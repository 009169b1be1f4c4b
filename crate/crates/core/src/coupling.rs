//! Coupling constructions on the toy model and small Galerkin systems.
//!
//! For densities ψ₁, ψ₂ against a common measure, μ₁∧μ₂ has density
//! ψ₁∧ψ₂ and (μ₁-μ₂)⁺ has density (ψ₁-ψ₂)⁺, so that μ₁ = μ₁∧μ₂ + (μ₁-μ₂)⁺
//! and ½‖μ₁-μ₂‖_TV = 1 - (μ₁∧μ₂)(X) for probability measures.
//!
//! ```
//! use sns_lab::coupling::EmpiricalMeasure;
//!
//! let a = EmpiricalMeasure::from_atoms(1e-9, [(vec![0.0], 0.6), (vec![1.0], 0.4)]).unwrap();
//! let b = EmpiricalMeasure::from_atoms(1e-9, [(vec![0.0], 0.3), (vec![2.0], 0.7)]).unwrap();
//! let m = a.meet(&b).unwrap();
//! assert_eq!(m.mass(), 0.3);
//! assert!((0.5 * a.tv_norm(&b).unwrap() - 0.7).abs() < 1e-15);
//! ```
//!
//! The chain pairs two copies over unit segments. Both copies share the
//! high-mode noise. On a segment where a coupling is attempted, the two
//! conditional laws of the low-mode path are coupled maximally on the
//! path set B: draw X from the first law; keep Y = X with probability
//! 1_B(X) min(1, q(X)/p(X)); otherwise draw Y from the second law and keep
//! it with probability 1 - 1_B(Y) min(1, p(Y)/q(Y)). The discrete-time
//! transition densities are Gaussian, so p and q are exact. Each copy keeps
//! its own law whatever the coupling does.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{truncate, SolverConfig, Stepper};
use crate::error::{Error, Result};
use crate::report::Check;
use crate::rng::stream_rng;
use crate::spectral::{norm_sq, SpectralField};
use crate::stats::{ks_two_sample, linear_fit};
use crate::toy::{step_h, step_l, ToyConfig, ToyState};

/// Finite measure on points of ℝᵈ. Points closer than `quantum` in every
/// coordinate are the same atom.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    quantum: f64,
    atoms: BTreeMap<Vec<i64>, (Vec<f64>, f64)>,
}

impl EmpiricalMeasure {
    pub fn new(quantum: f64) -> Result<Self> {
        if !(quantum > 0.0 && quantum.is_finite()) {
            return Err(Error::InvalidConfig(format!("quantum {quantum} must be positive")));
        }
        Ok(EmpiricalMeasure { quantum, atoms: BTreeMap::new() })
    }

    pub fn from_atoms(quantum: f64, atoms: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Result<Self> {
        let mut m = Self::new(quantum)?;
        for (p, w) in atoms {
            m.push(p, w)?;
        }
        Ok(m)
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|x| (x / self.quantum).round() as i64).collect()
    }

    /// Add `weight` at `point`, merging with an existing atom.
    pub fn push(&mut self, point: Vec<f64>, weight: f64) -> Result<()> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidConfig(format!("atom weight {weight} must be finite and nonnegative")));
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("atom point is not finite".into()));
        }
        let key = self.key(&point);
        self.atoms.entry(key).and_modify(|a| a.1 += weight).or_insert((point, weight));
        Ok(())
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.atoms.values().map(|a| a.1).sum()
    }

    pub fn weight_at(&self, point: &[f64]) -> f64 {
        self.atoms.get(&self.key(point)).map_or(0.0, |a| a.1)
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.atoms.values().map(|(p, w)| (p.as_slice(), *w))
    }

    fn same_lattice(&self, other: &Self) -> Result<()> {
        if self.quantum != other.quantum {
            return Err(Error::InvalidConfig(format!("quanta differ: {} vs {}", self.quantum, other.quantum)));
        }
        Ok(())
    }

    fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_lattice(other)?;
        let mut atoms = BTreeMap::new();
        for (k, (p, a)) in &self.atoms {
            let b = other.atoms.get(k).map_or(0.0, |x| x.1);
            atoms.insert(k.clone(), (p.clone(), f(*a, b)));
        }
        for (k, (p, b)) in &other.atoms {
            atoms.entry(k.clone()).or_insert_with(|| (p.clone(), f(0.0, *b)));
        }
        atoms.retain(|_, a| a.1 > 0.0);
        Ok(EmpiricalMeasure { quantum: self.quantum, atoms })
    }

    /// μ₁∧μ₂: atomwise minimum.
    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.combine(other, f64::min)
    }

    /// (μ₁-μ₂)⁺, computed as a - min(a, b) so that it adds back to μ₁ with the meet.
    pub fn positive_part(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a - a.min(b))
    }

    pub fn sum(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a + b)
    }

    /// ‖μ₁-μ₂‖_TV = Σ|a - b|.
    pub fn tv_norm(&self, other: &Self) -> Result<f64> {
        Ok(self.combine(other, |a, b| (a - b).abs())?.mass())
    }

    /// Same support.
    pub fn is_equivalent(&self, other: &Self) -> bool {
        self.quantum == other.quantum
            && self.atoms.iter().filter(|a| a.1 .1 > 0.0).count() == other.atoms.iter().filter(|a| a.1 .1 > 0.0).count()
            && self.atoms.iter().filter(|a| a.1 .1 > 0.0).all(|(k, _)| other.atoms.get(k).is_some_and(|b| b.1 > 0.0))
    }

    /// Largest atomwise weight difference.
    pub fn max_difference(&self, other: &Self) -> Result<f64> {
        Ok(self.combine(other, |a, b| (a - b).abs())?.atoms.values().map(|a| a.1).fold(0.0, f64::max))
    }
}

pub fn measure_meet(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    a.meet(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeReport {
    /// max |μ₁ - (μ₁∧μ₂ + (μ₁-μ₂)⁺)| over atoms; zero up to one rounding of
    /// the difference a - b.
    pub decomposition_error: f64,
    /// |½‖μ₁-μ₂‖_TV - (1 - (μ₁∧μ₂)(X))| when both masses are one.
    pub tv_identity_error: Option<f64>,
    pub meet_mass: f64,
}

pub fn lattice_identities(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<LatticeReport> {
    let meet = a.meet(b)?;
    let rebuilt = meet.sum(&a.positive_part(b)?)?;
    let decomposition_error = a.max_difference(&rebuilt)?;
    let unit = |m: &EmpiricalMeasure| (m.mass() - 1.0).abs() < 1e-12;
    let tv_identity_error = (unit(a) && unit(b)).then(|| Ok::<_, Error>((0.5 * a.tv_norm(b)? - (1.0 - meet.mass())).abs())).transpose()?;
    Ok(LatticeReport { decomposition_error, tv_identity_error, meet_mass: meet.mass() })
}

/// [1 - 1/p] (mass^p/(pC'))^{1/(p-1)}.
pub fn coupling_lower_bound(mass: f64, p: f64, c_prime: f64) -> f64 {
    (1.0 - 1.0 / p) * (mass.powf(p) / (p * c_prime)).powf(1.0 / (p - 1.0))
}

/// ∫(dμ₁/dμ₂)^p dμ₁ on atoms.
pub fn ratio_moment(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !a.is_equivalent(b) {
        return Err(Error::NotEquivalent("supports differ".into()));
    }
    Ok(a.atoms.iter().filter(|x| x.1 .1 > 0.0).map(|(k, (_, w1))| (w1 / b.atoms[k].1).powf(p) * w1).sum())
}

/// Meet mass ∫ 1∧(dμ₁/dμ₂) dμ₂ against the lower bound with C' given, or
/// the exact moment when `c_prime` is `None`.
pub fn coupling_lower_bound_check(a: &EmpiricalMeasure, b: &EmpiricalMeasure, p: f64, c_prime: Option<f64>) -> Result<Check> {
    if !(p > 1.0) {
        return Err(Error::InvalidConfig(format!("p = {p} must exceed 1")));
    }
    let moment = ratio_moment(a, b, p)?;
    let c = c_prime.unwrap_or(moment);
    if c < moment {
        return Err(Error::InvalidConfig(format!("C' = {c} is below the ratio moment {moment}")));
    }
    let meet = a.meet(b)?.mass();
    let bound = coupling_lower_bound(a.mass(), p, c);
    Ok(Check::exact("meet mass against coupling lower bound", meet, bound, meet >= bound))
}

/// Covariance factor of one block of low coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseBlock {
    Scalar(f64),
    /// Lower Cholesky factor [l₁₁, l₂₁, l₂₂].
    Pair([f64; 3]),
}

impl NoiseBlock {
    fn dim(&self) -> usize {
        match self {
            NoiseBlock::Scalar(_) => 1,
            NoiseBlock::Pair(_) => 2,
        }
    }

    fn color(&self, z: &[f64], out: &mut [f64]) {
        match *self {
            NoiseBlock::Scalar(s) => out[0] += s * z[0],
            NoiseBlock::Pair([a, b, c]) => {
                out[0] += a * z[0];
                out[1] += b * z[0] + c * z[1];
            }
        }
    }

    /// |L⁻¹v|².
    fn whitened_sq(&self, v: &[f64]) -> f64 {
        match *self {
            NoiseBlock::Scalar(s) => (v[0] / s).powi(2),
            NoiseBlock::Pair([a, b, c]) => {
                let y0 = v[0] / a;
                let y1 = (v[1] - b * y0) / c;
                y0 * y0 + y1 * y1
            }
        }
    }

    fn is_degenerate(&self) -> bool {
        match *self {
            NoiseBlock::Scalar(s) => !(s > 0.0),
            NoiseBlock::Pair([a, _, c]) => !(a > 0.0 && c > 0.0),
        }
    }
}

/// A system split into low coordinates with Gaussian one-step transitions
/// and a high part that is a deterministic function of its past, the low
/// path and a shared noise.
pub trait CouplingModel: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Shared: Clone + Send;
    type Workspace: Send;

    fn workspace(&self) -> Result<Self::Workspace>;
    fn dt(&self) -> f64;
    fn noise(&self) -> &[NoiseBlock];
    fn draw_shared(&self, rng: &mut ChaCha8Rng) -> Self::Shared;
    /// Next state with the low coordinates at their conditional mean, and that mean.
    fn predict(&self, ws: &mut Self::Workspace, s: &Self::State, shared: &Self::Shared) -> Result<(Self::State, Vec<f64>)>;
    fn set_low(&self, s: &mut Self::State, low: &[f64]);
    fn low(&self, s: &Self::State) -> Vec<f64>;
    fn lyapunov(&self, s: &Self::State) -> f64;
    fn high_distance(&self, a: &Self::State, b: &Self::State) -> f64;
    /// A low coordinate and a high coordinate that is 1-Lipschitz in the high-mode norm.
    fn observables(&self, s: &Self::State) -> [f64; 2];
}

/// The toy system under the integrating-factor scheme. With `noise` off
/// both noises vanish, which only makes sense for free runs.
#[derive(Debug, Clone)]
pub struct ToyModel {
    pub cfg: ToyConfig,
    pub dt: f64,
    pub noise: bool,
    blocks: Vec<NoiseBlock>,
}

impl ToyModel {
    pub fn new(cfg: ToyConfig, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!("time step {dt} must be positive")));
        }
        let s = (-cfg.nu2 * dt).exp() * cfg.sigma2 * dt.sqrt();
        Ok(ToyModel { cfg, dt, noise: true, blocks: vec![NoiseBlock::Scalar(s)] })
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self.blocks = vec![NoiseBlock::Scalar(0.0)];
        self
    }
}

impl CouplingModel for ToyModel {
    type State = ToyState;
    type Shared = f64;
    type Workspace = ();

    fn workspace(&self) -> Result<()> {
        Ok(())
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn noise(&self) -> &[NoiseBlock] {
        &self.blocks
    }

    fn draw_shared(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if self.noise {
            z * self.dt.sqrt()
        } else {
            0.0
        }
    }

    fn predict(&self, _: &mut (), s: &ToyState, deta: &f64) -> Result<(ToyState, Vec<f64>)> {
        let mean = step_l(s.l, s.h, &self.cfg, 0.0, self.dt);
        let h = step_h(s.l, s.h, &self.cfg, *deta, self.dt);
        Ok((ToyState { l: mean, h, t: s.t + self.dt }, vec![mean]))
    }

    fn set_low(&self, s: &mut ToyState, low: &[f64]) {
        s.l = low[0];
    }

    fn low(&self, s: &ToyState) -> Vec<f64> {
        vec![s.l]
    }

    fn lyapunov(&self, s: &ToyState) -> f64 {
        s.l * s.l + s.h * s.h
    }

    fn high_distance(&self, a: &ToyState, b: &ToyState) -> f64 {
        (a.h - b.h).abs()
    }

    fn observables(&self, s: &ToyState) -> [f64; 2] {
        [s.l, s.h]
    }
}

/// Galerkin truncation to |k| < `radius`; the low coordinates are the real
/// and imaginary parts of the forced modes, everything else is high and
/// unforced.
#[derive(Debug, Clone)]
pub struct GalerkinModel {
    cfg: SolverConfig,
    radius: f64,
    forced: Vec<[i32; 2]>,
    probe: [i32; 2],
    blocks: Vec<NoiseBlock>,
}

impl GalerkinModel {
    pub fn new(cfg: SolverConfig, radius: f64) -> Result<Self> {
        let stepper = Stepper::new(&cfg)?;
        let dt = cfg.dt();
        let mut forced = Vec::new();
        let mut blocks = Vec::new();
        for (k, a, b) in stepper.noise_loadings() {
            if norm_sq(k).sqrt() >= radius {
                return Err(Error::InvalidConfig(format!("forced mode {k:?} lies outside the truncation {radius}")));
            }
            let c00 = dt * (a.re * a.re + b.re * b.re);
            let c01 = dt * (a.re * a.im + b.re * b.im);
            let c11 = dt * (a.im * a.im + b.im * b.im);
            let l11 = c00.sqrt();
            let l21 = if l11 > 0.0 { c01 / l11 } else { 0.0 };
            let l22 = (c11 - l21 * l21).max(0.0).sqrt();
            let block = NoiseBlock::Pair([l11, l21, l22]);
            if block.is_degenerate() {
                return Err(Error::InvalidConfig(format!("noise on forced mode {k:?} is degenerate")));
            }
            forced.push(k);
            blocks.push(block);
        }
        let probe = cfg
            .grid()
            .active_half_modes()
            .into_iter()
            .filter(|k| norm_sq(*k).sqrt() < radius && !forced.contains(k))
            .min_by(|a, b| norm_sq(*a).total_cmp(&norm_sq(*b)))
            .ok_or_else(|| Error::InvalidConfig("no unforced modes inside the truncation".into()))?;
        Ok(GalerkinModel { cfg, radius, forced, probe, blocks })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn high(&self, w: &SpectralField) -> SpectralField {
        w.filter(|k| !self.forced.contains(&k) && !self.forced.contains(&[-k[0], -k[1]]))
    }
}

impl CouplingModel for GalerkinModel {
    type State = SpectralField;
    type Shared = ();
    type Workspace = Stepper;

    fn workspace(&self) -> Result<Stepper> {
        Stepper::new(&self.cfg)
    }

    fn dt(&self) -> f64 {
        self.cfg.dt()
    }

    fn noise(&self) -> &[NoiseBlock] {
        &self.blocks
    }

    fn draw_shared(&self, _: &mut ChaCha8Rng) {}

    fn predict(&self, ws: &mut Stepper, s: &SpectralField, _: &()) -> Result<(SpectralField, Vec<f64>)> {
        let mut w = s.clone();
        ws.deterministic_step(&mut w);
        truncate(&mut w, self.radius);
        if !w.is_finite() {
            return Err(Error::BlowUp { step: ws.steps_taken(), enstrophy: w.enstrophy() });
        }
        let mean = self.low(&w);
        Ok((w, mean))
    }

    fn set_low(&self, s: &mut SpectralField, low: &[f64]) {
        for (j, &k) in self.forced.iter().enumerate() {
            s.set_mode(k, Complex64::new(low[2 * j], low[2 * j + 1]));
        }
    }

    fn low(&self, s: &SpectralField) -> Vec<f64> {
        self.forced.iter().flat_map(|&k| [s.get(k).re, s.get(k).im]).collect()
    }

    fn lyapunov(&self, s: &SpectralField) -> f64 {
        s.energy()
    }

    fn high_distance(&self, a: &SpectralField, b: &SpectralField) -> f64 {
        self.high(&a.sub(b)).energy().sqrt()
    }

    fn observables(&self, s: &SpectralField) -> [f64; 2] {
        [s.get(self.forced[0]).re, s.get(self.probe).re / norm_sq(self.probe).sqrt()]
    }
}

fn draw_low<M: CouplingModel>(m: &M, mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = mean.to_vec();
    let mut i = 0;
    for b in m.noise() {
        let d = b.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        b.color(&z, &mut x[i..i + d]);
        i += d;
    }
    x
}

fn whitened_sq<M: CouplingModel>(m: &M, x: &[f64], mean: &[f64]) -> f64 {
    let mut i = 0;
    let mut s = 0.0;
    for b in m.noise() {
        let d = b.dim();
        let v: Vec<f64> = (0..d).map(|j| x[i + j] - mean[i + j]).collect();
        s += b.whitened_sq(&v);
        i += d;
    }
    s
}

/// One copy driven freely over a segment.
pub fn free_segment<M: CouplingModel>(
    m: &M,
    ws: &mut M::Workspace,
    s: &M::State,
    shared: &[M::Shared],
    rng: &mut ChaCha8Rng,
) -> Result<M::State> {
    let mut s = s.clone();
    for sh in shared {
        let (mut next, mean) = m.predict(ws, &s, sh)?;
        let x = draw_low(m, &mean, rng);
        m.set_low(&mut next, &x);
        s = next;
    }
    Ok(s)
}

struct Draw<S> {
    end_a: S,
    end_b: S,
    /// log(q_b/p_a) along the drawn low path.
    log_ratio: f64,
    in_b: bool,
}

/// Draw a low path from copy `a`'s law and drive copy `b` along it.
fn draw_along<M: CouplingModel>(
    m: &M,
    ws: &mut M::Workspace,
    a: &M::State,
    b: &M::State,
    shared: &[M::Shared],
    rng: &mut ChaCha8Rng,
    level: f64,
) -> Result<Draw<M::State>> {
    let mut sa = a.clone();
    let mut sb = b.clone();
    let mut log_ratio = 0.0;
    let mut in_b = m.lyapunov(a) + m.lyapunov(b) <= level;
    for sh in shared {
        let (mut na, ma) = m.predict(ws, &sa, sh)?;
        let (mut nb, mb) = m.predict(ws, &sb, sh)?;
        let x = draw_low(m, &ma, rng);
        log_ratio -= 0.5 * (whitened_sq(m, &x, &mb) - whitened_sq(m, &x, &ma));
        m.set_low(&mut na, &x);
        m.set_low(&mut nb, &x);
        sa = na;
        sb = nb;
        in_b &= m.lyapunov(&sa) + m.lyapunov(&sb) <= level;
    }
    Ok(Draw { end_a: sa, end_b: sb, log_ratio, in_b })
}

fn acceptance<S>(d: &Draw<S>) -> f64 {
    if d.in_b {
        d.log_ratio.min(0.0).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of unit segments.
    pub horizon: usize,
    pub steps_per_segment: usize,
    /// Small set 𝐂 = {V(u) + V(ũ) ≤ M₀}.
    pub m0: f64,
    /// Path set B: V(u) + V(ũ) ≤ `level` along the whole segment.
    pub level: f64,
    /// Extra draws per attempt for the meet-mass estimate ρ̂.
    pub rho_samples: usize,
    pub max_residual_tries: usize,
}

impl ChainConfig {
    pub fn new(horizon: usize, dt: f64, m0: f64, level: f64) -> Result<Self> {
        let steps = (1.0 / dt).round() as usize;
        if steps == 0 || ((steps as f64) * dt - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("dt = {dt} does not divide a unit segment")));
        }
        if !(m0 > 0.0 && level >= m0) {
            return Err(Error::InvalidConfig(format!("need 0 < M0 = {m0} <= level = {level}")));
        }
        Ok(ChainConfig { horizon, steps_per_segment: steps, m0, level, rho_samples: 8, max_residual_tries: 1_000_000 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub step: usize,
    pub segment_len: f64,
    /// Coupled at the end of the segment.
    pub coupled: bool,
    pub attempted: bool,
    /// Estimated meet mass of the two segment laws on B, for attempts.
    pub rho_hat: Option<f64>,
    /// Time at the start of the segment.
    pub t_n: f64,
    #[serde(rename = "V_pair")]
    pub v_pair: f64,
    pub high_distance: f64,
}

/// A maximal run of coupled segments: where it started, how many segments
/// succeeded, and whether the horizon cut it off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    pub start: usize,
    pub successes: usize,
    pub censored: bool,
}

#[derive(Debug, Clone)]
pub struct ChainRun<S> {
    pub records: Vec<SegmentRecord>,
    /// States at the segment boundaries, including t = 0.
    pub states: Vec<(S, S)>,
    pub runs: Vec<CouplingRun>,
    /// Start of the coupling run still alive at the horizon.
    pub tau: Option<usize>,
}

impl<S> ChainRun<S> {
    pub fn t_tau(&self) -> Option<f64> {
        self.tau.map(|n| n as f64)
    }
}

/// One replica of the paired chain.
pub fn run_coupling_chain<M: CouplingModel>(
    m: &M,
    cfg: &ChainConfig,
    u0: &M::State,
    v0: &M::State,
    seed: u64,
    replica: u64,
) -> Result<ChainRun<M::State>> {
    let mut ws = m.workspace()?;
    let mut rng = stream_rng(seed, replica, 0xc0);
    let (mut a, mut b) = (u0.clone(), v0.clone());
    let mut states = vec![(a.clone(), b.clone())];
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut runs = Vec::new();
    let mut current: Option<CouplingRun> = None;
    for n in 0..cfg.horizon {
        let v_pair = m.lyapunov(&a) + m.lyapunov(&b);
        let shared: Vec<M::Shared> = (0..cfg.steps_per_segment).map(|_| m.draw_shared(&mut rng)).collect();
        let attempt = current.is_some() || v_pair <= cfg.m0;
        let mut rho_hat = None;
        if attempt {
            let d = draw_along(m, &mut ws, &a, &b, &shared, &mut rng, cfg.level)?;
            let acc = acceptance(&d);
            let mut total = acc;
            for _ in 0..cfg.rho_samples {
                total += acceptance(&draw_along(m, &mut ws, &a, &b, &shared, &mut rng, cfg.level)?);
            }
            rho_hat = Some(total / (cfg.rho_samples + 1) as f64);
            if rng.random::<f64>() < acc {
                a = d.end_a;
                b = d.end_b;
                let run = current.get_or_insert(CouplingRun { start: n, successes: 0, censored: false });
                run.successes += 1;
            } else {
                let mut tries = 0;
                let b_end = loop {
                    if tries == cfg.max_residual_tries {
                        return Err(Error::InsufficientData(format!(
                            "residual sampler needed more than {tries} draws at segment {n}"
                        )));
                    }
                    tries += 1;
                    let y = draw_along(m, &mut ws, &b, &a, &shared, &mut rng, cfg.level)?;
                    if rng.random::<f64>() >= acceptance(&y) {
                        break y.end_a;
                    }
                };
                a = d.end_a;
                b = b_end;
                runs.push(current.take().unwrap_or(CouplingRun { start: n, successes: 0, censored: false }));
            }
        } else {
            a = free_segment(m, &mut ws, &a, &shared, &mut rng)?;
            b = free_segment(m, &mut ws, &b, &shared, &mut rng)?;
        }
        records.push(SegmentRecord {
            step: n,
            segment_len: 1.0,
            coupled: current.is_some(),
            attempted: attempt,
            rho_hat,
            t_n: n as f64,
            v_pair,
            high_distance: m.high_distance(&a, &b),
        });
        states.push((a.clone(), b.clone()));
    }
    let tau = current.map(|r| r.start);
    if let Some(mut r) = current {
        r.censored = true;
        runs.push(r);
    }
    Ok(ChainRun { records, states, runs, tau })
}

pub fn run_chain_ensemble<M: CouplingModel>(
    m: &M,
    cfg: &ChainConfig,
    u0: &M::State,
    v0: &M::State,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ChainRun<M::State>>> {
    (0..replicas as u64).into_par_iter().map(|r| run_coupling_chain(m, cfg, u0, v0, seed, r)).collect()
}

/// Free runs of one copy, states at the segment boundaries.
pub fn reference_ensemble<M: CouplingModel>(
    m: &M,
    s0: &M::State,
    segments: usize,
    steps_per_segment: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<M::State>>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut ws = m.workspace()?;
            let mut rng = stream_rng(seed, r, 0xc1);
            let mut s = s0.clone();
            let mut out = vec![s.clone()];
            for _ in 0..segments {
                let shared: Vec<M::Shared> = (0..steps_per_segment).map(|_| m.draw_shared(&mut rng)).collect();
                s = free_segment(m, &mut ws, &s, &shared, &mut rng)?;
                out.push(s.clone());
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoPoint {
    pub n: usize,
    pub estimate: f64,
    pub se: f64,
    pub at_risk: usize,
}

/// Kaplan–Meier estimate of ρ_n = P(a coupling run survives n segments).
pub fn rho_survival(runs: &[CouplingRun], n_max: usize) -> Vec<RhoPoint> {
    let mut out = vec![RhoPoint { n: 0, estimate: 1.0, se: 0.0, at_risk: runs.len() }];
    let mut s = 1.0;
    let mut greenwood = 0.0;
    for n in 1..=n_max {
        let at_risk = runs.iter().filter(|r| r.successes >= n || (r.successes == n - 1 && !r.censored)).count();
        let failed = runs.iter().filter(|r| r.successes == n - 1 && !r.censored).count();
        if at_risk == 0 {
            break;
        }
        s *= 1.0 - failed as f64 / at_risk as f64;
        if at_risk > failed {
            greenwood += failed as f64 / (at_risk as f64 * (at_risk - failed) as f64);
        }
        out.push(RhoPoint { n, estimate: s, se: s * greenwood.sqrt(), at_risk });
    }
    out
}

/// ρ̂_{n+1} ≤ ρ̂_n + 3 SE for every n.
pub fn rho_nonincreasing(points: &[RhoPoint]) -> bool {
    points.windows(2).all(|w| w[1].estimate <= w[0].estimate + 3.0 * w[1].se.max(w[0].se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// (n, P{T > n}).
    pub tail: Vec<(usize, f64)>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
}

/// Empirical P{T > n} for n = 0..=n_max, with `None` meaning T beyond every n,
/// and a fit of log P over n_min..=n_max where P is positive.
pub fn tail_fit(times: &[Option<usize>], n_min: usize, n_max: usize) -> TailFit {
    let total = times.len().max(1) as f64;
    let tail: Vec<(usize, f64)> =
        (0..=n_max).map(|n| (n, times.iter().filter(|t| t.map_or(true, |t| t > n)).count() as f64 / total)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) =
        tail.iter().filter(|(n, p)| *n >= n_min && *p > 0.0).map(|(n, p)| (*n as f64, p.ln())).unzip();
    let fit = linear_fit(&x, &y);
    TailFit {
        tail,
        slope: fit.as_ref().map(|f| f.slope),
        intercept: fit.as_ref().map(|f| f.intercept),
        r2: fit.as_ref().map(|f| f.r2),
    }
}

/// Tail of the time t_τ at which the final coupling run started.
pub fn coupling_time_tail<S>(runs: &[ChainRun<S>], n_min: usize, n_max: usize) -> TailFit {
    tail_fit(&runs.iter().map(|r| r.tau).collect::<Vec<_>>(), n_min, n_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTest {
    pub label: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub tests: Vec<MarginalTest>,
    /// Bonferroni level α/m.
    pub level: f64,
    pub pass: bool,
}

/// Two-sample KS tests of both copies' observables at each `times` against
/// free runs of each copy alone.
pub fn marginal_preservation<M: CouplingModel>(
    m: &M,
    chain: &[ChainRun<M::State>],
    cfg: &ChainConfig,
    u0: &M::State,
    v0: &M::State,
    times: &[usize],
    seed: u64,
    alpha: f64,
) -> Result<MarginalReport> {
    let horizon = times.iter().copied().max().unwrap_or(0);
    if chain.iter().any(|r| r.states.len() <= horizon) {
        return Err(Error::InsufficientData(format!("chain shorter than time {horizon}")));
    }
    let refs =
        [reference_ensemble(m, u0, horizon, cfg.steps_per_segment, chain.len(), seed)?, reference_ensemble(m, v0, horizon, cfg.steps_per_segment, chain.len(), seed ^ 0x9e37_79b9)?];
    let mut tests = Vec::new();
    for &t in times {
        for (copy, reference) in refs.iter().enumerate() {
            for coord in 0..2 {
                let a: Vec<f64> = chain
                    .iter()
                    .map(|r| m.observables(if copy == 0 { &r.states[t].0 } else { &r.states[t].1 })[coord])
                    .collect();
                let b: Vec<f64> = reference.iter().map(|r| m.observables(&r[t])[coord])
                    .collect();
                let (d, p) = ks_two_sample(&a, &b);
                tests.push(MarginalTest { label: format!("t={t} copy={copy} coord={coord}"), statistic: d, p_value: p });
            }
        }
    }
    let level = alpha / tests.len().max(1) as f64;
    let pass = tests.iter().all(|t| t.p_value > level);
    Ok(MarginalReport { tests, level, pass })
}

/// Slope of log‖Π_h u - Π_h ũ‖ against time since the coupling started,
/// pooled over runs that stayed coupled for at least `min_len` segments.
pub fn coupled_high_decay<S>(chain: &[ChainRun<S>], min_len: usize) -> Option<(f64, f64)> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for c in chain {
        for run in c.runs.iter().filter(|r| r.successes >= min_len) {
            let d0 = c.records[run.start].high_distance;
            if !(d0 > 0.0) {
                continue;
            }
            for j in 1..run.successes {
                let d = c.records[run.start + j].high_distance;
                if d > 0.0 && d > 1e-12 * d0 {
                    x.push(j as f64);
                    y.push((d / d0).ln());
                }
            }
        }
    }
    linear_fit(&x, &y).map(|f| (f.slope, f.r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    /// α̂ in E[V(n+1) | V(n)] ≈ α̂V(n) + 2C₁.
    pub alpha: f64,
    pub c1: f64,
    pub r2: f64,
    /// M₀ = 4C₁/α̂.
    pub m0: f64,
}

/// Regress the pair Lyapunov function one unit ahead on its current value,
/// over free pair runs from (u0, v0).
pub fn estimate_drift<M: CouplingModel>(
    m: &M,
    u0: &M::State,
    v0: &M::State,
    steps_per_segment: usize,
    segments: usize,
    replicas: usize,
    seed: u64,
) -> Result<DriftFit> {
    let a = reference_ensemble(m, u0, segments, steps_per_segment, replicas, seed)?;
    let b = reference_ensemble(m, v0, segments, steps_per_segment, replicas, seed ^ 0x5bd1_e995)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (ra, rb) in a.iter().zip(&b) {
        for n in 0..segments {
            x.push(m.lyapunov(&ra[n]) + m.lyapunov(&rb[n]));
            y.push(m.lyapunov(&ra[n + 1]) + m.lyapunov(&rb[n + 1]));
        }
    }
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate drift regression".into()))?;
    if !(fit.slope > 0.0 && fit.slope < 1.0) {
        return Err(Error::InsufficientData(format!("fitted alpha {} is outside (0, 1)", fit.slope)));
    }
    let c1 = (fit.intercept / 2.0).max(f64::MIN_POSITIVE);
    Ok(DriftFit { alpha: fit.slope, c1, r2: fit.r2, m0: 4.0 * c1 / fit.slope })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeReport {
    pub m0: f64,
    pub v0: f64,
    /// First unit time with V(u) + V(ũ) ≤ M₀, if reached.
    pub times: Vec<Option<usize>>,
    pub fit: TailFit,
}

/// Return times to 𝐂 for free pairs started at (u0, v0).
pub fn return_time_tail<M: CouplingModel>(
    m: &M,
    u0: &M::State,
    v0: &M::State,
    m0: f64,
    steps_per_segment: usize,
    max_segments: usize,
    replicas: usize,
    seed: u64,
) -> Result<ReturnTimeReport> {
    let a = reference_ensemble(m, u0, max_segments, steps_per_segment, replicas, seed)?;
    let b = reference_ensemble(m, v0, max_segments, steps_per_segment, replicas, seed ^ 0x5bd1_e995)?;
    let times: Vec<Option<usize>> = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| (0..=max_segments).find(|&n| m.lyapunov(&ra[n]) + m.lyapunov(&rb[n]) <= m0))
        .collect();
    let fit = tail_fit(&times, 0, max_segments);
    Ok(ReturnTimeReport { m0, v0: m.lyapunov(u0) + m.lyapunov(v0), times, fit })
}

/// φ(x, y) = cos(a x + b y + phase) with |b| ≤ 1: bounded by one and
/// 1-Lipschitz in the high coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub a: f64,
    pub b: f64,
    pub phase: f64,
}

impl TestFunction {
    pub fn new(a: f64, b: f64, phase: f64) -> Result<Self> {
        if !(b.abs() <= 1.0) {
            return Err(Error::InvalidConfig(format!("|b| = {} exceeds the Lipschitz bound 1", b.abs())));
        }
        Ok(TestFunction { a, b, phase })
    }

    pub fn eval(&self, o: [f64; 2]) -> f64 {
        (self.a * o[0] + self.b * o[1] + self.phase).cos()
    }
}

pub fn default_dictionary() -> Vec<TestFunction> {
    let mut out = Vec::new();
    for a in [0.5, 1.0, 2.0] {
        for b in [0.0, 0.5, 1.0] {
            for phase in [0.0, FRAC_PI_2] {
                out.push(TestFunction { a, b, phase });
            }
        }
    }
    out.push(TestFunction { a: 0.0, b: 1.0, phase: 0.0 });
    out.push(TestFunction { a: 0.0, b: 1.0, phase: FRAC_PI_2 });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCurve {
    pub times: Vec<usize>,
    /// max over the dictionary of |E φ(u_t) - E φ(ũ_t)|, a lower bound on the dual norm.
    pub distance: Vec<f64>,
    pub se: Vec<f64>,
    pub rate: Option<f64>,
    pub r2: Option<f64>,
    pub warning: String,
}

/// Distances between the two copies' laws, estimated from chain pairs, and
/// a log-linear fit over the times where the distance exceeds three standard errors.
pub fn mixing_distance_curve<M: CouplingModel>(m: &M, chain: &[ChainRun<M::State>], dictionary: &[TestFunction]) -> Result<MixingCurve> {
    let horizon = chain.iter().map(|r| r.states.len()).min().ok_or_else(|| Error::InsufficientData("empty chain".into()))?;
    let n = chain.len() as f64;
    let (mut distance, mut se) = (Vec::new(), Vec::new());
    for t in 0..horizon {
        let mut best = (0.0, 0.0);
        for f in dictionary {
            let diffs: Vec<f64> =
                chain.iter().map(|r| f.eval(m.observables(&r.states[t].0)) - f.eval(m.observables(&r.states[t].1))).collect();
            let mean = diffs.iter().sum::<f64>() / n;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            if mean.abs() > best.0 {
                best = (mean.abs(), (var / n).sqrt());
            }
        }
        distance.push(best.0);
        se.push(best.1);
    }
    let times: Vec<usize> = (0..horizon).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(distance.iter().zip(&se))
        .filter(|(_, (d, s))| **d > 3.0 * **s && **d > 0.0)
        .map(|(t, (d, _))| (*t as f64, d.ln()))
        .unzip();
    let fit = linear_fit(&x, &y);
    Ok(MixingCurve {
        times,
        distance,
        se,
        rate: fit.as_ref().map(|f| f.slope),
        r2: fit.as_ref().map(|f| f.r2),
        warning: "the supremum over a finite dictionary is a lower bound on the dual norm".into(),
    })
}

/// Random probability-measure pairs on `atoms` shared points, for identity checks.
pub fn random_fixture(seed: u64, index: u64, atoms: usize, equivalent: bool) -> (EmpiricalMeasure, EmpiricalMeasure) {
    let mut rng = stream_rng(seed, index, 0xf1);
    let draw = |rng: &mut ChaCha8Rng| {
        let w: Vec<f64> = (0..atoms)
            .map(|_| if equivalent || rng.random::<f64>() < 0.7 { rng.random::<f64>() + 1e-3 } else { 0.0 })
            .collect();
        let total: f64 = w.iter().sum();
        let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
        let pts: Vec<(Vec<f64>, f64)> =
            w.into_iter().enumerate().map(|(i, w)| (vec![(i as f64 * 0.37).sin() * TAU, i as f64], w * scale)).collect();
        EmpiricalMeasure::from_atoms(1e-9, pts).expect("valid fixture")
    };
    let a = draw(&mut rng);
    let b = draw(&mut rng);
    (a, b)
}

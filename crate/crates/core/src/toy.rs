//! A two-dimensional model with the structure of the low/high mode split:
//!
//! dh = (-ν₁h + F₁(ℓ,h)) dt + σ₁ dη,
//! dℓ = (-ν₂ℓ + F₂(ℓ,h)) dt + σ₂ dξ.
//!
//! When F₁ is L₁-Lipschitz in h and ν₁ > L₁, the h-equation driven by a
//! given ℓ path forgets its initial condition at rate ν₁ - L₁, so h is a
//! functional of the past of ℓ. Changing h₀ changes the drift of ℓ, and the
//! Girsanov density between the two ℓ laws is controlled by the Novikov
//! quantity ½∫|F₂(ℓ,h) - F₂(ℓ,h̃)|²/σ₂² dt.
//!
//! The scheme is
//!
//! h' = e^{-ν₁dt}(h + dt F₁(ℓ,h) + σ₁ dη),  ℓ' = e^{-ν₂dt}(ℓ + dt F₂(ℓ,h) + σ₂ dξ),
//!
//! for which |h' - h̃'| <= e^{-(ν₁-L₁)dt}|h - h̃| holds exactly, and for which
//! the left-point stochastic exponent is the exact likelihood ratio of the
//! discrete ℓ chains.
//!
//! ```
//! use sns_lab::toy::{ToyConfig, contraction_rate, simulate_toy, ToyState};
//!
//! let cfg = ToyConfig::default_model(2.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
//! let path = simulate_toy(&cfg, ToyState::new(0.0, 0.0), 0.01, 1000, 7, 0);
//! let fit = contraction_rate(&cfg, &path.l, &path.deta, 1.0, -1.0, 0.01).unwrap();
//! assert!(fit.slope <= -(2.0 - 1.0) * 0.95);
//! ```

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stats::{linear_fit, Estimate};

/// Nonlinearity `(ℓ, h) -> F(ℓ, h)`.
pub type Drift = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Constants of the default nonlinearities
/// F₁ = a sin(h) + b cos(ℓ), F₂ = c tanh(h) cos(ℓ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub nu1: f64,
    pub nu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams { nu1: 2.0, nu2: 1.0, sigma1: 1.0, sigma2: 1.0, a: 1.0, b: 0.5, c: 1.0 }
    }
}

#[derive(Clone)]
pub struct ToyConfig {
    pub nu1: f64,
    pub nu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub f1: Drift,
    pub f2: Drift,
    /// Lipschitz constant of F₁ in h.
    pub l1: f64,
    /// Lipschitz constant of F₂ in h.
    pub l2: f64,
    /// Bound on |F₁| + |F₂|.
    pub k_bound: f64,
}

impl std::fmt::Debug for ToyConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyConfig")
            .field("nu1", &self.nu1)
            .field("nu2", &self.nu2)
            .field("sigma1", &self.sigma1)
            .field("sigma2", &self.sigma2)
            .field("l1", &self.l1)
            .field("l2", &self.l2)
            .field("k_bound", &self.k_bound)
            .finish()
    }
}

impl ToyConfig {
    /// Default nonlinearities with L₁ = |a|, L₂ = |c|, K = |a| + |b| + |c|.
    pub fn default_model(nu1: f64, nu2: f64, sigma1: f64, sigma2: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        Self::custom(
            nu1,
            nu2,
            sigma1,
            sigma2,
            Arc::new(move |l: f64, h: f64| a * h.sin() + b * l.cos()),
            Arc::new(move |l: f64, h: f64| c * h.tanh() * l.cos()),
            a.abs(),
            c.abs(),
            a.abs() + b.abs() + c.abs(),
        )
    }

    pub fn from_params(p: &ToyParams) -> Result<Self> {
        Self::default_model(p.nu1, p.nu2, p.sigma1, p.sigma2, p.a, p.b, p.c)
    }

    /// Arbitrary nonlinearities. The declared bound K is checked on a grid of
    /// sample points.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        nu1: f64,
        nu2: f64,
        sigma1: f64,
        sigma2: f64,
        f1: Drift,
        f2: Drift,
        l1: f64,
        l2: f64,
        k_bound: f64,
    ) -> Result<Self> {
        if !(nu1 > 0.0 && nu2 > 0.0) {
            return Err(Error::InvalidConfig("viscosities must be positive".into()));
        }
        if !(nu1 > l1) {
            return Err(Error::InvalidConfig(format!("contraction needs nu1 > L1, got {nu1} <= {l1}")));
        }
        if !(sigma2 > 0.0) || !(sigma1 >= 0.0) {
            return Err(Error::InvalidConfig("need sigma2 > 0 and sigma1 >= 0".into()));
        }
        for i in -40..=40 {
            for j in -40..=40 {
                let (l, h) = (i as f64 * 0.37, j as f64 * 0.41);
                let s = f1(l, h).abs() + f2(l, h).abs();
                if s > k_bound * (1.0 + 1e-12) {
                    return Err(Error::InvalidConfig(format!(
                        "|F1| + |F2| = {s} exceeds the declared bound {k_bound} at ({l}, {h})"
                    )));
                }
            }
        }
        Ok(ToyConfig { nu1, nu2, sigma1, sigma2, f1, f2, l1, l2, k_bound })
    }

    /// Same system with F₁ replaced by zero.
    pub fn without_f1(&self) -> Self {
        let f2 = self.f2.clone();
        let mut c = self.clone();
        c.f1 = Arc::new(|_, _| 0.0);
        c.f2 = f2;
        c.l1 = 0.0;
        c
    }

    /// Contraction rate ν₁ - L₁ of the h-equation.
    pub fn contraction(&self) -> f64 {
        self.nu1 - self.l1
    }

    /// Bound D* = exp(L₂²|Δh₀|² / (4σ₂²(ν₁-L₁))) on exp of the Novikov quantity.
    pub fn novikov_bound(&self, dh0: f64) -> f64 {
        (self.l2 * self.l2 * dh0 * dh0 / (4.0 * self.sigma2 * self.sigma2 * self.contraction())).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyState {
    pub l: f64,
    pub h: f64,
    pub t: f64,
}

impl ToyState {
    pub fn new(l: f64, h: f64) -> Self {
        ToyState { l, h, t: 0.0 }
    }
}

/// One step with Brownian increments `dxi` (ℓ) and `deta` (h).
pub fn step_toy(s: ToyState, cfg: &ToyConfig, dxi: f64, deta: f64, dt: f64) -> ToyState {
    ToyState {
        l: step_l(s.l, s.h, cfg, dxi, dt),
        h: step_h(s.l, s.h, cfg, deta, dt),
        t: s.t + dt,
    }
}

#[inline]
pub fn step_h(l: f64, h: f64, cfg: &ToyConfig, deta: f64, dt: f64) -> f64 {
    (-cfg.nu1 * dt).exp() * (h + dt * (cfg.f1)(l, h) + cfg.sigma1 * deta)
}

#[inline]
pub fn step_l(l: f64, h: f64, cfg: &ToyConfig, dxi: f64, dt: f64) -> f64 {
    (-cfg.nu2 * dt).exp() * (l + dt * (cfg.f2)(l, h) + cfg.sigma2 * dxi)
}

/// Sampled path with the Brownian increments that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPath {
    pub dt: f64,
    pub l: Vec<f64>,
    pub h: Vec<f64>,
    pub dxi: Vec<f64>,
    pub deta: Vec<f64>,
}

/// Simulate `steps` steps with noise from stream `(seed, path)`.
pub fn simulate_toy(cfg: &ToyConfig, s0: ToyState, dt: f64, steps: usize, seed: u64, path: u64) -> ToyPath {
    let mut rng = stream_rng(seed, path, 0x70);
    let sq = dt.sqrt();
    let mut out = ToyPath {
        dt,
        l: Vec::with_capacity(steps + 1),
        h: Vec::with_capacity(steps + 1),
        dxi: Vec::with_capacity(steps),
        deta: Vec::with_capacity(steps),
    };
    let mut s = s0;
    out.l.push(s.l);
    out.h.push(s.h);
    for _ in 0..steps {
        let dxi = sq * rng.sample::<f64, _>(StandardNormal);
        let deta = sq * rng.sample::<f64, _>(StandardNormal);
        s = step_toy(s, cfg, dxi, deta, dt);
        out.l.push(s.l);
        out.h.push(s.h);
        out.dxi.push(dxi);
        out.deta.push(deta);
    }
    out
}

/// Φ: the h-trajectory driven by a given ℓ path and η increments.
pub fn solve_h(cfg: &ToyConfig, l: &[f64], deta: &[f64], h0: f64, dt: f64) -> Result<Vec<f64>> {
    if l.len() < deta.len() {
        return Err(Error::TimeGridMismatch(format!("{} ℓ samples for {} increments", l.len(), deta.len())));
    }
    let mut h = Vec::with_capacity(deta.len() + 1);
    h.push(h0);
    let mut cur = h0;
    for (i, &e) in deta.iter().enumerate() {
        cur = step_h(l[i], cur, cfg, e, dt);
        h.push(cur);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionFit {
    pub slope: f64,
    pub r2: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

/// Least-squares slope of log|h - h̃| against time for two h solutions
/// sharing (ℓ, η). Errors when h₀ = h̃₀, where no rate exists.
pub fn contraction_rate(cfg: &ToyConfig, l: &[f64], deta: &[f64], h0: f64, h0_alt: f64, dt: f64) -> Result<ContractionFit> {
    if h0 == h0_alt {
        return Err(Error::InsufficientData("identical initial conditions have distance 0 and no rate".into()));
    }
    let a = solve_h(cfg, l, deta, h0, dt)?;
    let b = solve_h(cfg, l, deta, h0_alt, dt)?;
    let mut times = Vec::new();
    let mut distances = Vec::new();
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        let d = (x - y).abs();
        if d < 1e-280 {
            break;
        }
        times.push(i as f64 * dt);
        distances.push(d);
    }
    let logs: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let fit = linear_fit(&times, &logs).ok_or_else(|| Error::InsufficientData("too few points to fit".into()))?;
    Ok(ContractionFit { slope: fit.slope, r2: fit.r2, times, distances })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryValue {
    /// Φ_{s,0}(ℓ; h₀).
    pub value: f64,
    /// e^{-(ν₁-L₁)|s|}: the value moves by at most this times |h₀ - h̃₀|.
    pub sensitivity: f64,
    pub warning: Option<String>,
}

/// Φ^η_{s,0}(ℓ_{[s,0]}; h₀) with ℓ sampled on [s, 0] and η increments on
/// each step, so `|s| = deta.len() · dt`. When `tolerance` and an initial
/// spread are given, warns if |s| is too short to certify the tolerance.
pub fn memory_functional(
    cfg: &ToyConfig,
    l: &[f64],
    deta: &[f64],
    h0: f64,
    dt: f64,
    tolerance: Option<(f64, f64)>,
) -> Result<MemoryValue> {
    let h = solve_h(cfg, l, deta, h0, dt)?;
    let span = deta.len() as f64 * dt;
    let sensitivity = (-cfg.contraction() * span).exp();
    let warning = tolerance.and_then(|(tol, spread)| {
        let need = required_horizon(cfg, tol, spread);
        (span < need).then(|| format!("|s| = {span} is shorter than the {need:.3} needed for tolerance {tol:e}"))
    });
    Ok(MemoryValue { value: *h.last().unwrap(), sensitivity, warning })
}

/// Smallest |s| with spread · e^{-(ν₁-L₁)|s|} <= tol.
pub fn required_horizon(cfg: &ToyConfig, tol: f64, spread: f64) -> f64 {
    ((spread / tol).ln() / cfg.contraction()).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticExponent {
    /// E = exp(Σ D dW/σ - ½ Σ D² dt/σ²).
    pub value: f64,
    pub log_value: f64,
    /// ½ Σ D² dt / σ².
    pub novikov: f64,
}

/// Left-point discretization of the stochastic exponent for drift
/// difference `d[i]` on step i, diffusion `sigma` and increments `dw`.
pub fn stochastic_exponent(d: &[f64], sigma: f64, dw: &[f64], dt: f64) -> Result<StochasticExponent> {
    if d.len() != dw.len() {
        return Err(Error::TimeGridMismatch(format!("{} drift samples for {} increments", d.len(), dw.len())));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("diffusion coefficient must be positive".into()));
    }
    let mut ito = 0.0;
    let mut quad = 0.0;
    for (x, w) in d.iter().zip(dw) {
        ito += x * w / sigma;
        quad += x * x * dt / (sigma * sigma);
    }
    let log_value = ito - 0.5 * quad;
    Ok(StochasticExponent { value: log_value.exp(), log_value, novikov: 0.5 * quad })
}

/// One path of the Girsanov pairing: ℓ is simulated with drift through
/// h = Φ(ℓ; h₀); the alternative drift uses h̃ = Φ(ℓ; h̃₀) with the same η.
/// Returns the density of the alternative ℓ law against the simulated one.
pub fn girsanov_pair(cfg: &ToyConfig, l0: f64, h0: f64, h0_alt: f64, dt: f64, steps: usize, seed: u64, path: u64) -> StochasticExponent {
    let mut rng = stream_rng(seed, path, 0x61);
    let sq = dt.sqrt();
    let (mut l, mut h, mut g) = (l0, h0, h0_alt);
    let (el, eh) = ((-cfg.nu2 * dt).exp(), (-cfg.nu1 * dt).exp());
    let (mut ito, mut quad) = (0.0, 0.0);
    let s2 = cfg.sigma2;
    for _ in 0..steps {
        let dxi = sq * rng.sample::<f64, _>(StandardNormal);
        let deta = sq * rng.sample::<f64, _>(StandardNormal);
        let f = (cfg.f2)(l, h);
        let d = (cfg.f2)(l, g) - f;
        ito += d * dxi / s2;
        quad += d * d * dt / (s2 * s2);
        let nl = el * (l + dt * f + s2 * dxi);
        h = eh * (h + dt * (cfg.f1)(l, h) + cfg.sigma1 * deta);
        g = eh * (g + dt * (cfg.f1)(l, g) + cfg.sigma1 * deta);
        l = nl;
    }
    let log_value = ito - 0.5 * quad;
    StochasticExponent { value: log_value.exp(), log_value, novikov: 0.5 * quad }
}

/// Ensemble of [`girsanov_pair`] draws, in path order.
pub fn girsanov_ensemble(
    cfg: &ToyConfig,
    l0: f64,
    h0: f64,
    h0_alt: f64,
    dt: f64,
    steps: usize,
    seed: u64,
    paths: usize,
) -> Vec<StochasticExponent> {
    (0..paths as u64)
        .into_par_iter()
        .map(|p| girsanov_pair(cfg, l0, h0, h0_alt, dt, steps, seed, p))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub p: f64,
    pub estimate: Estimate,
    /// D* used in the bound, exp of the Novikov bound.
    pub d_star: f64,
    pub bound: f64,
    pub max_novikov_exp: f64,
    /// True when some path exceeded log D*, which signals misconfiguration.
    pub integrand_violation: bool,
    pub pass: bool,
}

/// Monte Carlo E[E^p] against the bound D*^{p(p-1)}, where D* is the
/// Novikov bound of the pairing.
pub fn rn_moment_bound_check(samples: &[StochasticExponent], p: f64, d_star: f64) -> MomentCheck {
    let powers: Vec<f64> = samples.iter().map(|s| (p * s.log_value).exp()).collect();
    let estimate = Estimate::of(&powers);
    let bound = d_star.powf(p * (p - 1.0));
    let max_nov = samples.iter().map(|s| s.novikov).fold(f64::NEG_INFINITY, f64::max).exp();
    let integrand_violation = max_nov > d_star * (1.0 + 1e-6);
    let pass = !integrand_violation && estimate.mean <= bound + 3.0 * estimate.se;
    MomentCheck { p, estimate, d_star, bound, max_novikov_exp: max_nov, integrand_violation, pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ToyConfig {
        ToyConfig::from_params(&ToyParams::default()).unwrap()
    }

    #[test]
    fn rejects_non_contractive() {
        assert!(ToyConfig::default_model(1.0, 1.0, 1.0, 1.0, 1.5, 0.0, 1.0).is_err());
        assert!(ToyConfig::default_model(2.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn declared_bound_is_checked() {
        let r = ToyConfig::custom(2.0, 1.0, 1.0, 1.0, Arc::new(|_, h| h), Arc::new(|_, _| 0.0), 1.0, 0.0, 5.0);
        assert!(r.is_err());
    }

    #[test]
    fn linear_decay_without_forcing() {
        let c = ToyConfig::default_model(2.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let mut s = ToyState::new(1.0, 1.0);
        for _ in 0..100 {
            s = step_toy(s, &c, 0.0, 0.0, 0.01);
        }
        assert!((s.h - (-2.0f64).exp()).abs() < 1e-14);
        assert!((s.l - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn degenerate_contraction_is_flagged() {
        let c = cfg();
        assert!(contraction_rate(&c, &[0.0; 3], &[0.0; 2], 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn zero_drift_difference_gives_unit_exponent() {
        let e = stochastic_exponent(&[0.0; 5], 1.0, &[0.3, -0.1, 0.2, 0.0, 1.0], 0.01).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.novikov, 0.0);
    }

    #[test]
    fn memory_functional_zero_input() {
        let c = ToyConfig::default_model(2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0).unwrap();
        let n = 1000;
        let v = memory_functional(&c, &vec![0.0; n + 1], &vec![0.0; n], 3.0, 0.01, None).unwrap();
        assert!((v.value - 3.0 * (-2.0 * 10.0f64).exp()).abs() < 1e-20);
        let w = memory_functional(&c, &vec![0.0; n + 1], &vec![0.0; n], 3.0, 0.01, Some((1e-12, 1.0))).unwrap();
        assert!(w.warning.is_some());
    }
}

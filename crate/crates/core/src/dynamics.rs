//! Time integrators: full vorticity dynamics, the OU reference process,
//! Galerkin truncations and the high-mode equation with pinned low modes.
//!
//! All steppers use the stochastic exponential-Euler scheme
//!
//! ω_k(t+dt) = e^{-ν|k|²dt} (ω_k + dt N_k(ω)) + ∫ e^{-ν|k|²(t+dt-s)} dW_k(s),
//!
//! where the stochastic convolution is sampled exactly, so with the
//! nonlinearity switched off the scheme reproduces the OU process exactly.
//! The viscous part imposes no step-size limit; the explicit nonlinear part
//! needs `dt · max|u| · m < 1` with `m` the largest retained index.
//!
//! ```
//! use sns_lab::dynamics::{SolverConfig, Stepper};
//! use sns_lab::forcing::{ForcingSpec, NoiseStream, sample_increment};
//! use sns_lab::spectral::{SpectralField, WaveGrid};
//!
//! let grid = WaveGrid::new(16).unwrap();
//! let forcing = ForcingSpec::complex(&[[1.0, 0.0, 0.5, 0.0], [1.0, 1.0, 0.5, 0.0]]).unwrap();
//! let cfg = SolverConfig::new(1.0, 0.01, grid, forcing).unwrap();
//! let mut stepper = Stepper::new(&cfg).unwrap();
//! let mut w = SpectralField::zeros(grid);
//! let stream = NoiseStream::new(42, 0);
//! for step in 0..100 {
//!     let dw = sample_increment(cfg.forcing(), cfg.dt(), stream, step).unwrap();
//!     stepper.step_sns(&mut w, &dw).unwrap();
//! }
//! assert!(w.enstrophy() > 0.0);
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{sample_increment, ForcingSpec, NoiseIncrement, NoiseStream};
use crate::spectral::{norm_sq, NonlinearEvaluator, SpectralField, WaveGrid};

/// Enstrophy above which a trajectory is aborted.
pub const BLOW_UP_ENSTROPHY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExponentialEuler,
}

/// Switches for individual terms, used by tests to isolate parts of the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub nonlinear: bool,
    pub viscous: bool,
    pub noise: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Terms { nonlinear: true, viscous: true, noise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    nu: f64,
    dt: f64,
    grid: WaveGrid,
    forcing: ForcingSpec,
    #[serde(default)]
    scheme: Scheme,
    #[serde(default)]
    terms: Terms,
}

impl SolverConfig {
    pub fn new(nu: f64, dt: f64, grid: WaveGrid, forcing: ForcingSpec) -> Result<Self> {
        let cfg = SolverConfig { nu, dt, grid, forcing, scheme: Scheme::ExponentialEuler, terms: Terms::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("viscosity {} must be positive", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("time step {} must be positive", self.dt)));
        }
        for m in self.forcing.modes() {
            if !self.grid.is_active(m.k) {
                return Err(Error::InvalidConfig(format!(
                    "forced mode {:?} lies outside the dealiased range of the grid",
                    m.k
                )));
            }
        }
        Ok(())
    }

    pub fn with_terms(mut self, terms: Terms) -> Self {
        self.terms = terms;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        self.nu = nu;
        self.validate()?;
        Ok(self)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    pub fn forcing(&self) -> &ForcingSpec {
        &self.forcing
    }

    pub fn terms(&self) -> Terms {
        self.terms
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    fn rate(&self, k: [i32; 2]) -> f64 {
        if self.terms.viscous {
            self.nu * norm_sq(k)
        } else {
            0.0
        }
    }

    /// Ratio between the exact stochastic-convolution standard deviation
    /// over `dt` and that of a plain Brownian increment, for decay rate `lambda`.
    fn convolution_factor(lambda: f64, dt: f64) -> f64 {
        if lambda == 0.0 {
            1.0
        } else {
            (-(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda * dt)).sqrt()
        }
    }

    /// Combine two consecutive increments at step `dt` into the exactly
    /// equivalent single increment at step `2 dt`, so that runs at `dt` and
    /// `2 dt` see the same Brownian path.
    pub fn coarsen(&self, first: &NoiseIncrement, second: &NoiseIncrement) -> NoiseIncrement {
        let h = self.dt;
        let xi = self
            .forcing
            .modes()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let lam = self.rate(m.k);
                let qh = Self::convolution_factor(lam, h) * h.sqrt();
                let q2 = Self::convolution_factor(lam, 2.0 * h) * (2.0 * h).sqrt();
                let e = (-lam * h).exp();
                let mix = |c: usize| (e * qh * first.xi[i][c] + qh * second.xi[i][c]) / q2;
                [mix(0), mix(1)]
            })
            .collect();
        NoiseIncrement { dt: 2.0 * h, xi, stream: None, step: first.step / 2 }
    }

    /// Stationary variance E|z_k|² of the OU process, |σ_k|²/(2ν) with σ_k the velocity amplitude.
    pub fn ou_stationary_variance(&self, k: [i32; 2]) -> f64 {
        self.forcing.velocity_variance(k) / (2.0 * self.nu)
    }
}

/// Precomputed factors and buffers for repeated stepping under one config.
pub struct Stepper {
    cfg: SolverConfig,
    eval: NonlinearEvaluator,
    decay: Vec<f64>,
    noise: Vec<NoiseSlot>,
    nl: SpectralField,
    steps: u64,
}

struct NoiseSlot {
    upper: usize,
    lower: usize,
    k: [i32; 2],
    a: Complex64,
    b: Complex64,
}

impl Stepper {
    pub fn new(cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        let decay = (0..grid.len()).map(|i| (-cfg.rate(grid.wavenumber(i)) * cfg.dt).exp()).collect();
        let noise = cfg
            .forcing
            .modes()
            .iter()
            .map(|m| {
                let q = SolverConfig::convolution_factor(cfg.rate(m.k), cfg.dt);
                NoiseSlot {
                    upper: grid.index(m.k),
                    lower: grid.index([-m.k[0], -m.k[1]]),
                    k: m.k,
                    a: m.a * q,
                    b: m.b * q,
                }
            })
            .collect();
        Ok(Stepper {
            cfg: cfg.clone(),
            eval: NonlinearEvaluator::new(grid)?,
            decay,
            noise,
            nl: SpectralField::zeros(grid),
            steps: 0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Steps taken by this stepper, used in blow-up diagnostics.
    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    fn add_noise(&self, w: &mut SpectralField, dw: &NoiseIncrement, pick: &dyn Fn([i32; 2]) -> bool) {
        if !self.cfg.terms.noise {
            return;
        }
        let c = w.coeffs_mut();
        for (i, slot) in self.noise.iter().enumerate() {
            if !pick(slot.k) {
                continue;
            }
            let [w1, w2] = dw.brownian(i);
            let inc = slot.a * w1 + slot.b * w2;
            c[slot.upper] += inc;
            c[slot.lower] += inc.conj();
        }
    }

    fn check_increment(&self, dw: &NoiseIncrement) -> Result<()> {
        if dw.xi.len() != self.noise.len() {
            return Err(Error::InvalidConfig(format!(
                "increment has {} modes, forcing has {}",
                dw.xi.len(),
                self.noise.len()
            )));
        }
        if (dw.dt - self.cfg.dt).abs() > 1e-12 * self.cfg.dt {
            return Err(Error::TimeGridMismatch(format!("increment dt {} vs solver dt {}", dw.dt, self.cfg.dt)));
        }
        Ok(())
    }

    fn sentinel(&self, w: &SpectralField) -> Result<()> {
        let z = w.enstrophy();
        if !z.is_finite() || z > BLOW_UP_ENSTROPHY {
            return Err(Error::BlowUp { step: self.steps, enstrophy: z });
        }
        Ok(())
    }

    /// The step without its noise term: (w + dt N(w)) e^{-ν|k|²dt}.
    pub fn deterministic_step(&mut self, w: &mut SpectralField) {
        self.deterministic_part(w);
        self.steps += 1;
    }

    /// Per forced mode k (as listed by the forcing), the complex loadings
    /// (a, b) with vorticity increment a dW¹ + b dW² over one step, where
    /// dW¹, dW² have variance dt.
    pub fn noise_loadings(&self) -> Vec<([i32; 2], Complex64, Complex64)> {
        if !self.cfg.terms.noise {
            return self.noise.iter().map(|s| (s.k, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))).collect();
        }
        self.noise.iter().map(|s| (s.k, s.a, s.b)).collect()
    }

    /// One exponential-Euler step of the full dynamics.
    pub fn step_sns(&mut self, w: &mut SpectralField, dw: &NoiseIncrement) -> Result<()> {
        self.check_increment(dw)?;
        self.deterministic_part(w);
        self.add_noise(w, dw, &|_| true);
        self.steps += 1;
        self.sentinel(w)
    }

    fn deterministic_part(&mut self, w: &mut SpectralField) {
        let dt = self.cfg.dt;
        if self.cfg.terms.nonlinear {
            self.eval.eval_into(w, &mut self.nl);
            let n = self.nl.coeffs();
            for ((c, d), nk) in w.coeffs_mut().iter_mut().zip(&self.decay).zip(n) {
                *c = (*c + nk * dt) * d;
            }
        } else {
            for (c, d) in w.coeffs_mut().iter_mut().zip(&self.decay) {
                *c *= d;
            }
        }
    }

    /// One exact OU step: the same scheme with the nonlinearity removed.
    pub fn step_ou(&mut self, z: &mut SpectralField, dw: &NoiseIncrement) -> Result<()> {
        self.check_increment(dw)?;
        for (c, d) in z.coeffs_mut().iter_mut().zip(&self.decay) {
            *c *= d;
        }
        self.add_noise(z, dw, &|_| true);
        Ok(())
    }

    /// One step of the order-`n` Galerkin system: a full step followed by
    /// setting every mode with |k| >= n to zero.
    pub fn step_galerkin(&mut self, w: &mut SpectralField, n: f64, dw: &NoiseIncrement) -> Result<()> {
        self.step_sns(w, dw)?;
        truncate(w, n);
        Ok(())
    }

    /// One step of the high-mode equation with low modes `low` held as input.
    /// Only noise on modes with |k| >= n_star is used.
    pub fn step_high(&mut self, h: &mut SpectralField, low: &SpectralField, n_star: f64, dw: &NoiseIncrement) -> Result<()> {
        self.check_increment(dw)?;
        let dt = self.cfg.dt;
        if self.cfg.terms.nonlinear {
            let full = low.add(h);
            self.eval.eval_into(&full, &mut self.nl);
            let n = self.nl.coeffs();
            for ((c, d), nk) in h.coeffs_mut().iter_mut().zip(&self.decay).zip(n) {
                *c = (*c + nk * dt) * d;
            }
        } else {
            for (c, d) in h.coeffs_mut().iter_mut().zip(&self.decay) {
                *c *= d;
            }
        }
        self.add_noise(h, dw, &|k| norm_sq(k).sqrt() >= n_star);
        let grid = *h.grid();
        for (i, c) in h.coeffs_mut().iter_mut().enumerate() {
            if norm_sq(grid.wavenumber(i)).sqrt() < n_star {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        self.steps += 1;
        self.sentinel(h)
    }
}

/// Zero every mode with |k| >= n.
pub fn truncate(w: &mut SpectralField, n: f64) {
    let grid = *w.grid();
    for (i, c) in w.coeffs_mut().iter_mut().enumerate() {
        if norm_sq(grid.wavenumber(i)).sqrt() >= n {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

/// One full step from a fresh stepper. Prefer [`Stepper`] in loops.
pub fn step_sns(w: &SpectralField, cfg: &SolverConfig, dw: &NoiseIncrement) -> Result<SpectralField> {
    let mut out = w.clone();
    Stepper::new(cfg)?.step_sns(&mut out, dw)?;
    Ok(out)
}

pub fn step_ou(z: &SpectralField, cfg: &SolverConfig, dw: &NoiseIncrement) -> Result<SpectralField> {
    let mut out = z.clone();
    Stepper::new(cfg)?.step_ou(&mut out, dw)?;
    Ok(out)
}

pub fn step_galerkin(w: &SpectralField, cfg: &SolverConfig, n: f64, dw: &NoiseIncrement) -> Result<SpectralField> {
    let mut out = w.clone();
    Stepper::new(cfg)?.step_galerkin(&mut out, n, dw)?;
    Ok(out)
}

/// Inputs of the high-mode equation: low modes ℓ(t_i) at every step and the
/// increments η over every step, plus the initial high modes h₀.
#[derive(Debug, Clone)]
pub struct HighModeProblem {
    pub n_star: f64,
    pub low: Vec<SpectralField>,
    pub eta: Vec<NoiseIncrement>,
    pub h0: SpectralField,
}

impl HighModeProblem {
    pub fn validate(&self, cfg: &SolverConfig) -> Result<()> {
        if self.low.len() != self.eta.len() + 1 {
            return Err(Error::TimeGridMismatch(format!(
                "{} low-mode samples for {} noise increments (expected one more sample than increments)",
                self.low.len(),
                self.eta.len()
            )));
        }
        if let Some(bad) = self.eta.iter().position(|e| (e.dt - cfg.dt()).abs() > 1e-12 * cfg.dt()) {
            return Err(Error::TimeGridMismatch(format!(
                "increment {bad} has dt {} but the solver uses {}",
                self.eta[bad].dt,
                cfg.dt()
            )));
        }
        let n = self.n_star;
        let low_ok = self.low.iter().all(|l| l.project_high(n).coeffs().iter().all(|c| c.norm() == 0.0));
        if !low_ok {
            return Err(Error::InvalidConfig("low-mode input has modes with |k| >= N*".into()));
        }
        if self.h0.project_low(n).coeffs().iter().any(|c| c.norm() != 0.0) {
            return Err(Error::InvalidConfig("h0 has modes with |k| < N*".into()));
        }
        Ok(())
    }
}

/// Φ_{s,t}: the trajectory of high modes driven by the pinned low modes,
/// including the initial value.
pub fn solve_high_mode(p: &HighModeProblem, cfg: &SolverConfig) -> Result<Vec<SpectralField>> {
    p.validate(cfg)?;
    let mut stepper = Stepper::new(cfg)?;
    let mut h = p.h0.clone();
    let mut out = Vec::with_capacity(p.low.len());
    out.push(h.clone());
    for (l, e) in p.low.iter().zip(&p.eta) {
        stepper.step_high(&mut h, l, p.n_star, e)?;
        out.push(h.clone());
    }
    Ok(out)
}

/// Record of a simulated trajectory: fields at every `stride` steps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub stride: usize,
    pub fields: Vec<SpectralField>,
    pub noise: Vec<NoiseIncrement>,
}

/// Run `steps` full steps from `w0` with noise from `stream`, starting at
/// step index `first_step`. Every `stride`-th field is kept; noise is kept
/// when `keep_noise` is set.
pub fn simulate(
    cfg: &SolverConfig,
    w0: &SpectralField,
    stream: NoiseStream,
    first_step: i64,
    steps: usize,
    stride: usize,
    keep_noise: bool,
) -> Result<Trajectory> {
    let stride = stride.max(1);
    let mut stepper = Stepper::new(cfg)?;
    let mut w = w0.clone();
    let mut fields = vec![w.clone()];
    let mut noise = Vec::new();
    for s in 0..steps {
        let dw = sample_increment(cfg.forcing(), cfg.dt(), stream, first_step + s as i64)?;
        stepper.step_sns(&mut w, &dw)?;
        if keep_noise {
            noise.push(dw);
        }
        if (s + 1) % stride == 0 {
            fields.push(w.clone());
        }
    }
    Ok(Trajectory { dt: cfg.dt(), stride, fields, noise })
}

/// Largest advective CFL number `dt · max|u| · m` over the physical grid,
/// estimated from the spectral bound Σ|u_k|.
pub fn advective_cfl(w: &SpectralField, dt: f64) -> f64 {
    let grid = w.grid();
    let umax: f64 = w
        .coeffs()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c.norm() / norm_sq(grid.wavenumber(i)).sqrt())
        .sum();
    dt * umax * grid.max_index() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> SolverConfig {
        let grid = WaveGrid::new(n).unwrap();
        let forcing = ForcingSpec::complex(&[[1.0, 0.0, 0.5, 0.0], [1.0, 1.0, 0.3, 0.1]]).unwrap();
        SolverConfig::new(0.7, 0.01, grid, forcing).unwrap()
    }

    #[test]
    fn zero_is_fixed_without_noise() {
        let c = cfg(8);
        let w = SpectralField::zeros(*c.grid());
        let out = step_sns(&w, &c, &NoiseIncrement::zero(c.forcing(), c.dt())).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn pure_decay_is_exact() {
        let c = cfg(8).with_terms(Terms { nonlinear: false, viscous: true, noise: false });
        let w = SpectralField::from_modes(*c.grid(), &[([2, 1], Complex64::new(1.5, -0.5))]);
        let out = step_sns(&w, &c, &NoiseIncrement::zero(c.forcing(), c.dt())).unwrap();
        let expect = Complex64::new(1.5, -0.5) * (-0.7 * 5.0 * 0.01f64).exp();
        assert_eq!(out.get([2, 1]), expect);
    }

    #[test]
    fn rejects_bad_config() {
        let grid = WaveGrid::new(8).unwrap();
        let f = ForcingSpec::complex(&[[1.0, 0.0, 1.0, 0.0]]).unwrap();
        assert!(SolverConfig::new(0.0, 0.01, grid, f.clone()).is_err());
        assert!(SolverConfig::new(1.0, -0.01, grid, f).is_err());
        let outside = ForcingSpec::complex(&[[3.0, 0.0, 1.0, 0.0]]).unwrap();
        assert!(SolverConfig::new(1.0, 0.01, grid, outside).is_err());
    }

    #[test]
    fn blow_up_is_caught() {
        let c = cfg(8);
        let w = SpectralField::from_modes(*c.grid(), &[([1, 0], Complex64::new(1e7, 0.0))]);
        let err = step_sns(&w, &c, &NoiseIncrement::zero(c.forcing(), c.dt())).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn galerkin_beyond_grid_is_full_step() {
        let c = cfg(16);
        let w = SpectralField::from_modes(*c.grid(), &[([1, 2], Complex64::new(0.3, 0.2)), ([2, 0], Complex64::new(0.1, 0.0))]);
        let dw = sample_increment(c.forcing(), c.dt(), NoiseStream::new(1, 0), 0).unwrap();
        assert_eq!(step_galerkin(&w, &c, 100.0, &dw).unwrap(), step_sns(&w, &c, &dw).unwrap());
        let g = step_galerkin(&w, &c, 2.0, &dw).unwrap();
        let mut again = g.clone();
        truncate(&mut again, 2.0);
        assert_eq!(again, g);
    }

    #[test]
    fn high_mode_rejects_misaligned_inputs() {
        let c = cfg(8);
        let z = SpectralField::zeros(*c.grid());
        let p = HighModeProblem {
            n_star: 2.0,
            low: vec![z.clone(); 3],
            eta: vec![NoiseIncrement::zero(c.forcing(), c.dt()); 3],
            h0: z.clone(),
        };
        assert!(matches!(solve_high_mode(&p, &c), Err(Error::TimeGridMismatch(_))));
        let p = HighModeProblem {
            n_star: 2.0,
            low: vec![z.clone(); 3],
            eta: vec![NoiseIncrement::zero(c.forcing(), 2.0 * c.dt()); 2],
            h0: z,
        };
        assert!(matches!(solve_high_mode(&p, &c), Err(Error::TimeGridMismatch(_))));
    }

    #[test]
    fn high_mode_free_decay() {
        let c = cfg(16);
        let z = SpectralField::zeros(*c.grid());
        let h0 = SpectralField::from_modes(*c.grid(), &[([3, 1], Complex64::new(1.0, 0.0))]);
        let steps = 50;
        let p = HighModeProblem {
            n_star: 2.0,
            low: vec![z; steps + 1],
            eta: vec![NoiseIncrement::zero(c.forcing(), c.dt()); steps],
            h0,
        };
        let traj = solve_high_mode(&p, &c).unwrap();
        let got = traj[steps].get([3, 1]).re;
        let expect = (-0.7 * 10.0 * c.dt() * steps as f64).exp();
        assert!((got - expect).abs() < 1e-14);
    }
}

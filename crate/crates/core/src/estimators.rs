//! Monte Carlo checks of the energy and Lyapunov estimates, envelope sets,
//! spectral decay fits and the comparison of small scales with the
//! Ornstein–Uhlenbeck process.
//!
//! The Lyapunov structure is dV = g dt + f dB with g ≤ C₁ - U, U ≥ C₂V and
//! C₃|f|² ≤ U. For the vorticity equation V = ‖u‖², U = 2ν‖Λu‖², C₁ = E₀,
//! C₂ = 2ν and C₃ = ν/(2σ*²).
//!
//! ```
//! use sns_lab::estimators::{envelope_membership, EnvelopeSet, LyapunovSeries, LyapunovSpec};
//!
//! let spec = LyapunovSpec::new(2.0, 1.0, 0.5, 0.1).unwrap();
//! let quiet = LyapunovSeries { dt: 0.1, v: vec![0.0; 50], u: vec![0.0; 50] };
//! let m = envelope_membership(&quiet, EnvelopeSet::Forward(0.0), &spec);
//! assert!(m.inside && m.first_exit.is_none());
//! ```

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SolverConfig, Stepper};
use crate::error::{Error, Result};
use crate::forcing::{sample_increment, NoiseStream};
use crate::report::Check;
use crate::spectral::{norm_sq, SpectralField};
use crate::stats::{geweke_z, kendall_decreasing, linear_fit, mean, Estimate};
use crate::toy::{ToyConfig, ToyPath};

type Snapshots = Vec<Vec<Complex64>>;

/// Constants of the Lyapunov structure and the envelope parameter ε*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub eps_star: f64,
}

impl LyapunovSpec {
    pub fn new(c1: f64, c2: f64, c3: f64, eps_star: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
            return Err(Error::InvalidConfig(format!("constants must be positive: C1={c1}, C2={c2}, C3={c3}")));
        }
        if !(eps_star > 0.0 && eps_star < 1.0) {
            return Err(Error::InvalidConfig(format!("eps* = {eps_star} must lie in (0,1)")));
        }
        Ok(LyapunovSpec { c1, c2, c3, eps_star })
    }

    /// V = ‖u‖², U = 2ν‖Λu‖², C₁ = E₀, C₂ = 2ν, C₃ = ν/(2σ*²).
    pub fn sns(cfg: &SolverConfig, eps_star: f64) -> Result<Self> {
        let f = cfg.forcing();
        Self::new(f.injection_rate(), 2.0 * cfg.nu(), cfg.nu() / (2.0 * f.sigma_star_sq()), eps_star)
    }

    /// V = ℓ² + h², U = ν₁h² + ν₂ℓ², C₁ = K²/min ν + σ₁² + σ₂², C₂ = min ν,
    /// C₃ = min over σᵢ > 0 of νᵢ/(4σᵢ²).
    pub fn toy(cfg: &ToyConfig, eps_star: f64) -> Result<Self> {
        let m = cfg.nu1.min(cfg.nu2);
        let c1 = cfg.k_bound * cfg.k_bound / m + cfg.sigma1 * cfg.sigma1 + cfg.sigma2 * cfg.sigma2;
        let mut c3 = cfg.nu2 / (4.0 * cfg.sigma2 * cfg.sigma2);
        if cfg.sigma1 > 0.0 {
            c3 = c3.min(cfg.nu1 / (4.0 * cfg.sigma1 * cfg.sigma1));
        }
        Self::new(c1, m, c3, eps_star)
    }
}

/// V and U sampled every `dt` along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeries {
    pub dt: f64,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

impl LyapunovSeries {
    /// From vorticity snapshots `dt` apart.
    pub fn sns(fields: &[SpectralField], nu: f64, dt: f64) -> Self {
        LyapunovSeries {
            dt,
            v: fields.iter().map(|w| w.energy()).collect(),
            u: fields.iter().map(|w| 2.0 * nu * w.enstrophy()).collect(),
        }
    }

    pub fn toy(path: &ToyPath, cfg: &ToyConfig) -> Self {
        LyapunovSeries {
            dt: path.dt,
            v: path.l.iter().zip(&path.h).map(|(l, h)| l * l + h * h).collect(),
            u: path.l.iter().zip(&path.h).map(|(l, h)| cfg.nu1 * h * h + cfg.nu2 * l * l).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Left Riemann sums ∫₀^{t_i} U for every sample i.
    pub fn integral_u(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.u.len());
        for (i, _) in self.u.iter().enumerate() {
            out.push(acc);
            acc += self.u[i] * self.dt;
        }
        out
    }
}

/// sup over sampled t > 0 of
/// [V(t) + (1-ε)∫₀ᵗU - V(0) - C₁t] / (1 + log(1+t)).
pub fn growth_statistic(series: &LyapunovSeries, c1: f64, eps: f64) -> f64 {
    let iu = series.integral_u();
    let v0 = series.v[0];
    (1..series.len())
        .map(|i| {
            let t = i as f64 * series.dt;
            (series.v[i] + (1.0 - eps) * iu[i] - v0 - c1 * t) / (1.0 + t.ln_1p())
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The three families of typical trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvelopeSet {
    /// B_n: forward logarithmic envelope of level n.
    Forward(f64),
    /// B(M): V(t) + (1-ε*)∫₀ᵗU - V(0) ≤ M + C₁(1+ε*)t for all t ≥ 0.
    Exponential(f64),
    /// A_n: backward envelope on t ≤ 0; the series ends at t = 0.
    Backward(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub inside: bool,
    /// First sampled time at which the inequality fails; negative for A_n.
    pub first_exit: Option<f64>,
    /// Largest value of the left side minus the right side.
    pub worst_margin: f64,
}

/// Evaluate the defining inequality of `set` at every sample.
pub fn envelope_membership(series: &LyapunovSeries, set: EnvelopeSet, spec: &LyapunovSpec) -> Membership {
    let eps = spec.eps_star;
    let c1 = spec.c1;
    let n = series.len();
    let mut first_exit = None;
    let mut worst = f64::NEG_INFINITY;
    let mut visit = |t: f64, excess: f64| {
        if excess > 0.0 && first_exit.is_none() {
            first_exit = Some(t);
        }
        worst = worst.max(excess);
    };
    match set {
        EnvelopeSet::Forward(level) | EnvelopeSet::Exponential(level) => {
            let iu = series.integral_u();
            let v0 = series.v[0];
            for (i, (&v, &int)) in series.v.iter().zip(&iu).enumerate().take(n) {
                let t = i as f64 * series.dt;
                let lhs = v + (1.0 - eps) * int - v0;
                let excess = match set {
                    EnvelopeSet::Forward(_) => (lhs - c1 * t) / (1.0 + t.ln_1p()) - level,
                    _ => lhs - level - c1 * (1.0 + eps) * t,
                };
                visit(t, excess);
            }
        }
        EnvelopeSet::Backward(level) => {
            let mut acc = 0.0;
            for j in (0..n).rev() {
                let t = -((n - 1 - j) as f64) * series.dt;
                let s = t.abs();
                let excess = (series.v[j] + (1.0 - eps) * acc - c1 * s) / (1.0 + s.ln_1p()) - level;
                visit(t, excess);
                if j > 0 {
                    acc += series.u[j - 1] * series.dt;
                }
            }
        }
    }
    Membership { inside: first_exit.is_none(), first_exit, worst_margin: worst }
}

/// Empirical P{first exit after time t} at the given times, with the
/// log-linear fit of the nonzero part.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitTail {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
}

/// Tail of the late exits: the fraction of trajectories that leave after
/// each time t.
pub fn exit_tail(exits: &[Option<f64>], times: &[f64]) -> ExitTail {
    let n = exits.len() as f64;
    let survival: Vec<f64> =
        times.iter().map(|&t| exits.iter().filter(|e| matches!(e, Some(x) if *x > t)).count() as f64 / n).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        times.iter().zip(&survival).filter(|(_, &s)| s > 0.0).map(|(&t, &s)| (t, s.ln())).unzip();
    let fit = linear_fit(&xs, &ys);
    ExitTail { times: times.to_vec(), survival, slope: fit.map(|f| f.slope), r2: fit.map(|f| f.r2) }
}

/// Empirical exceedance probability of the growth statistic over level K
/// against exp(-2C₃εK).
pub fn martingale_envelope_check(ensemble: &[LyapunovSeries], spec: &LyapunovSpec, eps: f64, k: f64) -> Result<Check> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidConfig(format!("eps = {eps} must lie in (0,1)")));
    }
    if !(k > 1.0 / (eps * spec.c3)) {
        return Err(Error::InvalidConfig(format!("K = {k} must exceed 1/(eps C3) = {}", 1.0 / (eps * spec.c3))));
    }
    let hits: Vec<f64> =
        ensemble.iter().map(|s| if growth_statistic(s, spec.c1, eps) > k { 1.0 } else { 0.0 }).collect();
    let est = Estimate::of(&hits);
    let bound = (-2.0 * spec.c3 * eps * k).exp();
    Ok(Check::upper(format!("martingale_envelope eps={eps} K={k}"), &est, bound))
}

/// Run `ensemble` trajectories and return their Lyapunov series, each
/// sampled every `stride` steps.
pub fn sns_lyapunov_ensemble(
    cfg: &SolverConfig,
    w0: &SpectralField,
    steps: usize,
    stride: usize,
    ensemble: usize,
    seed: u64,
) -> Result<Vec<LyapunovSeries>> {
    (0..ensemble as u64)
        .into_par_iter()
        .map(|p| {
            let mut s = Stepper::new(cfg)?;
            let mut w = w0.clone();
            let stream = NoiseStream::new(seed, p);
            let mut fields = vec![w.clone()];
            for i in 0..steps {
                let dw = sample_increment(cfg.forcing(), cfg.dt(), stream, i as i64)?;
                s.step_sns(&mut w, &dw)?;
                if (i + 1) % stride == 0 {
                    fields.push(w.clone());
                }
            }
            Ok(LyapunovSeries::sns(&fields, cfg.nu(), cfg.dt() * stride as f64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentBoundReport {
    pub times: Vec<f64>,
    /// One check per time, against e^{-2νt}‖u₀‖² + (E₀/2ν)(1-e^{-2νt}) plus slack.
    pub checks: Vec<Check>,
    /// Discretization allowance 2|m(dt) - m(dt/2)| from the paired half-step run.
    pub slack: Vec<f64>,
    pub pass: bool,
}

/// Energy bound e^{-2νt}‖u₀‖² + (E₀/2ν)(1-e^{-2νt}); E₀ is zero when the
/// noise is switched off.
pub fn energy_bound(cfg: &SolverConfig, v0: f64, t: f64) -> f64 {
    let nu = cfg.nu();
    let e0 = if cfg.terms().noise { cfg.forcing().injection_rate() } else { 0.0 };
    let d = (-2.0 * nu * t).exp();
    d * v0 + e0 / (2.0 * nu) * (1.0 - d)
}

/// Monte Carlo E‖u(t)‖² at each time against the energy bound. Every member
/// is also run at dt/2 on the same Brownian path; twice the mean gap is the
/// discretization slack.
pub fn energy_moment_bound_check(
    cfg: &SolverConfig,
    u0: &SpectralField,
    times: &[f64],
    ensemble: usize,
    seed: u64,
) -> Result<MomentBoundReport> {
    if ensemble < 100 {
        return Err(Error::InvalidConfig(format!("ensemble of {ensemble} is below the minimum of 100")));
    }
    let dt = cfg.dt();
    let marks: Vec<usize> = times.iter().map(|t| (t / dt).round() as usize).collect();
    let steps = marks.iter().copied().max().unwrap_or(0);
    let fine_cfg = cfg.clone().with_dt(dt / 2.0)?;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..ensemble as u64)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::new(seed, p);
            let mut coarse = Stepper::new(cfg)?;
            let mut fine = Stepper::new(&fine_cfg)?;
            let (mut wc, mut wf) = (u0.clone(), u0.clone());
            let mut out_c = vec![0.0; marks.len()];
            let mut out_f = vec![0.0; marks.len()];
            let record = |i: usize, wc: &SpectralField, wf: &SpectralField, oc: &mut [f64], of: &mut [f64]| {
                for (j, &m) in marks.iter().enumerate() {
                    if m == i {
                        oc[j] = wc.energy();
                        of[j] = wf.energy();
                    }
                }
            };
            record(0, &wc, &wf, &mut out_c, &mut out_f);
            for i in 0..steps {
                let a = sample_increment(fine_cfg.forcing(), dt / 2.0, stream, 2 * i as i64)?;
                let b = sample_increment(fine_cfg.forcing(), dt / 2.0, stream, 2 * i as i64 + 1)?;
                fine.step_sns(&mut wf, &a)?;
                fine.step_sns(&mut wf, &b)?;
                coarse.step_sns(&mut wc, &fine_cfg.coarsen(&a, &b))?;
                record(i + 1, &wc, &wf, &mut out_c, &mut out_f);
            }
            Ok((out_c, out_f))
        })
        .collect::<Result<_>>()?;
    let v0 = u0.energy();
    let mut checks = Vec::new();
    let mut slack = Vec::new();
    for (j, &m) in marks.iter().enumerate() {
        let t = m as f64 * dt;
        let coarse: Vec<f64> = runs.iter().map(|r| r.0[j]).collect();
        let gap: Vec<f64> = runs.iter().map(|r| r.0[j] - r.1[j]).collect();
        let est = Estimate::of(&coarse);
        let s = 2.0 * mean(&gap).abs();
        let bound = energy_bound(cfg, v0, t);
        let mut c = Check::upper(format!("energy_moment t={t}"), &est, bound + s);
        c.bound = bound;
        checks.push(c);
        slack.push(s);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(MomentBoundReport { times: marks.iter().map(|&m| m as f64 * dt).collect(), checks, slack, pass })
}

/// Which stationary identity to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationaryQuantity {
    /// 2ν‖Λu‖² against E₀.
    Enstrophy,
    /// 2ν‖Λ²u‖² against E₁.
    Palinstrophy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReport {
    pub quantity: StationaryQuantity,
    /// Mean over trajectories of the per-trajectory time averages.
    pub estimate: Estimate,
    pub target: f64,
    pub rel_error: f64,
    /// Geweke z-scores per trajectory and their combined score.
    pub geweke: Vec<f64>,
    pub combined_geweke: f64,
    pub nonstationary: bool,
    pub pass: bool,
}

impl StationaryReport {
    pub fn check(&self, name: &str) -> Check {
        Check::new(name, self.estimate.mean, self.estimate.ci(3.0), self.target, self.pass)
    }
}

/// Time-plus-ensemble average of 2ν‖Λu‖² (or 2ν‖Λ²u‖²) after `burn_in`
/// over `[burn_in, horizon]`, from `trajectories` runs started at `w0`.
pub fn stationary_enstrophy_check(
    cfg: &SolverConfig,
    w0: &SpectralField,
    burn_in: f64,
    horizon: f64,
    trajectories: usize,
    seed: u64,
    tolerance: f64,
    quantity: StationaryQuantity,
) -> Result<StationaryReport> {
    if !(horizon > burn_in && burn_in >= 0.0) {
        return Err(Error::InvalidConfig(format!("horizon {horizon} must exceed burn-in {burn_in}")));
    }
    if trajectories < 2 {
        return Err(Error::InsufficientData("need at least two trajectories for a standard error".into()));
    }
    let dt = cfg.dt();
    let nu = cfg.nu();
    let start = (burn_in / dt).round() as usize;
    let total = (horizon / dt).round() as usize;
    let block = ((1.0 / dt).round() as usize).max(1);
    let per_traj: Vec<(f64, Vec<f64>)> = (0..trajectories as u64)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::new(seed, p);
            let mut s = Stepper::new(cfg)?;
            let mut w = w0.clone();
            let mut sum = 0.0;
            let mut blocks = Vec::new();
            let mut acc = 0.0;
            for i in 0..total {
                let dw = sample_increment(cfg.forcing(), dt, stream, i as i64)?;
                s.step_sns(&mut w, &dw)?;
                if i + 1 > start {
                    let x = match quantity {
                        StationaryQuantity::Enstrophy => 2.0 * nu * w.enstrophy(),
                        StationaryQuantity::Palinstrophy => 2.0 * nu * w.palinstrophy(),
                    };
                    sum += x;
                    acc += x;
                    if (i + 1 - start) % block == 0 {
                        blocks.push(acc / block as f64);
                        acc = 0.0;
                    }
                }
            }
            Ok((sum / (total - start) as f64, blocks))
        })
        .collect::<Result<_>>()?;
    let averages: Vec<f64> = per_traj.iter().map(|p| p.0).collect();
    let estimate = Estimate::of(&averages);
    let f = cfg.forcing();
    let target = match quantity {
        StationaryQuantity::Enstrophy => f.injection_rate(),
        StationaryQuantity::Palinstrophy => f.enstrophy_injection_rate(),
    };
    let rel_error = (estimate.mean - target).abs() / target;
    let geweke: Vec<f64> = per_traj.iter().map(|p| geweke_z(&p.1, 0.1, 0.5)).collect();
    let finite: Vec<f64> = geweke.iter().copied().filter(|z| z.is_finite()).collect();
    let combined_geweke = finite.iter().sum::<f64>() / (finite.len() as f64).sqrt();
    let nonstationary = combined_geweke.abs() > 3.0;
    Ok(StationaryReport {
        quantity,
        estimate,
        target,
        rel_error,
        geweke,
        combined_geweke,
        nonstationary,
        pass: rel_error <= tolerance,
    })
}

/// Envelope |u_k| ≤ D e^{-τ|k|} fitted to a velocity spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub d_hat: f64,
    pub tau_hat: f64,
    /// Root-mean-square residual of the log-linear fit.
    pub residual: f64,
    /// Smallest D for which every used point lies under D e^{-τ̂|k|}.
    pub d_envelope: f64,
    pub shells: usize,
}

/// Least-squares fit of log|u_k| against |k| over per-shell maxima, where
/// |u_k| = |ω_k|/|k| and shell s holds s - ½ ≤ |k| < s + ½. Shells whose
/// maximum is below 1e-13 of the global maximum are dropped as round-off.
pub fn spectral_decay_fit(w: &SpectralField) -> Result<DecayFit> {
    let grid = w.grid();
    let mut best: Vec<Option<(f64, f64)>> = vec![None; grid.n() + 2];
    for k in grid.active_half_modes() {
        let r = norm_sq(k).sqrt();
        let a = w.get(k).norm() / r;
        if a == 0.0 {
            continue;
        }
        let s = r.round() as usize;
        if best[s].map_or(true, |(_, b)| a > b) {
            best[s] = Some((r, a));
        }
    }
    let top = best.iter().flatten().map(|p| p.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = best.into_iter().flatten().filter(|p| p.1 > 1e-13 * top).collect();
    if pts.len() < 6 {
        return Err(Error::InsufficientData(format!("only {} usable shells, need 6", pts.len())));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let fit = linear_fit(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate spectrum".into()))?;
    let tau = -fit.slope;
    let residual = (x.iter().zip(&y).map(|(a, b)| (b - fit.intercept - fit.slope * a).powi(2)).sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let d_envelope = x.iter().zip(&y).map(|(a, b)| (b + tau * a).exp()).fold(0.0, f64::max);
    Ok(DecayFit { d_hat: fit.intercept.exp(), tau_hat: tau, residual, d_envelope, shells: pts.len() })
}

/// Fits over a sequence of snapshots, with the variance of τ̂ across them.
pub fn decay_fit_series(fields: &[SpectralField]) -> Result<(Vec<DecayFit>, f64)> {
    let fits = fields.iter().map(spectral_decay_fit).collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = fits.iter().map(|f| f.tau_hat).collect();
    let var = crate::stats::variance(&taus);
    Ok((fits, var))
}

/// Bounded functionals of a rescaled mode path sampled on a unit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    Constant(f64),
    /// min(|x(end)|², c).
    ClippedSquare(f64),
    /// tanh(Re x(end)).
    TanhReal,
    /// Window mean of tanh(Re x(t)).
    PathMeanTanh,
}

impl Functional {
    pub fn eval(&self, path: &[Complex64]) -> f64 {
        let last = *path.last().expect("empty path");
        match *self {
            Functional::Constant(c) => c,
            Functional::ClippedSquare(c) => last.norm_sqr().min(c),
            Functional::TanhReal => last.re.tanh(),
            Functional::PathMeanTanh => path.iter().map(|z| z.re.tanh()).sum::<f64>() / path.len() as f64,
        }
    }
}

/// Rescaled paths ω'_k = (√2/|σ_k|)ω_k of one mode for every ensemble member,
/// from the vorticity run and from the reference OU run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModePaths {
    pub k: [i32; 2],
    pub sns: Vec<Vec<Complex64>>,
    pub ou: Vec<Vec<Complex64>>,
}

/// How the reference OU run is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Same Brownian path as the vorticity run.
    SharedNoise,
    /// An OU run against an independent OU run, the null baseline.
    IndependentOu,
}

/// Paired runs of `burn_in` steps followed by a window of `window` steps.
/// Fails for modes outside the forced set, where the rescaling is undefined.
pub fn paired_mode_paths(
    cfg: &SolverConfig,
    modes: &[[i32; 2]],
    burn_in: usize,
    window: usize,
    ensemble: usize,
    seed: u64,
    pairing: Pairing,
) -> Result<Vec<ModePaths>> {
    let f = cfg.forcing();
    let scale: Vec<f64> = modes
        .iter()
        .map(|&k| {
            let s2 = f.velocity_variance(k);
            if s2 > 0.0 {
                Ok((2.0 / s2).sqrt())
            } else {
                Err(Error::InvalidConfig(format!("mode {k:?} is not forced; its rescaling is undefined")))
            }
        })
        .collect::<Result<_>>()?;
    let zero = SpectralField::zeros(*cfg.grid());
    let per_member: Vec<(Snapshots, Snapshots)> = (0..ensemble as u64)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::new(seed, p);
            let other = NoiseStream::new(seed, p).with_channel(1);
            let mut s = Stepper::new(cfg)?;
            let (mut a, mut b) = (zero.clone(), zero.clone());
            let mut pa = vec![Vec::with_capacity(window + 1); modes.len()];
            let mut pb = vec![Vec::with_capacity(window + 1); modes.len()];
            for i in 0..burn_in + window {
                let dw = sample_increment(f, cfg.dt(), stream, i as i64)?;
                match pairing {
                    Pairing::SharedNoise => {
                        s.step_sns(&mut a, &dw)?;
                        s.step_ou(&mut b, &dw)?;
                    }
                    Pairing::IndependentOu => {
                        s.step_ou(&mut a, &dw)?;
                        s.step_ou(&mut b, &sample_increment(f, cfg.dt(), other, i as i64)?)?;
                    }
                }
                if i + 1 >= burn_in {
                    for (j, &k) in modes.iter().enumerate() {
                        pa[j].push(a.get(k) * scale[j]);
                        pb[j].push(b.get(k) * scale[j]);
                    }
                }
            }
            Ok((pa, pb))
        })
        .collect::<Result<_>>()?;
    Ok(modes
        .iter()
        .enumerate()
        .map(|(j, &k)| ModePaths {
            k,
            sns: per_member.iter().map(|m| m.0[j].clone()).collect(),
            ou: per_member.iter().map(|m| m.1[j].clone()).collect(),
        })
        .collect())
}

/// E|F(ω'_k) - F(z'_k)| over the ensemble.
pub fn functional_distance(paths: &ModePaths, f: Functional) -> Estimate {
    let d: Vec<f64> = paths.sns.iter().zip(&paths.ou).map(|(a, b)| (f.eval(a) - f.eval(b)).abs()).collect();
    Estimate::of(&d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuCompareReport {
    pub shells: Vec<f64>,
    /// Mean distance over the modes of each shell, with its standard error.
    pub distances: Vec<Estimate>,
    pub kendall_tau: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Upper-half-plane modes with s ≤ |k| < s + 1.
pub fn shell_modes(cfg: &SolverConfig, s: f64) -> Vec<[i32; 2]> {
    cfg.grid()
        .active_half_modes()
        .into_iter()
        .filter(|&k| {
            let r = norm_sq(k).sqrt();
            r >= s && r < s + 1.0
        })
        .collect()
}

/// Distance between the rescaled vorticity modes and the rescaled OU modes,
/// averaged over each shell, with a Kendall test for a decreasing trend in
/// the shell radius at level `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn small_scale_ou_compare(
    cfg: &SolverConfig,
    shells: &[f64],
    f: Functional,
    burn_in: usize,
    window: usize,
    ensemble: usize,
    seed: u64,
    pairing: Pairing,
    alpha: f64,
) -> Result<OuCompareReport> {
    let groups: Vec<Vec<[i32; 2]>> = shells.iter().map(|&s| shell_modes(cfg, s)).collect();
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::InvalidConfig(format!("shell {} contains no resolved modes", shells[i])));
    }
    let all: Vec<[i32; 2]> = groups.iter().flatten().copied().collect();
    let paths = paired_mode_paths(cfg, &all, burn_in, window, ensemble, seed, pairing)?;
    let mut distances = Vec::new();
    let mut offset = 0;
    for g in &groups {
        let part = &paths[offset..offset + g.len()];
        offset += g.len();
        let per_member: Vec<f64> = (0..ensemble)
            .map(|m| part.iter().map(|p| (f.eval(&p.sns[m]) - f.eval(&p.ou[m])).abs()).sum::<f64>() / part.len() as f64)
            .collect();
        distances.push(Estimate::of(&per_member));
    }
    let means: Vec<f64> = distances.iter().map(|d| d.mean).collect();
    let (tau, p) = kendall_decreasing(&means);
    Ok(OuCompareReport { shells: shells.to_vec(), distances, kendall_tau: tau, p_value: p, pass: p < alpha })
}

//! Stochastic forcing: forced wave numbers, amplitudes and Gaussian increments.
//!
//! Two conventions are supported.
//!
//! * Complex form: velocity forcing `Σ σ_k k^⊥/|k| e^{ik·x} β_k` with
//!   `β_k = (β¹_k + iβ²_k)/√2` and `σ_{-k} = conj(σ_k)`. In vorticity this
//!   injects `i|k|σ_k dβ_k` into ω_k.
//! * Real form: vorticity forcing `Σ σ^cos_k cos(k·x) b_k + σ^sin_k sin(k·x) B_k`
//!   with k in the upper half plane ℤ²_*.
//!
//! Internally both reduce to a pair of complex loadings `(a, b)` per upper
//! mode, `dω_k = a dW¹ + b dW²` with independent standard Brownian motions.
//! [`ForcingSpec::injection_rate`] returns E₀ in the convention where the
//! Itô drift of ‖u‖² gains exactly E₀ per unit time.
//!
//! ```
//! use sns_lab::forcing::ForcingSpec;
//!
//! let spec = ForcingSpec::complex(&[
//!     [1.0, 0.0, 0.5f64.sqrt(), 0.0],
//!     [0.0, 1.0, 0.5f64.sqrt(), 0.0],
//! ]).unwrap();
//! assert!((spec.injection_rate() - 2.0).abs() < 1e-12);
//! ```

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{is_upper, norm_sq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingForm {
    Complex,
    Real,
}

/// One forced upper-half-plane mode with its noise loadings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcedMode {
    pub k: [i32; 2],
    pub a: Complex64,
    pub b: Complex64,
}

impl ForcedMode {
    /// E|dω_k|²/dt for this mode (and for its conjugate).
    pub fn vorticity_variance(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr()
    }

    /// Largest eigenvalue of the real covariance of (Re dω_k, Im dω_k) per unit time.
    pub fn max_direction_variance(&self) -> f64 {
        let (p, q) = (self.a.re * self.a.re + self.b.re * self.b.re, self.a.im * self.a.im + self.b.im * self.b.im);
        let r = self.a.re * self.a.im + self.b.re * self.b.im;
        let mean = 0.5 * (p + q);
        mean + (0.25 * (p - q) * (p - q) + r * r).sqrt()
    }

    /// Standard deviations of (Re dω_k, Im dω_k) per unit time when the
    /// covariance is diagonal, which holds for both supported forms.
    pub fn component_std(&self) -> [f64; 2] {
        [
            (self.a.re * self.a.re + self.b.re * self.b.re).sqrt(),
            (self.a.im * self.a.im + self.b.im * self.b.im).sqrt(),
        ]
    }
}

/// Forced set and amplitudes. Construct with [`ForcingSpec::complex`] or
/// [`ForcingSpec::real`]; the entry list is kept for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForcingSpecRaw", into = "ForcingSpecRaw")]
pub struct ForcingSpec {
    form: ForcingForm,
    entries: Vec<[f64; 4]>,
    modes: Vec<ForcedMode>,
}

#[derive(Serialize, Deserialize)]
struct ForcingSpecRaw {
    form: ForcingForm,
    modes: Vec<[f64; 4]>,
}

impl TryFrom<ForcingSpecRaw> for ForcingSpec {
    type Error = Error;
    fn try_from(raw: ForcingSpecRaw) -> Result<Self> {
        match raw.form {
            ForcingForm::Complex => ForcingSpec::complex(&raw.modes),
            ForcingForm::Real => ForcingSpec::real(&raw.modes),
        }
    }
}

impl From<ForcingSpec> for ForcingSpecRaw {
    fn from(s: ForcingSpec) -> Self {
        ForcingSpecRaw { form: s.form, modes: s.entries }
    }
}

fn wavenumber(e: &[f64; 4]) -> Result<[i32; 2]> {
    let (k1, k2) = (e[0], e[1]);
    if k1.fract() != 0.0 || k2.fract() != 0.0 || k1.abs() > 1e6 || k2.abs() > 1e6 {
        return Err(Error::InvalidConfig(format!("wave number ({k1}, {k2}) is not an integer pair")));
    }
    let k = [k1 as i32, k2 as i32];
    if k == [0, 0] {
        return Err(Error::InvalidConfig("the zero wave number cannot be forced".into()));
    }
    Ok(k)
}

impl ForcingSpec {
    /// Complex form from `[k1, k2, Re σ_k, Im σ_k]` entries. Each pair
    /// `{k, -k}` may be given once (the conjugate is implied) or twice, in
    /// which case the amplitudes must be conjugate.
    pub fn complex(entries: &[[f64; 4]]) -> Result<Self> {
        let mut reps: Vec<([i32; 2], Complex64)> = Vec::new();
        for e in entries {
            let k = wavenumber(e)?;
            let sigma = Complex64::new(e[2], e[3]);
            if !sigma.re.is_finite() || !sigma.im.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite amplitude at {k:?}")));
            }
            let (rep, s) = if is_upper(k) { (k, sigma) } else { ([-k[0], -k[1]], sigma.conj()) };
            if let Some((_, prev)) = reps.iter().find(|(r, _)| *r == rep) {
                if (prev - s).norm() > 1e-12 * (1.0 + s.norm()) {
                    return Err(Error::InvalidConfig(format!(
                        "amplitudes at {rep:?} and its negative are not conjugate"
                    )));
                }
                continue;
            }
            reps.push((rep, s));
        }
        let mut modes: Vec<ForcedMode> = reps
            .into_iter()
            .filter(|(_, s)| s.norm() > 0.0)
            .map(|(k, s)| {
                let kn = norm_sq(k).sqrt();
                let c = Complex64::new(0.0, kn / std::f64::consts::SQRT_2) * s;
                ForcedMode { k, a: c, b: Complex64::new(0.0, 1.0) * c }
            })
            .collect();
        Self::finish(ForcingForm::Complex, entries, &mut modes)
    }

    /// Real form from `[k1, k2, σ^cos_k, σ^sin_k]` entries with k in ℤ²_*.
    /// A zero amplitude means the mode is absent from that family.
    pub fn real(entries: &[[f64; 4]]) -> Result<Self> {
        let mut modes: Vec<ForcedMode> = Vec::new();
        for e in entries {
            let k = wavenumber(e)?;
            if k[1] < 0 {
                return Err(Error::InvalidConfig(format!("real-form mode {k:?} is not in the upper half plane")));
            }
            let (sc, ss) = (e[2], e[3]);
            if !(sc >= 0.0 && ss >= 0.0) {
                return Err(Error::InvalidConfig(format!("real-form amplitudes at {k:?} must be nonnegative")));
            }
            // cos(k·x) and sin(k·x) for k and -k span the same functions.
            let (rep, sign) = if is_upper(k) { (k, 1.0) } else { ([-k[0], -k[1]], -1.0) };
            if modes.iter().any(|m| m.k == rep) {
                return Err(Error::InvalidConfig(format!("mode {rep:?} listed twice")));
            }
            if sc == 0.0 && ss == 0.0 {
                continue;
            }
            modes.push(ForcedMode {
                k: rep,
                a: Complex64::new(sc / 2.0, 0.0),
                b: Complex64::new(0.0, -sign * ss / 2.0),
            });
        }
        Self::finish(ForcingForm::Real, entries, &mut modes)
    }

    fn finish(form: ForcingForm, entries: &[[f64; 4]], modes: &mut [ForcedMode]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidConfig("forced set is empty, so E0 would vanish".into()));
        }
        modes.sort_by_key(|m| (m.k[1], m.k[0]));
        Ok(ForcingSpec { form, entries: entries.to_vec(), modes: modes.to_vec() })
    }

    /// Complex form with σ_k = amplitude(k) on every upper mode with
    /// `r_min <= |k| < r_max` and `max(|k1|,|k2|) <= m`.
    pub fn complex_from_fn(m: i32, r_min: f64, r_max: f64, amplitude: impl Fn([i32; 2]) -> f64) -> Result<Self> {
        let mut entries = Vec::new();
        for k2 in 0..=m {
            for k1 in -m..=m {
                let k = [k1, k2];
                if !is_upper(k) {
                    continue;
                }
                let r = norm_sq(k).sqrt();
                if r >= r_min && r < r_max {
                    entries.push([k1 as f64, k2 as f64, amplitude(k), 0.0]);
                }
            }
        }
        Self::complex(&entries)
    }

    /// σ_k = 1/√2 on ±(1,0) and ±(0,1), so E₀ = 2. Both modes lie on one
    /// shell and do not interact, so the flow is an OU process on |k| = 1.
    pub fn four_mode() -> Self {
        let s = 0.5f64.sqrt();
        Self::complex(&[[1.0, 0.0, s, 0.0], [0.0, 1.0, s, 0.0]]).expect("valid four-mode forcing")
    }

    /// Equal amplitudes on every mode with `r_min <= |k| < r_max`, scaled so that E₀ = `e0`.
    pub fn band(r_min: f64, r_max: f64, e0: f64) -> Result<Self> {
        let m = r_max.ceil() as i32;
        let count = Self::complex_from_fn(m, r_min, r_max, |_| 1.0)?.modes.len();
        let s = (e0 / (2.0 * count as f64)).sqrt();
        Self::complex_from_fn(m, r_min, r_max, |_| s)
    }

    pub fn form(&self) -> ForcingForm {
        self.form
    }

    pub fn entries(&self) -> &[[f64; 4]] {
        &self.entries
    }

    /// Forced modes, one per pair `{k, -k}`, sorted by (k2, k1).
    pub fn modes(&self) -> &[ForcedMode] {
        &self.modes
    }

    /// Every forced wave number including negatives.
    pub fn forced_set(&self) -> Vec<[i32; 2]> {
        let mut out = Vec::with_capacity(2 * self.modes.len());
        for m in &self.modes {
            out.push(m.k);
            out.push([-m.k[0], -m.k[1]]);
        }
        out
    }

    /// Velocity amplitude |σ_k|² of mode `k` (zero when unforced).
    pub fn velocity_variance(&self, k: [i32; 2]) -> f64 {
        let rep = if is_upper(k) { k } else { [-k[0], -k[1]] };
        self.modes
            .iter()
            .find(|m| m.k == rep)
            .map(|m| m.vorticity_variance() / norm_sq(rep))
            .unwrap_or(0.0)
    }

    /// E₀ = Σ_{k ∈ K} |σ_k|², summed over both k and -k.
    pub fn injection_rate(&self) -> f64 {
        2.0 * self.modes.iter().map(|m| m.vorticity_variance() / norm_sq(m.k)).sum::<f64>()
    }

    /// E₁ = Σ_{k ∈ K} |k|² |σ_k|².
    pub fn enstrophy_injection_rate(&self) -> f64 {
        2.0 * self.modes.iter().map(|m| m.vorticity_variance()).sum::<f64>()
    }

    /// σ*², the largest per-direction velocity variance of a forced mode.
    /// Equals max |σ_k|² for the complex form.
    pub fn sigma_star_sq(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| 2.0 * m.max_direction_variance() / norm_sq(m.k))
            .fold(0.0, f64::max)
    }

    /// Largest |k_i| among forced modes.
    pub fn max_index(&self) -> i32 {
        self.modes.iter().map(|m| m.k[0].abs().max(m.k[1].abs())).max().unwrap_or(0)
    }

    /// Real-form equivalent with the same noise law. Every complex-form
    /// mode maps to σ^cos = σ^sin = √2|k||σ_k|.
    pub fn to_real(&self) -> ForcingSpec {
        if self.form == ForcingForm::Real {
            return self.clone();
        }
        let entries: Vec<[f64; 4]> = self
            .modes
            .iter()
            .map(|m| {
                let s = (2.0 * m.vorticity_variance()).sqrt();
                [m.k[0] as f64, m.k[1] as f64, s, s]
            })
            .collect();
        ForcingSpec::real(&entries).expect("converted entries are valid")
    }

    /// Complex-form equivalent with the same noise law, σ_k = σ^cos/(√2|k|).
    /// Fails unless σ^cos = σ^sin on every mode, since the complex form is
    /// isotropic in each mode.
    pub fn to_complex(&self) -> Result<ForcingSpec> {
        if self.form == ForcingForm::Complex {
            return Ok(self.clone());
        }
        let mut entries = Vec::with_capacity(self.modes.len());
        for m in &self.modes {
            let [sc, ss] = [2.0 * m.a.norm(), 2.0 * m.b.norm()];
            if (sc - ss).abs() > 1e-12 * (sc + ss) {
                return Err(Error::InvalidConfig(format!(
                    "mode {:?} has sigma_cos != sigma_sin and has no complex-form equivalent",
                    m.k
                )));
            }
            let s = sc / (std::f64::consts::SQRT_2 * norm_sq(m.k).sqrt());
            entries.push([m.k[0] as f64, m.k[1] as f64, s, 0.0]);
        }
        ForcingSpec::complex(&entries)
    }

    /// Upper modes listed in both the cos and sin families.
    pub fn cos_sin_intersection(&self) -> Vec<[i32; 2]> {
        self.modes
            .iter()
            .filter(|m| m.component_std().iter().all(|&s| s > 0.0))
            .map(|m| m.k)
            .collect()
    }
}

/// E₀ of a spec; see [`ForcingSpec::injection_rate`].
pub fn energy_injection_rate(spec: &ForcingSpec) -> f64 {
    spec.injection_rate()
}

/// Identifies one independent noise lineage: a trajectory within a seeded
/// ensemble, and a channel so that sub-families of modes can be drawn from
/// unrelated streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub trajectory: u64,
    pub channel: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        NoiseStream { seed, trajectory, channel: 0 }
    }

    pub fn with_channel(self, channel: u64) -> Self {
        NoiseStream { channel, ..self }
    }

    fn rng(&self, step: i64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trajectory.to_le_bytes());
        key[16..24].copy_from_slice(&self.channel.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step as u64);
        rng
    }

    /// The two standard normals attached to mode `k` at `step`. The value
    /// depends only on (seed, trajectory, channel, step, k).
    pub fn normals(&self, rng: &mut ChaCha8Rng, k: [i32; 2]) -> [f64; 2] {
        let key = (((k[0] + 32768) as u32 as u128) << 16) | ((k[1] + 32768) as u32 as u128 & 0xffff);
        rng.set_word_pos(key << 12);
        [rng.sample(StandardNormal), rng.sample(StandardNormal)]
    }
}

/// Standardized Gaussian increments for one step, aligned with
/// [`ForcingSpec::modes`]. The Brownian increments are `√dt · xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub xi: Vec<[f64; 2]>,
    pub stream: Option<NoiseStream>,
    pub step: i64,
}

impl NoiseIncrement {
    pub fn zero(spec: &ForcingSpec, dt: f64) -> Self {
        NoiseIncrement { dt, xi: vec![[0.0; 2]; spec.modes().len()], stream: None, step: 0 }
    }

    /// Brownian increments (dW¹, dW²) of mode index `i`.
    pub fn brownian(&self, i: usize) -> [f64; 2] {
        let s = self.dt.sqrt();
        [s * self.xi[i][0], s * self.xi[i][1]]
    }

    /// Vorticity increment `a dW¹ + b dW²` of mode index `i`.
    pub fn vorticity(&self, spec: &ForcingSpec, i: usize) -> Complex64 {
        let m = &spec.modes()[i];
        let [w1, w2] = self.brownian(i);
        m.a * w1 + m.b * w2
    }

    /// Overwrite the modes selected by `pick` with those of `other`.
    pub fn splice(&mut self, spec: &ForcingSpec, other: &NoiseIncrement, pick: impl Fn([i32; 2]) -> bool) {
        for (i, m) in spec.modes().iter().enumerate() {
            if pick(m.k) {
                self.xi[i] = other.xi[i];
            }
        }
    }

    /// Hash of the raw bits of the selected modes, for shared-input checks.
    pub fn checksum(&self, spec: &ForcingSpec, pick: impl Fn([i32; 2]) -> bool) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.dt.to_bits().hash(&mut h);
        for (i, m) in spec.modes().iter().enumerate() {
            if pick(m.k) {
                m.k.hash(&mut h);
                self.xi[i][0].to_bits().hash(&mut h);
                self.xi[i][1].to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Draw the increment of `step` for `stream`. Deterministic in its inputs.
pub fn sample_increment(spec: &ForcingSpec, dt: f64, stream: NoiseStream, step: i64) -> Result<NoiseIncrement> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step {dt} must be positive")));
    }
    let mut rng = stream.rng(step);
    let xi = spec.modes().iter().map(|m| stream.normals(&mut rng, m.k)).collect();
    Ok(NoiseIncrement { dt, xi, stream: Some(stream), step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_mode() -> ForcingSpec {
        let s = 0.5f64.sqrt();
        ForcingSpec::complex(&[[1.0, 0.0, s, 0.0], [-1.0, 0.0, s, 0.0], [0.0, 1.0, s, 0.0], [0.0, -1.0, s, 0.0]])
            .unwrap()
    }

    #[test]
    fn e0_of_four_modes() {
        let f = four_mode();
        assert_eq!(f.modes().len(), 2);
        assert!((f.injection_rate() - 2.0).abs() < 1e-14);
        assert!((f.sigma_star_sq() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn empty_and_zero_mode_rejected() {
        assert!(ForcingSpec::complex(&[]).is_err());
        assert!(ForcingSpec::complex(&[[0.0, 0.0, 1.0, 0.0]]).is_err());
        assert!(ForcingSpec::real(&[[1.0, -1.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn non_conjugate_pair_rejected() {
        assert!(ForcingSpec::complex(&[[1.0, 0.0, 1.0, 1.0], [-1.0, 0.0, 1.0, 1.0]]).is_err());
        assert!(ForcingSpec::complex(&[[1.0, 0.0, 1.0, 1.0], [-1.0, 0.0, 1.0, -1.0]]).is_ok());
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let f = four_mode();
        assert!(sample_increment(&f, 0.0, NoiseStream::new(1, 0), 0).is_err());
        assert!(sample_increment(&f, -1.0, NoiseStream::new(1, 0), 0).is_err());
    }

    #[test]
    fn same_state_same_increment() {
        let f = four_mode();
        let s = NoiseStream::new(7, 3);
        assert_eq!(sample_increment(&f, 0.1, s, 12).unwrap(), sample_increment(&f, 0.1, s, 12).unwrap());
        assert_ne!(
            sample_increment(&f, 0.1, s, 12).unwrap().xi,
            sample_increment(&f, 0.1, s, 13).unwrap().xi
        );
    }

    #[test]
    fn mode_values_independent_of_spec_membership() {
        let big = ForcingSpec::complex_from_fn(4, 1.0, 4.0, |_| 1.0).unwrap();
        let small = ForcingSpec::complex(&[[2.0, 1.0, 1.0, 0.0]]).unwrap();
        let s = NoiseStream::new(5, 1);
        let a = sample_increment(&big, 0.1, s, 4).unwrap();
        let b = sample_increment(&small, 0.1, s, 4).unwrap();
        let i = big.modes().iter().position(|m| m.k == [2, 1]).unwrap();
        assert_eq!(a.xi[i], b.xi[0]);
    }

    #[test]
    fn conversion_preserves_law() {
        let f = ForcingSpec::complex(&[[1.0, 2.0, 0.3, -0.4], [3.0, 0.0, 0.2, 0.0]]).unwrap();
        let r = f.to_real();
        assert!((r.injection_rate() - f.injection_rate()).abs() < 1e-14);
        assert!((r.enstrophy_injection_rate() - f.enstrophy_injection_rate()).abs() < 1e-14);
        assert!((r.sigma_star_sq() - f.sigma_star_sq()).abs() < 1e-14);
        let back = r.to_complex().unwrap();
        for (m, n) in f.modes().iter().zip(back.modes()) {
            assert_eq!(m.k, n.k);
            assert!((m.vorticity_variance() - n.vorticity_variance()).abs() < 1e-14);
            let (a, b) = (m.component_std(), n.component_std());
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn anisotropic_real_form_has_no_complex_equivalent() {
        let r = ForcingSpec::real(&[[1.0, 1.0, 1.0, 0.5]]).unwrap();
        assert!(r.to_complex().is_err());
        assert_eq!(r.cos_sin_intersection(), vec![[1, 1]]);
        let only_cos = ForcingSpec::real(&[[1.0, 1.0, 1.0, 0.0]]).unwrap();
        assert!(only_cos.cos_sin_intersection().is_empty());
    }
}

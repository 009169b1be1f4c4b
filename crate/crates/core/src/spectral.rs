//! Wave-number grids, spectral vorticity fields and the dealiased nonlinear term.
//!
//! A [`SpectralField`] stores the Fourier coefficients ω_k of a real vorticity
//! field on the 2π-periodic torus, for every k on an `N x N` grid, with the
//! reality condition ω_{-k} = conj(ω_k). The mean mode k = 0 is always zero.
//!
//! Velocity is recovered from vorticity through the stream function, so
//! |u_k| = |ω_k| / |k| and
//!
//! * energy ‖u‖² = Σ |ω_k|² / |k|²
//! * enstrophy ‖Λu‖² = Σ |ω_k|²
//! * palinstrophy ‖Λ²u‖² = Σ |k|² |ω_k|²
//!
//! ```
//! use sns_lab::spectral::{SpectralField, WaveGrid};
//! use num_complex::Complex64;
//!
//! let grid = WaveGrid::new(8).unwrap();
//! let mut w = SpectralField::zeros(grid);
//! w.set_mode([2, 0], Complex64::new(3.0, 0.0));
//! assert_eq!(w.enstrophy(), 18.0);
//! assert_eq!(w.energy(), 18.0 / 4.0);
//! ```

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating the reality condition of inputs.
pub const REALITY_TOL: f64 = 1e-10;

/// Square grid of wave numbers `k = (k1, k2)` with `|k_i| < N/2`.
///
/// Modes with `max(|k1|, |k2|) >= cutoff` are outside the dynamics. The
/// default cutoff `N/3` is the two-thirds rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveGrid {
    n: usize,
    cutoff: f64,
}

impl WaveGrid {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_cutoff(n, n as f64 / 3.0)
    }

    pub fn with_cutoff(n: usize, cutoff: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("resolution {n} is below 4")));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("resolution {n} must be even")));
        }
        if !(cutoff > 0.0 && cutoff <= n as f64 / 2.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias cutoff {cutoff} must lie in (0, {}]",
                n as f64 / 2.0
            )));
        }
        Ok(WaveGrid { n, cutoff })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Largest retained component index `m`, so retained modes satisfy `|k_i| <= m`.
    pub fn max_index(&self) -> i32 {
        let c = self.cutoff.ceil() as i32 - 1;
        c.min(self.n as i32 / 2 - 1)
    }

    /// Whether `k` lies in the storage range of the grid.
    pub fn stores(&self, k: [i32; 2]) -> bool {
        let h = self.n as i32 / 2;
        k[0].abs() < h && k[1].abs() < h
    }

    /// Whether `k` is a nonzero mode inside the dealiased range.
    pub fn is_active(&self, k: [i32; 2]) -> bool {
        let m = self.max_index();
        k != [0, 0] && k[0].abs() <= m && k[1].abs() <= m
    }

    pub fn index(&self, k: [i32; 2]) -> usize {
        let n = self.n as i32;
        (k[0].rem_euclid(n) * n + k[1].rem_euclid(n)) as usize
    }

    pub fn wavenumber(&self, idx: usize) -> [i32; 2] {
        let n = self.n as i32;
        let fold = |v: i32| if v >= n / 2 { v - n } else { v };
        [fold(idx as i32 / n), fold(idx as i32 % n)]
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All active modes in a fixed order: k1 ascending, then k2 ascending.
    pub fn active_modes(&self) -> Vec<[i32; 2]> {
        let m = self.max_index();
        let mut out = Vec::with_capacity(((2 * m + 1) * (2 * m + 1)) as usize);
        for k1 in -m..=m {
            for k2 in -m..=m {
                if k1 != 0 || k2 != 0 {
                    out.push([k1, k2]);
                }
            }
        }
        out
    }

    /// Active modes in the upper half plane `{k2 > 0} ∪ {k2 = 0, k1 > 0}`.
    pub fn active_half_modes(&self) -> Vec<[i32; 2]> {
        self.active_modes().into_iter().filter(|&k| is_upper(k)).collect()
    }
}

/// Whether `k` is the canonical representative of `{k, -k}`.
pub fn is_upper(k: [i32; 2]) -> bool {
    k[1] > 0 || (k[1] == 0 && k[0] > 0)
}

pub fn norm_sq(k: [i32; 2]) -> f64 {
    (k[0] * k[0] + k[1] * k[1]) as f64
}

/// `a^⊥ · b` with `a^⊥ = (-a2, a1)`.
pub fn perp_dot(a: [i32; 2], b: [i32; 2]) -> f64 {
    (a[0] * b[1] - a[1] * b[0]) as f64
}

/// Fourier coefficients of a real vorticity field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: WaveGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: WaveGrid) -> Self {
        SpectralField { grid, coeffs: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    /// Build from raw coefficients. The reality condition is validated.
    pub fn from_coeffs(grid: WaveGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        let f = SpectralField { grid, coeffs };
        f.check_reality()?;
        Ok(f)
    }

    /// Build from `(k, ω_k)` pairs; the conjugate at `-k` is filled in.
    pub fn from_modes(grid: WaveGrid, modes: &[([i32; 2], Complex64)]) -> Self {
        let mut f = Self::zeros(grid);
        for &(k, c) in modes {
            f.set_mode(k, c);
        }
        f
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Mutable raw access. Callers are responsible for the reality condition.
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn get(&self, k: [i32; 2]) -> Complex64 {
        if !self.grid.stores(k) {
            return Complex64::new(0.0, 0.0);
        }
        self.coeffs[self.grid.index(k)]
    }

    /// Set ω_k and ω_{-k} = conj(ω_k). For self-conjugate slots the
    /// imaginary part is dropped; setting k = 0 is ignored.
    pub fn set_mode(&mut self, k: [i32; 2], c: Complex64) {
        if k == [0, 0] {
            return;
        }
        assert!(self.grid.stores(k), "mode {k:?} outside the grid");
        let i = self.grid.index(k);
        let j = self.grid.index([-k[0], -k[1]]);
        self.coeffs[i] = c;
        self.coeffs[j] = c.conj();
    }

    /// Largest |ω_{-k} - conj(ω_k)| over the grid, including |ω_0|.
    pub fn reality_defect(&self) -> f64 {
        let mut worst = self.coeffs[0].norm();
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = self.grid.wavenumber(i);
            let j = self.grid.index([-k[0], -k[1]]);
            worst = worst.max((self.coeffs[j] - c.conj()).norm());
        }
        worst
    }

    pub fn check_reality(&self) -> Result<()> {
        let d = self.reality_defect();
        if d.is_nan() || d > REALITY_TOL {
            Err(Error::RealityViolation(d))
        } else {
            Ok(())
        }
    }

    fn weighted_sum(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if i == 0 {
                continue;
            }
            s += c.norm_sqr() * weight(norm_sq(self.grid.wavenumber(i)));
        }
        s
    }

    /// ‖u‖² = Σ |ω_k|²/|k|².
    pub fn energy(&self) -> f64 {
        self.weighted_sum(|k2| 1.0 / k2)
    }

    /// ‖Λu‖² = Σ |ω_k|².
    pub fn enstrophy(&self) -> f64 {
        self.weighted_sum(|_| 1.0)
    }

    /// ‖Λ²u‖² = Σ |k|² |ω_k|².
    pub fn palinstrophy(&self) -> f64 {
        self.weighted_sum(|k2| k2)
    }

    /// Velocity inner product Σ Re(conj(a_k) b_k)/|k|².
    pub fn energy_pairing(&self, other: &SpectralField) -> f64 {
        self.pairing(other, |k2| 1.0 / k2)
    }

    /// Vorticity inner product Σ Re(conj(a_k) b_k).
    pub fn enstrophy_pairing(&self, other: &SpectralField) -> f64 {
        self.pairing(other, |_| 1.0)
    }

    fn pairing(&self, other: &SpectralField, weight: impl Fn(f64) -> f64) -> f64 {
        assert_eq!(self.grid, other.grid);
        let mut s = 0.0;
        for i in 1..self.coeffs.len() {
            let w = weight(norm_sq(self.grid.wavenumber(i)));
            s += (self.coeffs[i].conj() * other.coeffs[i]).re * w;
        }
        s
    }

    /// Keep modes with |k| < n_star.
    pub fn project_low(&self, n_star: f64) -> SpectralField {
        self.filter(|k| norm_sq(k).sqrt() < n_star)
    }

    /// Keep modes with |k| >= n_star.
    pub fn project_high(&self, n_star: f64) -> SpectralField {
        self.filter(|k| norm_sq(k).sqrt() >= n_star)
    }

    /// Zero every mode for which `keep` is false.
    pub fn filter(&self, keep: impl Fn([i32; 2]) -> bool) -> SpectralField {
        let mut out = self.clone();
        for (i, c) in out.coeffs.iter_mut().enumerate() {
            if i == 0 || !keep(self.grid.wavenumber(i)) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, other.grid);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        SpectralField { grid: self.grid, coeffs }
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, other.grid);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        SpectralField { grid: self.grid, coeffs }
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        SpectralField { grid: self.grid, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Nonzero modes as `(k1, k2, re, im)` rows, in storage order.
    pub fn nonzero_modes(&self) -> Vec<(i32, i32, f64, f64)> {
        let mut rows = Vec::new();
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.re != 0.0 || c.im != 0.0 {
                let k = self.grid.wavenumber(i);
                rows.push((k[0], k[1], c.re, c.im));
            }
        }
        rows
    }

    /// Write the nonzero modes as CSV with header `k1,k2,re,im`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k1,k2,re,im")?;
        for (k1, k2, re, im) in self.nonzero_modes() {
            writeln!(w, "{k1},{k2},{re:e},{im:e}")?;
        }
        Ok(())
    }
}

/// Reusable FFT plans and buffers for the pseudospectral nonlinear term.
///
/// The transform size `M` is chosen so that products of two retained fields
/// do not alias back onto retained modes (`M >= 3m + 1`), which makes the
/// result identical, up to round-off, to the direct convolution.
pub struct NonlinearEvaluator {
    grid: WaveGrid,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    tmp: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl NonlinearEvaluator {
    pub fn new(grid: WaveGrid) -> Result<Self> {
        let mi = grid.max_index().max(0) as usize;
        let m = grid.n().max(3 * mi + 1);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let zero = Complex64::new(0.0, 0.0);
        Ok(NonlinearEvaluator {
            grid,
            m,
            fwd,
            inv,
            a: vec![zero; m * m],
            b: vec![zero; m * m],
            tmp: vec![zero; m * m],
            scratch: vec![zero; scratch_len],
        })
    }

    pub fn grid(&self) -> &WaveGrid {
        &self.grid
    }

    /// Transform size used internally.
    pub fn transform_size(&self) -> usize {
        self.m
    }

    /// Evaluate the nonlinear term without validating the input.
    ///
    /// N_k = Σ_{ℓ+j=k} (k^⊥·ℓ)/|ℓ|² ω_ℓ ω_j, computed as -(u·∇ω) with
    /// u = ∇^⊥ψ, Δψ = ω.
    pub fn eval_into(&mut self, w: &SpectralField, out: &mut SpectralField) {
        assert_eq!(*w.grid(), self.grid);
        assert_eq!(*out.grid(), self.grid);
        let m = self.m as i32;
        let mi = self.grid.max_index();
        let zero = Complex64::new(0.0, 0.0);
        self.a.iter_mut().for_each(|c| *c = zero);
        self.b.iter_mut().for_each(|c| *c = zero);
        let i = Complex64::new(0.0, 1.0);
        // a packs u1 + i u2, b packs ∂xω + i ∂yω; all four are real in space.
        for k1 in -mi..=mi {
            for k2 in -mi..=mi {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                let c = w.coeffs[self.grid.index([k1, k2])];
                let ksq = (k1 * k1 + k2 * k2) as f64;
                let u1 = i * (k2 as f64) * c / ksq;
                let u2 = -i * (k1 as f64) * c / ksq;
                let gx = i * (k1 as f64) * c;
                let gy = i * (k2 as f64) * c;
                let idx = (k1.rem_euclid(m) * m + k2.rem_euclid(m)) as usize;
                self.a[idx] = u1 + i * u2;
                self.b[idx] = gx + i * gy;
            }
        }
        fft2(&*self.inv, &mut self.a, &mut self.tmp, &mut self.scratch, self.m);
        fft2(&*self.inv, &mut self.b, &mut self.tmp, &mut self.scratch, self.m);
        for (x, y) in self.a.iter_mut().zip(&self.b) {
            *x = Complex64::new(-(x.re * y.re + x.im * y.im), 0.0);
        }
        fft2(&*self.fwd, &mut self.a, &mut self.tmp, &mut self.scratch, self.m);
        let norm = 1.0 / (self.m * self.m) as f64;
        out.coeffs.iter_mut().for_each(|c| *c = zero);
        for k1 in -mi..=mi {
            for k2 in -mi..=mi {
                if k1 == 0 && k2 == 0 {
                    continue;
                }
                let idx = (k1.rem_euclid(m) * m + k2.rem_euclid(m)) as usize;
                out.coeffs[self.grid.index([k1, k2])] = self.a[idx] * norm;
            }
        }
        symmetrize(out);
    }

    /// Validated evaluation returning a fresh field.
    pub fn eval(&mut self, w: &SpectralField) -> Result<SpectralField> {
        w.check_reality()?;
        let mut out = SpectralField::zeros(self.grid);
        self.eval_into(w, &mut out);
        Ok(out)
    }
}

/// Replace each pair (ω_k, ω_{-k}) by its exactly conjugate-symmetric average.
fn symmetrize(f: &mut SpectralField) {
    let grid = f.grid;
    for idx in 0..f.coeffs.len() {
        let k = grid.wavenumber(idx);
        if !is_upper(k) {
            continue;
        }
        let j = grid.index([-k[0], -k[1]]);
        if j == idx {
            continue;
        }
        let avg = (f.coeffs[idx] + f.coeffs[j].conj()) * 0.5;
        f.coeffs[idx] = avg;
        f.coeffs[j] = avg.conj();
    }
}

fn fft2(
    plan: &dyn Fft<f64>,
    data: &mut [Complex64],
    tmp: &mut [Complex64],
    scratch: &mut [Complex64],
    m: usize,
) {
    plan.process_with_scratch(data, scratch);
    transpose(data, tmp, m);
    plan.process_with_scratch(tmp, scratch);
    transpose(tmp, data, m);
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], m: usize) {
    for r in 0..m {
        for c in 0..m {
            dst[c * m + r] = src[r * m + c];
        }
    }
}

/// Dealiased nonlinear term of the vorticity equation.
///
/// Rejects fields that violate the reality condition by more than
/// [`REALITY_TOL`]. For repeated evaluation prefer [`NonlinearEvaluator`].
pub fn nonlinear_term(w: &SpectralField) -> Result<SpectralField> {
    NonlinearEvaluator::new(*w.grid())?.eval(w)
}

pub fn energy(w: &SpectralField) -> f64 {
    w.energy()
}

pub fn enstrophy(w: &SpectralField) -> f64 {
    w.enstrophy()
}

pub fn project_low(w: &SpectralField, n_star: f64) -> SpectralField {
    w.project_low(n_star)
}

pub fn project_high(w: &SpectralField, n_star: f64) -> SpectralField {
    w.project_high(n_star)
}

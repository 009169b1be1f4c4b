//! Experiment configuration files and their resolution into a run.
//!
//! A file holds `schema_version`, optional `seed`, `threads` and `out`, a
//! `[solver]` table, a `[model]` table for the two-dimensional model and one
//! table per subcommand. Unknown keys are rejected. Values not given fall
//! back to the subcommand defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sns_lab::dynamics::SolverConfig;
use sns_lab::estimators::{Functional, Pairing, StationaryQuantity};
use sns_lab::forcing::{ForcingForm, ForcingSpec};
use sns_lab::presets;
use sns_lab::spectral::{norm_sq, WaveGrid};
use sns_lab::toy::ToyParams;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    pub model: Option<ToyParams>,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub stationary: StationaryParams,
    #[serde(default)]
    pub envelope: EnvelopeParams,
    #[serde(default)]
    pub ou_compare: OuCompareParams,
    #[serde(default)]
    pub sync: SyncParams,
    #[serde(default)]
    pub large_nu: LargeNuParams,
    #[serde(default)]
    pub toy: ToyRunParams,
    #[serde(default)]
    pub girsanov: GirsanovParams,
    #[serde(default)]
    pub couple: CoupleParams,
    #[serde(default)]
    pub cascade: CascadeParams,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Base configuration, one of `four-mode`, `band` or `small-scale`.
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub cutoff: Option<f64>,
    pub nu: Option<f64>,
    pub dt: Option<f64>,
    pub forcing: Option<ForcingSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForcingSection {
    FourMode,
    /// Equal amplitudes on `r_min <= |k| < r_max` with injection rate `e0`.
    Band { r_min: f64, r_max: f64, e0: f64 },
    /// |σ_k| = scale |k|^(-exponent) on `r_min <= |k| < r_max` within the grid.
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        r_min: f64,
        r_max: Option<f64>,
    },
    /// Rows `[k1, k2, x, y]`: `(Re σ, Im σ)` for the complex form, `(σ^cos, σ^sin)` for the real one.
    Explicit { form: ForcingForm, modes: Vec<[f64; 4]> },
}

fn one() -> f64 {
    1.0
}

impl SolverSection {
    /// Builds the solver configuration on top of `default_preset`.
    pub fn resolve(&self, default_preset: &str, nu_flag: Option<f64>) -> Result<SolverConfig, CliError> {
        let name = self.preset.as_deref().unwrap_or(default_preset);
        let base = named_solver(name).ok_or_else(|| CliError::Config(format!("unknown solver preset '{name}'")))?;
        let n = self.n.unwrap_or(base.grid().n());
        let grid = match self.cutoff {
            Some(c) => WaveGrid::with_cutoff(n, c),
            None if self.n.is_some() => WaveGrid::new(n),
            None => Ok(*base.grid()),
        }
        .map_err(CliError::from)?;
        let forcing = match &self.forcing {
            None => base.forcing().clone(),
            Some(f) => f.build(&grid)?,
        };
        let nu = nu_flag.or(self.nu).unwrap_or(base.nu());
        let dt = self.dt.unwrap_or(base.dt());
        SolverConfig::new(nu, dt, grid, forcing).map_err(CliError::from)
    }
}

fn named_solver(name: &str) -> Option<SolverConfig> {
    match name {
        "large-nu" => large_nu_solver().ok(),
        other => presets::by_name(other),
    }
}

/// N = 16, ν = 4, band forcing on 1 ≤ |k| < 4 with E₀ = 2.
fn large_nu_solver() -> sns_lab::Result<SolverConfig> {
    SolverConfig::new(4.0, 0.01, WaveGrid::new(16)?, ForcingSpec::band(1.0, 4.0, 2.0)?)
}

impl ForcingSection {
    fn build(&self, grid: &WaveGrid) -> Result<ForcingSpec, CliError> {
        let spec = match self {
            ForcingSection::FourMode => Ok(ForcingSpec::four_mode()),
            ForcingSection::Band { r_min, r_max, e0 } => ForcingSpec::band(*r_min, *r_max, *e0),
            ForcingSection::Power { exponent, scale, r_min, r_max } => ForcingSpec::complex_from_fn(
                grid.max_index(),
                *r_min,
                r_max.unwrap_or(f64::INFINITY),
                |k| scale * norm_sq(k).powf(-0.5 * exponent),
            ),
            ForcingSection::Explicit { form: ForcingForm::Complex, modes } => ForcingSpec::complex(modes),
            ForcingSection::Explicit { form: ForcingForm::Real, modes } => ForcingSpec::real(modes),
        };
        spec.map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub steps: usize,
    pub stride: usize,
    /// Random fields per grid for the conservation check; 0 disables it.
    pub conservation_fields: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams { steps: 2000, stride: 10, conservation_fields: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryParams {
    pub burn_in: f64,
    pub horizon: f64,
    pub trajectories: usize,
    pub tolerance: f64,
    pub quantity: StationaryQuantity,
    /// Paths of the per-mode OU stationary variance check; 0 disables it.
    pub ou_paths: usize,
    pub ou_steps: usize,
    /// Step of the OU run; the OU step is exact, so any step is accurate.
    pub ou_dt: f64,
}

impl Default for StationaryParams {
    fn default() -> Self {
        StationaryParams {
            burn_in: 100.0,
            horizon: 500.0,
            trajectories: 16,
            tolerance: 0.05,
            quantity: StationaryQuantity::Enstrophy,
            ou_paths: 4000,
            ou_steps: 200,
            ou_dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeParams {
    /// Sample times of the energy moment check; empty disables it.
    pub times: Vec<f64>,
    pub ensemble: usize,
    pub eps: Vec<f64>,
    /// Levels K = factor/(ε C₃); every factor must exceed one.
    pub k_factors: Vec<f64>,
    pub eps_star: f64,
    pub sns_paths: usize,
    pub sns_steps: usize,
    /// Paths of the two-dimensional model; 0 skips it.
    pub toy_paths: usize,
    pub toy_steps: usize,
    pub toy_dt: f64,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        EnvelopeParams {
            times: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            ensemble: 400,
            eps: vec![0.25, 0.5, 0.75],
            k_factors: vec![1.1, 1.5, 2.5],
            eps_star: 0.5,
            sns_paths: 200,
            sns_steps: 1000,
            toy_paths: 2000,
            toy_steps: 2000,
            toy_dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OuCompareParams {
    pub shells: Vec<f64>,
    pub functional: Functional,
    pub burn_in: usize,
    pub window: usize,
    pub ensemble: usize,
    pub pairing: Pairing,
    pub alpha: f64,
}

impl Default for OuCompareParams {
    fn default() -> Self {
        OuCompareParams {
            shells: vec![2.0, 4.0, 8.0, 16.0],
            functional: Functional::TanhReal,
            burn_in: 300,
            window: 1,
            ensemble: 100,
            pairing: Pairing::SharedNoise,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyncParams {
    pub n_star: f64,
    pub steps: usize,
    pub burn_in: usize,
    /// Scales of the high-mode initial data compared with h₀ = 0.
    pub h0_scales: Vec<f64>,
    pub ratio_max: f64,
    pub r2_min: f64,
    /// Sampled pairs for 𝒞̂ and the predicted rate; 0 skips the prediction.
    pub c_hat_pairs: usize,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams { n_star: 4.0, steps: 2000, burn_in: 500, h0_scales: vec![0.5, 2.0], ratio_max: 1e-4, r2_min: 0.95, c_hat_pairs: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LargeNuParams {
    pub threshold: f64,
    pub horizon: f64,
    pub pullback_max: usize,
    pub c_hat_pairs: usize,
    pub ascent: usize,
    pub distance_max: f64,
}

impl Default for LargeNuParams {
    fn default() -> Self {
        LargeNuParams { threshold: 0.5, horizon: 10.0, pullback_max: 5, c_hat_pairs: 1000, ascent: 20, distance_max: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ToyRunParams {
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub h0: f64,
    pub h0_alt: f64,
    /// Required fraction of the rate ν₁ - L₁.
    pub rate_fraction: f64,
}

impl Default for ToyRunParams {
    fn default() -> Self {
        ToyRunParams { dt: 0.001, steps: 10_000, paths: 5, h0: 1.0, h0_alt: -1.0, rate_fraction: 0.95 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GirsanovParams {
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub l0: f64,
    pub h0: f64,
    pub h0_alt: f64,
    pub p: f64,
}

impl Default for GirsanovParams {
    fn default() -> Self {
        GirsanovParams { dt: 0.01, steps: 400, paths: 100_000, l0: 0.0, h0: 1.0, h0_alt: -1.0, p: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleParams {
    pub dt: f64,
    pub horizon: usize,
    pub replicas: usize,
    pub u0: [f64; 2],
    pub v0: [f64; 2],
    pub drift_segments: usize,
    pub drift_replicas: usize,
    pub marginal_times: Vec<usize>,
    pub alpha: f64,
    pub rho_max: usize,
    pub tail_max: usize,
    /// Random measure pairs for the lattice identities; 0 disables them.
    pub fixtures: u64,
}

impl Default for CoupleParams {
    fn default() -> Self {
        CoupleParams {
            dt: 0.01,
            horizon: 40,
            replicas: 600,
            u0: [2.0, -1.0],
            v0: [-1.5, 2.0],
            drift_segments: 20,
            drift_replicas: 200,
            marginal_times: vec![1, 2, 5, 10],
            alpha: 0.05,
            rho_max: 10,
            tail_max: 20,
            fixtures: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeParams {
    /// Seed modes; empty means the cos/sin intersection of the solver forcing.
    pub seeds: Vec<[i32; 2]>,
    pub radius: i32,
    /// Ball on which Z_∞ coverage is reported.
    pub z_radius: i32,
    pub z_max_iter: usize,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams { seeds: vec![[1, 0], [1, 1]], radius: 8, z_radius: 10, z_max_iter: 200 }
    }
}

/// Parses `"1,0;1,1"` into modes.
pub fn parse_modes(text: &str) -> Result<Vec<[i32; 2]>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [a, b] => match (a.parse(), b.parse()) {
                    (Ok(a), Ok(b)) => Ok([a, b]),
                    _ => Err(CliError::Config(format!("mode '{pair}' is not an integer pair"))),
                },
                _ => Err(CliError::Config(format!("mode '{pair}' must have the form k1,k2"))),
            }
        })
        .collect()
}

/// Subcommand parameters after defaults and overrides are applied.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Params {
    Simulate(SimulateParams),
    OuCompare(OuCompareParams),
    Stationary(StationaryParams),
    Envelope { model: ToyParams, run: EnvelopeParams },
    Sync(SyncParams),
    LargeNu(LargeNuParams),
    Toy { model: ToyParams, run: ToyRunParams },
    Girsanov { model: ToyParams, run: GirsanovParams },
    Couple { model: ToyParams, run: CoupleParams },
    Cascade(CascadeParams),
}

impl Params {
    pub fn name(&self) -> &'static str {
        match self {
            Params::Simulate(_) => "simulate",
            Params::OuCompare(_) => "ou-compare",
            Params::Stationary(_) => "stationary",
            Params::Envelope { .. } => "envelope",
            Params::Sync(_) => "sync",
            Params::LargeNu(_) => "large-nu",
            Params::Toy { .. } => "toy",
            Params::Girsanov { .. } => "girsanov",
            Params::Couple { .. } => "couple",
            Params::Cascade(_) => "cascade",
        }
    }

    /// Solver preset used when the file does not name one, or `None` for
    /// subcommands that do not run the vorticity equation.
    pub fn default_preset(&self) -> Option<&'static str> {
        match self {
            Params::Simulate(_) | Params::Envelope { .. } | Params::Sync(_) => Some("band"),
            Params::Stationary(_) => Some("four-mode"),
            Params::OuCompare(_) => Some("small-scale"),
            Params::LargeNu(_) => Some("large-nu"),
            Params::Cascade(_) => Some("band"),
            Params::Toy { .. } | Params::Girsanov { .. } | Params::Couple { .. } => None,
        }
    }
}

/// Everything that determines the numbers of a run. Its hash names the output files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Run {
    pub seed: u64,
    pub solver: Option<SolverConfig>,
    pub params: Params,
}

impl Run {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("runs serialize");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

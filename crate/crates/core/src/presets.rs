//! Named default configurations shared by the acceptance checks and the
//! command line.

use crate::dynamics::SolverConfig;
use crate::error::Result;
use crate::forcing::ForcingSpec;
use crate::spectral::{norm_sq, WaveGrid};

/// N = 32, ν = 0.5, dt = 0.01, forcing on ±(1,0) and ±(0,1) with E₀ = 2.
pub fn four_mode() -> Result<SolverConfig> {
    SolverConfig::new(0.5, 0.01, WaveGrid::new(32)?, ForcingSpec::four_mode())
}

/// N = 32, ν = 1, dt = 0.01, equal amplitudes on 1 ≤ |k| < 4 with E₀ = 1.
pub fn band() -> Result<SolverConfig> {
    SolverConfig::new(1.0, 0.01, WaveGrid::new(32)?, ForcingSpec::band(1.0, 4.0, 1.0)?)
}

/// N = 64, ν = 0.5, dt = 0.01, |σ_k| = |k|⁻² on every resolved mode.
pub fn small_scale() -> Result<SolverConfig> {
    let grid = WaveGrid::new(64)?;
    let f = ForcingSpec::complex_from_fn(grid.max_index(), 1.0, f64::INFINITY, |k| 1.0 / norm_sq(k))?;
    SolverConfig::new(0.5, 0.01, grid, f)
}

/// Every preset with its name.
pub fn defaults() -> Result<Vec<(&'static str, SolverConfig)>> {
    Ok(vec![("four-mode", four_mode()?), ("band", band()?), ("small-scale", small_scale()?)])
}

/// Looks a preset up by name.
pub fn by_name(name: &str) -> Option<SolverConfig> {
    match name {
        "four-mode" => four_mode().ok(),
        "band" => band().ok(),
        "small-scale" => small_scale().ok(),
        _ => None,
    }
}

//! Pass/fail records shared by every check.

use serde::{Deserialize, Serialize};

use crate::stats::Estimate;

/// One verified inequality or identity: an estimate with its interval, the
/// bound it is compared against, and the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, estimate: f64, ci: (f64, f64), bound: f64, pass: bool) -> Self {
        Check { name: name.into(), estimate, ci_low: ci.0, ci_high: ci.1, bound, pass }
    }

    /// Monte Carlo mean against an upper bound with three standard errors of slack.
    pub fn upper(name: impl Into<String>, est: &Estimate, bound: f64) -> Self {
        let pass = est.mean <= bound + 3.0 * est.se;
        Check::new(name, est.mean, est.ci(3.0), bound, pass)
    }

    /// An exact quantity with no sampling error.
    pub fn exact(name: impl Into<String>, value: f64, bound: f64, pass: bool) -> Self {
        Check::new(name, value, (value, value), bound, pass)
    }
}

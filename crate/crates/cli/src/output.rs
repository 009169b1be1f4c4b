//! Report records, JSONL and CSV output, and replay comparison.
//!
//! Every report line is one JSON object:
//!
//! | field | meaning |
//! |---|---|
//! | `schema_version` | report schema, currently 1 |
//! | `tool_version` | crate version that wrote the line |
//! | `command` | subcommand name |
//! | `config_hash` | SHA-256 of the serialized `run` |
//! | `run` | seed, resolved solver and parameters |
//! | `threads` | worker threads used |
//! | `wall_clock_s` | elapsed seconds |
//! | `checks` | `{name, estimate, ci_low, ci_high, bound, rule, pass}` |
//! | `summary` | subcommand-specific numbers |
//! | `artifacts` | CSV files written next to the report |
//! | `pass` | all checks passed |
//!
//! Non-finite numbers are written as the strings `"NaN"`, `"inf"` and `"-inf"`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::Run;
use crate::CliError;

pub const REPORT_SCHEMA: u32 = 1;

/// A float that survives a JSON round trip bit for bit, including non-finite values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("NaN")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(x) => Ok(Num(x)),
            Raw::S(s) => match s.as_str() {
                "NaN" => Ok(Num(f64::NAN)),
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                _ => Err(serde::de::Error::custom(format!("'{s}' is not a number"))),
            },
        }
    }
}

/// How `pass` follows from the stored numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// estimate ≤ bound
    Le,
    /// estimate < bound
    Lt,
    /// estimate > bound
    Gt,
    /// ci_low ≤ bound, a mean below the bound up to its interval
    CiBelow,
    /// ci_low ≤ bound ≤ ci_high
    CiContains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub estimate: Num,
    pub ci_low: Num,
    pub ci_high: Num,
    pub bound: Num,
    pub rule: Rule,
    pub pass: bool,
}

impl CheckRecord {
    fn build(name: impl Into<String>, estimate: f64, ci: (f64, f64), bound: f64, rule: Rule) -> Self {
        let mut c = CheckRecord {
            name: name.into(),
            estimate: Num(estimate),
            ci_low: Num(ci.0),
            ci_high: Num(ci.1),
            bound: Num(bound),
            rule,
            pass: false,
        };
        c.pass = c.evaluate();
        c
    }

    pub fn le(name: impl Into<String>, estimate: f64, bound: f64) -> Self {
        Self::build(name, estimate, (estimate, estimate), bound, Rule::Le)
    }

    pub fn lt(name: impl Into<String>, estimate: f64, bound: f64) -> Self {
        Self::build(name, estimate, (estimate, estimate), bound, Rule::Lt)
    }

    pub fn gt(name: impl Into<String>, estimate: f64, bound: f64) -> Self {
        Self::build(name, estimate, (estimate, estimate), bound, Rule::Gt)
    }

    /// Mean with interval `ci` against an upper bound.
    pub fn ci_below(name: impl Into<String>, estimate: f64, ci: (f64, f64), bound: f64) -> Self {
        Self::build(name, estimate, ci, bound, Rule::CiBelow)
    }

    /// Mean with interval `ci` against a target value.
    pub fn ci_contains(name: impl Into<String>, estimate: f64, ci: (f64, f64), target: f64) -> Self {
        Self::build(name, estimate, ci, target, Rule::CiContains)
    }

    /// The verdict recomputed from the stored numbers.
    pub fn evaluate(&self) -> bool {
        let (e, lo, hi, b) = (self.estimate.0, self.ci_low.0, self.ci_high.0, self.bound.0);
        match self.rule {
            Rule::Le => e <= b,
            Rule::Lt => e < b,
            Rule::Gt => e > b,
            Rule::CiBelow => lo <= b,
            Rule::CiContains => lo <= b && b <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub run: Run,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub checks: Vec<CheckRecord>,
    pub summary: serde_json::Value,
    pub artifacts: Vec<PathBuf>,
    pub pass: bool,
}

/// A CSV table produced by a subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Adds a row of numbers.
    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|x| x.to_string()).collect());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(f, "{}", r.join(","))?;
        }
        f.flush()
    }
}

/// `<out>/<command>-<hash prefix>`; report and tables share this stem.
pub fn stem(out: &Path, command: &str, hash: &str) -> PathBuf {
    out.join(format!("{command}-{}", &hash[..12]))
}

pub fn write_tables(stem: &Path, tables: &[Table]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for t in tables {
        let p = PathBuf::from(format!("{}-{}.csv", stem.display(), t.name));
        t.write(&p).map_err(|e| CliError::Io(format!("writing {}: {e}", p.display())))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Appends one line to `<stem>.jsonl` and returns the file path.
pub fn append_report(stem: &Path, report: &Report) -> Result<PathBuf, CliError> {
    let path = PathBuf::from(format!("{}.jsonl", stem.display()));
    let line = serde_json::to_string(report).map_err(|e| CliError::Io(e.to_string()))?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::Io(format!("opening {}: {e}", path.display())))?;
    writeln!(f, "{line}").map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

pub fn read_reports(path: &Path) -> Result<Vec<Report>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read report {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Fields of `replayed` that differ from `original`. Bitwise unless
/// `statistical`, in which case intervals need only overlap.
pub fn diverging_fields(original: &Report, replayed: &[CheckRecord], statistical: bool) -> Vec<String> {
    let mut out = Vec::new();
    if original.checks.len() != replayed.len() {
        out.push(format!("check count: report {} vs replay {}", original.checks.len(), replayed.len()));
    }
    for (a, b) in original.checks.iter().zip(replayed) {
        if a.name != b.name {
            out.push(format!("check name: report '{}' vs replay '{}'", a.name, b.name));
            continue;
        }
        if statistical {
            if a.ci_high.0 < b.ci_low.0 || b.ci_high.0 < a.ci_low.0 {
                out.push(format!(
                    "{}: intervals [{}, {}] and [{}, {}] do not overlap",
                    a.name, a.ci_low.0, a.ci_high.0, b.ci_low.0, b.ci_high.0
                ));
            }
            continue;
        }
        let fields = [("estimate", a.estimate, b.estimate), ("ci_low", a.ci_low, b.ci_low), ("ci_high", a.ci_high, b.ci_high), ("bound", a.bound, b.bound)];
        for (field, x, y) in fields {
            if x.0.to_bits() != y.0.to_bits() {
                out.push(format!("{}.{field}: report {} vs replay {}", a.name, x.0, y.0));
            }
        }
        if a.pass != b.pass {
            out.push(format!("{}.pass: report {} vs replay {}", a.name, a.pass, b.pass));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_round_trip() {
        for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY, 0.1 + 0.2, -0.0, 1e-300] {
            let s = serde_json::to_string(&Num(x)).unwrap();
            let y: Num = serde_json::from_str(&s).unwrap();
            assert_eq!(x.to_bits(), y.0.to_bits(), "{s}");
        }
    }

    #[test]
    fn rules_follow_stored_numbers() {
        assert!(CheckRecord::le("a", 1.0, 1.0).pass);
        assert!(!CheckRecord::lt("a", 1.0, 1.0).pass);
        assert!(CheckRecord::ci_contains("a", 1.0, (0.5, 1.5), 1.2).pass);
        assert!(!CheckRecord::ci_contains("a", 1.0, (0.5, 1.1), 1.2).pass);
        assert!(CheckRecord::ci_below("a", 1.3, (1.1, 1.5), 1.2).pass);
    }

    proptest::proptest! {
        #[test]
        fn any_float_round_trips(bits in proptest::num::u64::ANY) {
            let x = f64::from_bits(bits);
            let y: Num = serde_json::from_str(&serde_json::to_string(&Num(x)).unwrap()).unwrap();
            proptest::prop_assert!(x.to_bits() == y.0.to_bits() || (x.is_nan() && y.0.is_nan()));
        }
    }
}

//! `sns-lab`: run the laboratory's experiments from the command line.
//!
//! Every experiment subcommand resolves its settings with the precedence
//! flag > environment variable > config file > built-in default, writes a
//! JSONL report and CSV tables under `--out`, and exits with
//!
//! | code | meaning |
//! |---|---|
//! | 0 | every check passed |
//! | 1 | a check failed, or `replay` found diverging fields |
//! | 2 | configuration or I/O error |
//! | 3 | numerical failure such as blow-up |

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{parse_modes, ConfigFile, Params, Run, SCHEMA_VERSION};
use output::{append_report, diverging_fields, read_reports, stem, write_tables, Report, REPORT_SCHEMA};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(sns_lab::Error),
    ChecksFailed(usize),
    ReplayMismatch(usize),
}

impl From<sns_lab::Error> for CliError {
    fn from(e: sns_lab::Error) -> Self {
        use sns_lab::Error::*;
        match e {
            InvalidConfig(m) | InvalidGrid(m) | InsufficientData(m) | NotEquivalent(m) => CliError::Config(m),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) | CliError::ReplayMismatch(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
            CliError::ReplayMismatch(n) => write!(f, "{n} report line(s) did not replay"),
        }
    }
}

#[derive(Parser)]
#[command(name = "sns-lab", version, about = "Stochastic Navier-Stokes laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML experiment file.
    #[arg(long, env = "SNS_LAB_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "SNS_LAB_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "SNS_LAB_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, env = "SNS_LAB_OUT")]
    out: Option<PathBuf>,
    /// Viscosity, overriding the solver table.
    #[arg(long)]
    nu: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and check the nonlinear pairings.
    Simulate(Common),
    /// Small-scale comparison with the Ornstein-Uhlenbeck process.
    OuCompare(Common),
    /// Stationary enstrophy balance and OU stationary variances.
    Stationary(Common),
    /// Energy moment bound and the exponential martingale envelope.
    Envelope(Common),
    /// Synchronization of the high modes from shared low modes.
    Sync(Common),
    /// Contraction and pullback convergence at large viscosity.
    LargeNu(Common),
    /// Pathwise contraction of the two-dimensional model.
    Toy(Common),
    /// Girsanov exponent of the two-dimensional model.
    Girsanov(Common),
    /// Measure lattice identities and the coupling chain.
    Couple(Common),
    /// Wave-vector cascade coverage.
    Cascade(CascadeArgs),
    /// Summarize report files and recheck their verdicts.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Re-run the runs of a report and compare the numbers.
    Replay {
        report: PathBuf,
        /// Replay only this line (1-based).
        #[arg(long)]
        line: Option<usize>,
    },
}

#[derive(Args, Clone, Debug)]
struct CascadeArgs {
    #[command(flatten)]
    common: Common,
    /// Seed modes as `k1,k2;k1,k2`.
    #[arg(long)]
    seed_modes: Option<String>,
    /// Ball radius N.
    #[arg(long)]
    radius: Option<i32>,
}

struct Settings {
    run: Run,
    threads: usize,
    out: PathBuf,
}

fn settings(common: &Common, build: impl FnOnce(&ConfigFile) -> Result<Params, CliError>) -> Result<Settings, CliError> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile { schema_version: SCHEMA_VERSION, ..ConfigFile::default() },
    };
    let params = build(&file)?;
    let solver = match params.default_preset() {
        Some(_) if matches!(&params, Params::Cascade(c) if !c.seeds.is_empty()) => None,
        Some(preset) => Some(file.solver.resolve(preset, common.nu)?),
        None if common.nu.is_some() => {
            return Err(CliError::Config(format!("--nu does not apply to '{}'", params.name())));
        }
        None => None,
    };
    let threads = common.threads.or(file.threads).unwrap_or(1);
    if threads == 0 {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    Ok(Settings {
        run: Run { seed: common.seed.or(file.seed).unwrap_or(1), solver, params },
        threads,
        out: common.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("sns-lab-out")),
    })
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Config(e.to_string()))
}

fn run_experiment(s: Settings) -> Result<(), CliError> {
    let hash = s.run.hash();
    let command = s.run.params.name();
    let start = Instant::now();
    let outcome = thread_pool(s.threads)?.install(|| commands::execute(&s.run))?;
    let wall_clock_s = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&s.out).map_err(|e| CliError::Io(format!("creating {}: {e}", s.out.display())))?;
    let stem = stem(&s.out, command, &hash);
    let artifacts = write_tables(&stem, &outcome.tables)?;
    let pass = outcome.checks.iter().all(|c| c.pass);
    let report = Report {
        schema_version: REPORT_SCHEMA,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: hash,
        run: s.run,
        threads: s.threads,
        wall_clock_s,
        checks: outcome.checks,
        summary: outcome.summary,
        artifacts,
        pass,
    };
    let path = append_report(&stem, &report)?;
    for c in &report.checks {
        println!("{} {}: estimate {} bound {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.estimate.0, c.bound.0);
    }
    for l in &outcome.lines {
        println!("{l}");
    }
    println!("report {}", path.display());
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        Err(CliError::ChecksFailed(failed))
    } else {
        Ok(())
    }
}

fn report_cmd(files: &[PathBuf]) -> Result<(), CliError> {
    let mut failed = 0;
    for f in files {
        for (i, r) in read_reports(f)?.iter().enumerate() {
            println!("{}:{} {} {} {}", f.display(), i + 1, r.command, &r.config_hash[..12], if r.pass { "PASS" } else { "FAIL" });
            let mut ok = r.pass;
            for c in &r.checks {
                let recomputed = c.evaluate();
                let note = if recomputed == c.pass { "" } else { " (stored verdict disagrees with its numbers)" };
                println!("  {} {}{note}", if recomputed { "PASS" } else { "FAIL" }, c.name);
                ok &= recomputed && recomputed == c.pass;
            }
            if r.pass != r.checks.iter().all(|c| c.pass) {
                println!("  overall verdict disagrees with its checks");
                ok = false;
            }
            failed += usize::from(!ok);
        }
    }
    if failed > 0 {
        Err(CliError::ChecksFailed(failed))
    } else {
        Ok(())
    }
}

fn replay_cmd(path: &Path, line: Option<usize>) -> Result<(), CliError> {
    let reports = read_reports(path)?;
    if let Some(l) = line {
        if l == 0 || l > reports.len() {
            return Err(CliError::Config(format!("{} has {} report line(s), not line {l}", path.display(), reports.len())));
        }
    }
    let pool = thread_pool(1)?;
    let mut mismatched = 0;
    for (i, r) in reports.iter().enumerate() {
        if line.is_some_and(|l| l != i + 1) {
            continue;
        }
        let mut diffs = Vec::new();
        let hash = r.run.hash();
        if hash != r.config_hash {
            diffs.push(format!("config_hash: report {} vs run {}", r.config_hash, hash));
        }
        let outcome = pool.install(|| commands::execute(&r.run))?;
        diffs.extend(diverging_fields(r, &outcome.checks, r.threads > 1));
        let pass = outcome.checks.iter().all(|c| c.pass);
        if pass != r.pass {
            diffs.push(format!("pass: report {} vs replay {pass}", r.pass));
        }
        if diffs.is_empty() {
            println!("line {}: {} replayed identically", i + 1, r.command);
        } else {
            mismatched += 1;
            println!("line {}: {} diverges", i + 1, r.command);
            for d in diffs {
                println!("  {d}");
            }
        }
    }
    if mismatched > 0 {
        Err(CliError::ReplayMismatch(mismatched))
    } else {
        Ok(())
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let model = |f: &ConfigFile| f.model.unwrap_or_default();
    let s = match cli.command {
        Command::Report { files } => return report_cmd(&files),
        Command::Replay { report, line } => return replay_cmd(&report, line),
        Command::Simulate(c) => settings(&c, |f| Ok(Params::Simulate(f.simulate.clone())))?,
        Command::OuCompare(c) => settings(&c, |f| Ok(Params::OuCompare(f.ou_compare.clone())))?,
        Command::Stationary(c) => settings(&c, |f| Ok(Params::Stationary(f.stationary.clone())))?,
        Command::Envelope(c) => settings(&c, |f| Ok(Params::Envelope { model: model(f), run: f.envelope.clone() }))?,
        Command::Sync(c) => settings(&c, |f| Ok(Params::Sync(f.sync.clone())))?,
        Command::LargeNu(c) => settings(&c, |f| Ok(Params::LargeNu(f.large_nu.clone())))?,
        Command::Toy(c) => settings(&c, |f| Ok(Params::Toy { model: model(f), run: f.toy.clone() }))?,
        Command::Girsanov(c) => settings(&c, |f| Ok(Params::Girsanov { model: model(f), run: f.girsanov.clone() }))?,
        Command::Couple(c) => settings(&c, |f| Ok(Params::Couple { model: model(f), run: f.couple.clone() }))?,
        Command::Cascade(a) => settings(&a.common, |f| {
            let mut p = f.cascade.clone();
            if let Some(m) = &a.seed_modes {
                p.seeds = parse_modes(m)?;
            }
            if let Some(r) = a.radius {
                p.radius = r;
            }
            Ok(Params::Cascade(p))
        })?,
    };
    run_experiment(s)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sns-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Subcommand bodies. Each turns a resolved [`Run`] into checks, a summary
//! and CSV tables; nothing here touches the file system.

use rayon::prelude::*;
use serde_json::{json, Value};
use sns_lab::cascade::{coverage, galerkin_ergodicity_precheck, grow_k, z_cover, WaveSet};
use sns_lab::coupling::*;
use sns_lab::dynamics::{simulate, SolverConfig, Stepper};
use sns_lab::estimators::*;
use sns_lab::forcing::{sample_increment, NoiseStream};
use sns_lab::spectral::{nonlinear_term, SpectralField};
use sns_lab::stats::Estimate;
use sns_lab::sync::*;
use sns_lab::toy::*;
use sns_lab::{Error, Result};

use crate::config::*;
use crate::output::{CheckRecord, Table};

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckRecord>,
    pub summary: Value,
    pub tables: Vec<Table>,
    /// Extra lines printed after the checks.
    pub lines: Vec<String>,
}

pub fn execute(run: &Run) -> Result<Outcome> {
    let solver = || run.solver.as_ref().ok_or_else(|| Error::InvalidConfig("this subcommand needs a solver".into()));
    match &run.params {
        Params::Simulate(p) => simulate_cmd(solver()?, p, run.seed),
        Params::Stationary(p) => stationary(solver()?, p, run.seed),
        Params::Envelope { model, run: p } => envelope(solver()?, model, p, run.seed),
        Params::OuCompare(p) => ou_compare(solver()?, p, run.seed),
        Params::Sync(p) => sync(solver()?, p, run.seed),
        Params::LargeNu(p) => large_nu(solver()?, p, run.seed),
        Params::Toy { model, run: p } => toy(model, p, run.seed),
        Params::Girsanov { model, run: p } => girsanov(model, p, run.seed),
        Params::Couple { model, run: p } => couple(model, p, run.seed),
        Params::Cascade(p) => cascade(run.solver.as_ref(), p),
    }
}

fn ci3(e: &Estimate) -> (f64, f64) {
    e.ci(3.0)
}

fn simulate_cmd(cfg: &SolverConfig, p: &SimulateParams, seed: u64) -> Result<Outcome> {
    let zero = SpectralField::zeros(*cfg.grid());
    let traj = simulate(cfg, &zero, NoiseStream::new(seed, 0), 0, p.steps, p.stride, false)?;
    let mut series = Table::new("series", &["t", "energy", "enstrophy", "palinstrophy"]);
    for (i, w) in traj.fields.iter().enumerate() {
        series.push_nums(&[(i * traj.stride) as f64 * traj.dt, w.energy(), w.enstrophy(), w.palinstrophy()]);
    }
    let last = traj.fields.last().expect("trajectory keeps its initial field");
    let mut fields = vec![last.clone()];
    for (a, b) in random_pairs(*cfg.grid(), p.conservation_fields, seed.wrapping_add(1)) {
        fields.push(a);
        fields.push(b);
    }
    let (mut energy, mut enstrophy) = (0.0f64, 0.0f64);
    for w in &fields {
        let nl = nonlinear_term(w)?;
        energy = energy.max(w.energy_pairing(&nl).abs());
        enstrophy = enstrophy.max(w.enstrophy_pairing(&nl).abs());
    }
    Ok(Outcome {
        checks: vec![
            CheckRecord::le("energy_pairing max", energy, 1e-8),
            CheckRecord::le("enstrophy_pairing max", enstrophy, 1e-8),
        ],
        summary: json!({
            "steps": p.steps,
            "final_energy": last.energy(),
            "final_enstrophy": last.enstrophy(),
            "injection_rate": cfg.forcing().injection_rate(),
            "fields_checked": fields.len(),
        }),
        tables: vec![series],
        lines: vec![format!("final energy {:.6}, enstrophy {:.6}", last.energy(), last.enstrophy())],
    })
}

fn stationary(cfg: &SolverConfig, p: &StationaryParams, seed: u64) -> Result<Outcome> {
    let zero = SpectralField::zeros(*cfg.grid());
    let r = stationary_enstrophy_check(cfg, &zero, p.burn_in, p.horizon, p.trajectories, seed, p.tolerance, p.quantity)?;
    let mut checks = vec![CheckRecord::le("stationary rel_error", r.rel_error, p.tolerance)];
    let mut table = Table::new("ou_variance", &["k1", "k2", "mean", "se", "target"]);
    if p.ou_paths > 0 {
        let ou = cfg.clone().with_dt(p.ou_dt)?;
        let modes: Vec<[i32; 2]> = ou.forcing().modes().iter().map(|m| m.k).collect();
        let samples: Vec<Vec<f64>> = (0..p.ou_paths as u64)
            .into_par_iter()
            .map(|path| {
                let mut s = Stepper::new(&ou)?;
                let mut z = SpectralField::zeros(*ou.grid());
                let stream = NoiseStream::new(seed.wrapping_add(1), path);
                for i in 0..p.ou_steps {
                    s.step_ou(&mut z, &sample_increment(ou.forcing(), ou.dt(), stream, i as i64)?)?;
                }
                Ok(modes.iter().map(|&k| z.get(k).norm_sqr()).collect())
            })
            .collect::<Result<_>>()?;
        for (i, &k) in modes.iter().enumerate() {
            let est = Estimate::of(&samples.iter().map(|r| r[i]).collect::<Vec<_>>());
            let target = ou.ou_stationary_variance(k);
            table.push_nums(&[k[0] as f64, k[1] as f64, est.mean, est.se, target]);
            checks.push(CheckRecord::ci_contains(format!("ou_variance k=({},{})", k[0], k[1]), est.mean, ci3(&est), target));
        }
    }
    let mut lines = vec![format!(
        "2nu<|Lambda^s u|^2> = {:.4} +/- {:.4}, target {:.4}, rel err {:.2}%",
        r.estimate.mean,
        r.estimate.se,
        r.target,
        100.0 * r.rel_error
    )];
    if p.quantity == StationaryQuantity::Enstrophy {
        let two_nu = 2.0 * cfg.nu();
        lines.push(format!(
            "enstrophy <|Lambda u|^2> = {:.4} vs E0/2nu = {:.4}",
            r.estimate.mean / two_nu,
            r.target / two_nu
        ));
    }
    if r.nonstationary {
        lines.push(format!("warning: combined Geweke z = {:.2}; the run may not be stationary", r.combined_geweke));
    }
    Ok(Outcome {
        checks,
        summary: json!({
            "quantity": r.quantity,
            "estimate": r.estimate.mean,
            "se": r.estimate.se,
            "target": r.target,
            "rel_error": r.rel_error,
            "combined_geweke": r.combined_geweke,
            "nonstationary": r.nonstationary,
        }),
        tables: if p.ou_paths > 0 { vec![table] } else { vec![] },
        lines,
    })
}

fn envelope(cfg: &SolverConfig, model: &ToyParams, p: &EnvelopeParams, seed: u64) -> Result<Outcome> {
    let mut checks = Vec::new();
    let mut moments = Table::new("energy_moment", &["t", "mean", "ci_low", "ci_high", "bound", "slack"]);
    let zero = SpectralField::zeros(*cfg.grid());
    if !p.times.is_empty() {
        let r = energy_moment_bound_check(cfg, &zero, &p.times, p.ensemble, seed)?;
        for ((t, c), s) in r.times.iter().zip(&r.checks).zip(&r.slack) {
            moments.push_nums(&[*t, c.estimate, c.ci_low, c.ci_high, c.bound, *s]);
            checks.push(CheckRecord::ci_below(c.name.clone(), c.estimate, (c.ci_low, c.ci_high), c.bound + s));
        }
    }
    let mut envelope = Table::new("martingale", &["system", "eps", "k", "exceedance", "ci_low", "bound"]);
    let mut systems: Vec<(&str, Vec<LyapunovSeries>, LyapunovSpec)> = Vec::new();
    if p.toy_paths > 0 {
        let toy_cfg = ToyConfig::from_params(model)?;
        let spec = LyapunovSpec::toy(&toy_cfg, p.eps_star)?;
        let ens = (0..p.toy_paths as u64)
            .into_par_iter()
            .map(|i| LyapunovSeries::toy(&simulate_toy(&toy_cfg, ToyState::new(0.0, 0.0), p.toy_dt, p.toy_steps, seed, i), &toy_cfg))
            .collect();
        systems.push(("toy", ens, spec));
    }
    if p.sns_paths > 0 {
        let spec = LyapunovSpec::sns(cfg, p.eps_star)?;
        let ens = sns_lyapunov_ensemble(cfg, &zero, p.sns_steps, 1, p.sns_paths, seed.wrapping_add(1))?;
        systems.push(("sns", ens, spec));
    }
    for (name, ens, spec) in &systems {
        for &eps in &p.eps {
            for &f in &p.k_factors {
                let k = f / (eps * spec.c3);
                let c = martingale_envelope_check(ens, spec, eps, k)?;
                envelope.push(vec![
                    name.to_string(),
                    eps.to_string(),
                    k.to_string(),
                    c.estimate.to_string(),
                    c.ci_low.to_string(),
                    c.bound.to_string(),
                ]);
                checks.push(CheckRecord::ci_below(format!("{name} {}", c.name), c.estimate, (c.ci_low, c.ci_high), c.bound));
            }
        }
    }
    Ok(Outcome {
        summary: json!({ "energy_times": p.times, "systems": systems.iter().map(|s| s.0).collect::<Vec<_>>() }),
        checks,
        tables: vec![moments, envelope],
        lines: vec![],
    })
}

fn ou_compare(cfg: &SolverConfig, p: &OuCompareParams, seed: u64) -> Result<Outcome> {
    let r = small_scale_ou_compare(cfg, &p.shells, p.functional, p.burn_in, p.window, p.ensemble, seed, p.pairing, p.alpha)?;
    let mut table = Table::new("shells", &["shell", "distance", "se"]);
    for (s, d) in r.shells.iter().zip(&r.distances) {
        table.push_nums(&[*s, d.mean, d.se]);
    }
    let d: Vec<String> = r.distances.iter().map(|e| format!("{:.4}", e.mean)).collect();
    Ok(Outcome {
        checks: vec![CheckRecord::lt("kendall_decreasing p_value", r.p_value, p.alpha)],
        summary: json!({
            "shells": r.shells,
            "distances": r.distances.iter().map(|e| e.mean).collect::<Vec<_>>(),
            "kendall_tau": r.kendall_tau,
            "p_value": r.p_value,
        }),
        tables: vec![table],
        lines: vec![format!("shell distances [{}], Kendall tau {:.3}", d.join(", "), r.kendall_tau)],
    })
}

fn sync(cfg: &SolverConfig, p: &SyncParams, seed: u64) -> Result<Outcome> {
    let grid = *cfg.grid();
    let pairs = random_pairs(grid, p.h0_scales.len(), seed.wrapping_add(1));
    let mut h0 = vec![SpectralField::zeros(grid)];
    h0.extend(pairs.iter().zip(&p.h0_scales).map(|((a, _), &s)| a.project_high(p.n_star).scale(s)));
    let c_hat = if p.c_hat_pairs > 0 {
        Some(estimate_nonlinearity_constant(&sample_pairs(grid, p.c_hat_pairs, seed.wrapping_add(2), 20)?)?.c_hat)
    } else {
        None
    };
    let e = SyncExperiment {
        cfg: cfg.clone(),
        n_star: p.n_star,
        h0,
        source: SyncSource::Extracted { w0: SpectralField::zeros(grid), seed, burn_in: p.burn_in },
        steps: p.steps,
        c_hat,
    };
    let r = run_sync(&e)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=r.distances.len()).map(|i| format!("distance_{i}")));
    let mut table = Table { name: "distances".into(), header, rows: Vec::new() };
    for (i, t) in r.times.iter().enumerate() {
        let mut row = vec![*t];
        row.extend(r.distances.iter().map(|d| d[i]));
        table.push_nums(&row);
    }
    Ok(Outcome {
        checks: vec![CheckRecord::lt("sync distance ratio", r.ratio, p.ratio_max), CheckRecord::gt("sync log-linear r2", r.r2, p.r2_min)],
        summary: json!({
            "rate": r.rate,
            "r2": r.r2,
            "ratio": r.ratio,
            "predicted_rate": r.predicted_rate,
            "c_hat": c_hat,
            "mean_enstrophy": r.mean_enstrophy,
            "low_checksum": r.low_checksum,
            "eta_checksum": r.eta_checksum,
        }),
        tables: vec![table],
        lines: vec![format!("rate {:.3}, predicted {}", r.rate, r.predicted_rate.map_or("n/a".into(), |x| format!("{x:.3}")))],
    })
}

fn large_nu(cfg: &SolverConfig, p: &LargeNuParams, seed: u64) -> Result<Outcome> {
    let grid = *cfg.grid();
    let c = estimate_nonlinearity_constant(&sample_pairs(grid, p.c_hat_pairs, seed.wrapping_add(1), p.ascent)?)?;
    let pairs = random_pairs(grid, 2, seed.wrapping_add(2));
    let u0 = vec![SpectralField::zeros(grid), pairs[0].0.scale(2.0), pairs[1].1.clone()];
    let r = large_nu_contraction(cfg, &u0, c.c_hat, p.threshold, p.horizon, p.pullback_max, seed)?;
    let mut table = Table::new("pullback", &["n", "sup_distance"]);
    for (i, d) in r.pullback.iter().enumerate() {
        table.push_nums(&[(i + 1) as f64, *d]);
    }
    Ok(Outcome {
        checks: vec![
            CheckRecord::lt("contraction criterion", r.criterion, p.threshold),
            CheckRecord::lt("final distance", r.final_distance, p.distance_max),
            CheckRecord::lt("pullback rate", r.pullback_rate, 0.0),
            CheckRecord::gt("pullback r2", r.pullback_r2, 0.9),
        ],
        summary: json!({
            "c_hat": c.c_hat,
            "criterion": r.criterion,
            "rate": r.rate,
            "final_distance": r.final_distance,
            "pullback": r.pullback,
            "pullback_rate": r.pullback_rate,
        }),
        tables: vec![table],
        lines: vec![],
    })
}

fn toy(model: &ToyParams, p: &ToyRunParams, seed: u64) -> Result<Outcome> {
    let cfg = ToyConfig::from_params(model)?;
    let required = -cfg.contraction() * p.rate_fraction;
    let mut checks = Vec::new();
    let mut table = Table::new("contraction", &["path", "slope", "r2"]);
    for i in 0..p.paths as u64 {
        let path = simulate_toy(&cfg, ToyState::new(0.0, 0.0), p.dt, p.steps, seed, i);
        let fit = contraction_rate(&cfg, &path.l, &path.deta, p.h0, p.h0_alt, p.dt)?;
        table.push_nums(&[i as f64, fit.slope, fit.r2]);
        checks.push(CheckRecord::le(format!("contraction slope path={i}"), fit.slope, required));
    }
    let free = cfg.without_f1();
    let path = simulate_toy(&free, ToyState::new(0.0, 0.0), p.dt, p.steps, seed.wrapping_add(1), 0);
    let linear = contraction_rate(&free, &path.l, &path.deta, p.h0, p.h0_alt, p.dt)?.slope;
    checks.push(CheckRecord::le("F1=0 slope + nu1", (linear + cfg.nu1).abs(), 1e-3));
    Ok(Outcome {
        checks,
        summary: json!({ "nu1": cfg.nu1, "l1": cfg.l1, "required_slope": required, "linear_slope": linear }),
        tables: vec![table],
        lines: vec![],
    })
}

fn girsanov(model: &ToyParams, p: &GirsanovParams, seed: u64) -> Result<Outcome> {
    let cfg = ToyConfig::from_params(model)?;
    let d_star = cfg.novikov_bound((p.h0 - p.h0_alt).abs());
    let samples = girsanov_ensemble(&cfg, p.l0, p.h0, p.h0_alt, p.dt, p.steps, seed, p.paths);
    let e = Estimate::of(&samples.iter().map(|s| s.value).collect::<Vec<_>>());
    let m = rn_moment_bound_check(&samples, p.p, d_star);
    Ok(Outcome {
        checks: vec![
            CheckRecord::ci_contains("stochastic exponent mean", e.mean, ci3(&e), 1.0),
            CheckRecord::ci_below(format!("moment p={}", p.p), m.estimate.mean, ci3(&m.estimate), m.bound),
            CheckRecord::le("max Novikov exponential", m.max_novikov_exp, d_star * (1.0 + 1e-6)),
        ],
        summary: json!({ "d_star": d_star, "mean": e.mean, "se": e.se, "moment": m.estimate.mean, "bound": m.bound }),
        tables: vec![],
        lines: vec![],
    })
}

fn couple(model: &ToyParams, p: &CoupleParams, seed: u64) -> Result<Outcome> {
    let mut checks = Vec::new();
    if p.fixtures > 0 {
        let (mut decomposition, mut tv, mut violations) = (0.0f64, 0.0f64, 0u32);
        for i in 0..p.fixtures {
            let (a, b) = random_fixture(seed, i, 2 + (i as usize % 30), i % 2 == 0);
            let r = lattice_identities(&a, &b)?;
            decomposition = decomposition.max(r.decomposition_error);
            tv = tv.max(r.tv_identity_error.unwrap_or(0.0));
            if i % 2 == 0 {
                for q in [1.5, 2.0, 3.0] {
                    violations += u32::from(!coupling_lower_bound_check(&a, &b, q, None)?.pass);
                }
            }
        }
        checks.push(CheckRecord::le("lattice decomposition error", decomposition, f64::EPSILON));
        checks.push(CheckRecord::le("lattice TV identity error", tv, 1e-14));
        checks.push(CheckRecord::le("coupling lower bound violations", violations as f64, 0.0));
    }
    let m = ToyModel::new(ToyConfig::from_params(model)?, p.dt)?;
    let (u0, v0) = (ToyState::new(p.u0[0], p.u0[1]), ToyState::new(p.v0[0], p.v0[1]));
    let drift = estimate_drift(&m, &u0, &v0, 100, p.drift_segments, p.drift_replicas, seed)?;
    let cfg = ChainConfig::new(p.horizon, p.dt, drift.m0, 4.0 * drift.m0)?;
    let chain = run_chain_ensemble(&m, &cfg, &u0, &v0, p.replicas, seed.wrapping_add(1))?;
    let marg = marginal_preservation(&m, &chain, &cfg, &u0, &v0, &p.marginal_times, seed.wrapping_add(2), p.alpha)?;
    let runs: Vec<CouplingRun> = chain.iter().flat_map(|c| c.runs.clone()).collect();
    let rho = rho_survival(&runs, p.rho_max);
    let tail = coupling_time_tail(&chain, 1, p.tail_max);
    let mixing = mixing_distance_curve(&m, &chain, &default_dictionary())?;
    let min_p = marg.tests.iter().map(|t| t.p_value).fold(f64::INFINITY, f64::min);
    let increases = rho.windows(2).filter(|w| w[1].estimate > w[0].estimate).count();
    debug_assert_eq!(increases == 0, rho_nonincreasing(&rho));
    checks.push(CheckRecord::gt("marginal min p_value", min_p, marg.level));
    checks.push(CheckRecord::le("rho increases", increases as f64, 0.0));
    checks.push(CheckRecord::lt("coupling tail slope", tail.slope.unwrap_or(f64::NAN), 0.0));
    checks.push(CheckRecord::gt("coupling tail r2", tail.r2.unwrap_or(f64::NAN), 0.9));

    let mut rho_t = Table::new("rho", &["n", "estimate", "se", "at_risk"]);
    for r in &rho {
        rho_t.push_nums(&[r.n as f64, r.estimate, r.se, r.at_risk as f64]);
    }
    let mut tail_t = Table::new("tail", &["n", "survival"]);
    for (n, s) in &tail.tail {
        tail_t.push_nums(&[*n as f64, *s]);
    }
    let mut mix_t = Table::new("mixing", &["step", "distance", "se"]);
    for ((t, d), s) in mixing.times.iter().zip(&mixing.distance).zip(&mixing.se) {
        mix_t.push_nums(&[*t as f64, *d, *s]);
    }
    let mut lines = Vec::new();
    if !mixing.warning.is_empty() {
        lines.push(format!("warning: {}", mixing.warning));
    }
    Ok(Outcome {
        checks,
        summary: json!({
            "drift": { "alpha": drift.alpha, "c1": drift.c1, "r2": drift.r2, "m0": drift.m0 },
            "marginal_tests": marg.tests.iter().map(|t| json!({ "label": t.label, "statistic": t.statistic, "p_value": t.p_value })).collect::<Vec<_>>(),
            "coupled": chain.iter().filter(|c| c.tau.is_some()).count(),
            "replicas": chain.len(),
            "mixing_rate": mixing.rate,
            "mixing_r2": mixing.r2,
        }),
        tables: vec![rho_t, tail_t, mix_t],
        lines,
    })
}

fn cascade(solver: Option<&SolverConfig>, p: &CascadeParams) -> Result<Outcome> {
    let (cov, set, seed) = if p.seeds.is_empty() {
        let spec = solver.ok_or_else(|| Error::InvalidConfig("cascade without seed modes needs a solver forcing".into()))?;
        let (c, s) = galerkin_ergodicity_precheck(spec.forcing(), p.radius);
        (c, s, WaveSet::from_forcing(spec.forcing()))
    } else {
        let seed = WaveSet::from_modes(&p.seeds);
        let s = grow_k(&seed, p.radius, usize::MAX);
        (coverage(&s, p.radius), s, seed)
    };
    let (z, _) = z_cover(&seed, p.z_radius, p.z_max_iter);
    let mut table = Table::new("set", &["k1", "k2", "generation"]);
    for (k, g) in set.iter() {
        table.push_nums(&[k[0] as f64, k[1] as f64, g as f64]);
    }
    let status = if cov.complete { "complete" } else { "incomplete" };
    Ok(Outcome {
        checks: vec![CheckRecord::le("cascade missing modes", cov.missing.len() as f64, 0.0)],
        summary: json!({ "seeds": seed.modes(), "k_rule": cov, "z_rule": z }),
        tables: vec![table],
        lines: vec![
            format!("K-rule: {}/{} modes of |k| < {} in {} generations", cov.reached, cov.total, p.radius, cov.generations),
            format!("Z-rule: {}/{} modes of |k| < {} in {} generations", z.reached, z.total, p.z_radius, z.generations),
            format!("coverage={status}"),
        ],
    })
}

//! `solve` and `verify`: run the penalty schedule, evaluate the checks,
//! write the report files.

use std::fs::File;
use std::io::BufWriter;
use std::time::Instant;

use rbsde_core::model::PicardStart;
use rbsde_core::penalized::barrier_layer;
use rbsde_core::verify::{
    cole_hopf_oracle, compare_runs, hitting_time_check, max_excess, optimal_stopping_value, representation_gap, Check,
    CheckStatus, Location, VerificationReport,
};
use rbsde_core::{
    run_penalty_schedule, solve_direct_reflected, uniqueness_probe, Backend, Engine, EntryMetrics, GeneratorSpec,
    Lattice, McEngine, PenaltyRun, Perturbation, Scenario,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{write_report, Report, RunStatus, ScheduleSummary};

pub const MONOTONICITY_TOL: f64 = 1e-10;
pub const SANDWICH_TOL: f64 = 1e-8;
pub const SHORTFALL_TOL: f64 = 1e-2;
pub const RATIO_BOUND: f64 = 2.0;

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn engine_name(b: Backend) -> &'static str {
    match b {
        Backend::Lattice => "lattice",
        Backend::Mc => "mc",
    }
}

/// Builds the configured engine, writing the path dump when requested.
pub fn build_engine(scenario: &Scenario, dump: Option<&std::path::Path>) -> Result<Box<dyn Engine + Send>> {
    let cfg = &scenario.engine_config;
    match cfg.backend {
        Backend::Lattice => {
            if dump.is_some() {
                return Err(CliError::Config("--dump-paths needs the mc engine".into()));
            }
            Ok(Box::new(
                Lattice::build(scenario.d, scenario.horizon, scenario.steps, cfg.node_budget)?.with_grain(cfg.grain),
            ))
        }
        Backend::Mc => {
            let mc = McEngine::simulate(
                cfg.seed,
                cfg.paths,
                scenario.steps,
                scenario.d,
                scenario.horizon,
                cfg.basis_degree,
            )?;
            if let Some(path) = dump {
                let file = File::create(path).map_err(|e| CliError::io(path, e))?;
                mc.bundle().write_dump(BufWriter::new(file)).map_err(|e| CliError::io(path, e))?;
            }
            Ok(Box::new(mc))
        }
    }
}

/// Runs one experiment and writes its report. On a module error a partial
/// report marked `error` is written before the error is returned.
pub fn run_experiment(cfg: &RunConfig) -> Result<Report> {
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let origin = cfg.scenario.display().to_string();
    let scenario = match cfg.load() {
        Ok(s) => s,
        Err(e) => {
            let mut partial = Report::new(&origin, String::new(), "", 0);
            partial.status = RunStatus::Error;
            partial.error = Some(e.to_string());
            write_report(&cfg.out, &partial)?;
            return Err(e);
        }
    };
    let mut report =
        Report::new(&origin, scenario.fingerprint(), engine_name(scenario.engine_config.backend), scenario.n);
    let outcome = execute(cfg, &scenario, &mut report);
    report.timings.total_ms = elapsed_ms(started);
    if let Err(e) = outcome {
        report.status = RunStatus::Error;
        report.error = Some(e.to_string());
        write_report(&cfg.out, &report)?;
        return Err(e);
    }
    write_report(&cfg.out, &report)?;
    Ok(report)
}

fn execute(cfg: &RunConfig, scenario: &Scenario, report: &mut Report) -> Result<()> {
    report.assumptions = scenario.assumption_reports()?;
    let engine = build_engine(scenario, cfg.dump_paths.as_deref())?;
    let t = Instant::now();
    let run = run_penalty_schedule(scenario, engine.as_ref())?;
    report.timings.schedule_ms = elapsed_ms(t);
    report.rows = run.metrics().cloned().collect();
    report.schedule = Some(ScheduleSummary {
        levels: run.entries.len(),
        k_max: run.k_max(),
        converged: run.converged(),
        converged_at: run.converged_at,
        limit_y0: run.limit.y0(),
    });
    if !cfg.verify {
        return Ok(());
    }
    let t = Instant::now();
    let mut checks = verification_checks(&run, engine.as_ref())?;
    if let Some(path) = &cfg.compare_with {
        let mut other = crate::scenario::load_scenario(path)?;
        cfg.customize(&mut other)?;
        let other_run = run_penalty_schedule(&other, engine.as_ref())?;
        let cmp = compare_runs(&run, &other_run)?;
        checks.push(Check::bounded("comparison", cmp.max_violation, cmp.tolerance, cmp.at));
        checks.push(Check::bounded(
            "comparison_hypotheses",
            (-cmp.hypothesis_margin).max(0.0),
            0.0,
            Location::default(),
        ));
        report.comparison = Some(cmp);
    }
    report.timings.verify_ms = elapsed_ms(t);
    if !checks.passed() {
        report.status = RunStatus::Failed;
    }
    report.verification = Some(checks);
    Ok(())
}

/// `max <= bound * min` for a per-level diagnostic; the residual is the
/// worst component's ratio. An identically zero diagnostic has ratio 1.
fn ratio_check(name: &str, run: &PenaltyRun, field: impl Fn(&EntryMetrics) -> Vec<f64>) -> Check {
    let values: Vec<Vec<f64>> = run.metrics().map(&field).collect();
    let mut worst: Option<(f64, bool, Location)> = None;
    for i in 0..run.scenario.n {
        let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
        let (jmax, max) = col.iter().copied().enumerate().fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let ok = max <= RATIO_BOUND * min;
        let ratio = if max == 0.0 { 1.0 } else { max / min };
        let at = Location { k: Some(run.entries[jmax].k), component: i, ..Location::default() };
        if worst.is_none_or(|(r, o, _)| (o && !ok) || (o == ok && ratio > r)) {
            worst = Some((ratio, ok, at));
        }
    }
    let (ratio, ok, at) = worst.unwrap_or((1.0, true, Location::default()));
    Check {
        name: name.to_string(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail { at } },
        residual: ratio,
        tolerance: RATIO_BOUND,
    }
}

fn barrier_fields(scenario: &Scenario, engine: &dyn Engine) -> Vec<Vec<f64>> {
    (0..=scenario.steps).map(|m| barrier_layer(scenario, engine, m)).collect()
}

/// True when the exponential-transform oracle applies to the scenario.
pub fn cole_hopf_applicable(s: &Scenario) -> bool {
    match &s.generator {
        GeneratorSpec::LinearQuadratic(lq) => {
            s.n == 1 && lq.a(0) == 0.0 && lq.c(0, 0) == 0.0 && (0..s.d).all(|r| lq.b(0, r) == 0.0) && lq.gamma(0) > 0.0
        }
        GeneratorSpec::Custom(_) => false,
    }
}

/// Every check that applies to a finished penalty run.
pub fn verification_checks(run: &PenaltyRun, engine: &dyn Engine) -> Result<VerificationReport> {
    let s = &run.scenario;
    let n = s.n;
    let cfg = &s.engine_config;
    let k_max = run.k_max();
    let mut report = VerificationReport::new(s.fingerprint());

    // monotone convergence in k
    let mut mono = (0.0f64, Location::default());
    for pair in run.entries.windows(2) {
        let (v, at) = max_excess(&pair[0].solution.y, &pair[1].solution.y, n);
        if v > mono.0 {
            mono = (v, at.at_k(pair[1].k));
        }
    }
    report.push(Check::bounded("penalty_monotonicity", mono.0, MONOTONICITY_TOL, mono.1));

    let mut growth = (0.0f64, Location::default());
    let deltas: Vec<(f64, f64)> = run.metrics().filter_map(|m| m.delta.map(|d| (m.k, d))).collect();
    for w in deltas.windows(2).skip(1) {
        let v = w[1].1 - w[0].1;
        if v > growth.0 {
            growth = (v, Location { k: Some(w[1].0), ..Location::default() });
        }
    }
    report.push(Check::bounded("delta_nonincreasing", growth.0, MONOTONICITY_TOL, growth.1));

    let direct = solve_direct_reflected(s, engine)?;
    let mut sandwich = (0.0f64, Location::default());
    for e in &run.entries {
        let (v, at) = max_excess(&e.solution.y, &direct.y, n);
        if v > sandwich.0 {
            sandwich = (v, at.at_k(e.k));
        }
    }
    report.push(Check::bounded("sandwich", sandwich.0, SANDWICH_TOL, sandwich.1));

    // barrier attainment and the Skorokhod condition on the limit
    let barrier = barrier_fields(s, engine);
    let (short, at) = max_excess(&barrier, &run.limit.y, n);
    report.push(Check::bounded("barrier_shortfall", short, SHORTFALL_TOL, at.at_k(k_max)));

    let mut rise = (0.0f64, Location::default());
    for pair in run.entries.windows(2) {
        for i in 0..n {
            let v = pair[1].metrics.shortfall[i] - pair[0].metrics.shortfall[i];
            if v > rise.0 {
                rise = (v, Location { k: Some(pair[1].k), component: i, ..Location::default() });
            }
        }
    }
    report.push(Check::bounded("shortfall_nonincreasing", rise.0, 0.0, rise.1));

    let last = &run.entries[run.entries.len() - 1].metrics;
    let (i_sk, sk) = last.skorokhod.iter().copied().enumerate().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let sk_at = Location { k: Some(k_max), component: i_sk, ..Location::default() };
    report.push(Check::bounded("skorokhod_limit", sk, cfg.tol_skorokhod, sk_at));

    let direct_sk = rbsde_core::reflection::skorokhod_residual(&direct, s, engine)?;
    let (i_dsk, dsk) = direct_sk.iter().copied().enumerate().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    report.push(Check::bounded("skorokhod_direct", dsk, 0.0, Location { component: i_dsk, ..Location::default() }));

    // optimal stopping representation
    let u = optimal_stopping_value(&run.limit, s, engine)?;
    let gap = representation_gap(&u, &run.limit)?;
    report.push(Check::bounded("representation_gap", gap.value, SHORTFALL_TOL.max(3.0 / k_max), gap.at.at_k(k_max)));

    let hit = hitting_time_check(&run.limit, s, engine)?;
    report.push(Check::bounded("hitting_time_flat", hit.pre_contact_increase, hit.tol_flat, hit.at.at_k(k_max)));

    // uniform bounds across the schedule
    report.push(ratio_check("sup_norm_uniform", run, |m| vec![m.sup_norm; n]));
    let sup = run.metrics().map(|m| m.sup_norm).fold(0.0, f64::max);
    report.push(Check::bounded("sup_norm_below_clamp", sup, s.clamp_level(), Location::default()));
    let clamps: usize = run.metrics().map(|m| m.clamp_warnings).sum();
    report.push(Check::bounded("clamp_warnings", clamps as f64, 0.0, Location::default()));
    if run.metrics().all(|m| m.bmo.is_some()) {
        report.push(ratio_check("bmo_uniform", run, |m| m.bmo.clone().unwrap_or_default()));
    } else {
        report.push(Check::skipped("bmo_uniform", "unsupported engine"));
    }
    report.push(ratio_check("k_moment_p2_uniform", run, |m| m.k_moment_p2.clone()));
    report.push(ratio_check("k_moment_p4_uniform", run, |m| m.k_moment_p4.clone()));

    // exponential-transform oracle
    if !cole_hopf_applicable(s) {
        report.push(Check::skipped("cole_hopf", "needs n = 1 and f = (gamma/2)|z|^2"));
    } else if cfg.backend != Backend::Lattice {
        report.push(Check::skipped("cole_hopf", "unsupported engine"));
    } else {
        let lattice = Lattice::build(s.d, s.horizon, s.steps, cfg.node_budget)?;
        let oracle = cole_hopf_oracle(s, &lattice)?;
        let diff = (run.limit.y0()[0] - oracle.reflected).abs();
        report.push(Check::bounded("cole_hopf", diff, 5e-3f64.max(3.0 / k_max), Location::default().at_k(k_max)));
    }

    let probe = uniqueness_probe(
        s,
        engine,
        &[Perturbation::PicardStart(PicardStart::UpperClamp), Perturbation::Grain(1), Perturbation::ReverseNodes],
    )?;
    report.push(Check::bounded("uniqueness", probe.max_discrepancy, probe.tolerance, Location::default()));
    Ok(report)
}

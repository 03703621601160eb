//! The acceptance suite: eleven criteria on the bundled scenarios, each
//! reported as one pass/fail line.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rbsde_core::model::PicardStart;
use rbsde_core::reflection::skorokhod_residual;
use rbsde_core::verify::{cole_hopf_oracle, compare_runs, max_excess, optimal_stopping_value, representation_gap};
use rbsde_core::{
    run_penalty_schedule, solve_direct_reflected, solve_penalized, uniqueness_probe, Engine, Lattice, McEngine,
    PenaltyRun, Perturbation, Scenario,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::report::VERSION;
use crate::scenario::bundled;

pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    /// Measured quantities against their thresholds.
    pub measured: String,
    pub runtime_ms: f64,
    /// Supplementary diagnostics; never part of the verdict.
    pub info: Vec<String>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{verdict} criterion {:>2} {:<28} {} [{:.0} ms]", self.id, self.title, self.measured, self.runtime_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
    pub total_ms: f64,
}

struct Outcome {
    passed: bool,
    measured: String,
    info: Vec<String>,
}

fn lattice_for(s: &Scenario) -> Result<Lattice> {
    Ok(Lattice::build(s.d, s.horizon, s.steps, s.engine_config.node_budget)?.with_grain(s.engine_config.grain))
}

fn schedule(name: &str) -> Result<(Scenario, Lattice, PenaltyRun)> {
    let s = bundled(name)?;
    let lat = lattice_for(&s)?;
    let run = run_penalty_schedule(&s, &lat)?;
    Ok((s, lat, run))
}

fn lattice_expectation(lat: &Lattice, f: impl Fn(f64) -> f64) -> f64 {
    let m = lat.steps();
    lat.weights(m).iter().zip(lat.states(m).iter()).map(|(w, x)| w * f(*x)).sum()
}

fn max_k_increment(run: &PenaltyRun) -> f64 {
    run.entries.iter().flat_map(|e| e.solution.dk.iter().flatten()).fold(0.0, |a, &b| a.max(b))
}

/// `max_j` and `min_j` of a per-level quantity, worst component.
fn spread(run: &PenaltyRun, field: impl Fn(&rbsde_core::EntryMetrics) -> Vec<f64>) -> (f64, f64) {
    let values: Vec<Vec<f64>> = run.metrics().map(field).collect();
    let mut out = (0.0, 0.0);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..run.scenario.n {
        let max = values.iter().map(|v| v[i]).fold(f64::MIN, f64::max);
        let min = values.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
        let excess = max - 2.0 * min;
        if excess > worst {
            worst = excess;
            out = (max, min);
        }
    }
    out
}

fn ratio_text(name: &str, (max, min): (f64, f64)) -> String {
    if max == 0.0 {
        format!("{name} max/min = 0/0")
    } else {
        format!("{name} max/min = {:.3}", max / min)
    }
}

fn c1() -> Result<Outcome> {
    let s = bundled("unreflected")?;
    let t = Instant::now();
    let lat = lattice_for(&s)?;
    let sol = solve_penalized(&s, 0.0, &lat)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let expected = lattice_expectation(&lat, |w| w.clamp(-1.0, 1.0));
    let err = (sol.y0()[0] - expected).abs();
    let k_zero = sol.dk.iter().flatten().all(|&v| v == 0.0);
    Ok(Outcome {
        passed: err <= 1e-10 && k_zero && ms < 1_000.0,
        measured: format!("|Y0 - E[g]| = {err:.2e} <= 1e-10, K == 0: {k_zero}, solve {ms:.0} ms < 1000"),
        info: vec![],
    })
}

fn c2() -> Result<Outcome> {
    let s = bundled("quadratic")?;
    let t = Instant::now();
    let lat = lattice_for(&s)?;
    let sol = solve_penalized(&s, 0.0, &lat)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let oracle = cole_hopf_oracle(&s, &lat)?;
    let err = (sol.y0()[0] - oracle.unreflected).abs();
    Ok(Outcome {
        passed: err <= 5e-3 && ms < 2_000.0,
        measured: format!("|Y0 - ln<e^g>| = {err:.2e} <= 5e-3, solve {ms:.0} ms < 2000"),
        info: vec![format!("Y0 = {:.8}, oracle = {:.8}", sol.y0()[0], oracle.unreflected)],
    })
}

fn c3() -> Result<Outcome> {
    let t = Instant::now();
    let (s, lat, run) = schedule("reflected_quadratic")?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let oracle = cole_hopf_oracle(&s, &lat)?;
    let tol = 5e-3f64.max(3.0 / run.k_max());
    let err = (run.limit.y0()[0] - oracle.reflected).abs();
    Ok(Outcome {
        passed: err <= tol && ms < 10_000.0,
        measured: format!("|Y0_lim - oracle| = {err:.2e} <= {tol:.1e}, schedule {ms:.0} ms < 10000"),
        info: vec![
            format!("oracle reflected - unreflected = {:.2e}", oracle.reflected - oracle.unreflected),
            format!("largest dK over the schedule = {:.2e} (barrier never binds)", max_k_increment(&run)),
        ],
    })
}

fn monotone_violation(run: &PenaltyRun) -> f64 {
    run.entries.windows(2).map(|p| max_excess(&p[0].solution.y, &p[1].solution.y, run.scenario.n).0).fold(0.0, f64::max)
}

fn c4() -> Result<Outcome> {
    let (_, _, run) = schedule("reflected_quadratic")?;
    let worst = monotone_violation(&run);
    let (_, _, active) = schedule("reflected_zero_driver")?;
    Ok(Outcome {
        passed: worst <= 1e-10,
        measured: format!("max (Y^k_j - Y^k_j+1)^+ = {worst:.2e} <= 1e-10"),
        info: vec![format!("f = 0 variant (active barrier): {:.2e}", monotone_violation(&active))],
    })
}

fn c5() -> Result<Outcome> {
    let (_, _, run) = schedule("reflected_zero_driver")?;
    let sf: Vec<f64> = run.metrics().map(|m| m.shortfall[0]).collect();
    let nonincreasing = sf.windows(2).all(|w| w[1] <= w[0]);
    let last = sf[sf.len() - 1];
    let ratios: Vec<f64> = sf.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len().saturating_sub(6)..];
    let avg = tail.iter().sum::<f64>() / tail.len() as f64;
    let (_, _, c3run) = schedule("reflected_quadratic")?;
    let c3_short = c3run.metrics().map(|m| m.shortfall[0]).fold(0.0, f64::max);
    Ok(Outcome {
        passed: nonincreasing && last <= 1e-2 && avg <= 0.75,
        measured: format!(
            "nonincreasing: {nonincreasing}, shortfall(k_max) = {last:.2e} <= 1e-2, mean ratio last 6 = {avg:.3} <= 0.75"
        ),
        info: vec![
            format!("f = 0 variant shortfall(k=1) = {:.3e}", sf[0]),
            format!("criterion-3 scenario shortfall is {c3_short:.1e} at every k"),
        ],
    })
}

fn c6() -> Result<Outcome> {
    let mut measured = Vec::new();
    let mut passed = true;
    for name in ["reflected_zero_driver", "reflected_quadratic"] {
        let (s, lat, run) = schedule(name)?;
        let tol = s.engine_config.tol_skorokhod;
        let limit = run.entries[run.entries.len() - 1].metrics.skorokhod.iter().copied().fold(0.0, f64::max);
        let direct = solve_direct_reflected(&s, &lat)?;
        let direct_res = skorokhod_residual(&direct, &s, &lat)?.into_iter().fold(0.0, f64::max);
        passed &= limit <= tol && direct_res == 0.0;
        measured.push(format!("{name}: limit {limit:.2e} <= {tol:.0e}, direct {direct_res:e} == 0"));
    }
    Ok(Outcome { passed, measured: measured.join("; "), info: vec![] })
}

fn c7() -> Result<Outcome> {
    let (s, lat, run) = schedule("reflected_quadratic")?;
    let u = optimal_stopping_value(&run.limit, &s, &lat)?;
    let gap = representation_gap(&u, &run.limit)?.value;
    let tol = 1e-2f64.max(3.0 / run.k_max());
    let (z, zlat, zrun) = schedule("reflected_zero_driver")?;
    let direct = solve_direct_reflected(&z, &zlat)?;
    let gap0 = representation_gap(&optimal_stopping_value(&direct, &z, &zlat)?, &direct)?.value;
    let gap_pen = representation_gap(&optimal_stopping_value(&zrun.limit, &z, &zlat)?, &zrun.limit)?.value;
    let first = &zrun.entries[0].solution;
    let gap_k1 = representation_gap(&optimal_stopping_value(first, &z, &zlat)?, first)?.value;
    Ok(Outcome {
        passed: gap <= tol && gap0 <= 1e-8,
        measured: format!("gap(limit) = {gap:.2e} <= {tol:.0e}, f = 0 direct gap = {gap0:.2e} <= 1e-8"),
        info: vec![format!("f = 0 variant: penalized-limit gap = {gap_pen:.2e}, k = 1 gap = {gap_k1:.2e}")],
    })
}

fn c8() -> Result<Outcome> {
    let t = Instant::now();
    let base = bundled("coupled")?;
    let lat = lattice_for(&base)?;
    let base_run = run_penalty_schedule(&base, &lat)?;

    let mut xi = base.clone();
    let rbsde_core::model::TerminalKind::ClampedAffine(p) = &mut xi.terminal.kind;
    p.alpha.iter_mut().for_each(|a| *a += 0.1);

    let mut barrier = base.clone();
    let rbsde_core::model::BarrierKind::ClampedAffine(p) = &mut barrier.barrier.kind;
    p.alpha.iter_mut().for_each(|a| *a += 0.1);
    p.cap.iter_mut().for_each(|c| *c += 0.1);
    barrier.barrier.s_plus_max += 0.1;

    let mut drift = base.clone();
    if let rbsde_core::GeneratorSpec::LinearQuadratic(lq) = &mut drift.generator {
        lq.a = vec![0.1; base.n];
    }

    let mut passed = true;
    let mut parts = Vec::new();
    let mut info = Vec::new();
    for (label, bumped) in [("xi", xi), ("S", barrier), ("a", drift)] {
        let run = run_penalty_schedule(&bumped, &lat)?;
        let cmp = compare_runs(&base_run, &run)?;
        let ok = cmp.passed && cmp.hypothesis_margin >= 0.0;
        passed &= ok;
        parts.push(format!("{label}+0.1: {:.1e}", cmp.max_violation));
        let lift = run.limit.y0().iter().zip(base_run.limit.y0()).map(|(a, b)| a - b).fold(f64::MIN, f64::max);
        info.push(format!("{label}+0.1: hypothesis margin {:.3}, max Y0 lift {lift:.4}", cmp.hypothesis_margin));
    }
    let ms = t.elapsed().as_secs_f64() * 1e3;
    passed &= ms < 30_000.0;
    Ok(Outcome {
        passed,
        measured: format!("max (Y - Y_bumped)^+ over all k: {} <= 1e-9, {ms:.0} ms < 30000", parts.join(", ")),
        info,
    })
}

fn ratios_for(run: &PenaltyRun) -> (Vec<(f64, f64)>, usize) {
    let n = run.scenario.n;
    let spreads = vec![
        spread(run, |m| vec![m.sup_norm; n]),
        spread(run, |m| m.bmo.clone().unwrap_or_default()),
        spread(run, |m| m.k_moment_p2.clone()),
        spread(run, |m| m.k_moment_p4.clone()),
    ];
    (spreads, run.metrics().map(|m| m.clamp_warnings).sum())
}

fn c9() -> Result<Outcome> {
    let (_, _, run) = schedule("reflected_quadratic")?;
    let (sp, clamps) = ratios_for(&run);
    let passed = sp[..3].iter().all(|(max, min)| max <= &(2.0 * min)) && clamps == 0;
    let (_, _, active) = schedule("reflected_zero_driver")?;
    let (asp, aclamps) = ratios_for(&active);
    Ok(Outcome {
        passed,
        measured: format!(
            "{}, {}, {} (each <= 2), clamp warnings {clamps}",
            ratio_text("sup|Y|", sp[0]),
            ratio_text("bmo", sp[1]),
            ratio_text("K_T p=2", sp[2])
        ),
        info: vec![format!(
            "f = 0 variant: {}, {}, {}, {}, clamp warnings {aclamps}",
            ratio_text("sup|Y|", asp[0]),
            ratio_text("bmo", asp[1]),
            ratio_text("K_T p=2", asp[2]),
            ratio_text("K_T p=4", asp[3])
        )],
    })
}

pub const MC_SEEDS: u64 = 10;
pub const MC_PATHS: usize = 50_000;

fn c10() -> Result<Outcome> {
    let t = Instant::now();
    let s = bundled("unreflected")?;
    let lat = lattice_for(&s)?;
    let reference = solve_penalized(&s, 0.0, &lat)?.y0()[0];
    let mut estimates = Vec::new();
    for seed in 0..MC_SEEDS {
        let mc = McEngine::simulate(seed, MC_PATHS, s.steps, s.d, s.horizon, 3)?;
        estimates.push(solve_penalized(&s, 0.0, &mc)?.y0()[0]);
    }
    let count = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / count;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let se = (var / count).sqrt();
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let err = (mean - reference).abs();
    Ok(Outcome {
        passed: err <= 3.0 * se && ms < 60_000.0,
        measured: format!("|mean - lattice| = {err:.2e} <= 3 se = {:.2e}, {ms:.0} ms < 60000", 3.0 * se),
        info: vec![format!("lattice Y0 = {reference:.3e}, mc mean = {mean:.3e}, seed sd = {:.3e}", var.sqrt())],
    })
}

fn perturbations() -> Vec<Perturbation> {
    vec![
        Perturbation::Identity,
        Perturbation::PicardStart(PicardStart::UpperClamp),
        Perturbation::PicardStart(PicardStart::LowerClamp),
        Perturbation::Grain(1),
        Perturbation::Grain(1 << 20),
        Perturbation::ReverseNodes,
    ]
}

fn c11() -> Result<Outcome> {
    let s = bundled("reflected_quadratic")?;
    let report = uniqueness_probe(&s, &lattice_for(&s)?, &perturbations())?;
    let z = bundled("reflected_zero_driver")?;
    let active = uniqueness_probe(&z, &lattice_for(&z)?, &perturbations())?;
    Ok(Outcome {
        passed: report.passed,
        measured: format!(
            "max |Y - Y_base| over {} reruns = {:.2e} <= 1e-9",
            report.runs.len(),
            report.max_discrepancy
        ),
        info: vec![format!("f = 0 variant: {:.2e}", active.max_discrepancy)],
    })
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "unreflected reduction",
        2 => "quadratic oracle",
        3 => "reflected quadratic oracle",
        4 => "monotone convergence",
        5 => "barrier attainment",
        6 => "Skorokhod condition",
        7 => "optimal stopping",
        8 => "comparison",
        9 => "uniform bounds",
        10 => "engine agreement",
        11 => "uniqueness",
        _ => "unknown",
    }
}

/// Runs one criterion. Module errors become a failed result.
pub fn run_criterion(id: u8) -> CriterionResult {
    let started = Instant::now();
    let outcome = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        11 => c11(),
        _ => Err(CliError::Config(format!("no acceptance criterion {id}"))),
    };
    let outcome = outcome.unwrap_or_else(|e| Outcome { passed: false, measured: format!("error: {e}"), info: vec![] });
    CriterionResult {
        id,
        title: title(id).to_string(),
        passed: outcome.passed,
        measured: outcome.measured,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
        info: outcome.info,
    }
}

pub fn summary_text(summary: &Summary) -> String {
    let mut s = String::new();
    for c in &summary.criteria {
        let _ = writeln!(s, "{}", c.line());
        for i in &c.info {
            let _ = writeln!(s, "     info: {i}");
        }
    }
    let failed = summary.criteria.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "{} of {} criteria passed", summary.criteria.len() - failed, summary.criteria.len());
    s
}

/// Runs every criterion and writes `summary.json` and `summary.txt` into
/// `outdir`, creating it if needed.
pub fn run_acceptance(outdir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(outdir).map_err(|e| CliError::io(outdir, e))?;
    let started = Instant::now();
    let criteria: Vec<CriterionResult> = CRITERIA.map(run_criterion).collect();
    let summary = Summary {
        version: VERSION.to_string(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
    let path = outdir.join("summary.json");
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    let path = outdir.join("summary.txt");
    std::fs::write(&path, summary_text(&summary)).map_err(|e| CliError::io(&path, e))?;
    Ok(summary)
}

//! Penalty schedule `k_j -> infinity`, limit extraction and the
//! reflection diagnostics (barrier shortfall, Skorokhod residual).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineKind};
use crate::error::Result;
use crate::model::{PicardStart, Scenario};
use crate::penalized::{barrier_layer, solve_penalized, DiscreteSolution, SolutionTag};
use crate::verify::{bmo_estimate, k_moment};

/// Per-level diagnostics recorded by [`run_penalty_schedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryMetrics {
    pub k: f64,
    /// `max |Y^(k_j) - Y^(k_{j-1})|`; absent for the first level.
    pub delta: Option<f64>,
    pub y0: Vec<f64>,
    pub shortfall: Vec<f64>,
    pub skorokhod: Vec<f64>,
    /// `<(K_T)^2>^(1/2)` per component.
    pub k_moment_p2: Vec<f64>,
    /// `<(K_T)^4>^(1/4)` per component.
    pub k_moment_p4: Vec<f64>,
    /// Lattice engine only.
    pub bmo: Option<Vec<f64>>,
    pub sup_norm: f64,
    pub picard_max: usize,
    pub picard_mean: f64,
    pub clamp_warnings: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ScheduleEntry {
    pub k: f64,
    pub solution: DiscreteSolution,
    pub metrics: EntryMetrics,
}

/// Ordered penalized solves plus the extracted limit.
#[derive(Clone, Debug)]
pub struct PenaltyRun {
    pub scenario: Scenario,
    pub engine: EngineKind,
    pub entries: Vec<ScheduleEntry>,
    /// Final schedule entry, retagged.
    pub limit: DiscreteSolution,
    /// First index whose delta fell below `tol_limit`.
    pub converged_at: Option<usize>,
}

impl PenaltyRun {
    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn k_max(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.k)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &EntryMetrics> {
        self.entries.iter().map(|e| &e.metrics)
    }
}

/// `max_{m, node} (S_m^i - Y_m^i)^+` per component.
pub fn barrier_shortfall(sol: &DiscreteSolution, scenario: &Scenario, engine: &dyn Engine) -> Vec<f64> {
    let n = sol.n;
    let mut out = vec![0.0f64; n];
    for (m, ym) in sol.y.iter().enumerate() {
        let s = barrier_layer(scenario, engine, m);
        for (idx, (y, s)) in ym.iter().zip(&s).enumerate() {
            let i = idx % n;
            out[i] = out[i].max(s - y);
        }
    }
    out
}

/// `sum_m <(Y_m^i - S_m^i)^+ dK_m^i>` per component.
pub fn skorokhod_residual(sol: &DiscreteSolution, scenario: &Scenario, engine: &dyn Engine) -> Result<Vec<f64>> {
    let n = sol.n;
    let mut total = vec![0.0; n];
    for (m, dk) in sol.dk.iter().enumerate() {
        let s = barrier_layer(scenario, engine, m);
        let field: Vec<f64> = sol.y[m].iter().zip(&s).zip(dk).map(|((y, s), k)| (y - s).max(0.0) * k).collect();
        for (t, v) in total.iter_mut().zip(engine.mean(m, &field, n)?) {
            *t += v;
        }
    }
    Ok(total)
}

fn entry_metrics(
    k: f64,
    sol: &DiscreteSolution,
    prev: Option<&DiscreteSolution>,
    scenario: &Scenario,
    engine: &dyn Engine,
    wall_ms: f64,
) -> Result<EntryMetrics> {
    let bmo = match engine.kind() {
        EngineKind::Lattice => Some(bmo_estimate(sol, engine)?),
        EngineKind::Mc => None,
    };
    Ok(EntryMetrics {
        k,
        delta: prev.map(|p| sol.sup_distance(p)),
        y0: sol.y0(),
        shortfall: barrier_shortfall(sol, scenario, engine),
        skorokhod: skorokhod_residual(sol, scenario, engine)?,
        k_moment_p2: k_moment(sol, 2, engine)?,
        k_moment_p4: k_moment(sol, 4, engine)?,
        bmo,
        sup_norm: sol.sup_norm(),
        picard_max: sol.picard.max_iter,
        picard_mean: sol.picard.mean_iter,
        clamp_warnings: sol.clamp_warnings,
        wall_ms,
    })
}

/// Solves the penalized system for every level of the scenario's schedule.
/// The whole schedule is always run; the limit is the last entry.
pub fn run_penalty_schedule(scenario: &Scenario, engine: &dyn Engine) -> Result<PenaltyRun> {
    scenario.ensure_valid()?;
    let tol = scenario.engine_config.tol_limit;
    let mut entries: Vec<ScheduleEntry> = Vec::new();
    let mut converged_at = None;
    for (j, k) in scenario.penalty_schedule.levels().into_iter().enumerate() {
        let started = Instant::now();
        let solution = solve_penalized(scenario, k, engine).map_err(|e| e.at_penalty(k))?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let prev = entries.last().map(|e| &e.solution);
        let metrics = entry_metrics(k, &solution, prev, scenario, engine, wall_ms).map_err(|e| e.at_penalty(k))?;
        if converged_at.is_none() && metrics.delta.is_some_and(|d| d < tol) {
            converged_at = Some(j);
        }
        entries.push(ScheduleEntry { k, solution, metrics });
    }
    let last = entries.last().expect("schedule has at least one level");
    let mut limit = last.solution.clone();
    limit.tag = SolutionTag::Limit(last.k);
    Ok(PenaltyRun { scenario: scenario.clone(), engine: engine.kind(), entries, limit, converged_at })
}

/// A numerically equivalent rerun configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Perturbation {
    Identity,
    PicardStart(PicardStart),
    Grain(usize),
    ReverseNodes,
}

impl Perturbation {
    fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        let cfg = &mut s.engine_config;
        match *self {
            Perturbation::Identity => {}
            Perturbation::PicardStart(start) => cfg.picard_start = start,
            Perturbation::Grain(g) => cfg.grain = g,
            Perturbation::ReverseNodes => cfg.reverse_nodes = !cfg.reverse_nodes,
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// `(perturbation, max |Y - Y_baseline|)` over every schedule entry.
    pub runs: Vec<(Perturbation, f64)>,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const UNIQUENESS_TOL: f64 = 1e-9;

/// Reruns the schedule under each perturbation and compares all `Y` fields
/// with the baseline run.
pub fn uniqueness_probe(
    scenario: &Scenario,
    engine: &dyn Engine,
    perturbations: &[Perturbation],
) -> Result<UniquenessReport> {
    let baseline = run_penalty_schedule(scenario, engine)?;
    let mut runs = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let rerun = run_penalty_schedule(&p.apply(scenario), engine)?;
        let gap = baseline
            .entries
            .iter()
            .zip(&rerun.entries)
            .map(|(a, b)| a.solution.sup_distance(&b.solution))
            .fold(0.0, f64::max);
        runs.push((*p, gap));
    }
    let max_discrepancy = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(UniquenessReport { runs, max_discrepancy, tolerance: UNIQUENESS_TOL, passed: max_discrepancy <= UNIQUENESS_TOL })
}

//! Report files: `report.json`, `metrics.csv` and `report.txt`.

use std::fmt::Write as _;
use std::path::Path;

use rbsde_core::model::AssumptionReport;
use rbsde_core::verify::{CheckStatus, ComparisonReport, VerificationReport};
use rbsde_core::EntryMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    Failed,
    /// A module error stopped the run; the report is partial.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub levels: usize,
    pub k_max: f64,
    pub converged: bool,
    pub converged_at: Option<usize>,
    pub limit_y0: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub schedule_ms: f64,
    pub verify_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub fingerprint: String,
    pub scenario_file: String,
    pub engine: String,
    pub n: usize,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub schedule: Option<ScheduleSummary>,
    /// One row per penalty level, sorted by k.
    pub rows: Vec<EntryMetrics>,
    pub assumptions: Vec<AssumptionReport>,
    pub verification: Option<VerificationReport>,
    pub comparison: Option<ComparisonReport>,
    pub timings: Timings,
}

impl Report {
    pub fn new(scenario_file: &str, fingerprint: String, engine: &str, n: usize) -> Self {
        Report {
            version: VERSION.to_string(),
            fingerprint,
            scenario_file: scenario_file.to_string(),
            engine: engine.to_string(),
            n,
            status: RunStatus::Passed,
            error: None,
            schedule: None,
            rows: Vec::new(),
            assumptions: Vec::new(),
            verification: None,
            comparison: None,
            timings: Timings::default(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Passed => 0,
            RunStatus::Failed => 1,
            RunStatus::Error => 2,
        }
    }
}

pub fn metrics_header(n: usize) -> String {
    let mut cols = vec!["k".to_string()];
    for name in ["Y0", "shortfall", "skorokhod", "bmo", "KT_p2"] {
        cols.extend((1..=n).map(|i| format!("{name}_{i}")));
    }
    cols.push("picard_max".into());
    cols.push("wall_ms".into());
    cols.join(",")
}

/// Per-k metric table. Rows are written in ascending k; bmo cells are left
/// empty when the engine does not provide the estimate.
pub fn metrics_csv(rows: &[EntryMetrics], n: usize) -> String {
    let mut rows: Vec<&EntryMetrics> = rows.iter().collect();
    rows.sort_by(|a, b| a.k.total_cmp(&b.k));
    let mut out = metrics_header(n);
    out.push('\n');
    for r in rows {
        let mut cells = vec![r.k.to_string()];
        for field in [&r.y0, &r.shortfall, &r.skorokhod] {
            cells.extend(field.iter().map(f64::to_string));
        }
        match &r.bmo {
            Some(b) => cells.extend(b.iter().map(f64::to_string)),
            None => cells.extend(std::iter::repeat_n(String::new(), n)),
        }
        cells.extend(r.k_moment_p2.iter().map(f64::to_string));
        cells.push(r.picard_max.to_string());
        cells.push(format!("{:.3}", r.wall_ms));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn text_report(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rbsde {}  scenario {}", report.version, report.scenario_file);
    let _ = writeln!(s, "fingerprint {}", report.fingerprint);
    let _ = writeln!(s, "engine {}  status {:?}", report.engine, report.status);
    if let Some(e) = &report.error {
        let _ = writeln!(s, "error: {e}");
    }
    if let Some(sched) = &report.schedule {
        let conv = match sched.converged_at {
            Some(j) => format!("converged at level {j}"),
            None => "unconverged".into(),
        };
        let _ = writeln!(s, "{} levels, k_max {}, {conv}, limit Y0 {:?}", sched.levels, sched.k_max, sched.limit_y0);
    }
    if !report.rows.is_empty() {
        let _ = writeln!(
            s,
            "\n{:>10} {:>14} {:>12} {:>12} {:>12} {:>12} {:>6}",
            "k", "Y0_1", "delta", "shortfall_1", "skorokhod_1", "KT_p2_1", "picard"
        );
        for r in &report.rows {
            let delta = r.delta.map_or("-".to_string(), |d| format!("{d:.3e}"));
            let _ = writeln!(
                s,
                "{:>10} {:>14.10} {:>12} {:>12.3e} {:>12.3e} {:>12.3e} {:>6}",
                r.k, r.y0[0], delta, r.shortfall[0], r.skorokhod[0], r.k_moment_p2[0], r.picard_max
            );
        }
    }
    if let Some(v) = &report.verification {
        let _ = writeln!(s, "\nchecks:");
        for c in &v.checks {
            let status = match &c.status {
                CheckStatus::Pass => "pass".to_string(),
                CheckStatus::Fail { at } => format!("FAIL at {at:?}"),
                CheckStatus::Skipped { reason } => format!("skipped: {reason}"),
            };
            let _ = writeln!(s, "  {:<28} {:>12.4e} <= {:<10.3e} {status}", c.name, c.residual, c.tolerance);
        }
    }
    if let Some(c) = &report.comparison {
        let _ = writeln!(
            s,
            "\ncomparison: max violation {:.3e} (tol {:.0e}), hypothesis margin {:.3e}",
            c.max_violation, c.tolerance, c.hypothesis_margin
        );
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes `report.json`, `report.txt` and, when rows exist, `metrics.csv`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Config(e.to_string()))?;
    write(&dir.join("report.json"), &json)?;
    write(&dir.join("report.txt"), &text_report(report))?;
    if !report.rows.is_empty() {
        write(&dir.join("metrics.csv"), &metrics_csv(&report.rows, report.n))?;
    }
    Ok(())
}

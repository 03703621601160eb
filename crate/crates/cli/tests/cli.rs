use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn rbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbsde")).args(args).output().expect("binary runs")
}

fn run(cmd: &str, name: &str, out: &Path, extra: &[&str]) -> Output {
    let sc = scenario(name);
    let mut args = vec![cmd, "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    rbsde(&args)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["verification"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check {name}"))
}

// drops the trailing wall_ms column
fn csv_without_timing(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

const SMALL_MC: &[&str] = &["--engine", "mc", "--steps", "20", "--paths", "2000", "--kcount", "4", "--seed", "7"];

#[test]
fn repeated_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for (engine_args, label) in [(&["--engine", "lattice"][..], "lattice"), (SMALL_MC, "mc")] {
        let (a, b) = (dir.path().join(format!("{label}_a")), dir.path().join(format!("{label}_b")));
        for out in [&a, &b] {
            let res = run("solve", "reflected_quadratic", out, engine_args);
            assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        }
        let (x, y) = (csv_without_timing(&a.join("metrics.csv")), csv_without_timing(&b.join("metrics.csv")));
        assert!(x.len() > 1);
        assert_eq!(x, y);
    }
}

#[test]
fn metric_table_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/run");
    let res = run("solve", "coupled", &out, &["--kcount", "3"]);
    assert_eq!(res.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "k,Y0_1,Y0_2,shortfall_1,shortfall_2,skorokhod_1,skorokhod_2,bmo_1,bmo_2,KT_p2_1,KT_p2_2,picard_max,wall_ms"
    );
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("report.txt").exists());
}

#[test]
fn invalid_configuration_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let res = run("solve", "quadratic", dir.path(), &["--tol-limit", "-1"]);
    assert_eq!(res.status.code(), Some(2));
    let res = run("solve", "quadratic", dir.path(), &["--kfactor", "0.5"]);
    assert_eq!(res.status.code(), Some(2));
    let res = run("solve", "quadratic", dir.path(), &["--engine", "lattice", "--dump-paths", "x.bin"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn missing_or_malformed_scenario_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let res = rbsde(&["solve", "--scenario", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"n\": 1,\n  \"d\": \"one\" }").unwrap();
    let res = rbsde(&["solve", "--scenario", broken.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("broken.json:2:"), "{stderr}");

    assert_eq!(rbsde(&["solve"]).status.code(), Some(2));
}

fn failed_checks(report: &Value) -> Vec<String> {
    report["verification"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["status"]["status"] == "fail")
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn verify_on_bundled_lattice_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["quadratic", "reflected_quadratic", "coupled"] {
        let out = dir.path().join(name);
        let res = run("verify", name, &out, &[]);
        assert_eq!(res.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&res.stdout));
        assert_eq!(report(&out)["status"], "passed");
    }

    // With a barrier that binds, K^(k) at k0 = 1 is far below its limit:
    // the K moments grow ~50x over the schedule and the level-to-level
    // delta grows until the penalty dominates. Everything else holds.
    let out = dir.path().join("active");
    let res = run("verify", "reflected_zero_driver", &out, &[]);
    assert_eq!(res.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(failed_checks(&r), ["delta_nonincreasing", "k_moment_p2_uniform", "k_moment_p4_uniform"]);
    for name in ["barrier_shortfall", "skorokhod_limit", "representation_gap", "bmo_uniform", "uniqueness"] {
        assert_eq!(check(&r, name)["status"]["status"], "pass", "{name}");
    }

    // started where the penalty already dominates, the deltas do shrink
    let out = dir.path().join("late");
    let res = run("verify", "reflected_zero_driver", &out, &["--k0", "128", "--kcount", "6"]);
    let r = report(&out);
    assert_eq!(check(&r, "delta_nonincreasing")["status"]["status"], "pass");
    assert_eq!(failed_checks(&r), Vec::<String>::new(), "{}", String::from_utf8_lossy(&res.stdout));
}

#[test]
fn quadratic_verify_includes_exponential_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let res = run("verify", "quadratic", dir.path(), &[]);
    assert_eq!(res.status.code(), Some(0));
    let r = report(dir.path());
    let ch = check(&r, "cole_hopf");
    assert_eq!(ch["status"]["status"], "pass");
    assert!(ch["residual"].as_f64().unwrap() < 5e-3);
    assert_eq!(check(&report_for("coupled", dir.path()), "cole_hopf")["status"]["status"], "skipped");
}

fn report_for(name: &str, root: &Path) -> Value {
    let out = root.join(name);
    run("verify", name, &out, &["--kcount", "4"]);
    report(&out)
}

#[test]
fn inactive_barrier_reports_no_pushing() {
    let dir = tempfile::tempdir().unwrap();
    let res = run("verify", "unreflected", dir.path(), &[]);
    assert_eq!(res.status.code(), Some(0));
    let r = report(dir.path());
    for row in r["rows"].as_array().unwrap() {
        assert_eq!(row["k_moment_p2"][0].as_f64(), Some(0.0));
        assert_eq!(row["shortfall"][0].as_f64(), Some(0.0));
    }
}

#[test]
fn mc_verify_skips_lattice_only_checks() {
    let dir = tempfile::tempdir().unwrap();
    let res = run("verify", "reflected_zero_driver", dir.path(), SMALL_MC);
    assert!(matches!(res.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&res.stderr));
    let r = report(dir.path());
    assert_eq!(r["engine"], "mc");
    assert_eq!(check(&r, "bmo_uniform")["status"]["status"], "skipped");
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "");
}

#[test]
fn comparison_orders_bumped_terminal() {
    let dir = tempfile::tempdir().unwrap();
    let hi = dir.path().join("hi.json");
    let mut sc: Value =
        serde_json::from_str(&std::fs::read_to_string(scenario("reflected_quadratic")).unwrap()).unwrap();
    bump_terminal(&mut sc, 0.1);
    std::fs::write(&hi, serde_json::to_string_pretty(&sc).unwrap()).unwrap();

    let out = dir.path().join("up");
    let res = run("verify", "reflected_quadratic", &out, &["--kcount", "4", "--compare", hi.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    assert_eq!(check(&report(&out), "comparison")["status"]["status"], "pass");

    let out = dir.path().join("down");
    let args = ["verify", "--scenario", hi.to_str().unwrap(), "--out", out.to_str().unwrap(), "--kcount", "4"];
    let sc = scenario("reflected_quadratic");
    let mut args = args.to_vec();
    args.extend(["--compare", sc.to_str().unwrap()]);
    let res = rbsde(&args);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(check(&report(&out), "comparison")["status"]["status"], "fail");
}

fn bump_terminal(sc: &mut Value, by: f64) {
    let alpha = sc["terminal"]["alpha"].as_array_mut().expect("terminal alpha");
    for a in alpha {
        *a = Value::from(a.as_f64().unwrap() + by);
    }
}

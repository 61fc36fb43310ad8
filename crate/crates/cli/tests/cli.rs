use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tecoord::aggmodel::{Conditioning, TransitionCounts};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn tecoord(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tecoord")).args(args).output().expect("binary runs")
}

fn run(cmd: &str, scn: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--scenario", scn.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tecoord(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&read(p)).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(p).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for dir in [&a, &b] {
        let o = run("simulate", &scenario("single-tcl"), dir, &["--deterministic"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names = files(&a);
    assert_eq!(names, files(&b));
    assert!(names.contains(&"trace.csv".to_string()) && names.contains(&"devices.csv".to_string()));
    assert!(!names.contains(&"timing.json".to_string()));
    for f in &names {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn outputs_embed_the_config_hash() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    assert_eq!(code(&run("simulate", &scenario("single-tcl"), &a, &[])), 0);
    assert_eq!(code(&run("simulate", &scenario("single-tcl"), &b, &["--set", "scenario.horizon=10"])), 0);
    let ma = json(&a.join("manifest.json"));
    let hash = ma["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(json(&a.join("summary.json"))["config_hash"], hash);
    assert_ne!(json(&b.join("manifest.json"))["config_hash"], hash);
    assert!(a.join("timing.json").exists());
    assert_eq!(ma["status"], "ok");
}

#[test]
fn seed_changes_the_population() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let short = ["--set", "scenario.horizon=12", "--deterministic"];
    assert_eq!(code(&run("simulate", &scenario("fig4"), &a, &short)), 0);
    let mut seeded = short.to_vec();
    seeded.extend(["--seed", "99"]);
    assert_eq!(code(&run("simulate", &scenario("fig4"), &b, &seeded)), 0);
    assert_ne!(read(&a.join("trace.csv")), read(&b.join("trace.csv")));
}

#[test]
fn fig4_synchronizes_and_oscillates() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("simulate", &scenario("fig4"), t.path(), &["--deterministic"])), 0);
    let rows = csv_rows(&t.path().join("trace.csv"));
    let demand: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    let feeder = 2110.0;
    // Demand is pinned at the feeder limit right after the first drop.
    assert!(demand[96..120].iter().all(|d| (d - feeder).abs() < 0.01 * feeder));
    // After the second drop it swings between near zero and the limit.
    let late = &demand[160..];
    let hi = late.iter().copied().fold(0.0, f64::max);
    let lo = late.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(hi > 0.95 * feeder && lo < 0.05 * feeder, "range {lo}..{hi}");
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    let crossings = late.windows(2).filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0).count();
    assert!(crossings >= 6, "{crossings} mean crossings");
}

#[test]
fn config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let o = run("simulate", &scenario("single-tcl"), t.path(), &["--set", "scenario.n_devicez=3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_devicez"));
    assert_eq!(code(&run("simulate", &t.path().join("missing.toml"), t.path(), &[])), 2);
    assert_eq!(code(&run("simulate", &scenario("single-tcl"), t.path(), &["--set", "novalue"])), 2);
    assert_eq!(code(&run("simulate", &scenario("single-tcl"), t.path(), &["--set", "scenario.tau_min=-1"])), 2);
    assert_eq!(code(&run("mpc", &scenario("single-tcl"), t.path(), &[])), 2);
}

#[test]
fn infeasible_floor_exits_3() {
    let t = tempfile::tempdir().unwrap();
    let o = run(
        "mpc",
        &scenario("case5"),
        t.path(),
        &["--set", "mpc.horizon=3", "--set", "scenario.horizon=3", "--set", "mpc.energy_floor_mw=9"],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("energy floor"));
    assert_eq!(json(&t.path().join("manifest.json"))["status"], "failed");
}

#[test]
fn exhausted_search_exits_4_with_outputs() {
    let t = tempfile::tempdir().unwrap();
    let h = ["--set", "mpc.horizon=3", "--set", "scenario.horizon=3", "--deterministic"];
    // Enough nodes for a first schedule, far too few to prove it optimal.
    let mut limited = h.to_vec();
    limited.extend(["--set", "mpc.node_limit=12"]);
    let o = run("mpc", &scenario("case1"), t.path(), &limited);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.path().join("plan_mip.csv").exists());
    let sol = json(&t.path().join("mpc_mip.json"));
    assert_eq!(sol["stats"]["budget_exhausted"], true);
    assert_eq!(json(&t.path().join("manifest.json"))["status"], "budget-exhausted");

    let none = tempfile::tempdir().unwrap();
    let mut tiny = h.to_vec();
    tiny.extend(["--set", "mpc.node_limit=1"]);
    assert_eq!(code(&run("mpc", &scenario("case1"), none.path(), &tiny)), 4);
}

#[test]
fn mpc_both_kinds_writes_a_comparison() {
    let t = tempfile::tempdir().unwrap();
    let o = run(
        "mpc",
        &scenario("case2"),
        t.path(),
        &["--set", "mpc.horizon=3", "--set", "scenario.horizon=3", "--set", "mpc.kind=both", "--deterministic"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&t.path().join("comparison.csv"));
    assert_eq!(rows[0], ["metric", "MIP", "QP"]);
    let objective = rows.iter().find(|r| r[0] == "objective").unwrap();
    let (mip, qp): (f64, f64) = (objective[1].parse().unwrap(), objective[2].parse().unwrap());
    assert!(mip.is_finite() && qp.is_finite());
    for kind in ["mip", "qp"] {
        let plan = csv_rows(&t.path().join(format!("plan_{kind}.csv")));
        assert_eq!(plan.len(), 4);
    }
}

#[test]
fn validate_emits_metric_table_in_row_order() {
    let t = tempfile::tempdir().unwrap();
    let o = tecoord(&[
        "validate",
        "--scenario",
        scenario("case3").to_str().unwrap(),
        "--scenario",
        scenario("case5").to_str().unwrap(),
        "--out",
        t.path().to_str().unwrap(),
        "--set",
        "mpc.horizon=3",
        "--set",
        "scenario.horizon=3",
        "--deterministic",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&t.path().join("metrics.csv"));
    assert_eq!(rows[0], ["metric", "case3", "case5"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(&names[..5], ["type", "horizon", "b_max", "mu_s", "mu_w"]);
    assert!(names.contains(&"rmse") && names.contains(&"terminal_spread") && names.contains(&"max_bin_fraction"));
    assert!(!names.contains(&"solve_s"));
    assert_eq!(rows[1][1..], ["MIP", "QP"]);
    for case in ["case3", "case5"] {
        let pva = csv_rows(&t.path().join(format!("predicted_vs_actual_{case}.csv")));
        assert_eq!(pva.len(), 4);
        assert_eq!(pva[0][0], "time_min");
    }
}

#[test]
fn validate_empty_horizon_writes_header_only() {
    let t = tempfile::tempdir().unwrap();
    let o = run("validate", &scenario("case5"), t.path(), &["--set", "mpc.horizon=0", "--set", "scenario.horizon=0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pva = csv_rows(&t.path().join("predicted_vs_actual_case5.csv"));
    assert_eq!(pva.len(), 1);
    assert_eq!(pva[0][0], "time_min");
}

#[test]
fn identify_reports_stochastic_models() {
    let t = tempfile::tempdir().unwrap();
    let o = run("identify", &scenario("fig8"), t.path(), &["--set", "identify.n_bins=[10, 20]"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&t.path().join("identify_report.csv"));
    assert_eq!(rows.len(), 3);
    let col = rows[0].iter().position(|h| h == "column_sum_error").unwrap();
    for r in &rows[1..] {
        assert!(r[col].parse::<f64>().unwrap() < 1e-12);
    }
    assert!(t.path().join("model_nb20_tau10.json").exists());
    assert!(t.path().join("fit_nb10_tau10.csv").exists());
}

#[test]
fn spectrum_of_identity_model_is_all_ones() {
    let t = tempfile::tempdir().unwrap();
    let n = 3;
    let mut counts = TransitionCounts::new(n);
    for s in 1..=3 * n {
        counts.record(s, s);
    }
    let model = counts.into_model(10.0, Conditioning::FixedPrice { pi_clr: 20.0 });
    let path = t.path().join("identity.json");
    model.save(&path).unwrap();
    let out = t.path().join("out");
    let o = run("spectrum", &scenario("fig8"), &out, &["--model", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("identity: real spectrum"));
    let eigs = csv_rows(&out.join("eigs_identity.csv"));
    assert_eq!(eigs.len(), 1 + 3 * n);
    for r in &eigs[1..] {
        assert!((r[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!(r[2].parse::<f64>().unwrap().abs() < 1e-12);
    }
}

const SWEEP: &str = r#"
name = "sweep"

[scenario]
n_devices = 50
tau_min = 5.0
horizon = 12
seed = 1
noise_c_per_min = 0.01
bid = { pi_max = 50.0, beta = 40.0, e_set = 0.7 }
initial = { kind = "temperature-uniform", lo_c = 19.0, hi_c = 21.0 }
pi_base_per_mwh = 20.0

[sweep]
command = "simulate"
key = "scenario.seed"
values = [1, 2, 3, 4]
jobs = JOBS
"#;

#[test]
fn sweep_points_are_independent() {
    let t = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for jobs in [1, 3] {
        let cfg = t.path().join(format!("sweep{jobs}.toml"));
        std::fs::write(&cfg, SWEEP.replace("JOBS", &jobs.to_string())).unwrap();
        let out = t.path().join(format!("out{jobs}"));
        let o = run("sweep", &cfg, &out, &["--deterministic"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    let points: Vec<String> = files(&outs[0]).into_iter().filter(|f| f.starts_with('0')).collect();
    assert_eq!(points.len(), 4);
    assert_eq!(points[1], "001_scenario.seed=2");
    for p in &points {
        for f in files(&outs[0].join(p)) {
            assert_eq!(read(&outs[0].join(p).join(&f)), read(&outs[1].join(p).join(&f)), "{p}/{f}");
        }
    }
    // Each point matches a standalone run with the same value.
    let single = t.path().join("single");
    let cfg = t.path().join("sweep1.toml");
    assert_eq!(code(&run("simulate", &cfg, &single, &["--set", "scenario.seed=3", "--deterministic"])), 0);
    assert_eq!(read(&single.join("trace.csv")), read(&outs[0].join(&points[2]).join("trace.csv")));
    assert_ne!(read(&outs[0].join(&points[0]).join("trace.csv")), read(&outs[0].join(&points[1]).join("trace.csv")));
    let index = csv_rows(&outs[0].join("sweep.csv"));
    assert_eq!(index.len(), 5);
    assert!(index[1..].iter().all(|r| r[4] == "ok"));
}

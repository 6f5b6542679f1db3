use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use serde_json::Value;
use twofold::cli::{
    main_from, CyclesConfig, GridConfig, InitialConditions, OutputFormat, ReturnMapConfig, RunConfig, EXIT_CONFIG,
    EXIT_OK, EXIT_PARTIAL,
};
use twofold::fate::FateThresholds;
use twofold::integrate::{EscapingPolicy, StepperConfig};
use twofold::models::ModelSpec;

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn run(cmd: &[&str], config: &Path, out: &Path) -> i32 {
    let mut args = vec!["twofold", "--quiet", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(cmd);
    main_from(args)
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn grid(n: usize) -> GridConfig {
    GridConfig { x_min: -0.4, x_max: 0.4, y_min: -0.4, y_max: 0.4, nx: n, ny: n }
}

#[test]
fn r0_sweep_closes_up() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.initial_conditions = InitialConditions::R0 { theta_start: 0.1, theta_step: 0.1, theta_stop: 1.0 };
    cfg.t_max = 5.0;
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate"], &c, &out), EXIT_OK);
    let m = manifest(&out);
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["entries"].as_array().unwrap().len(), 10);
    assert!(m["summary"]["max_closure_gap"].as_f64().unwrap() < 1e-5);
    for e in m["entries"].as_array().unwrap() {
        assert!(e["event_counts"].is_object());
        assert!(e["final_state"].is_array());
        let f = out.join(e["file"].as_str().unwrap());
        let (header, rows) = csv_rows(&f);
        assert_eq!(header[0], "t");
        assert!(!rows.is_empty());
    }
}

#[test]
fn circle_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.initial_conditions = InitialConditions::Circle {
        radius: 0.25,
        center: [0.0, 0.0],
        theta_start: 0.1,
        theta_step: 0.1,
        theta_stop: std::f64::consts::TAU - 0.1,
    };
    cfg.t_max = 20.0;
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let code = run(&["simulate"], &c, &out);
    let m = manifest(&out);
    let entries = m["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 61);
    assert_eq!(code == EXIT_PARTIAL, m["failures"].as_u64().unwrap() > 0);
    // several distinct fates: some orbits slide, some only cross
    let slid = entries.iter().filter(|e| e["event_counts"].get("sliding-entry").is_some()).count();
    assert!(slid > 0 && slid < entries.len(), "{slid}");
}

#[test]
fn empty_batch_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.initial_conditions = InitialConditions::Points { points: vec![] };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["simulate"], &c, &out), EXIT_OK);
    let m = manifest(&out);
    assert!(m["entries"].as_array().unwrap().is_empty());
    assert!(m["files"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::ZEpsFinite { k: 2, epsilon: 0.1 });
    cfg.initial_conditions = InitialConditions::Points { points: vec![[0.3, -0.1, 0.0], [-0.2, 0.1, 0.05], [0.1, 0.1, 0.0]] };
    cfg.t_max = 10.0;
    let c = write_config(dir.path(), &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["simulate"], &c, &a);
    run(&["simulate"], &c, &b);
    for i in 0..3 {
        let name = format!("traj_{i:04}.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn csv_numbers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.initial_conditions = InitialConditions::Points { points: vec![[0.1 / 3.0, -0.7, 0.0]] };
    cfg.t_max = 1.0;
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    run(&["simulate"], &c, &out);
    let (_, rows) = csv_rows(&out.join("traj_0000.csv"));
    let x: f64 = rows[0][1].parse().unwrap();
    assert_eq!(x, 0.1 / 3.0);
}

#[test]
fn json_format_and_policy_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.initial_conditions = InitialConditions::Points { points: vec![[-0.1, -0.2, 0.0]] };
    cfg.t_max = 2.0;
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let mut args = vec!["twofold", "--quiet", "--format", "json", "--policy", "lower", "--config", c.to_str().unwrap()];
    args.extend(["--out", out.to_str().unwrap(), "simulate"]);
    main_from(args);
    let m = manifest(&out);
    assert_eq!(m["config"]["stepper"]["escaping_policy"], "lower");
    let tr: Value = serde_json::from_str(&fs::read_to_string(out.join("traj_0000.json")).unwrap()).unwrap();
    assert_eq!(tr["arcs"][0]["mode"], "lower");
}

#[test]
fn cycles_examples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::ZEpsFinite { k: 3, epsilon: 0.1 });
    cfg.cycles = CyclesConfig { interval: (0.01, 0.5), grid_n: 2000 };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("f3");
    assert_eq!(run(&["cycles"], &c, &out), EXIT_OK);
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("cycles.json")).unwrap()).unwrap();
    assert_eq!(rep["schema_version"], 1);
    let cyc = rep["cycles"].as_array().unwrap();
    assert_eq!(cyc.len(), 3);
    for (j, c) in cyc.iter().enumerate() {
        assert!((c["x0"].as_f64().unwrap() - 0.1 * (j + 1) as f64).abs() < 1e-9);
    }
    assert_eq!(csv_rows(&out.join("cycles.csv")).1.len(), 3);

    cfg.model = ModelSpec::ZEpsFinite { k: 0, epsilon: 0.1 };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("f0");
    assert_eq!(run(&["cycles"], &c, &out), EXIT_OK);
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("cycles.json")).unwrap()).unwrap();
    assert!(rep["cycles"].as_array().unwrap().is_empty());
    assert!(rep["notes"].to_string().contains("origin asymptotically stable"));

    cfg.model = ModelSpec::ZEpsInfinite { epsilon: 0.5 };
    cfg.cycles.interval = (0.04, 0.3);
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("inf");
    assert_eq!(run(&["cycles"], &c, &out), EXIT_OK);
    let rep: Value = serde_json::from_str(&fs::read_to_string(out.join("cycles.json")).unwrap()).unwrap();
    let mut x0: Vec<f64> = rep["cycles"].as_array().unwrap().iter().map(|c| c["x0"].as_f64().unwrap()).collect();
    x0.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert_eq!(x0.len(), 6);
    for (j, x) in x0.iter().enumerate() {
        assert!((x - 0.25 / (j + 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn sliding_portrait_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.grid = grid(41);
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["sliding-portrait"], &c, &out), EXIT_OK);
    let (header, rows) = csv_rows(&out.join("sliding_portrait.csv"));
    assert_eq!(rows.len(), 1681);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (xi, yi, ri, rev, sing) = (col("x"), col("y"), col("region"), col("reversed"), col("singular"));
    let mut flagged = 0;
    for r in &rows {
        let (x, y): (f64, f64) = (r[xi].parse().unwrap(), r[yi].parse().unwrap());
        if (x + y).abs() < 1e-12 {
            assert_eq!(r[sing], "true", "{x} {y}");
            flagged += 1;
        } else {
            assert_eq!(r[sing], "false");
        }
        assert_eq!(r[rev] == "true", r[ri] == "escaping");
        if x < -1e-12 && y < -1e-12 {
            assert_eq!(r[ri], "escaping");
        }
    }
    assert_eq!(flagged, 41);

    cfg.grid = GridConfig { nx: 1, ny: 1, ..grid(1) };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("one");
    assert_eq!(run(&["sliding-portrait"], &c, &out), EXIT_OK);
    assert_eq!(csv_rows(&out.join("sliding_portrait.csv")).1.len(), 1);
}

#[test]
fn classify_fate_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.grid = GridConfig { x_min: 0.1, x_max: 0.2, y_min: 0.1, y_max: 0.2, nx: 2, ny: 2 };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["classify-fate"], &c, &out), EXIT_OK);
    let (header, rows) = csv_rows(&out.join("fates.csv"));
    assert_eq!(rows.len(), 4);
    let obs = header.iter().position(|h| h == "observed").unwrap();
    assert!(rows.iter().all(|r| r[obs] == "to_origin"));
    assert_eq!(manifest(&out)["summary"]["agreement_rate"], 1.0);
}

#[test]
fn unresolved_fates_are_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.grid = GridConfig { x_min: 0.3, x_max: 0.3, y_min: -0.1, y_max: -0.1, nx: 1, ny: 1 };
    // far too short to see either threshold fire
    cfg.fate = FateThresholds { t_max: 0.05, ..Default::default() };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    assert_eq!(run(&["classify-fate"], &c, &out), EXIT_PARTIAL);
    assert_eq!(manifest(&out)["failures"], 1);
}

#[test]
fn return_map_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::Z0);
    cfg.return_map = ReturnMapConfig { points: vec![[1.0, -0.5], [0.2, -0.1]], iterations: 3, x0: vec![0.1, 0.05] };
    let c = write_config(dir.path(), &cfg);
    let out = dir.path().join("it");
    assert_eq!(run(&["return-map", "iterate"], &c, &out), EXIT_OK);
    assert!(out.join("return_iterates.csv").exists());
    let out = dir.path().join("lin");
    assert_eq!(run(&["return-map", "linearize"], &c, &out), EXIT_OK);
    let (_, rows) = csv_rows(&out.join("return_linearization.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"model\": {\"id\": \"z0\"},\n \"bogus\": 1}").unwrap();
    assert_eq!(run(&["simulate"], &bad, &out), EXIT_CONFIG);
    fs::write(&bad, "{\"model\": {\"id\": \"z-eps-finite\", \"k\": 2}}").unwrap();
    assert_eq!(run(&["cycles"], &bad, &out), EXIT_CONFIG);
    fs::write(&bad, "{\"model\": {\"id\": \"z0\"}, \"t_max\": -1}").unwrap();
    assert_eq!(run(&["simulate"], &bad, &out), EXIT_CONFIG);
    assert_eq!(run(&["simulate"], &dir.path().join("missing.json"), &out), EXIT_CONFIG);
    assert_eq!(main_from(["twofold", "--format", "xml", "simulate"]), EXIT_CONFIG);
    assert_eq!(main_from(["twofold", "frobnicate"]), EXIT_CONFIG);
}

#[test]
fn binary_reports_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"model\": {\"id\": \"z0\"},\n \"bogus\": 1}").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_twofold")).args(["--config", bad.to_str().unwrap(), "simulate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bogus") && err.contains("line 2"), "{err}");
}

fn arb_model() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        Just(ModelSpec::Z0),
        (0u32..8, 0.01f64..0.5).prop_map(|(k, epsilon)| ModelSpec::ZEpsFinite { k, epsilon }),
        (0.01f64..0.9).prop_map(|epsilon| ModelSpec::ZEpsInfinite { epsilon }),
    ]
}

fn arb_ics() -> impl Strategy<Value = InitialConditions> {
    prop_oneof![
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 0..5).prop_map(|points| InitialConditions::Points { points }),
        (0.01f64..1.0, -0.5f64..0.5, 0.01f64..0.5).prop_map(|(radius, c, step)| InitialConditions::Circle {
            radius,
            center: [c, -c],
            theta_start: 0.0,
            theta_step: step,
            theta_stop: 6.0,
        }),
        (0.01f64..0.5, 0.01f64..0.2).prop_map(|(a, step)| InitialConditions::R0 { theta_start: a, theta_step: step, theta_stop: 1.0 }),
    ]
}

proptest! {
    #[test]
    fn config_round_trip(
        model in arb_model(),
        ics in arb_ics(),
        t_max in 0.1f64..500.0,
        rel_tol in 1e-14f64..1e-4,
        policy in prop_oneof![Just(EscapingPolicy::FollowUpper), Just(EscapingPolicy::FollowLower), Just(EscapingPolicy::FollowSliding)],
        json in any::<bool>(),
        n in 1usize..50,
        lo in 0.001f64..0.1,
        x0 in prop::collection::vec(0.001f64..1.0, 0..4),
    ) {
        let cfg = RunConfig {
            initial_conditions: ics,
            t_max,
            stepper: StepperConfig { rel_tol, escaping_policy: policy, ..Default::default() },
            output_dir: PathBuf::from("runs/a b"),
            format: if json { OutputFormat::Json } else { OutputFormat::Csv },
            grid: GridConfig { nx: n, ny: n + 1, ..grid(n) },
            fate: FateThresholds { origin_radius: lo / 10.0, ..Default::default() },
            cycles: CyclesConfig { interval: (lo, 0.8), grid_n: 10 * n },
            return_map: ReturnMapConfig { points: vec![[lo, -lo]], iterations: n, x0 },
            ..RunConfig::new(model)
        };
        let back = RunConfig::from_json(&cfg.to_json(), Path::new("mem.json")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

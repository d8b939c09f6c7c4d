use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn graphsym(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphsym"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch graphsym")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = graphsym(dir, args);
    assert!(
        out.status.success(),
        "graphsym {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn t_world_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let gen = ok(d, &["gen-world", "--world", "T", "--fraction", "1.0", "-o", "t.obs"]);
    assert!(String::from_utf8_lossy(&gen.stderr).contains("135200"));

    ok(d, &["build-graph", "-i", "t.obs", "-o", "t.json"]);
    let graph = json(&d.join("t.json"));
    assert_eq!(graph["total_observations"], 135200);
    assert_eq!(graph["n"], 200);

    ok(d, &["find", "--graph", "t.json", "--error-limit", "0", "--no-timings", "-o", "a.json"]);
    ok(d, &["find", "--observations", "t.obs", "--error-limit", "0", "--no-timings", "-o", "b.json"]);
    let a = std::fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.json")).unwrap());
    assert_eq!(json(&d.join("a.json"))["group"]["order"], 400);
}

#[test]
fn find_reads_a_config_file() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["gen-world", "--world", "TC", "--fraction", "1", "-o", "tc.obs"]);
    std::fs::write(d.join("cfg.json"), r#"{"error_limit": 0.0, "fault_tolerance": 0.0}"#).unwrap();
    ok(d, &["find", "--observations", "tc.obs", "--config", "cfg.json", "-o", "r.json"]);
    let report = json(&d.join("r.json"));
    assert_eq!(report["group"]["order"], 1092);
    assert!(report["timings"].is_object());
}

#[test]
fn experiment_writes_canonical_csv() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = [
        "experiment",
        "--world",
        "TR2",
        "--fractions",
        "1.0,0.05",
        "--fault-tolerances",
        "0",
        "--error-limit",
        "1e-2",
        "--seeds",
        "1",
        "--jobs",
        "2",
        "-o",
        "grid.csv",
    ];
    ok(d, &args);
    let csv = std::fs::read_to_string(d.join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "world,fraction,fault_tolerance,bandwidth,error_limit,seed,presolve_count,\
         generator_count,group_order,classification,wall_time_s"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("TR2,1.0,0.0,,0.01,1,"));
    assert!(lines[2].starts_with("TR2,0.05,"));

    // Everything but the wall time is reproducible.
    ok(d, &args[..args.len() - 2].iter().copied().chain(["-o", "again.csv"]).collect::<Vec<_>>());
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&csv), strip(&std::fs::read_to_string(d.join("again.csv")).unwrap()));
}

#[test]
fn verify_passes() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS observations TR1: got 571950"));
    assert!(!text.contains("FAIL"));

    let out = ok(dir.path(), &["verify", "--json"]);
    let checks: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn usage_and_input_errors_exit_non_zero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(graphsym(d, &["find", "--graph", "x.json", "--bandwidth", "abc"]).status.code(), Some(2));
    assert_eq!(graphsym(d, &["frobnicate"]).status.code(), Some(2));

    let missing = graphsym(d, &["build-graph", "-i", "missing.obs", "-o", "g.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    ok(d, &["gen-world", "--world", "T", "--fraction", "0.1", "--seed", "3", "-o", "t.obs"]);
    let bad = graphsym(d, &["find", "--observations", "t.obs", "--fault-tolerance", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn scientific_notation_is_accepted() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["gen-world", "--world", "TR2", "--fraction", "3e-1", "--seed", "2", "-o", "s.obs"]);
    ok(d, &["find", "--observations", "s.obs", "--bandwidth", "2.5e-4", "--fault-tolerance", "1e-1", "--error-limit", "1e-2", "-o", "r.json"]);
    assert!(json(&d.join("r.json"))["group"]["order"].as_u64().unwrap() >= 1);
}

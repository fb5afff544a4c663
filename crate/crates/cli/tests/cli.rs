use std::path::PathBuf;

use dearsim::analysis::SpeedupReport;
use dearsim::export::{read_reports_csv, read_trials_csv};
use dearsim_cli::{run, EXIT_INVALID, EXIT_OK};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("dearsim").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dearsim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn analyze_reports_s_max() {
    let o = cli(&[
        "analyze",
        "--tff",
        "1",
        "--tbp",
        "2",
        "--trs",
        "2",
        "--tag",
        "1.5",
        "--workers",
        "64",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("s_max = 54.857143"), "{}", o.stdout);
    assert!(o.stdout.contains("t_dear = 3.500000"));
}

#[test]
fn analyze_csv_and_gap() {
    let o = cli(&[
        "analyze",
        "--tff",
        "1",
        "--tbp",
        "2",
        "--trs",
        "1.5",
        "--tag",
        "1.5",
        "--workers",
        "8",
        "--format",
        "csv",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let mut lines = o.stdout.lines();
    assert_eq!(lines.next(), Some("s_max,t_dear,t_baseline,saving,gap"));
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(&row[1..], &[3.5, 4.0, 0.5, 0.5]);
}

#[test]
fn analyze_rejects_trace_format_and_bad_inputs() {
    let o = cli(&[
        "analyze",
        "--tff",
        "1",
        "--tbp",
        "2",
        "--trs",
        "0",
        "--tag",
        "0",
        "--workers",
        "4",
        "--format",
        "trace",
    ]);
    assert_eq!(o.code, EXIT_INVALID);
    assert!(o.stderr.contains("trace"));
    let o = cli(&[
        "analyze",
        "--tff",
        "0",
        "--tbp",
        "0",
        "--trs",
        "0",
        "--tag",
        "0",
        "--workers",
        "4",
    ]);
    assert_eq!(o.code, EXIT_INVALID);
}

#[test]
fn collective_check_passes_exactly() {
    let o = cli(&[
        "collective-check",
        "--workers",
        "4",
        "--elems",
        "10",
        "--seed",
        "1",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.starts_with("PASS"), "{}", o.stdout);
    assert!(o.stdout.contains("rounds=3+3"));
    assert!(o.stdout.contains("max deviation 0"));
    let o = cli(&["collective-check", "--workers", "0", "--elems", "10"]);
    assert_eq!(o.code, EXIT_INVALID);
}

#[test]
fn simulate_without_cluster_names_the_section() {
    let path = scratch("no_cluster.json");
    std::fs::write(
        &path,
        r#"{"model": {"preset": "resnet50", "total_ff_seconds": 0.1}, "policy": {"kind": "DEAR"}}"#,
    )
    .unwrap();
    let o = cli(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_INVALID);
    assert!(o.stderr.contains("cluster"), "{}", o.stderr);
    assert!(o.stdout.is_empty());
}

#[test]
fn simulate_formats() {
    let cfg = data("resnet50_10gbe.json");
    let md = cli(&["simulate", "--config", &cfg]);
    assert_eq!(md.code, EXIT_OK, "{}", md.stderr);
    assert!(md.stdout.contains("| exposed communication |"));

    let trace = cli(&["simulate", "--config", &cfg, "--format", "trace"]);
    assert_eq!(trace.code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&trace.stdout).unwrap();
    let events = v["traceEvents"].as_array().unwrap();
    assert!(events.iter().all(|e| e["ph"] == "X"));
    assert!(events.iter().any(|e| e["name"] == "BARRIER"));

    let csv = cli(&["simulate", "--config", &cfg, "--format", "csv"]);
    assert!(csv.stdout.starts_with("task,label,resource,start,end\n"));
}

#[test]
fn simulate_tiny_single_worker_is_pure_compute() {
    let o = cli(&["simulate", "--config", &data("tiny_layers.json")]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(
        o.stdout.contains("| iteration | 6.000000 |"),
        "{}",
        o.stdout
    );
    assert!(o.stdout.contains("| exposed communication | 0.000000 |"));
}

#[test]
fn compare_csv_round_trips_through_out_file() {
    let out = scratch("compare.csv");
    let o = cli(&[
        "compare",
        "--config",
        &data("resnet50_10gbe.json"),
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.is_empty());
    let reports: Vec<SpeedupReport> = read_reports_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(reports.len(), 5);
    for r in &reports {
        assert_eq!(r.t_ar, r.t_rs + r.t_ag);
        assert!(r.ratio <= 1.0 + 1e-9);
    }
}

#[test]
fn compare_policy_subset_and_bad_kind() {
    let cfg = data("resnet50_10gbe.json");
    let o = cli(&["compare", "--config", &cfg, "--policies", "dear,wfbp-fused"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 4);
    let o = cli(&["compare", "--config", &cfg, "--policies", "fifo"]);
    assert_eq!(o.code, EXIT_INVALID);
    let o = cli(&["compare", "--config", &cfg, "--buffer-bytes", "0"]);
    assert_eq!(o.code, EXIT_INVALID);
}

#[test]
fn tune_methods_emit_traces() {
    let cfg = data("resnet50_10gbe.json");
    for method in ["bo", "random", "grid"] {
        let o = cli(&[
            "tune", "--config", &cfg, "--method", method, "--format", "csv", "--seed", "3",
        ]);
        assert_eq!(o.code, EXIT_OK, "{method}: {}", o.stderr);
        let trace = read_trials_csv(o.stdout.as_bytes()).unwrap();
        assert!(
            !trace.is_empty() && trace.len() <= 11,
            "{method}: {}",
            trace.len()
        );
        assert!(trace
            .iter()
            .all(|t| (1_000_000..=100_000_000).contains(&t.x_bytes)));
        assert!(o.stderr.contains("best buffer"));
    }
}

#[test]
fn tune_rejects_unfused_policy() {
    let o = cli(&["tune", "--config", &data("tiny_layers.json")]);
    assert_eq!(o.code, EXIT_INVALID);
    assert!(o.stderr.contains("fused"));
}

#[test]
fn calibrate_from_points_and_csv() {
    let o = cli(&[
        "calibrate",
        "--workers",
        "64",
        "--point",
        "1e6:4.5e-3",
        "--point",
        "5e5:3.9e-3",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("alpha = 2.619048e-5 s"), "{}", o.stdout);

    let input = scratch("points.csv");
    std::fs::write(&input, "bytes,seconds\n1000000,0.0045\n500000,0.0039\n").unwrap();
    let o = cli(&[
        "calibrate",
        "--workers",
        "64",
        "--input",
        input.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.starts_with("workers,alpha,beta,clamped\n64,"));

    let o = cli(&["calibrate", "--workers", "64", "--point", "1e6:4.5e-3"]);
    assert_eq!(o.code, EXIT_INVALID);
    let o = cli(&["calibrate", "--workers", "64"]);
    assert_eq!(o.code, EXIT_INVALID);
    let o = cli(&["calibrate", "--workers", "64", "--point", "oops"]);
    assert_eq!(o.code, EXIT_INVALID);
}

#[test]
fn usage_errors_and_help() {
    let o = cli(&["frobnicate"]);
    assert_eq!(o.code, EXIT_INVALID);
    assert!(o.stderr.contains("Usage"));
    let o = cli(&["simulate", "--config", "x.json", "--bogus"]);
    assert_eq!(o.code, EXIT_INVALID);
    let o = cli(&["--help"]);
    assert_eq!(o.code, EXIT_OK);
    assert!(o.stdout.contains("collective-check"));
}

#[test]
fn unreadable_or_invalid_config() {
    let o = cli(&["simulate", "--config", "/nonexistent/dearsim.json"]);
    assert_eq!(o.code, EXIT_INVALID);
    let path = scratch("typo.json");
    std::fs::write(&path, r#"{"clustr": {}}"#).unwrap();
    let o = cli(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_INVALID);
    assert!(o.stderr.contains("clustr"), "{}", o.stderr);
}

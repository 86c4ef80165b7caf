use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"schema_version = 1
case = "TC1"
scheme = "SN"
sizes = [8, 16]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn slabrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slabrt")).args(args).output().unwrap()
}

fn solve(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    slabrt(&args)
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn solve_writes_table_traces_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), BASE);
    let out = tmp.path().join("out");
    let o = solve(&config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let mut table = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let header: Vec<String> = table.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["J", "N", "N_it", "err_L2", "rate_L2", "err_W2G", "rate_W2G", "rank_W", "rank_U"]);
    let rows: Vec<csv::StringRecord> = table.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "8");
    assert_eq!(&rows[1][1], "16");
    assert_eq!(&rows[0][4], "", "first row has no rate");
    let rate: f64 = rows[1][4].parse().unwrap();
    assert!(rate > 0.5 && rate < 1.5, "rate {rate}");

    let raw = fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(!raw.contains('\r'));
    for (j, n) in [(8, 8), (16, 16)] {
        let mut trace = csv::Reader::from_path(out.join(format!("trace_{j}_{n}.csv"))).unwrap();
        let header: Vec<String> = trace.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ["k", "rank", "delta", "eta", "res_norm"]);
        assert!(trace.records().count() > 1);
    }

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let cfg = &summary["config"];
    assert_eq!(cfg["case"], "TC1");
    assert_eq!(cfg["jobs"], 1);
    assert_eq!(cfg["solver"]["theta"].as_f64(), Some(0.75));
    assert_eq!(cfg["solver"]["eps_target"].as_f64(), Some(1e-7));
    assert_eq!(cfg["solver"]["delta0"].as_f64(), Some(0.1));
    assert_eq!(cfg["angular_sizes"], serde_json::json!([8, 16]));
    let row = &summary["rows"][0];
    assert_eq!(row["status"], "converged");
    for key in ["gamma1", "gamma2", "rho", "omega", "r_p", "lambda", "Lambda", "tau1", "tau2"] {
        assert!(!row["constants"][key].is_null(), "missing constant {key}");
    }
    // Floats carry 17 significant digits.
    let text = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(text.contains("7.5000000000000000e-1"));
}

#[test]
fn inexact_variant_adds_rank_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{BASE}variant = \"st_inexact\"\n"));
    let out = tmp.path().join("out");
    let o = solve(&config, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut table = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let header: Vec<String> = table.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[9..], ["r_inexact", "r_naive"]);
    for rec in table.records() {
        let rec = rec.unwrap();
        let r_inexact: usize = rec[9].parse().unwrap();
        let r_naive: usize = rec[10].parse().unwrap();
        assert!(r_inexact > 0 && r_naive > 0);
    }
}

#[test]
fn invalid_configs_exit_2_without_artifacts() {
    let cases = [
        BASE.replace("[8, 16]", "[]"),
        format!("{BASE}unknown_key = 3\n"),
        format!("{BASE}[solver]\ntau2 = 0.2\n"),
        BASE.replace("schema_version = 1", "schema_version = 7"),
        format!("{BASE}[solver]\nmax_wall_time = -1.0\n"),
        "this is not toml = = =".to_string(),
    ];
    for text in cases {
        let tmp = tempfile::tempdir().unwrap();
        let config = write_config(tmp.path(), &text);
        let out = tmp.path().join("out");
        for cmd in ["solve", "verify"] {
            let o = slabrt(&[cmd, config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(2), "{cmd} {text}");
            let report: Value = serde_json::from_slice(&o.stderr).unwrap();
            assert_eq!(report["error"], "invalid_config");
            assert_eq!(report["exit_code"], 2);
            assert!(!out.exists(), "artifacts written for {text}");
        }
    }
    let o = slabrt(&["solve", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3_with_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{BASE}[solver]\nmax_iter = 3\n"));
    let out = tmp.path().join("out");
    let o = solve(&config, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["error"], "not_converged");
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["rows"][0]["N_it"], 3);
    assert!(out.join("table.csv").exists());
    assert!(out.join("trace_8_8.csv").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"][0]["status"], "not_converged");
}

#[test]
fn wall_time_limit_stops_the_solver() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{BASE}[solver]\nmax_wall_time = 1e-9\n"));
    let out = tmp.path().join("out");
    let o = solve(&config, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["solver"]["max_wall_time"].as_f64(), Some(1e-9));
    assert_eq!(summary["rows"][0]["status"], "not_converged");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &format!("{BASE}seed = 11\n"));
    let out = tmp.path().join("out");
    assert_eq!(solve(&config, &out, &[]).status.code(), Some(0));
    let first = read_dir_bytes(&out);
    fs::remove_dir_all(&out).unwrap();
    assert_eq!(solve(&config, &out, &[]).status.code(), Some(0));
    assert_eq!(first, read_dir_bytes(&out));

    // Parallel rows give the same tables and traces.
    let par = tmp.path().join("par");
    assert_eq!(solve(&config, &par, &["--jobs", "2"]).status.code(), Some(0));
    for (name, bytes) in read_dir_bytes(&par) {
        if name.ends_with(".csv") {
            let same = first.iter().find(|(n, _)| *n == name).unwrap();
            assert_eq!(same.1, bytes, "{name} differs with two jobs");
        }
    }
}

#[test]
fn verify_passes_for_default_and_loose_preconditioners() {
    for extra in ["", "[solver]\nexpsum_eps = 0.99\n"] {
        let tmp = tempfile::tempdir().unwrap();
        let config = write_config(tmp.path(), &format!("{BASE}seed = 5\n{extra}"));
        let out = tmp.path().join("out");
        let o = slabrt(&["verify", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
        assert!(!stdout.contains("FAIL"), "{stdout}");
        assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), if extra.is_empty() { 6 } else { 5 }, "{stdout}");
        let report: Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
        assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    }
}

#[test]
fn verify_runs_for_pn() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &BASE.replace("\"SN\"", "\"PN\"").replace("[8, 16]", "[8]"));
    let o = slabrt(&["verify", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

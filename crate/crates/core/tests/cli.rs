use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jascl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jascl")).args(args).output().expect("binary runs")
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    jascl(&all)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    fs::write(&cfg, "{\n  \"shots\": 5,\n  \"shotz\": 3\n}\n").unwrap();
    let o = run_in(&dir.path().join("out"), &["bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("shotz"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.json");
    fs::write(&cfg, "{ \"steps\": 10, }").unwrap();
    let o = run_in(dir.path(), &["dynamics", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["dynamics", "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_in(dir.path(), &["validate-theory", "--module", "optics"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rho_sweep_row_at_point_nine() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["dynamics", "--f", "0.5", "--gamma", "0.8", "--epsilon0", "0.3", "--rho-step", "0.1", "--mc-population", "1000"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("rho_sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 11);
    let row = rows.iter().find(|r| &r[0] == "0.9").expect("rho = 0.9 row");
    let e: f64 = row[1].parse().unwrap();
    assert!((e - 0.1875).abs() < 1e-12, "{e}");
    assert_eq!(&rows[0][1], "0.3");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [&["dynamics", "--mc-population", "2000"][..], &["gas-landscape", "--epsilon-sweep"][..]] {
        let a = dir.path().join(format!("{}-a", cmd[0]));
        let b = dir.path().join(format!("{}-b", cmd[0]));
        assert!(run_in(&a, cmd).status.success());
        // Second run driven by the first run's snapshot.
        let snap: serde_json::Value =
            serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
        let cfg = dir.path().join(format!("{}.json", cmd[0]));
        fs::write(&cfg, serde_json::to_vec(&snap["config"]).unwrap()).unwrap();
        assert!(run_in(&b, &[cmd[0], "--config", cfg.to_str().unwrap()]).status.success());
        assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b), "{}", cmd[0]);
        assert!(run_in(&a, cmd).status.success());
        assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b), "{}", cmd[0]);
    }
}

#[test]
fn validate_theory_selected_module_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["validate-theory", "--module", "numerics", "--module", "gas"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("theory_summary.json")).unwrap()).unwrap();
    let checks = s["checks"].as_array().unwrap();
    assert!(checks.len() >= 10);
    assert!(checks.iter().all(|c| c["status"] == "pass"));
    assert!(checks.iter().all(|c| c["module"] == "numerics" || c["module"] == "gas"));
}

#[test]
fn failing_invariant_exits_1_with_its_name() {
    // A population this small is rejected by the oracle, so the check fails.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.json");
    fs::write(&cfg, r#"{"theory": {"mc_population": 10}}"#).unwrap();
    let o = run_in(&dir.path().join("o"), &["validate-theory", "--module", "dynamics", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("monte_carlo_agreement"));
}

#[test]
fn small_bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    fs::write(
        &cfg,
        r#"{
  "shots": 2,
  "unlabeled": 4,
  "seeds": [3],
  "configs": ["vanilla", "jascl"],
  "write_dataset": true,
  "settings": {"image_size": [16, 16], "base": {"epochs": 2}, "incremental": {"epochs": 2}}
}"#,
    )
    .unwrap();
    let bench = dir.path().join("bench");
    let o = run_in(&bench, &["bench", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "report.csv", "aggregates.csv", "training_log.csv", "findings.json", "resolved_config.json"] {
        assert!(bench.join(f).exists(), "{f}");
    }
    assert!(bench.join("dataset/manifest.json").exists());
    let header = fs::read_to_string(bench.join("report.csv")).unwrap();
    assert!(header.starts_with("config,seed,session,class,dice,iou\n"));
    let log = fs::read_to_string(bench.join("training_log.csv")).unwrap();
    assert!(log.starts_with("config,seed,session,epoch,ce,consistency,replay,total,accepted_pct,measured_f,measured_rho"));

    let dynamics = dir.path().join("dyn");
    assert!(run_in(&dynamics, &["dynamics", "--mc-population", "1000"]).status.success());
    let report = dir.path().join("report");
    let o = run_in(&report, &["report", bench.to_str().unwrap(), dynamics.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(report.join("summary.csv")).unwrap();
    assert!(summary.starts_with("source,command,table,key,metric,value\n"));
    assert!(summary.contains(",bench,aggregates.csv,config=jascl;session=1,harmonic_dice,"));
    assert!(summary.contains(",dynamics,dynamics_summary.json,,asymptotic_filtered,0.1875"));
}

#[test]
fn report_rejects_directory_without_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = run_in(&dir.path().join("r"), &["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

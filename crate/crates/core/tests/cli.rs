use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maple_core::eval::LoocvReport;

fn maple(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maple"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn maple")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = maple(dir, args);
    assert!(
        out.status.success(),
        "maple {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simgen_writes_the_requested_pool() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simgen", "--seeds", "1..3", "--out", "pool.json"]);
    let pool: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("pool.json")).unwrap()).unwrap();
    let ids: Vec<_> = pool.as_array().unwrap().iter().map(|d| d["device_id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, ["sim-1", "sim-2", "sim-3"]);
}

#[test]
fn characterize_sim_device() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["characterize", "--sim-device", "5", "--out", "d.json"]);
    let text = fs::read_to_string(dir.path().join("d.json")).unwrap();
    let d = maple_core::hwcounters::HardwareDescriptor::from_json_str(&text).unwrap();
    assert_eq!(d.flattened().len(), 165);
    assert_eq!(d.device_id, "sim-5");
}

#[test]
fn characterize_host_without_counters_exits_2() {
    if maple_core::hwcounters::counters_available().is_ok() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = maple(dir.path(), &["characterize", "--iterations", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sim-device"));
}

#[test]
fn collect_rejects_oversized_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = maple(dir.path(), &["collect", "--devices", "sim:1..2", "--n", "20000"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn collect_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["collect", "--devices", "sim:1..3", "--n", "25", "--seed", "9"];
    let a = ok(dir.path(), &args).stdout;
    let b = ok(dir.path(), &args).stdout;
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("device_id,arch_id,latency_ms,weight\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 25);
}

#[test]
fn missing_inputs_exit_2_and_bad_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = maple(dir.path(), &["train", "--samples", "absent.csv", "--epochs", "1"]);
    assert_eq!(code(&out), 2);

    fs::write(dir.path().join("bad.csv"), "device_id,arch_id,latency_ms,weight\nsim-1,99999,1.0,1.0\n").unwrap();
    let out = maple(dir.path(), &["train", "--samples", "bad.csv", "--epochs", "1"]);
    assert_eq!(code(&out), 3);

    fs::write(dir.path().join("neg.csv"), "device_id,arch_id,latency_ms,weight\nsim-1,5,-1.0,1.0\n").unwrap();
    let out = maple(dir.path(), &["train", "--samples", "neg.csv", "--epochs", "1"]);
    assert_eq!(code(&out), 3);

    let out = maple(dir.path(), &["loocv", "--methods", "guess"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_adapt_predict_pareto() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["collect", "--devices", "sim:1..4", "--n", "40", "--out", "init.csv"]);
    ok(d, &["train", "--samples", "init.csv", "--epochs", "5", "--out", "model.json"]);
    ok(d, &[
        "adapt", "--samples", "init.csv", "--target", "sim:8", "--k", "3",
        "--epochs", "5", "--adaptation-out", "adapt.csv", "--out", "adapted.json",
    ]);
    let rows = fs::read_to_string(d.join("adapt.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3, "{rows}");
    assert!(rows.lines().skip(1).all(|l| l.starts_with("sim-8,")));

    let out = maple(d, &["adapt", "--samples", "init.csv", "--target", "sim:2", "--epochs", "1"]);
    assert_eq!(code(&out), 3);

    ok(d, &["characterize", "--sim-device", "8", "--out", "d8.json"]);
    fs::write(d.join("archs.txt"), "0\n1\n15624\n").unwrap();
    let pred = ok(d, &["predict", "--model", "adapted.json", "--descriptor", "d8.json", "--archs", "archs.txt"]).stdout;
    let pred = String::from_utf8(pred).unwrap();
    let lines: Vec<_> = pred.lines().collect();
    assert_eq!(lines[0], "arch_id,predicted_ms");
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        let ms: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(ms.is_finite() && ms > 0.0);
    }

    let out = ok(d, &["pareto", "--model", "adapted.json", "--target", "sim:8", "--out", "pareto.csv"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("agreement"));
    let table = fs::read_to_string(d.join("pareto.csv")).unwrap();
    assert!(table.starts_with("arch_id,latency_ms,accuracy,on_true_front,on_predicted_front\n"));
}

#[test]
fn small_loocv_reports_every_k() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &[
        "loocv", "--seeds", "1..3", "--n", "30", "--k", "0,3,10", "--methods", "maple,lut",
        "--epochs", "3", "--format", "json", "--out", "r.json",
    ]);
    let r = LoocvReport::from_json_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r.rows.len(), 3 * 3 * 2);
    for k in [0, 3, 10] {
        assert!(r.mean.iter().any(|m| m.k_adapt == k));
    }
}

#[test]
fn distmap_is_square() {
    let dir = tempfile::tempdir().unwrap();
    let text = String::from_utf8(ok(dir.path(), &["distmap"]).stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("device_id,sim-1,"));
    for (i, l) in lines[1..].iter().enumerate() {
        let cells: Vec<_> = l.split(',').collect();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[1 + i].parse::<f64>().unwrap(), 0.0);
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use accelcmp_cli::{RUN_COLUMNS, SWEEP_COLUMNS};

fn accelcmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accelcmp"))
        .args(args)
        .env("ACCELCMP_CACHE_DIR", "off")
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[i].to_string()).collect()
}

#[test]
fn empty_workload_gives_header_only_run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let wl = dir.path().join("empty.csv");
    fs::write(&wl, "# nothing here\n").unwrap();
    let out = dir.path().join("out");
    let (wl, out) = (wl.to_str().unwrap(), out.to_str().unwrap());
    let run = accelcmp(&["run", "--arch", "pim", "--workload", wl, "--out", out]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("out/run_pim.csv")).unwrap(), format!("{}\n", RUN_COLUMNS.join(",")));
    let cmp = accelcmp(&["compare", "--workload", wl, "--out", out]);
    assert!(cmp.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out/compare.csv")).unwrap().lines().count(), 1);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let unknown = accelcmp(&["run", "--arch", "tpu", "--workload", "bert", "--out", out]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("tpu"));
    let layout = accelcmp(&["sweep", "buffer_layout", "--arch", "ndp", "--workload", "bert", "--out", out]);
    assert_eq!(layout.status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,conv,1,1,1,2,2,3,3,1,0\n").unwrap();
    let shape = accelcmp(&["run", "--arch", "cha", "--workload", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(shape.status.code(), Some(2));
    let kind = accelcmp(&["sweep", "voltage", "--arch", "cha", "--workload", "bert", "--out", out]);
    assert_eq!(kind.status.code(), Some(2));
}

#[test]
fn run_on_mobilenet_reports_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = accelcmp(&["run", "--arch", "cha", "--workload", "mobilenet", "--out", out]);
    assert!(run.status.success());
    let csv = dir.path().join("run_cha.csv");
    let records = rows(&csv);
    assert_eq!(records.len(), 10);
    for r in &records {
        assert!(["compute", "DRAM"].contains(&&r[6]), "{:?}", r);
    }
    for m in ["latency_ns", "energy_pj", "utilization"] {
        let svg = fs::read_to_string(dir.path().join(format!("run_cha_{m}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"));
    }
}

#[test]
fn batch_one_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(accelcmp(&["run", "--arch", "pim", "--workload", "dlrm", "--out", out, "--no-plots"]).status.success());
    let s = accelcmp(&["sweep", "batch", "--arch", "pim", "--only", "1", "--workload", "dlrm", "--out", out, "--no-plots"]);
    assert!(s.status.success());
    let (run, sweep) = (dir.path().join("run_pim.csv"), dir.path().join("sweep_batch_pim.csv"));
    for c in ["latency_ns", "energy_pj", "mapping_encoding"] {
        assert_eq!(column(&run, c), column(&sweep, c), "{c}");
    }
    assert!(column(&sweep, "speedup").iter().all(|v| v == "1"));
}

#[test]
fn llm_bandwidth_sweep_on_bert() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(accelcmp(&["sweep", "llm_bw", "--arch", "cha", "--workload", "bert", "--out", out]).status.success());
    let csv = dir.path().join("sweep_llm_bw_cha.csv");
    let mut r = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), SWEEP_COLUMNS);
    let settings = column(&csv, "setting");
    let rel: Vec<f64> = column(&csv, "rel_latency").iter().map(|v| v.parse().unwrap()).collect();
    for (s, v) in settings.iter().zip(rel) {
        let want = 1.0 / s.parse::<f64>().unwrap();
        assert!((v / want - 1.0).abs() < 0.1, "setting {s}: {v}");
    }
    assert!(dir.path().join("sweep_llm_bw_cha_rel_latency.svg").exists());
}

#[test]
fn max_mac_on_ndp_uses_thousands_of_macs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let s = accelcmp(&["sweep", "max_mac", "--arch", "ndp", "--workload", "mobilenet", "--out", out, "--no-plots"]);
    assert!(s.status.success());
    let csv = dir.path().join("sweep_max_mac_ndp.csv");
    let used: Vec<(String, f64)> = column(&csv, "setting")
        .into_iter()
        .zip(column(&csv, "macs_used").iter().map(|v| v.parse().unwrap()))
        .collect();
    let mean = |s: &str| {
        let v: Vec<f64> = used.iter().filter(|(k, _)| k == s).map(|(_, x)| *x).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean("baseline") <= 256.0);
    assert!(mean("100000") >= 1000.0, "{}", mean("100000"));
}

#[test]
fn custom_arch_file_and_word_bits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pim.toml");
    fs::write(&cfg, accelcmp::arch::preset(accelcmp::Paradigm::Pim).to_config()).unwrap();
    let out = dir.path().to_str().unwrap();
    let a = accelcmp(&["run", "--arch", cfg.to_str().unwrap(), "--workload", "dlrm", "--out", out, "--no-plots"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let base: Vec<f64> = column(&dir.path().join("run_pim.csv"), "energy_mac").iter().map(|v| v.parse().unwrap()).collect();
    let w = dir.path().join("wide");
    let b = accelcmp(&["run", "--arch", "pim", "--word-bits", "16", "--workload", "dlrm", "--out", w.to_str().unwrap(), "--no-plots"]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let wide: Vec<f64> = column(&w.join("run_pim.csv"), "energy_mac").iter().map(|v| v.parse().unwrap()).collect();
    for (x, y) in base.iter().zip(&wide) {
        assert!((y / x - 2.0).abs() < 1e-9);
    }
}

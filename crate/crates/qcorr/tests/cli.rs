//! Drives the `qcorr` binary end to end on a small configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BINS: usize = 16;
const PERIODS: usize = 7;
const SHOTS: usize = 40;

fn config_json(gain: f64) -> String {
    format!(
        r#"{{
  "topology": {{ "type": "hbt", "kappa": 1.0 }},
  "grid": {{ "dt": 1.25, "bins_per_period": {BINS}, "periods": {PERIODS} }},
  "channels": [ {{ "gain": {gain}, "nbar": 1.0 }}, {{ "gain": {gain}, "nbar": 1.0 }} ],
  "noise_cross": [0.0, 0.0],
  "lag_periods": 2,
  "preparation": {{ "alpha": [0.5773502691896258, 0.0], "beta": [0.816496580927726, 0.0] }}
}}"#
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(ws.path("config.json"), config_json(2.0)).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, threads: Option<&str>, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qcorr"));
        cmd.current_dir(self.dir.path()).args(args);
        match threads {
            Some(t) => cmd.env("QCORR_THREADS", t),
            None => cmd.env_remove("QCORR_THREADS"),
        };
        cmd.output().unwrap()
    }

    fn ok(&self, threads: Option<&str>, args: &[&str]) -> Output {
        let out = self.run(threads, args);
        assert!(
            out.status.success(),
            "qcorr {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn calibrate(&self, name: &str) {
        let shots = SHOTS.to_string();
        self.ok(None, &["calibrate", "--config", "config.json", "--seed", "9", "--shots", &shots, "--out", name]);
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn record_file_has_header_plus_complex32_payload() {
    let ws = Workspace::new();
    let shots = SHOTS.to_string();
    ws.ok(None, &["simulate", "--config", "config.json", "--seed", "1", "--shots", &shots, "--out", "run.qenv"]);
    let len = read(&ws.path("run.qenv")).len();
    assert_eq!(len, qcorr::formats::HEADER_LEN + 2 * PERIODS * BINS * SHOTS * 8);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let ws = Workspace::new();
    ws.calibrate("calib.json");
    let shots = SHOTS.to_string();
    let mut records = Vec::new();
    let mut results = Vec::new();
    for threads in ["1", "3"] {
        let rec = format!("run{threads}.qenv");
        let res = format!("result{threads}.json");
        ws.ok(Some(threads), &["simulate", "--config", "config.json", "--seed", "4", "--shots", &shots, "--out", &rec]);
        ws.ok(Some(threads), &["analyze", "--config", "config.json", "--calib", "calib.json", &rec, "--out", &res]);
        records.push(read(&ws.path(&rec)));
        results.push(read(&ws.path(&res)));
    }
    assert_eq!(records[0], records[1]);
    assert_eq!(results[0], results[1]);
}

#[test]
fn csv_output_writes_one_file_per_curve() {
    let ws = Workspace::new();
    ws.calibrate("calib.json");
    std::fs::create_dir(ws.path("csv")).unwrap();
    let shots = SHOTS.to_string();
    ws.ok(
        None,
        &[
            "analyze", "--config", "config.json", "--calib", "calib.json", "--shots", &shots, "--seed", "2", "--variant",
            "alpha", "--format", "csv", "--out", "csv",
        ],
    );
    for name in ["g1", "g2", "g1_alpha_0", "gamma2_alpha"] {
        let text = String::from_utf8(read(&ws.path(&format!("csv/{name}.csv")))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau_s,re,im,stderr"));
        assert_eq!(lines.count(), 2 * 2 * BINS + 1, "{name}");
    }
}

#[test]
fn calibration_from_another_chain_is_rejected() {
    let ws = Workspace::new();
    std::fs::write(ws.path("other.json"), config_json(3.0)).unwrap();
    let shots = SHOTS.to_string();
    ws.ok(None, &["calibrate", "--config", "other.json", "--shots", &shots, "--out", "calib.json"]);
    let out = ws.run(None, &["analyze", "--config", "config.json", "--calib", "calib.json", "--shots", &shots]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["level"], "error");
}

#[test]
fn analyze_requires_calibration() {
    let ws = Workspace::new();
    let out = ws.run(None, &["analyze", "--config", "config.json", "--shots", "5"]);
    assert!(!out.status.success());
}

#[test]
fn identity_filters_change_nothing() {
    let ws = Workspace::new();
    std::fs::write(
        ws.path("identity.json"),
        r#"[{ "kind": "identity", "channel": 0 }, { "kind": "identity", "channel": 1 }]"#,
    )
    .unwrap();
    ws.calibrate("calib.json");
    let shots = SHOTS.to_string();
    ws.ok(None, &["simulate", "--config", "config.json", "--seed", "5", "--shots", &shots, "--out", "run.qenv"]);
    ws.ok(None, &["analyze", "--config", "config.json", "--calib", "calib.json", "run.qenv", "--out", "plain.json"]);
    ws.ok(
        None,
        &[
            "analyze", "--config", "config.json", "--filter", "identity.json", "--calib", "calib.json", "run.qenv", "--out",
            "identity.json.out",
        ],
    );
    assert_eq!(read(&ws.path("plain.json")), read(&ws.path("identity.json.out")));
}

#[test]
fn bounds_prints_both_variants() {
    let ws = Workspace::new();
    let out = ws.ok(None, &["bounds", "--m", "1", "--sigma", "1", "--epsilon", "0.1", "--confidence", "0.95"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["real"]["repetitions"], 8000);
    assert_eq!(report["complex"]["repetitions"], 16000);
}

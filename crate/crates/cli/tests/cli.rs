use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dressed-ion"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_config(command: &str, config: &Path, extra: &[&str]) -> (Value, Vec<Vec<f64>>) {
    let out = bin()
        .arg(command)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    parse(&out.stdout)
}

fn parse(bytes: &[u8]) -> (Value, Vec<Vec<f64>>) {
    let text = std::str::from_utf8(bytes).unwrap();
    let mut lines = text.lines();
    let meta: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), meta["columns"].as_array().unwrap().len());
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (meta, rows)
}

fn write_config(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn local_maxima(values: &[f64], min: f64) -> usize {
    (0..values.len())
        .filter(|&k| {
            values[k] >= min && (k == 0 || values[k - 1] < values[k]) && (k + 1 == values.len() || values[k + 1] <= values[k])
        })
        .count()
}

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown_key.json", r#"{"rabi": {"pionts": 3}}"#),
        ("malformed.json", r#"{"rabi": "#),
        ("wrong_unit.json", r#"{"field": {"b_tesla": 0.001}}"#),
        ("negative.json", r#"{"rabi": {"rf_rabi_khz": -1.0}}"#),
        // 29 kHz dressing puts two u lines 2 kHz apart
        ("collision.json", r#"{"rabi": {"mw_rabi_khz": 29.0}}"#),
        ("gradient_zero.json", r#"{"addressing": {"gradient_t_per_m": 0.0}}"#),
    ];
    for (name, body) in cases {
        let p = write_config(&dir, name, body);
        let cmd = if name == "gradient_zero.json" { "addressing" } else { "rabi" };
        let out = bin().arg(cmd).arg("--config").arg(&p).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
    let out = run(&["rabi", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["rabi", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_length_rabi_grid_is_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(&dir, "empty.json", r#"{"rabi": {"points": 0}}"#);
    let (meta, rows) = run_config("rabi", &p, &[]);
    assert!(rows.is_empty());
    assert_eq!(meta["columns"][0], "duration_us");
}

#[test]
fn output_file_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let quick = configs().join("quick.json");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, seed) in [(&a, "5"), (&b, "6")] {
        let out = bin()
            .args(["lifetime", "--config"])
            .arg(&quick)
            .args(["--seed", seed, "--out"])
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    let (ma, ra) = parse(&std::fs::read(&a).unwrap());
    let (mb, rb) = parse(&std::fs::read(&b).unwrap());
    assert_eq!(ma["seed"], 5);
    assert_ne!(ma["config_sha256"], mb["config_sha256"]);
    assert_ne!(ra, rb);
}

#[test]
fn lifetime_is_thread_count_independent() {
    let quick = configs().join("quick.json");
    let outputs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|n| {
            let out = bin()
                .args(["lifetime", "--config"])
                .arg(&quick)
                .args(["--threads", n])
                .output()
                .unwrap();
            assert!(out.status.success());
            out.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn spectrum_without_dressing_has_two_peaks() {
    let (meta, rows) = run_config("spectrum", &configs().join("no_dressing_spectrum.json"), &[]);
    let p: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(local_maxima(&p, 0.5), 2, "{}", meta["summary"]);
    let split = meta["summary"]["field_splitting_khz"].as_f64().unwrap();
    let peaks = meta["summary"]["peaks"].as_array().unwrap();
    assert!(peaks[0]["detuning_plus_khz"].as_f64().unwrap().abs() < 0.5);
    assert!((peaks[1]["detuning_plus_khz"].as_f64().unwrap() - split).abs() < 0.5);
}

#[test]
fn diabatic_stirap_fails_to_release() {
    let (meta, rows) = run_config("stirap", &configs().join("diabatic_stirap.json"), &[]);
    let s = &meta["summary"];
    assert_eq!(s["adiabatic"], false);
    assert!(s["released_population"].as_f64().unwrap() < 0.5, "{s}");
    let last = rows.last().unwrap();
    assert!((last[1..5].iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn adiabatic_stirap_round_trip() {
    let (meta, _) = run_config("stirap", &configs().join("quick.json"), &[]);
    let s = &meta["summary"];
    assert!(s["dark_population"].as_f64().unwrap() >= 0.99, "{s}");
    assert!(s["released_population"].as_f64().unwrap() >= 0.98, "{s}");
}

#[test]
fn resonance_sweep_peaks_at_dressed_splitting() {
    let (meta, rows) = run_config("lifetime", &configs().join("resonance_sweep.json"), &[]);
    assert_eq!(rows.len(), 21);
    assert_eq!(meta["summary"]["peak_ratio"].as_f64().unwrap(), 1.0);
}

#[test]
fn uniform_field_merges_the_addressing_peaks() {
    let (meta, rows) = run_config("addressing", &configs().join("uniform_field_addressing.json"), &[]);
    let total: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(local_maxima(&total, 0.5), 1);
    assert!(total.iter().copied().fold(0.0, f64::max) > 1.99);
    assert_eq!(meta["summary"]["adjacent_splittings_khz"][0], 0.0);
}

#[test]
fn addressing_reports_crosstalk() {
    let (meta, rows) = run_config("addressing", &configs().join("quick.json"), &[]);
    let s = &meta["summary"];
    let est = s["crosstalk_0_1"]["estimate"].as_f64().unwrap();
    assert!((est / 5e-3 - 1.0).abs() < 0.05);
    let b = s["centre_field_gauss"].as_f64().unwrap();
    assert!((9.0..=11.5).contains(&b));
    let total: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(local_maxima(&total, 0.5), 2);
}

#[test]
fn tomography_of_superposition() {
    let (meta, rows) = run_config("tomo", &configs().join("superposition_tomo.json"), &[]);
    assert_eq!(rows.len(), 9);
    assert!(meta["summary"]["fidelity"].as_f64().unwrap() >= 0.99, "{}", meta["summary"]);
}

#[test]
fn published_schema_is_current() {
    let out = run(&["schema"]);
    assert!(out.status.success());
    let committed = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenario.schema.json")).unwrap();
    assert_eq!(out.stdout, committed, "regenerate with `dressed-ion schema > crates/cli/scenario.schema.json`");
}

#[test]
fn defaults_are_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["defaults"]);
    let p = dir.path().join("defaults.json");
    std::fs::write(&p, &out.stdout).unwrap();
    let out = bin().args(["rabi", "--config"]).arg(&p).args(["--seed", "1"]).output().unwrap();
    assert!(out.status.success());
}

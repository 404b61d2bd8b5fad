//! Acceptance: every command, re-run with an identical config, produces
//! byte-identical reports at 1 and 8 threads. Also pins the exit-code
//! contract for invalid configs.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_sdde-lab");

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(command: &str, config: &Path, out: &Path, threads: usize) -> std::process::ExitStatus {
    Command::new(BIN)
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .status()
        .expect("binary runs")
}

/// Bytes of every report file in the directory, excluding run metadata.
fn report_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "run_meta.json" {
            continue;
        }
        map.insert(name, std::fs::read(entry.path()).unwrap());
    }
    map
}

#[test]
fn criterion_9_reports_byte_identical_across_reruns_and_threads() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();

    let model_4_1 =
        r#"{"example": "4.1", "r0": 0.5, "eps": 1.0, "alpha_weight": {"constant": 1.0}}"#;
    let model_4_2 = r#"{"example": "4.2", "r0": 0.5}"#;

    // small but non-trivial configs so all four runs finish quickly
    let configs: Vec<(&str, String)> = vec![
        (
            "gramian",
            format!(r#"{{"model": {model_4_1}, "t_final": 1.5, "dt": 0.01}}"#),
        ),
        (
            "plan",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01,
                     "h": {{"constant": [1.0, 1.0]}}}}"#
            ),
        ),
        (
            "simulate",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01, "n_paths": 2,
                     "seed": 3, "xi": {{"constant": [1.0, 1.0]}}, "f": {{"name": "y_terminal"}}}}"#
            ),
        ),
        (
            "gradient",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01, "n_paths": 300,
                     "seed": 3, "xi": {{"constant": [1.0, 1.0]}},
                     "h": {{"constant": [0.2, 0.2]}}, "f": {{"name": "tanh_y"}}}}"#
            ),
        ),
        (
            "girsanov-check",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01, "n_paths": 300,
                     "seed": 3, "eps": 0.5, "xi": {{"constant": [1.0, 1.0]}},
                     "h": {{"constant": [1.0, 1.0]}}, "f": {{"name": "tanh_y"}}}}"#
            ),
        ),
        (
            "verify-assumptions",
            format!(
                r#"{{"model": {model_4_1}, "seed": 3,
                     "grid": {{"lo": -5.0, "hi": 5.0, "step": 0.5}},
                     "assumptions": ["A1", "A2", "A3", "A4"]}}"#
            ),
        ),
        (
            "moment-bound",
            format!(
                r#"{{"model": {model_4_2}, "dt": 0.01, "n_paths": 300, "seed": 3,
                     "xi": {{"constant": [1.0, 1.0]}}, "t_list": [0.5, 1.0]}}"#
            ),
        ),
        (
            "log-harnack",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01, "n_paths": 300,
                     "seed": 3, "xi": {{"constant": [1.0, 1.0]}},
                     "h": {{"constant": [0.2, 0.2]}}, "f": {{"name": "one_plus_tanh_sq"}}}}"#
            ),
        ),
        (
            "harnack",
            format!(
                r#"{{"model": {model_4_1}, "t_final": 1.0, "dt": 0.01, "n_paths": 300,
                     "seed": 3, "p": 2.0, "xi": {{"constant": [1.0, 1.0]}},
                     "h": {{"constant": [0.2, 0.2]}}, "f": {{"name": "one_plus_tanh_sq"}}}}"#
            ),
        ),
        (
            "gradient-bound-sweep",
            format!(
                r#"{{"model": {model_4_2}, "dt": 0.01, "n_paths": 300, "seed": 3,
                     "xi": {{"constant": [1.0, 1.0]}}, "h": {{"constant": [0.2, 0.2]}},
                     "f": {{"name": "tanh_y"}}, "sweep_t": [0.7, 0.9]}}"#
            ),
        ),
        (
            "entropy-gradient",
            format!(
                r#"{{"model": {model_4_2}, "t_final": 1.0, "dt": 0.01, "n_paths": 300,
                     "seed": 3, "xi": {{"constant": [1.0, 1.0]}},
                     "h": {{"constant": [0.2, 0.2]}}, "f": {{"name": "one_plus_tanh_sq"}}}}"#
            ),
        ),
    ];

    let mut all_ok = true;
    for (command, body) in &configs {
        let config = write_config(dir, &format!("{command}.json"), body);
        let mut snapshots = Vec::new();
        for (label, threads) in [("a1", 1), ("b1", 1), ("a8", 8), ("b8", 8)] {
            let out = dir.join(format!("{command}_{label}"));
            let status = run(command, &config, &out, threads);
            assert!(status.success(), "{command} failed with {status:?}");
            snapshots.push(report_bytes(&out));
        }
        let identical = snapshots.windows(2).all(|w| w[0] == w[1]);
        if !identical {
            all_ok = false;
            eprintln!("{command}: reports differ across runs/threads");
        }
    }
    println!(
        "ACCEPTANCE 9 determinism: {} (11 commands x 2 re-runs x {{1, 8}} threads)",
        if all_ok { "PASS" } else { "FAIL" }
    );
    assert!(all_ok);
}

#[test]
fn invalid_config_exits_with_code_2() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();

    // unknown field
    let config = write_config(
        dir,
        "bad.json",
        r#"{"model": {"example": "4.1", "r0": 0.5}, "t_final": 1.0, "dt": 0.01, "bogus": 1}"#,
    );
    let status = run("plan", &config, &dir.join("out"), 1);
    assert_eq!(status.code(), Some(2));

    // missing required field
    let config = write_config(
        dir,
        "missing.json",
        r#"{"model": {"example": "4.1", "r0": 0.5}, "t_final": 1.0, "dt": 0.01}"#,
    );
    let status = run("plan", &config, &dir.join("out"), 1);
    assert_eq!(status.code(), Some(2));

    // dt does not divide r0
    let config = write_config(
        dir,
        "grid.json",
        r#"{"model": {"example": "4.1", "r0": 0.5}, "t_final": 1.0, "dt": 0.03,
            "h": {"constant": [1.0, 1.0]}}"#,
    );
    let status = run("plan", &config, &dir.join("out"), 1);
    assert_eq!(status.code(), Some(2));
}

#[test]
fn execution_failure_exits_with_code_1() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    // one quadrature interval on [0, tau] degenerates the Gramian, so the
    // plan cannot be built: a run-time failure, not a config problem
    let config = write_config(
        dir,
        "degenerate.json",
        r#"{"model": {"example": "4.1", "r0": 0.5}, "t_final": 0.51, "dt": 0.01,
            "h": {"constant": [1.0, 1.0]}}"#,
    );
    let status = run("plan", &config, &dir.join("out"), 1);
    assert_eq!(status.code(), Some(1));
}

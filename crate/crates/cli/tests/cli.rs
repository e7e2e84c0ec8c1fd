//! Behavioural tests for the `etas` binary: exit codes, manifest layout,
//! config/flag precedence, and artifact structure.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_etas")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("etas-cli-{}-{tag}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn etas")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Simulate a small catalog into `dir` and return its path.
fn make_catalog(dir: &Path, window: &str, mu: &str, seed: &str) -> PathBuf {
    let out_dir = dir.join("sim");
    let out = run_in(
        dir,
        &[
            "simulate", "--window", window, "--mu", mu, "--k0", "0.01", "--c", "0.01",
            "--alpha", "1.0", "--p", "1.3", "--seed", seed, "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    out_dir.join("catalog.csv")
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = scratch("usage");
    let catalog = make_catalog(&dir, "0,150", "0.4", "3");
    let catalog = catalog.to_str().unwrap();

    // Unknown flag.
    let out = run_in(&dir, &["fit", "--catalog", catalog, "--no-such-flag"]);
    assert_eq!(code(&out), 2);

    // Unknown config key.
    std::fs::write(dir.join("bad.conf"), "no_such_key = 1\n").unwrap();
    let out = run_in(
        &dir,
        &["fit", "--catalog", catalog, "--config", dir.join("bad.conf").to_str().unwrap()],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    // Malformed catalog.
    std::fs::write(dir.join("junk.csv"), "time,magnitude\nhello,world\n").unwrap();
    let out = run_in(&dir, &["fit", "--catalog", dir.join("junk.csv").to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    // Residual needs a parameter source.
    let out = run_in(&dir, &["residual", "--catalog", catalog]);
    assert_eq!(code(&out), 2);

    // Change-point time must lie strictly inside the window.
    let out = run_in(&dir, &["changepoint", "--catalog", catalog, "--t0", "150"]);
    assert_eq!(code(&out), 2);

    // Scoreboard mode requires a change-point candidate.
    let out = run_in(&dir, &["nsfit", "--catalog", catalog, "--models", "all"]);
    assert_eq!(code(&out), 2);

    // Help is not an error.
    let out = run_in(&dir, &["--help"]);
    assert_eq!(code(&out), 0);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn runtime_errors_exit_with_code_one() {
    let dir = scratch("runtime");
    // A catalog past the nonstationary size limit parses fine but cannot
    // be inverted; that failure is a runtime error, not a usage error.
    let mut text = String::from("time,magnitude\n");
    for i in 0..5_100 {
        text.push_str(&format!("{:.2},3.0\n", 0.01 * i as f64 + 0.01));
    }
    std::fs::write(dir.join("big.csv"), text).unwrap();
    let out = run_in(
        &dir,
        &[
            "nsfit", "--catalog", dir.join("big.csv").to_str().unwrap(), "--mu", "0.3",
            "--k0", "0.01", "--c", "0.01", "--alpha", "1.0", "--p", "1.3",
        ],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fit_manifest_records_inputs_outputs_and_parameters() {
    let dir = scratch("manifest");
    let catalog = make_catalog(&dir, "0,150", "0.4", "5");
    let out_dir = dir.join("fitted");
    let out = run_in(
        &dir,
        &[
            "fit", "--catalog", catalog.to_str().unwrap(), "--seed", "7", "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // The fit artifact round-trips through the library type.
    let fit_text = std::fs::read_to_string(out_dir.join("fit.json")).unwrap();
    let fit = etas::FitResult::from_json(&fit_text).unwrap();
    assert!(fit.converged);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let obj = manifest.as_object().unwrap();
    let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["command", "input", "outputs", "parameters"]);
    assert_eq!(manifest["command"], "fit");
    assert_eq!(
        manifest["input"]["path"],
        serde_json::Value::String(catalog.to_str().unwrap().to_owned())
    );
    assert!(manifest["input"]["fnv64"].as_str().unwrap().len() == 16);
    assert_eq!(manifest["parameters"]["seed"], "7");
    let outputs: Vec<_> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(outputs, ["fit.json", "cumulative.csv", "cumulative.svg"]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn flags_override_config_values() {
    let dir = scratch("config");
    std::fs::write(dir.join("sim.conf"), "seed = 1\nb_value = 0.8\n").unwrap();
    let out_dir = dir.join("sim-out");
    let out = run_in(
        &dir,
        &[
            "simulate", "--config", dir.join("sim.conf").to_str().unwrap(), "--window",
            "0,100", "--mu", "0.4", "--k0", "0.01", "--c", "0.01", "--alpha", "1.0",
            "--p", "1.3", "--seed", "2", "--out", out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    // The flag wins over the config file; untouched config keys survive.
    assert_eq!(manifest["parameters"]["seed"], "2");
    assert_eq!(manifest["parameters"]["b_value"], "0.8");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_seeds_produce_different_catalogs() {
    let dir = scratch("seeds");
    let a = make_catalog(&dir, "0,150", "0.4", "11");
    let b_dir = dir.join("sim-b");
    let out = run_in(
        &dir,
        &[
            "simulate", "--window", "0,150", "--mu", "0.4", "--k0", "0.01", "--c", "0.01",
            "--alpha", "1.0", "--p", "1.3", "--seed", "12", "--out",
            b_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0);
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(b_dir.join("catalog.csv")).unwrap();
    assert_ne!(bytes_a, bytes_b);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn nsfit_scoreboard_compares_every_variant() {
    let dir = scratch("scoreboard");
    let catalog = make_catalog(&dir, "0,60", "0.45", "21");
    let out_dir = dir.join("board");
    let out = run_in(
        &dir,
        &[
            "nsfit", "--catalog", catalog.to_str().unwrap(), "--models", "all",
            "--changepoint", "30", "--mu", "0.45", "--k0", "0.01", "--c", "0.01",
            "--alpha", "1.0", "--p", "1.3", "--out", out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let scoreboard = std::fs::read_to_string(out_dir.join("scoreboard.csv")).unwrap();
    let lines: Vec<_> = scoreboard.lines().collect();
    assert_eq!(lines.len(), 13, "header plus twelve model rows");
    assert!(lines[0].starts_with("model,"));

    let stored: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|name| name.starts_with("bayesfit-") && name.ends_with(".json"))
        .collect();
    assert_eq!(stored.len(), 12);
    assert!(out_dir.join("factors.csv").exists());
    assert!(out_dir.join("factors.svg").exists());

    // Every stored fit reloads through the library type.
    for name in &stored {
        let text = std::fs::read_to_string(out_dir.join(name)).unwrap();
        etas::bayes::BayesFit::from_json(&text).unwrap();
    }
    std::fs::remove_dir_all(&dir).ok();
}

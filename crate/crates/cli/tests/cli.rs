use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpgn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpgn")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_path10(dir: &Path) -> std::path::PathBuf {
    let edges: Vec<[usize; 2]> = (0..9).map(|i| [i, i + 1]).collect();
    let g = serde_json::json!({ "n_nodes": 10, "edges": edges });
    let p = dir.join("path10.json");
    fs::write(&p, g.to_string()).unwrap();
    p
}

#[test]
fn simulate_diffusion_on_path_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    let graph = write_path10(dir.path());
    let out = dir.path().join("sim");
    let r = dpgn(&["simulate", "--eq", "diffusion", "--alpha", "0.1", "--steps", "50", "--graph", s(&graph), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 51 * 10);
    let last_t: usize = rows.last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last_t, 50);

    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_states"], 51);
    assert!(summary["max_mass_drift"].as_f64().unwrap() < 1e-10);
    assert_eq!(summary["stability"]["stable"], true);
    let dirichlet = summary["dirichlet_energy"].as_array().unwrap();
    assert!(dirichlet.windows(2).all(|w| w[1].as_f64().unwrap() <= w[0].as_f64().unwrap() + 1e-15));

    let meta = json(&out.join("trajectory.json"));
    assert_eq!(meta["n_states"], 51);
}

#[test]
fn simulate_zero_steps_writes_initial_state_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let r = dpgn(&["simulate", "--cycle", "6", "--steps", "0", "--out", s(&out)]);
    assert_eq!(code(&r), 0);
    assert_eq!(json(&out.join("summary.json"))["n_states"], 1);
    assert_eq!(fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn unstable_alpha_warns_but_runs() {
    let dir = tempfile::tempdir().unwrap();
    let r = dpgn(&["simulate", "--path", "10", "--alpha", "0.7", "--steps", "3", "--out", s(dir.path())]);
    assert_eq!(code(&r), 0);
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("unstable"), "{stderr}");
    assert_eq!(json(&dir.path().join("summary.json"))["stability"]["stable"], false);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    // Bad configuration.
    assert_eq!(code(&dpgn(&["simulate", "--path", "5", "--alpha", "-1", "--out", d])), 2);
    assert_eq!(code(&dpgn(&["simulate", "--steps", "3", "--out", d])), 2);
    assert_eq!(code(&dpgn(&["simulate", "--path", "5", "--grid", "2x2", "--out", d])), 2);
    // Divergence of an unstable explicit scheme.
    let r = dpgn(&["simulate", "--path", "10", "--alpha", "5", "--steps", "1000", "--out", d]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("non-finite"));
    // Missing checkpoint.
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&dpgn(&["eval", "--checkpoint", s(&missing), "--data", d])), 4);
}

#[test]
fn invalid_training_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&dpgn(&["gen-data", "--path", "6", "--sequences", "2", "--steps", "20", "--out", s(&data)])), 0);
    let r = dpgn(&["train", "--data", s(&data), "--label-fraction", "1.5", "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("label_fraction"));

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"iterations": 5, "learning_rat": 0.1}"#).unwrap();
    let r = dpgn(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("learning_rat"));
}

#[test]
fn train_eval_pipeline_and_baseline_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let r = dpgn(&[
        "gen-data", "--grid", "3x4", "--alpha", "0.1", "--sequences", "3", "--steps", "30", "--noise", "0.05",
        "--land-types", "2", "--seed", "5", "--out", s(&data),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(data.join("manifest.json").exists());

    let common = ["--data", s(&data), "--iterations", "40", "--d-h", "6", "--eval-every", "10", "--seed", "9"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let mut args_a = vec!["train", "--model", "gn-only", "--out", s(&a)];
    args_a.extend(common);
    let mut args_b = vec!["train", "--model", "dpgn", "--lambda", "0", "--out", s(&b)];
    args_b.extend(common);
    let mut args_c = vec!["train", "--model", "gn-only", "--out", s(&c)];
    args_c.extend(common);
    for args in [&args_a, &args_b, &args_c] {
        let r = dpgn(args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let log_a = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(log_a, fs::read_to_string(b.join("metrics.jsonl")).unwrap());
    // Re-running with the same seed reproduces every artifact byte for byte.
    assert_eq!(log_a, fs::read_to_string(c.join("metrics.jsonl")).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("checkpoint.json")).unwrap(),
        fs::read_to_string(c.join("checkpoint.json")).unwrap()
    );
    for line in log_a.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["mse"].as_f64().unwrap().is_finite());
        assert!(["train", "val"].contains(&rec["split"].as_str().unwrap()));
    }

    let r = dpgn(&["eval", "--checkpoint", s(&a.join("checkpoint.json")), "--data", s(&data), "--horizon", "4"]);
    assert_eq!(code(&r), 0);
    let rep: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(rep["horizon"], 4);
    assert_eq!(rep["mse"].as_array().unwrap().len(), 4);
    assert_eq!(rep["model"], "gn-only");
}

#[test]
fn horizon_and_inductive_commands() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (graph, out, seed) in [(["--grid", "3x3"], &a, "1"), (["--cycle", "7"], &b, "2")] {
        let mut args = vec!["gen-data", "--sequences", "2", "--steps", "30", "--seed", seed, "--out", s(out)];
        args.extend(graph);
        assert_eq!(code(&dpgn(&args)), 0);
    }

    let out = dir.path().join("h");
    let r = dpgn(&[
        "horizon", "--data", s(&a), "--horizons", "3", "--seeds", "2", "--iterations", "10", "--d-h", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows: Vec<serde_json::Value> =
        String::from_utf8_lossy(&r.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row["horizon"], k + 1);
        assert!(row["mse"].as_f64().unwrap() > 0.0);
        assert!(row["std"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(fs::read_to_string(out.join("horizon.csv")).unwrap().lines().count(), 4);

    let out = dir.path().join("i");
    let r = dpgn(&["inductive", "--train-on", s(&a), "--eval-on", s(&b), "--iterations", "10", "--d-h", "4", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rep = json(&out.join("inductive.json"));
    assert!(rep["mean_mse"].as_f64().unwrap().is_finite());
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, r#"{"path": 4, "alpha": 0.2, "steps": 7}"#).unwrap();
    let out = dir.path().join("o");
    let r = dpgn(&["simulate", "--config", s(&cfg), "--steps", "3", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["n_states"], 4);
    assert_eq!(summary["n_nodes"], 4);
    assert_eq!(summary["spec"]["alpha"], 0.2);
}

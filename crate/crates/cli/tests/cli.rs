use std::path::Path;
use std::process::{Command, Output};

use mcpq_core::mdp::DiscreteMdpJson;
use mcpq_core::DiscreteMDP;
use tempfile::TempDir;

fn mcpq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcpq"))
        .args(args)
        .env_remove("MCPQ_LOG")
        .output()
        .expect("spawn mcpq")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(str::to_owned).collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn single_pair_model_solves_in_one_iteration() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("one.json");
    std::fs::write(
        &input,
        r#"{"num_states": 1, "num_actions": 1, "gamma": 0.9, "initial": [1.0],
            "transition": [[[1.0]]], "reward": [[1.0]]}"#,
    )
    .unwrap();
    let out = mcpq(&["solve", "--input", path_str(&input), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(",q,infinite"), "{}", rows[0]);
    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["probabilities"], serde_json::json!([[1.0]]));
}

#[test]
fn emitted_chain_round_trips_and_solves() {
    let dir = TempDir::new().unwrap();
    let out = mcpq(&["bench", "emit-chain", "--n", "5", "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let path = dir.path().join("chain_n5.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let raw: DiscreteMdpJson = serde_json::from_str(&text).unwrap();
    let again = DiscreteMDP::from_json_value(raw).unwrap().to_json_value();
    assert_eq!(serde_json::to_string_pretty(&again).unwrap() + "\n", text);

    let stdout = mcpq(&["bench", "emit-chain", "--n", "5"]);
    assert_eq!(String::from_utf8(stdout.stdout).unwrap(), text);

    for seed in ["0", "1"] {
        let sub = dir.path().join(format!("seed{seed}"));
        let out = mcpq(&[
            "solve",
            "--input",
            path_str(&path),
            "--backend",
            "q",
            "--horizon",
            "inf",
            "--seed",
            seed,
            "--out",
            path_str(&sub),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let last = csv_rows(&sub.join("report.csv")).pop().unwrap();
        let u: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        assert!((u - 20.0).abs() < 1e-4 || (u - 400.0).abs() < 1e-4, "U = {u}");
    }
}

#[test]
fn malformed_input_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    std::fs::write(
        &missing,
        r#"{"num_states": 1, "num_actions": 1, "gamma": 0.9, "initial": [1.0], "transition": [[[1.0]]]}"#,
    )
    .unwrap();
    let out = mcpq(&["solve", "--input", path_str(&missing), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("missing field `reward`"), "{}", stderr(&out));

    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, r#"{"num_states": 1, "num_actions": 1, "gamma": 0."#).unwrap();
    let out = mcpq(&["solve", "--input", path_str(&truncated), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));

    let bad_model = dir.path().join("bad.json");
    std::fs::write(
        &bad_model,
        r#"{"num_states": 1, "num_actions": 1, "gamma": 0.9, "initial": [1.0],
            "transition": [[[0.5]]], "reward": [[1.0]]}"#,
    )
    .unwrap();
    let out = mcpq(&["solve", "--input", path_str(&bad_model), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("transition"), "{}", stderr(&out));
}

#[test]
fn continuous_solve_and_budget_exit() {
    let dir = TempDir::new().unwrap();
    let out = mcpq(&[
        "bench",
        "emit-manipulator",
        "--seed",
        "2",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let input = dir.path().join("manipulator_seed2.json");

    let out = mcpq(&["solve", "--input", path_str(&input), "--horizon", "inf"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("finite --horizon"));

    let out = mcpq(&[
        "solve",
        "--input",
        path_str(&input),
        "--horizon",
        "20",
        "--max-iters",
        "3",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert_eq!(csv_rows(&dir.path().join("report.csv")).len(), 3);
    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["kind"], "gaussian");
    assert_eq!(policy["K"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let chain = dir.path().join("chain.json");
    let emitted = mcpq(&["bench", "emit-chain", "--n", "3"]);
    std::fs::write(&chain, &emitted.stdout).unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"input": {:?}, "solver": "pg", "horizon": "8", "max-iters": 5, "backend": "fb"}}"#,
            path_str(&chain)
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = mcpq(&[
        "solve",
        "--config",
        path_str(&config),
        "--backend",
        "q",
        "--out",
        path_str(&out_dir),
    ]);
    assert!(matches!(code(&out), 0 | 2), "{}", stderr(&out));
    let rows = csv_rows(&out_dir.join("report.csv"));
    assert!(!rows.is_empty() && rows.len() <= 5);
    assert!(rows.iter().all(|r| r.ends_with(",q,finite")), "{rows:?}");
    let policy = std::fs::read_to_string(out_dir.join("policy.json")).unwrap();
    assert!(policy.contains("\"softmax\""));

    std::fs::write(&config, r#"{"sede": 1}"#).unwrap();
    let out = mcpq(&["verify", "--config", path_str(&config)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn scaling_bench_writes_one_row_per_method_and_horizon() {
    let dir = TempDir::new().unwrap();
    let out = mcpq(&[
        "bench",
        "scaling",
        "--horizons",
        "64,128,256",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&dir.path().join("scaling.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.contains(",fb,")).count(), 3);
}

#[test]
fn chain_bench_row_count() {
    let dir = TempDir::new().unwrap();
    let out = mcpq(&[
        "bench",
        "chain",
        "--n",
        "3..10",
        "--restarts",
        "5",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(csv_rows(&dir.path().join("chain_results.csv")).len(), 2 * 8 * 5);
}

#[test]
fn chain_bench_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        let out = mcpq(&[
            "bench",
            "chain",
            "--n",
            "3..5",
            "--restarts",
            "3",
            "--seed",
            "7",
            "--jobs",
            "2",
            "--out",
            path_str(&d),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read(d.join("chain_results.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn verify_exit_codes() {
    let out = mcpq(&["verify", "--fixture", "chain3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let out = mcpq(&["verify", "--tolerance", "1e-15"]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL") && text.contains("first:"), "{text}");

    let out = mcpq(&["verify", "--fixture", "nope"]);
    assert_eq!(code(&out), 1);
}

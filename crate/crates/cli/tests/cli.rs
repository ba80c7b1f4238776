//! End-to-end runs of the `robustcf` binary.

use std::path::Path;
use std::process::{Command, Output};

use robustcf::data::{generate_synthetic, SyntheticSpec};

fn robustcf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustcf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes `data.csv`, `schema.toml` and `queries.csv` (class-0 rows).
fn dataset(dir: &Path, spec: SyntheticSpec, seed: u64) {
    let data = generate_synthetic(&spec, seed).unwrap();
    let mut csv = Vec::new();
    data.write_csv(&mut csv).unwrap();
    std::fs::write(dir.join("data.csv"), &csv).unwrap();
    std::fs::write(dir.join("schema.toml"), data.schema.to_toml_string()).unwrap();
    let negatives: Vec<usize> = (0..data.n()).filter(|&i| data.y[i] == 0).take(3).collect();
    let mut q = Vec::new();
    data.subset(&negatives).write_csv(&mut q).unwrap();
    std::fs::write(dir.join("queries.csv"), &q).unwrap();
}

#[test]
fn threshold_prints_a_flat_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = robustcf(dir.path(), &["threshold", "--n", "101", "--alpha", "0.1", "--mode", "naive"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("tau = 0.5\n"), "{text}");
    assert!(text.contains("min_votes = 51\n"));
    assert!(text.lines().all(|l| l.contains(" = ")));

    let o = robustcf(
        dir.path(),
        &["threshold", "--n", "100", "--alpha", "0.1", "--mode", "robust-saa", "--out", "t"],
    );
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("t/threshold.txt")).unwrap();
    assert!(text.contains("mode = robust-saa"));
}

#[test]
fn invalid_threshold_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&robustcf(dir.path(), &["threshold", "--n", "10", "--alpha", "1.5"])), 2);
    assert_eq!(code(&robustcf(dir.path(), &["threshold", "--n", "0"])), 2);
    assert_eq!(code(&robustcf(dir.path(), &["threshold", "--mode", "bogus", "--n", "3"])), 2);
}

#[test]
fn threshold_tables_have_one_column_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let o = robustcf(
        dir.path(),
        &["threshold-table", "--sweep", "alpha", "--sizes", "5,11,51", "--alphas", "0.2,0.1"],
    );
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "robustness_target,p_star_n5,p_star_n11,p_star_n51");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.8,"));
    // p* falls toward 1/2 as the ensemble grows.
    let row: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert!(row[1] > row[2] && row[2] > row[3] && row[3] > 0.5);

    let o = robustcf(
        dir.path(),
        &["threshold-table", "--sweep", "n", "--sizes", "5,11", "--alphas", "0.1", "--out", "tt"],
    );
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(dir.path().join("tt/threshold_table.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("n,p_star_alpha0.1"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn train_explain_importance_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, SyntheticSpec::linear(300, 2, 1, 0.05), 4);
    let o = robustcf(
        d,
        &["train", "--data", "data.csv", "--schema", "schema.toml", "--n-trees", "21", "--iso", "--seed", "3", "--out", "model"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["forest.json", "schema.toml", "iso.json"] {
        assert!(d.join("model").join(f).exists(), "{f}");
    }

    let explain = |extra: &[&str], out: &str| {
        let mut args = vec![
            "explain", "--forest", "model/forest.json", "--schema", "model/schema.toml",
            "--query", "queries.csv", "--alpha", "0.2", "--out", out,
        ];
        args.extend_from_slice(extra);
        let o = robustcf(d, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(d.join(out).join("explanations.csv")).unwrap()
    };
    let plain = explain(&[], "plain");
    let lines: Vec<&str> = plain.lines().collect();
    assert_eq!(lines[0], "query,x0,x1,b0,distance,votes,score,nu,optimal,changed,nodes");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[8], "true");
        let score: f64 = cols[6].parse().unwrap();
        let nu: f64 = cols[7].parse().unwrap();
        assert!(nu > 0.0 || score >= 0.6);
    }
    // Same inputs, same file.
    assert_eq!(plain, explain(&[], "plain2"));

    let iso = explain(&["--plausibility", "iso", "--iso", "model/iso.json"], "iso");
    assert_eq!(iso.lines().count(), 4);
    let lof = explain(&["--plausibility", "lof", "--lambda", "0.5", "--data", "data.csv"], "lof");
    assert_eq!(lof.lines().count(), 4);

    let o = robustcf(
        d,
        &["importance", "--forest", "model/forest.json", "--data", "data.csv", "--schema", "model/schema.toml", "--out", "imp"],
    );
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.join("imp/importance.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("feature,raw,normalized\n"));
}

#[test]
fn missing_or_malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, SyntheticSpec::linear(100, 2, 0, 0.0), 1);
    let o = robustcf(d, &["train", "--data", "absent.csv", "--schema", "schema.toml", "--out", "m"]);
    assert_eq!(code(&o), 3);
    std::fs::write(d.join("bad.csv"), "x0,x1,y\n0.1,oops,1\n").unwrap();
    let o = robustcf(d, &["train", "--data", "bad.csv", "--schema", "schema.toml", "--out", "m"]);
    assert_eq!(code(&o), 3);
    std::fs::write(d.join("forest.json"), "{\"format\": \"something-else\"}").unwrap();
    let o = robustcf(
        d,
        &["explain", "--forest", "forest.json", "--schema", "schema.toml", "--query", "queries.csv"],
    );
    assert_eq!(code(&o), 3);
}

#[test]
fn lof_without_lambda_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, SyntheticSpec::linear(100, 2, 0, 0.0), 1);
    let o = robustcf(d, &["train", "--data", "data.csv", "--schema", "schema.toml", "--n-trees", "5", "--out", "m"]);
    assert_eq!(code(&o), 0);
    let o = robustcf(
        d,
        &["explain", "--forest", "m/forest.json", "--schema", "m/schema.toml", "--query", "queries.csv", "--plausibility", "lof", "--data", "data.csv"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn timeouts_exit_with_four_and_still_write_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, SyntheticSpec::linear(600, 6, 0, 0.1), 2);
    let o = robustcf(
        d,
        &["train", "--data", "data.csv", "--schema", "schema.toml", "--n-trees", "200", "--max-depth", "6", "--out", "m"],
    );
    assert_eq!(code(&o), 0);
    let o = robustcf(
        d,
        &["explain", "--forest", "m/forest.json", "--schema", "m/schema.toml", "--query", "queries.csv", "--alpha", "0.05", "--timeout", "1e-9", "--out", "e"],
    );
    assert_eq!(code(&o), 4, "{}", stdout(&o));
    let text = std::fs::read_to_string(d.join("e/explanations.csv")).unwrap();
    assert!(text.contains(",false,"));
}

#[test]
fn experiment_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        r#"
seed = 5
repetitions = 3
queries = 2
alphas = [0.2]
betas = [0.05]
methods = ["naive", "direct-saa"]

[dataset]
kind = "synthetic"
n = 200
continuous = 2
noise = 0.05

[forest]
n_trees = 11
max_depth = 3
"#,
    )
    .unwrap();
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["experiment", "--config", "exp.toml", "--out", out];
        args.extend_from_slice(extra);
        let o = robustcf(d, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a", &[]);
    run("b", &["--threads", "1"]);
    for f in ["solves.csv", "aggregate.csv", "validity.csv", "pareto.csv", "changed_features.csv", "feature_changes.csv"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    assert!(d.join("a/timings.csv").exists());
    run("c", &["--mode", "evolving", "--seed", "6"]);
    assert!(d.join("c/solves.csv").exists());

    std::fs::write(d.join("bad.toml"), "repetitions = 0\n").unwrap();
    let o = robustcf(d, &["experiment", "--config", "bad.toml", "--out", "x"]);
    assert_eq!(code(&o), 2);
    std::fs::write(d.join("typo.toml"), "repetitons = 3\n").unwrap();
    assert_eq!(code(&robustcf(d, &["experiment", "--config", "typo.toml"])), 2);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &["--layers", "2", "--hidden", "16", "--d-z", "8", "--epochs", "5"];

fn carl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carl")).args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = carl(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

fn report(path: PathBuf) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    let (header, body) = text.split_once('\n').unwrap();
    assert!(header.starts_with("carl-report v1 "), "{header}");
    serde_json::from_str(body).unwrap()
}

/// A temp dir holding a 120-architecture synthetic dataset in `d/`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--num-archs", "120", "--seed", "4", "--out", "d"], dir.path());
    dir
}

#[test]
fn train_is_deterministic_and_eval_agrees() {
    let w = workspace();
    let p = w.path();
    for out in ["t1", "t2"] {
        ok(&with_small(&["train", "--dataset", "d/dataset.csv", "--portion", "0.2", "--out", out]), p);
    }
    let a = report(p.join("t1/train_report.txt"));
    let b = report(p.join("t2/train_report.txt"));
    assert!(a["rank"]["ktau"].is_f64());
    assert_eq!(a["rank"], b["rank"]);
    assert_eq!(a["n_train"], 24);

    ok(&["eval", "--dataset", "d/dataset.csv", "--model", "t1/model", "--out", "e"], p);
    assert_eq!(report(p.join("e/eval_report.txt"))["rank"], a["rank"]);
}

#[test]
fn eval_of_oracle_predictions_is_perfect() {
    let w = workspace();
    let p = w.path();
    let mut rdr = csv::Reader::from_path(p.join("d/dataset.csv")).unwrap();
    let rows: Vec<(String, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[5].parse().unwrap())
        })
        .collect();
    for (sign, name, want) in [(1.0, "up", 1.0), (-1.0, "down", -1.0)] {
        let csv_name = format!("{name}.csv");
        let body: String = rows.iter().map(|(id, y)| format!("{id},{}\n", sign * y)).collect();
        std::fs::write(p.join(&csv_name), format!("id,prediction\n{body}")).unwrap();
        ok(&["eval", "--dataset", "d/dataset.csv", "--predictions", &csv_name, "--out", name], p);
        let rank = &report(p.join(name).join("eval_report.txt"))["rank"];
        assert!((rank["ktau"].as_f64().unwrap() - want).abs() < 1e-12, "{rank}");
    }
}

#[test]
fn search_repeats_write_traces_and_a_summary() {
    let w = workspace();
    let p = w.path();
    let args = [
        "search", "--dataset", "d/dataset.csv", "--budget", "12", "--n0", "6", "--candidates", "10", "--refit-epochs", "2",
        "--repeats", "2", "--out", "s",
    ];
    ok(&with_small(&args), p);
    let rep = report(p.join("s/search_report.txt"));
    let runs = rep["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for (seed, run) in runs.iter().enumerate() {
        assert_eq!(run["queries"], 12);
        let trace = std::fs::read_to_string(p.join(format!("s/trace_seed{seed}.tsv"))).unwrap();
        let best: Vec<f64> = trace.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap().parse().unwrap()).collect();
        assert_eq!(best.len(), 12);
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*best.last().unwrap(), run["best_test"].as_f64().unwrap());
    }
    assert!(rep["std_best_test"].as_f64().unwrap() >= 0.0);

    let too_big = ["search", "--dataset", "d/dataset.csv", "--budget", "500", "--out", "s2"];
    assert_eq!(carl(&too_big, p).status.code(), Some(1));
}

#[test]
fn sweep_fills_the_grid() {
    let w = workspace();
    let p = w.path();
    let args = ["sweep", "--dataset", "d/dataset.csv", "--portion", "0.2", "--lambda1s", "0,1", "--lambda2s", "0,1", "--out", "w"];
    ok(&with_small(&args), p);
    let grid = std::fs::read_to_string(p.join("w/sweep_grid.tsv")).unwrap();
    let cells: Vec<f64> = grid
        .lines()
        .skip(1)
        .flat_map(|l| l.split('\t').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(cells.len(), 4);
    assert!(cells.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn importance_exports_dot_files() {
    let w = workspace();
    let p = w.path();
    ok(&with_small(&["train", "--dataset", "d/dataset.csv", "--portion", "0.2", "--out", "t"]), p);
    ok(&["importance", "--dataset", "d/dataset.csv", "--model", "t/model", "--ids", "syn00003", "--out", "i"], p);
    let dot = std::fs::read_to_string(p.join("i/syn00003.dot")).unwrap();
    assert!(dot.starts_with("digraph") && dot.trim_end().ends_with('}'));
    assert!(dot.contains("->"));

    let rep = report(p.join("i/importance_report.txt"));
    let text = rep.to_string();
    assert!(text.contains("syn00003"));
    let scores: Vec<f64> = collect_numbers(&rep, "alpha_c").into_iter().chain(collect_numbers(&rep, "node_alpha_c")).collect();
    assert!(!scores.is_empty());
    assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));

    let out = carl(&["importance", "--dataset", "d/dataset.csv", "--model", "t/model", "--ids", "missing", "--out", "i2"], p);
    assert_eq!(out.status.code(), Some(2));
}

fn collect_numbers(v: &Value, key: &str) -> Vec<f64> {
    match v {
        Value::Object(m) => m
            .iter()
            .flat_map(|(k, x)| {
                if k == key {
                    match x {
                        Value::Array(a) => a.iter().map(|n| n.as_f64().unwrap()).collect(),
                        n => vec![n.as_f64().unwrap()],
                    }
                } else {
                    collect_numbers(x, key)
                }
            })
            .collect(),
        Value::Array(a) => a.iter().flat_map(|x| collect_numbers(x, key)).collect(),
        _ => Vec::new(),
    }
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gradcheck", "--out", "g"], dir.path());
    assert!(stdout.contains("PASS"));
    assert!(dir.path().join("g/gradcheck_report.txt").exists());
    let out = carl(&["gradcheck", "--fault", "matmul", "--out", "g2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(carl(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(carl(&["train", "--dataset", "absent.csv"], dir.path()).status.code(), Some(2));
    assert_eq!(carl(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_carl"))
            .args(["synth", "--num-archs", "10", "--out", "d"])
            .env("CARL_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert_eq!(run("zero").status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags() {
    let w = workspace();
    let p = w.path();
    std::fs::write(p.join("run.cfg"), "portion = 0.25\nlayers = 2\nhidden = 16\nd_z = 8\nepochs = 3\n").unwrap();
    ok(&["--config", "run.cfg", "train", "--dataset", "d/dataset.csv", "--out", "t"], p);
    let rep = report(p.join("t/train_report.txt"));
    assert_eq!(rep["n_train"], 30);
    assert_eq!(rep["train"]["epochs"], 3);
}

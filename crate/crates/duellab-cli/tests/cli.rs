//! End-to-end runs of the installed binary on the toy game.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duellab::lab::{oracle_by_name, ResponseOracle};
use duellab::tree::DecisionTree;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duellab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Fast self-oracle toy game; everything else falls back to defaults.
fn toy_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"
name = "clitest"
tree = "toy"
oracle = "dp-self"
model = "drucker-prager"
num_iters = 1
num_episodes = 2
num_mcts_sims = 4
hidden = 16
epochs = 1
calib_max_iters = 40
max_paths_protagonist = 1
max_paths_adversary = 1
workers = 2
"#,
    )
    .unwrap();
    path
}

#[test]
fn enumerate_tree_lists_counts_and_leaves() {
    let csv = stdout_of(&["enumerate-tree", "--tree", "toy", "--max-paths", "2"]);
    assert!(csv.starts_with("key,value\n"), "{csv}");
    assert!(csv.contains("leaves,8\n"));
    assert!(csv.contains("strategies_up_to_1,8\n"));
    assert!(csv.contains("strategies_up_to_2,36\n"));
    assert_eq!(csv.matches("\nleaf,").count(), 8);
    assert!(csv.contains("leaf,300kPa_DTC_1%\n"));
}

#[test]
fn calibrate_fits_oracle_data_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let tree = DecisionTree::builtin("toy").unwrap();
    let oracle = oracle_by_name::<f64>("dp-self").unwrap();
    let leaf = *tree.leaves().first().unwrap();
    let spec = tree.experiment(leaf).unwrap();
    let series = oracle.run(&tree, &spec).unwrap();
    let data = tmp.path().join("measured.csv");
    std::fs::write(&data, series.to_csv_string().unwrap()).unwrap();

    let pair = format!("{}={}", spec.label, data.display());
    let out = stdout_of(&[
        "calibrate",
        "--tree",
        "toy",
        "--model",
        "drucker-prager",
        "--experiment",
        &pair,
        "--max-iters",
        "60",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["model"], "drucker-prager");
    assert_eq!(v["params"].as_array().unwrap().len(), 7);
    assert_eq!(v["e_ns"][0]["experiment"], spec.label);
    assert!(v["e_ns"][0]["e_ns"].as_f64().unwrap() > 0.999);
}

#[test]
fn play_prints_one_record_per_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let out = stdout_of(&["play", "--config", cfg.to_str().unwrap(), "--episodes", "2"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["episode"], i as u64);
        assert!(!rec["strategy_key"].as_str().unwrap().is_empty());
        assert!(rec["calibrated"].as_bool().unwrap());
    }
}

#[test]
fn nash_oracle_reports_the_reward_ceiling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let out = stdout_of(&["nash-oracle", "--config", cfg.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["entries"].as_array().unwrap().len(), 8);
    assert_eq!(v["equilibrium_reward"].as_f64().unwrap(), 1.0);
}

#[test]
fn dump_qvalues_covers_every_vertex() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let out = stdout_of(&["dump-qvalues", "--config", cfg.to_str().unwrap(), "--side", "adversary"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let map = v.as_object().unwrap();
    // Toy tree: root + 2 + 4 + 8 vertices.
    assert_eq!(map.len(), 15);
    assert!(map.contains_key("Null"));
    assert!(map.values().all(|x| x.as_f64().unwrap().abs() < 1.0));
}

#[test]
fn train_writes_artifacts_and_checkpoints_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    let out_dir = tmp.path().join("runs");
    let out = stdout_of(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["iterations"], 1);
    let run = out_dir.join("clitest");
    assert!(run.join("final_report.json").is_file());
    let ckpt = run.join("iter_1").join("ckpt_protagonist");
    assert!(ckpt.is_file());

    // A played episode with the trained checkpoints still round-trips.
    let replay = stdout_of(&[
        "play",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt-protagonist",
        ckpt.to_str().unwrap(),
        "--ckpt-adversary",
        run.join("iter_1").join("ckpt_adversary").to_str().unwrap(),
    ]);
    let rec: serde_json::Value = serde_json::from_str(replay.lines().next().unwrap()).unwrap();
    assert!(rec["score_protagonist"].as_f64().unwrap() > 0.99);
}

#[test]
fn bad_arguments_fail_loudly() {
    assert!(!run(&["play"]).status.success());
    assert!(!run(&["train", "--preset", "nonsense"]).status.success());
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path());
    assert!(!run(&["dump-qvalues", "--config", cfg.to_str().unwrap(), "--side", "left"])
        .status
        .success());
}

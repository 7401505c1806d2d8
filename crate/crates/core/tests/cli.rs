use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rankforge(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankforge"))
        .args(args)
        .current_dir(cwd)
        .env("RANKFORGE_DATA", cwd.join("data"))
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = rankforge(cwd, args);
    assert!(
        out.status.success(),
        "rankforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// 30 users of two kinds and 8 items; kind decides which half of the items
/// is liked.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let mut ratings = String::from("user_id,item_id,score\n");
    let mut users = String::from("id,kind,age\n");
    for u in 0..30 {
        let kind = u % 2;
        users.push_str(&format!("u{u},{},{}\n", if kind == 0 { "a" } else { "b" }, 20 + u % 7));
        for j in 0..8 {
            let liked = (j < 4) == (kind == 0);
            let score = if liked { 4 + (j + u) % 2 } else { 1 + (j * u) % 2 };
            ratings.push_str(&format!("u{u},i{j},{score}\n"));
        }
    }
    let mut items = String::from("id,genre\n");
    for j in 0..8 {
        items.push_str(&format!("i{j},{}\n", if j < 4 { "x" } else { "y" }));
    }
    fs::write(data.join("ratings.csv"), ratings).unwrap();
    fs::write(data.join("user_features.csv"), users).unwrap();
    fs::write(data.join("item_features.csv"), items).unwrap();
    fs::write(dir.path().join("base.ini"), "dataset = generic\nseed = 5\nfraction = 0.6\n").unwrap();
    dir
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    let cwd = dir.path();
    assert_eq!(code(&rankforge(cwd, &["frobnicate"])), 2);
    assert_eq!(code(&rankforge(cwd, &["train", "--config", "base.ini", "--eta", "fast"])), 2);
    assert_eq!(code(&rankforge(cwd, &["train", "--config", "base.ini", "--method", "lm", "--mu1", "1"])), 2);
    assert_eq!(code(&rankforge(cwd, &["split", "--dataset", "generic", "--data-dir", "nowhere"])), 2);
    // no fold files written yet
    assert_eq!(code(&rankforge(cwd, &["train", "--config", "base.ini", "--method", "lm"])), 2);
    fs::write(cwd.join("bad.ini"), "[model]\neta = 0.1\n").unwrap();
    assert_eq!(code(&rankforge(cwd, &["train", "--config", "bad.ini"])), 2);
    fs::write(cwd.join("typo.ini"), "learning-rate = 0.1\n").unwrap();
    assert_eq!(code(&rankforge(cwd, &["train", "--config", "typo.ini"])), 2);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["split", "--config", "base.ini"]);
    fs::create_dir(cwd.join("broken")).unwrap();
    fs::write(cwd.join("broken/model.json"), "{ not json").unwrap();
    let out = rankforge(cwd, &["evaluate", "--config", "base.ini", "--method", "lm", "--out", "broken"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn pipeline_writes_outputs_and_stamps_config() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["ingest", "--config", "base.ini", "--out", "exported"]);
    assert!(cwd.join("exported/ratings.csv").is_file());

    ok(cwd, &["split", "--config", "base.ini"]);
    assert!(cwd.join("folds/fold_000.csv").is_file());
    assert!(cwd.join("folds/resolved_split.ini").is_file());

    // flags override the config file
    ok(cwd, &["train", "--config", "base.ini", "--method", "lm-mf", "--rank", "2", "--max-trees", "20", "--seed", "9"]);
    let resolved = fs::read_to_string(cwd.join("out/resolved_train.ini")).unwrap();
    assert!(resolved.contains("seed=9"), "{resolved}");
    assert!(resolved.contains("rank=2"), "{resolved}");
    assert!(resolved.contains("dataset=generic"), "{resolved}");
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(cwd.join("out/model.json")).unwrap()).unwrap();
    assert_eq!(model["model_type"], "lm-mf");
    let log = fs::read_to_string(cwd.join("out/training_log.csv")).unwrap();
    assert!(log.lines().count() >= 2);

    ok(cwd, &["evaluate", "--config", "base.ini", "--method", "lm-mf", "--ks", "1,3"]);
    let report = fs::read_to_string(cwd.join("out/report.csv")).unwrap();
    assert!(report.lines().next().unwrap().contains("ndcg@3"), "{report}");
    assert!(cwd.join("out/summary.txt").is_file());

    ok(cwd, &["evaluate", "--config", "base.ini", "--method", "ub", "--out", "ub", "--ks", "1,3"]);
    let out = ok(cwd, &["compare", "--a", "out/report.csv", "--b", "ub/report.csv", "--ks", "1,3", "--out", "cmp"]);
    assert!(!out.stdout.is_empty());
    let table = fs::read_to_string(cwd.join("cmp/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
}

#[test]
fn evaluate_rejects_method_mismatch() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["split", "--config", "base.ini"]);
    ok(cwd, &["train", "--config", "base.ini", "--method", "lm", "--max-trees", "5"]);
    assert_eq!(code(&rankforge(cwd, &["evaluate", "--config", "base.ini", "--method", "lm-mf"])), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["split", "--config", "base.ini"]);
    for out in ["a", "b"] {
        ok(
            cwd,
            &["train", "--config", "base.ini", "--method", "lm-mf-reg", "--rank", "2", "--max-trees", "15", "--mu1", "1", "--mu2", "0.1", "--out", out],
        );
        ok(cwd, &["evaluate", "--config", "base.ini", "--method", "lm-mf-reg", "--out", out]);
    }
    for file in ["model.json", "training_log.csv", "report.csv"] {
        assert_eq!(fs::read(cwd.join("a").join(file)).unwrap(), fs::read(cwd.join("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn gridsearch_resumes_from_partial_scores() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["split", "--config", "base.ini"]);
    let args = [
        "gridsearch", "--config", "base.ini", "--method", "lm-mf-reg", "--rank", "2", "--max-trees", "8",
        "--mu1-grid", "0.1,1", "--mu2-grid", "0.1", "--inner-folds", "2",
    ];
    ok(cwd, &args);
    let full = fs::read_to_string(cwd.join("out/grid_scores.csv")).unwrap();
    assert_eq!(full.lines().count(), 1 + 2 * 2, "{full}");
    let best = fs::read_to_string(cwd.join("out/best_params.ini")).unwrap();
    assert!(best.lines().any(|l| l.starts_with("mu1")), "{best}");
    let heat = fs::read_to_string(cwd.join("out/grid_heat.csv")).unwrap();

    // drop the last two scores and resume
    let kept: Vec<&str> = full.lines().take(3).collect();
    fs::write(cwd.join("out/grid_scores.csv"), kept.join("\n") + "\n").unwrap();
    ok(cwd, &args);
    assert_eq!(fs::read_to_string(cwd.join("out/grid_scores.csv")).unwrap(), full);
    assert_eq!(fs::read_to_string(cwd.join("out/grid_heat.csv")).unwrap(), heat);
    assert_eq!(fs::read_to_string(cwd.join("out/best_params.ini")).unwrap(), best);

    assert_eq!(code(&rankforge(cwd, &["gridsearch", "--config", "base.ini", "--method", "lm-mf-reg", "--mu1", "1"])), 2);

    // the selection feeds straight into training
    ok(cwd, &["train", "--config", "base.ini", "--config", "out/best_params.ini", "--rank", "2", "--max-trees", "5", "--out", "tuned"]);
    let resolved = fs::read_to_string(cwd.join("tuned/resolved_train.ini")).unwrap();
    assert!(resolved.contains("method=lm-mf-reg"), "{resolved}");
}

#[test]
fn resolved_config_alone_reproduces_a_run() {
    let dir = workspace();
    let cwd = dir.path();
    ok(cwd, &["split", "--config", "base.ini", "--seed", "11"]);
    ok(cwd, &["train", "--config", "base.ini", "--method", "lm", "--max-trees", "12", "--eta", "0.2", "--out", "first"]);
    fs::copy(cwd.join("first/resolved_train.ini"), cwd.join("again.ini")).unwrap();
    fs::rename(cwd.join("first"), cwd.join("kept")).unwrap();
    ok(cwd, &["train", "--config", "again.ini"]);
    for file in ["model.json", "training_log.csv", "resolved_train.ini"] {
        assert_eq!(fs::read(cwd.join("kept").join(file)).unwrap(), fs::read(cwd.join("first").join(file)).unwrap(), "{file}");
    }

    let log = fs::read_to_string(cwd.join("first/training_log.csv")).unwrap();
    let mut rows = log.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let best = header.iter().position(|h| *h == "best_valid_ndcg").unwrap();
    let values: Vec<f64> = rows.map(|r| r.split(',').nth(best).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "{log}");
}

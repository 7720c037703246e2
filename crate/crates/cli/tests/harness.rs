//! Harness-level contracts: artifact schemas, checkpoint reuse, sweep row
//! counts, and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn feederlab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_feederlab"));
    cmd.current_dir(workspace_root());
    cmd
}

fn tiny_sets(case: &Path) -> Vec<String> {
    [
        format!("case={}", case.display()),
        "episodes=1".into(),
        "encoder_net.channels=2".into(),
        "encoder_net.output_dim=8".into(),
        "encoder_net.n_components=1".into(),
        "ddpg.hidden_width=16".into(),
        "ddpg.batch_size=8".into(),
        "ddpg.warmup_transitions=8".into(),
        "env.max_episode_steps=10".into(),
        "evaluation.n_eval=1".into(),
        "evaluation.t_end=5".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

#[test]
fn train_artifacts_have_fixed_schemas() {
    let out = tempfile::tempdir().unwrap();
    let case = workspace_root().join("cases/ieee33.toml");
    let status = feederlab()
        .args(["train", "--seed", "4", "--out"])
        .arg(out.path())
        .args(tiny_sets(&case))
        .status()
        .unwrap();
    assert!(status.success());

    let steps = std::fs::read_to_string(out.path().join("steps.csv")).unwrap();
    let header = steps.lines().next().unwrap();
    let mut expected = String::from("episode,step,reward,j_vol,j_rer,j_gen,penalties,converged");
    for i in 0..12 {
        expected.push_str(&format!(",gen{i}_p,gen{i}_v"));
    }
    assert_eq!(header, expected, "per-step CSV header is pinned");

    let episodes = std::fs::read_to_string(out.path().join("episodes.csv")).unwrap();
    assert_eq!(
        episodes.lines().next().unwrap(),
        "episode,steps,return,terminated"
    );

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("metrics.json")).unwrap())
            .unwrap();
    for key in ["score", "alpha_vol", "alpha_rer", "mean_decision_seconds"] {
        assert!(metrics.get(key).is_some(), "metrics.json missing {key}");
    }

    // The config snapshot reloads to the same resolved configuration.
    let snapshot = std::fs::read_to_string(out.path().join("config.toml")).unwrap();
    assert!(snapshot.contains("episodes = 1"));
    assert!(out.path().join("rng_state.json").exists());
    assert!(out.path().join("checkpoint/actor/manifest.tsv").exists());
}

#[test]
fn eval_reuses_a_training_checkpoint() {
    let train_out = tempfile::tempdir().unwrap();
    let case = workspace_root().join("cases/ieee33.toml");
    let status = feederlab()
        .args(["train", "--seed", "6", "--out"])
        .arg(train_out.path())
        .args(tiny_sets(&case))
        .status()
        .unwrap();
    assert!(status.success());

    let eval_out = tempfile::tempdir().unwrap();
    let checkpoint = train_out.path().join("checkpoint");
    let status = feederlab()
        .args(["eval", "--seed", "6", "--out"])
        .arg(eval_out.path())
        .args(tiny_sets(&case))
        .args(["--set", &format!("checkpoint={}", checkpoint.display())])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(eval_out.path().join("metrics.json").exists());
}

#[test]
fn sweep_emits_one_row_per_weight_value() {
    let out = tempfile::tempdir().unwrap();
    let case = workspace_root().join("cases/ieee33.toml");
    let status = feederlab()
        .args(["sweep-weights", "--seed", "8", "--out"])
        .arg(out.path())
        .args(tiny_sets(&case))
        .args([
            "--set",
            "sweep.values=[1.0,2.0,3.0,4.0,5.0]",
            "--set",
            "sweep.episodes=1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let sweep = std::fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "target,value,score,alpha_vol,alpha_rer");
    assert_eq!(rows.len(), 6, "header plus five rows");
    for (i, row) in rows.iter().skip(1).enumerate() {
        assert!(row.starts_with(&format!("w_vol,{}", i + 1)));
    }
}

#[test]
fn snapshot_driven_rerun_reproduces_csv_payloads() {
    let out_a = tempfile::tempdir().unwrap();
    let case = workspace_root().join("cases/ieee33.toml");
    let status = feederlab()
        .args(["train", "--seed", "12", "--out"])
        .arg(out_a.path())
        .args(tiny_sets(&case))
        .status()
        .unwrap();
    assert!(status.success());

    // Re-run purely from the written snapshot.
    let out_b = tempfile::tempdir().unwrap();
    let status = feederlab()
        .args(["train", "--config"])
        .arg(out_a.path().join("config.toml"))
        .args(["--out"])
        .arg(out_b.path())
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["steps.csv", "episodes.csv", "eval_steps.csv"] {
        let a = std::fs::read(out_a.path().join(name)).unwrap();
        let b = std::fs::read(out_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs under snapshot-driven rerun");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let status = feederlab()
        .args(["case-info", "--set", "episodes=0"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = feederlab()
        .args(["case-info", "--set", "case=/no/such/case.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn case_info_prints_documented_totals() {
    let case = workspace_root().join("cases/ieee33.toml");
    let output = feederlab()
        .args(["case-info", "--set"])
        .arg(format!("case={}", case.display()))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("total load active power (MW): 3.715"));
    assert!(text.contains("total load reactive power (MVAR): 2.300"));
    assert!(text.contains("wind turbines: 5"));
}

#[test]
fn grad_check_command_exits_zero() {
    let status = feederlab().args(["grad-check"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
}

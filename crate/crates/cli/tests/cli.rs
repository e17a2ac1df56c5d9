use std::fs;
use std::process::Command;

const TINY: &str = r#"
epochs = 2
eval_trajectories = 4

[env]
n_users = 3
n_items = 10
vocab = 5
max_round = 5

[logs]
sessions_per_user = 1
session_len = 8

[user_model]
epochs = 2

[planner.tracker]
d_s = 8

[planner.ppo]
rollouts_per_epoch = 2
minibatch_size = 2
update_epochs = 1
hidden = 8
"#;

fn cirs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cirs"))
}

#[test]
fn runs_a_config_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let status = cirs()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            "ucb",
            "--seed",
            "4",
            "--epochs",
            "3",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("policy = \"ucb\""));
    assert_eq!(
        fs::read_to_string(out.join("seed.txt")).unwrap().trim(),
        "4"
    );
}

#[test]
fn sweep_writes_a_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("sweep");
    let status = cirs()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["--sweep-tau", "0,20", "--sweep-tau-star", "0.05"])
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau,tau_star,final_cum_sat");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("20,0.05,"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "colour = 3\n").unwrap();
    let o = cirs()
        .args(["--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = cirs().args(["--policy", "greedy"]).output().unwrap();
    assert!(!o.status.success());
}

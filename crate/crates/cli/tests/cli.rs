use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tbqn_cli::checkpoint;
use tbqn_cli::config::{RunConfig, SNAPSHOT_FILE};
use tbqn_core::agent::METRICS_HEADER;

const TINY: [&str; 8] = [
    "--set",
    "net.model_dim=16",
    "--set",
    "net.ff_dim=32",
    "--set",
    "net.num_layers=1",
    "--set",
    "agent.initial_collect_steps=100",
];

fn tbqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbqn"))
        .args(args)
        .env_remove("TBQN_AGENT__LR")
        .output()
        .expect("binary runs")
}

fn train_tiny(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "train", "--preset", "final-table3", "--env", "cartpole", "--steps", "400", "--seed", "5", "--out", out,
        "--set", "eval_every=100",
    ];
    args.extend(TINY);
    args.extend(extra);
    tbqn(&args)
}

#[test]
fn train_writes_all_outputs_and_snapshot_reflects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_tiny(&out, &["--set", "agent.lr=0.00025"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let snap = RunConfig::from_toml(&fs::read_to_string(out.join(SNAPSHOT_FILE)).unwrap()).unwrap();
    assert_eq!(snap.agent.lr, 0.00025);
    assert_eq!(snap.agent.seed, 5);
    assert_eq!(snap.net.model_dim, 16);

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
    assert_eq!(lines.count(), 4);
    for d in [checkpoint::FINAL_DIR, checkpoint::BEST_DIR] {
        checkpoint::load(&out.join(d)).unwrap();
    }
}

#[test]
fn snapshot_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    assert!(train_tiny(&first, &[]).status.success());
    let second = dir.path().join("b");
    let snap = first.join(SNAPSHOT_FILE);
    let o = tbqn(&["train", "--config", snap.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&first), strip(&second));
    assert_eq!(
        fs::read(first.join(checkpoint::FINAL_DIR).join("weights.bin")).unwrap(),
        fs::read(second.join(checkpoint::FINAL_DIR).join("weights.bin")).unwrap()
    );
}

#[test]
fn eval_reproduces_training_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train_tiny(&out, &[]).status.success());
    let last = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let avg: f64 = last.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();

    let ck = out.join(checkpoint::FINAL_DIR);
    let o = tbqn(&["eval", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains(&format!("mean={avg} ")), "{stdout} vs {avg}");

    let o = tbqn(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "1"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("std=0 "));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbqn(&["train", "--preset", "final-table3", "--env", "cartpole", "--set", "agent.gamma=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("agent.gamma"));

    let o = tbqn(&["train", "--preset", "final-table3", "--env", "cartpole", "--set", "agent.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tbqn(&["eval", "--checkpoint", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let out = dir.path().join("run");
    assert!(train_tiny(&out, &[]).status.success());
    let ck = out.join(checkpoint::FINAL_DIR);
    let o = tbqn(&["eval", "--checkpoint", ck.to_str().unwrap(), "--env", "mountaincar"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mountaincar"));

    // an enormous learning rate on raw observations trips the divergence guard
    let o = train_tiny(
        &dir.path().join("diverge"),
        &["--set", "agent.lr=1e6", "--set", "agent.grad_clip=none", "--set", "agent.env_normalize=false"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("diverge").join("metrics.csv").exists());
}

#[test]
fn env_var_overrides_apply() {
    let o = Command::new(env!("CARGO_BIN_EXE_tbqn"))
        .args(["config", "--preset", "baseline-fig4", "--env", "acrobot"])
        .env("TBQN_AGENT__BATCH_SIZE", "48")
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.agent.batch_size, 48);
}

#[test]
fn search_smoke_writes_reports_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("s.space");
    fs::write(&space, "agent.lr log_uniform 1e-4 1e-2\nnet.layer_kind categorical 3 4\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "search", "--space", space.to_str().unwrap(), "--sampler", "random", "--trials", "3", "--runs", "1",
            "--steps", "300", "--out", out.to_str().unwrap(),
        ];
        args.extend(TINY);
        let o = tbqn(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    for f in ["trials.csv", "importance.csv", "marginals.csv", "top.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let trials = fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 4);
    let b = run("b");
    assert_eq!(trials, fs::read_to_string(b.join("trials.csv")).unwrap());
}

#[test]
fn variants_emit_one_metrics_file_per_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let mut args = vec![
        "variants", "--env", "cartpole", "--steps", "60", "--seeds", "2", "--out", out.to_str().unwrap(),
        "--set", "eval_every=30", "--set", "agent.initial_collect_steps=40",
    ];
    args.extend(["--set", "agent.batch_size=8"]);
    let o = tbqn(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            p.join("metrics.csv").exists().then_some(p)
        })
        .collect();
    assert_eq!(files.len(), 10);
    let combined = fs::read_to_string(out.join("variants.csv")).unwrap();
    // header plus 10 runs x 2 evaluations
    assert_eq!(combined.lines().count(), 21);
}

use std::path::Path;
use std::process::{Command, Output};

fn vecrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(config: &str, outdir: &Path, seed: &str, steps: &str) -> Output {
    vecrl(&[
        "train",
        "--config",
        config,
        "--seed",
        seed,
        "--outdir",
        path(outdir),
        "--timesteps",
        steps,
        "--headless",
    ])
}

#[test]
fn train_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = train("pendulum_ddpg", &out, "42", "300");
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(res.stderr.is_empty(), "headless runs print nothing to stderr");
    assert!(out.join("metrics.jsonl").is_file());
    assert!(out.join("checkpoints/ddpg_0.sktn").is_file());
    assert!(out.join("summary.json").is_file());
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train("cartpole_dqn", &a, "3", "400").status.success());
    assert!(train("cartpole_dqn", &b, "3", "400").status.success());
    let read = |d: &Path| std::fs::read(d.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn report_of_a_three_agent_run_has_three_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scopes");
    let res = train("scopes_512_shared", &out, "0", "250");
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics = out.join("metrics.jsonl");
    let res = vecrl(&["report", path(&metrics)]);
    assert!(res.status.success());
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids, vec!["ddpg_0", "td3_1", "sac_2"]);

    let log = std::fs::read_to_string(&metrics).unwrap();
    let raw = log.lines().filter(|l| l.contains("\"metric\":\"episode_return\"")).count();
    let total: usize = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, raw);
    assert!(raw >= 512, "every pendulum row finishes one 200-step episode");
}

#[test]
fn eval_loads_trained_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    assert!(train("gridworld_qlearning", &out, "1", "3000").status.success());
    let res = vecrl(&[
        "eval",
        "--config",
        "gridworld_qlearning",
        "--checkpoints",
        path(&out.join("checkpoints")),
        "--episodes",
        "4",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.starts_with("q_learning_0\tepisodes 4\tmean_return"), "{stdout}");
}

#[test]
fn memory_stats_come_from_an_exported_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"
export_memory = true
[env]
name = "pendulum"
num_envs = 2
[trainer]
total_timesteps = 50
eval_interval = 50
log_interval = 50
[[agents]]
type = "sac"
"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let res = train(path(&cfg), &out, "0", "50");
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stats_path = dir.path().join("stats.csv");
    let res = vecrl(&[
        "export-memory-stats",
        path(&out.join("memory_sac_0.csv")),
        "--out",
        path(&stats_path),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(stats_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tensor,dim,mean,std,min,max"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let actions: Vec<_> = rows.iter().filter(|r| r[0] == "actions").collect();
    assert_eq!(actions.len(), 1);
    let (lo, hi): (f64, f64) = (actions[0][4].parse().unwrap(), actions[0][5].parse().unwrap());
    assert!(-2.0 <= lo && hi <= 2.0);
}

#[test]
fn bad_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[env]\nname = \"echo\"\nnum_envs = 512\n[trainer]\ntotal_timesteps = 10\neval_interval = 5\nlog_interval = 5\n\
         [[agents]]\ntype = \"ddpg\"\nscope = 250\n[[agents]]\ntype = \"td3\"\nscope = 250\n",
    )
    .unwrap();
    let res = train(path(&cfg), &dir.path().join("o"), "0", "10");
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("agents.scope") && err.contains("500"), "{err}");

    std::fs::write(&cfg, "[env]\nname = \"echo\"\nnum_envz = 3\n").unwrap();
    let res = train(path(&cfg), &dir.path().join("o"), "0", "10");
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let res = vecrl(&["report", path(&dir.path().join("missing.jsonl"))]);
    assert_eq!(res.status.code(), Some(1));
    let res = vecrl(&["eval", "--config", "pendulum_sac", "--checkpoints", path(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn configs_lists_the_bundled_experiments() {
    let res = vecrl(&["configs"]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    for name in ["pendulum_ddpg", "pendulum_td3", "pendulum_sac", "cartpole_ppo_512", "scopes_512_private"] {
        assert!(stdout.lines().any(|l| l == name), "{name}");
    }
}

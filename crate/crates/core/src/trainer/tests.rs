use super::*;
use crate::agents::{build_agent, AgentConfig, AgentKind};
use crate::env::{make_env, EnvParams, Space};
use crate::memory::{Dtype, Memory, SharedMemory};

/// Emits `value + timestep` on every row and stores what it sees.
struct Scripted {
    value: f64,
    rows: usize,
    space: Space,
    memory: SharedMemory,
}

impl Scripted {
    fn new(value: f64, rows: usize, memory: Option<SharedMemory>) -> Self {
        let memory = memory.unwrap_or_else(|| Memory::new(64, rows, 0).unwrap().shared());
        {
            let mut m = memory.lock().unwrap();
            m.ensure_tensor("actions", 1, Dtype::F64).unwrap();
            m.ensure_tensor("rewards", 1, Dtype::F64).unwrap();
            m.ensure_tensor("next_states", 1, Dtype::F64).unwrap();
        }
        Self {
            value,
            rows,
            space: make_env("echo", 1, 0, &EnvParams::new()).unwrap().action_space().clone(),
            memory,
        }
    }
}

impl Agent for Scripted {
    fn kind(&self) -> AgentKind {
        AgentKind::Ddpg
    }

    fn label(&self) -> String {
        "scripted".into()
    }

    fn num_envs(&self) -> usize {
        self.rows
    }

    fn observation_space(&self) -> &Space {
        &self.space
    }

    fn action_space(&self) -> &Space {
        &self.space
    }

    fn act(&mut self, states: &Batch, step: StepInfo) -> Result<Batch, AgentError> {
        Ok(Batch::column(vec![self.value + step.timestep as f64; states.rows()]))
    }

    fn record_transition(&mut self, t: &Transition<'_>, _step: StepInfo) -> Result<(), AgentError> {
        let rewards = Batch::column(t.rewards.to_vec());
        self.memory
            .lock()
            .unwrap()
            .add_samples(&[("actions", t.actions), ("rewards", &rewards), ("next_states", t.next_states)])?;
        Ok(())
    }

    fn post_interaction(&mut self, _step: StepInfo) -> Result<Metrics, AgentError> {
        Ok(Vec::new())
    }

    fn eval_act(&mut self, states: &Batch) -> Result<Batch, AgentError> {
        Ok(Batch::column(vec![self.value; states.rows()]))
    }

    fn named_tensors(&self) -> Vec<(String, crate::tensor::Tensor)> {
        Vec::new()
    }

    fn load_named(&mut self, _tensors: &[(String, crate::tensor::Tensor)]) -> Result<(), AgentError> {
        Ok(())
    }

    fn parameters_finite(&self) -> bool {
        true
    }
}

fn echo(n: usize) -> VecEnv {
    make_env("echo", n, 0, &EnvParams::new()).unwrap()
}

fn quick(steps: usize) -> TrainerConfig {
    TrainerConfig {
        eval_interval: steps.max(1),
        log_interval: steps.max(1),
        ..TrainerConfig::new(steps)
    }
}

#[test]
fn partition_honors_explicit_counts() {
    let s = partition_scopes(512, &[170, 170, 172], 3).unwrap();
    assert_eq!(s.iter().map(|s| s.offset).collect::<Vec<_>>(), vec![0, 170, 340]);
    assert_eq!(s.iter().map(|s| s.count).collect::<Vec<_>>(), vec![170, 170, 172]);
}

#[test]
fn partition_default_gives_remainder_to_last() {
    let s = partition_scopes(512, &[], 3).unwrap();
    assert_eq!(s.iter().map(|s| s.count).collect::<Vec<_>>(), vec![170, 170, 172]);
    assert_eq!(partition_scopes(512, &[], 1).unwrap(), vec![Scope { offset: 0, count: 512 }]);
}

#[test]
fn partition_rejects_bad_requests() {
    assert!(partition_scopes(512, &[170, 170, 160], 3).is_err());
    assert!(partition_scopes(512, &[512, 0], 2).is_err());
    assert!(partition_scopes(512, &[256, 256], 3).is_err());
    assert!(partition_scopes(2, &[], 3).is_err());
    assert!(partition_scopes(4, &[], 0).is_err());
}

#[test]
fn partitions_are_disjoint_and_cover() {
    for n in 1..40 {
        for k in 1..=n.min(7) {
            let s = partition_scopes(n, &[], k).unwrap();
            let mut next = 0;
            for sc in &s {
                assert_eq!(sc.offset, next);
                assert!(sc.count > 0);
                next = sc.end();
            }
            assert_eq!(next, n);
        }
    }
}

#[test]
fn zero_timesteps_runs_nothing() {
    let mut env = echo(2);
    let mut agent = Scripted::new(1.0, 2, None);
    let mut sink = VecSink::default();
    let s = sequential_train(&mut agent, &mut env, &TrainerConfig::new(0), &mut sink).unwrap();
    assert_eq!(s.timesteps, 0);
    assert!(sink.records.is_empty());
    assert_eq!(agent.memory.lock().unwrap().stored_count(), 0);
}

#[test]
fn echo_memory_holds_scripted_actions() {
    let mut env = echo(3);
    let mut agent = Scripted::new(0.5, 3, None);
    sequential_train(&mut agent, &mut env, &quick(10), &mut NullSink).unwrap();
    let m = agent.memory.lock().unwrap();
    let actions = m.transitions("actions").unwrap();
    for t in 0..10 {
        for e in 0..3 {
            assert_eq!(actions.row(t * 3 + e)[0], 0.5 + t as f64);
        }
    }
}

#[test]
fn simultaneous_routes_actions_by_scope() {
    let scopes = partition_scopes(12, &[3, 4, 5], 3).unwrap();
    let mut env = echo(12);
    let mems: Vec<SharedMemory> = scopes.iter().map(|s| Memory::new(8, s.count, 0).unwrap().shared()).collect();
    let mut agents: Vec<Box<dyn Agent>> = scopes
        .iter()
        .enumerate()
        .map(|(k, s)| Box::new(Scripted::new(1000.0 * (k + 1) as f64, s.count, Some(mems[k].clone()))) as Box<dyn Agent>)
        .collect();
    simultaneous_train(&mut agents, &scopes, &mut env, &quick(5), &mut NullSink).unwrap();
    // Echo observations repeat the received action, so each agent's next
    // states show exactly what its rows were sent.
    for (k, s) in scopes.iter().enumerate() {
        let next = mems[k].lock().unwrap().transitions("next_states").unwrap();
        assert_eq!(next.rows(), 5 * s.count);
        for (i, v) in next.data().iter().enumerate() {
            assert_eq!(*v, 1000.0 * (k + 1) as f64 + (i / s.count) as f64);
        }
    }
}

#[test]
fn scope_rewards_reach_their_owner() {
    let scopes = partition_scopes(6, &[2, 4], 2).unwrap();
    let mut env = echo(6);
    let shared: Vec<SharedMemory> = (0..2).map(|k| Memory::new(8, scopes[k].count, 0).unwrap().shared()).collect();
    let mut agents: Vec<Box<dyn Agent>> = vec![
        Box::new(Scripted::new(1.0, 2, Some(shared[0].clone()))),
        Box::new(Scripted::new(-3.0, 4, Some(shared[1].clone()))),
    ];
    simultaneous_train(&mut agents, &scopes, &mut env, &quick(4), &mut NullSink).unwrap();
    for (k, base) in [(0usize, 1.0), (1, -3.0)] {
        let r = shared[k].lock().unwrap().transitions("rewards").unwrap();
        for (i, v) in r.data().iter().enumerate() {
            assert_eq!(*v, base + (i / scopes[k].count) as f64);
        }
    }
}

#[test]
fn shared_memory_grows_by_num_envs_per_step() {
    let scopes = partition_scopes(512, &[170, 170, 172], 3).unwrap();
    let mut env = echo(512);
    let mem = Memory::new(16, 512, 0).unwrap().shared();
    let mut agents: Vec<Box<dyn Agent>> = scopes
        .iter()
        .map(|s| Box::new(Scripted::new(0.0, s.count, Some(mem.clone()))) as Box<dyn Agent>)
        .collect();
    for steps in 1..=3 {
        mem.lock().unwrap().clear();
        simultaneous_train(&mut agents, &scopes, &mut env, &quick(steps), &mut NullSink).unwrap();
        assert_eq!(mem.lock().unwrap().stored_count(), 512 * steps);
    }
}

#[test]
fn incompatible_agents_rejected_before_stepping() {
    let mut env = make_env("cartpole", 2, 0, &EnvParams::new()).unwrap();
    let mut agent = Scripted::new(0.0, 2, None);
    let err = sequential_train(&mut agent, &mut env, &quick(3), &mut NullSink).unwrap_err();
    assert!(matches!(err, TrainerError::Incompatible { .. }));

    let mut env = echo(4);
    let mut wrong_rows = Scripted::new(0.0, 3, None);
    assert!(sequential_train(&mut wrong_rows, &mut env, &quick(3), &mut NullSink).is_err());
    assert_eq!(wrong_rows.memory.lock().unwrap().stored_count(), 0);
}

#[test]
fn bad_scopes_rejected() {
    let mut env = echo(4);
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Scripted::new(0.0, 2, None)), Box::new(Scripted::new(0.0, 2, None))];
    let gap = [Scope { offset: 0, count: 2 }, Scope { offset: 3, count: 1 }];
    assert!(simultaneous_train(&mut agents, &gap, &mut env, &quick(1), &mut NullSink).is_err());
    let short = [Scope { offset: 0, count: 2 }];
    assert!(simultaneous_train(&mut agents, &short, &mut env, &quick(1), &mut NullSink).is_err());
}

fn cartpole_dqn(n: usize) -> (Box<dyn Agent>, VecEnv) {
    let env = make_env("cartpole", n, 3, &EnvParams::new()).unwrap();
    let cfg = AgentConfig::from_toml(
        AgentKind::Dqn,
        toml::toml! { batch_size = 16 target_update_interval = 20 }.into(),
    )
    .unwrap();
    let agent = build_agent(&cfg, env.observation_space(), env.action_space(), n, None, 9).unwrap();
    (agent, env)
}

#[test]
fn single_scope_matches_sequential() {
    let cfg = TrainerConfig {
        log_interval: 25,
        eval_interval: 50,
        ..TrainerConfig::new(300)
    };
    let (mut a, mut env_a) = cartpole_dqn(4);
    let mut sink_a = VecSink::default();
    let seq = sequential_train(a.as_mut(), &mut env_a, &cfg, &mut sink_a).unwrap();

    let (b, mut env_b) = cartpole_dqn(4);
    let mut agents = vec![b];
    let scopes = partition_scopes(4, &[], 1).unwrap();
    let mut sink_b = VecSink::default();
    let sim = simultaneous_train(&mut agents, &scopes, &mut env_b, &cfg, &mut sink_b).unwrap();

    assert!(!sink_a.records.is_empty());
    assert_eq!(sink_a.records, sink_b.records);
    assert_eq!(seq.digest, sim.digest);
    assert_eq!(seq.agents[0].episode_returns, sim.agents[0].episode_returns);
}

#[test]
fn fixed_seed_gives_identical_digest() {
    let run = || {
        let (mut a, mut env) = cartpole_dqn(2);
        sequential_train(a.as_mut(), &mut env, &quick(200), &mut NullSink).unwrap()
    };
    let (x, y) = (run(), run());
    assert_eq!(x.digest, y.digest);
    assert_eq!(x.digest.len(), 64);
}

#[test]
fn episode_returns_are_logged_per_agent() {
    let env_params: EnvParams = [("max_episode_steps".to_string(), 3.0)].into_iter().collect();
    let mut env = make_env("echo", 4, 0, &env_params).unwrap();
    let scopes = partition_scopes(4, &[1, 3], 2).unwrap();
    let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Scripted::new(1.0, 1, None)), Box::new(Scripted::new(2.0, 3, None))];
    let mut sink = VecSink::default();
    let s = simultaneous_train(&mut agents, &scopes, &mut env, &quick(6), &mut sink).unwrap();
    // Episodes of 3 steps; the first pays v + 0 + v + 1 + v + 2.
    assert_eq!(s.agents[0].episode_returns, vec![3.0 + 3.0, 3.0 + 12.0]);
    assert_eq!(s.agents[1].episodes, 6);
    let ids: std::collections::BTreeSet<&str> = sink.records.iter().map(|r| r.agent_id.as_str()).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec!["scripted_0", "scripted_1"]);
    let returns = sink.records.iter().filter(|r| r.metric == "episode_return").count();
    assert_eq!(returns, 2 + 6);
}

#[test]
fn stop_rule_ends_run_early() {
    let mut env = make_env("echo", 2, 0, &[("max_episode_steps".to_string(), 2.0)].into_iter().collect()).unwrap();
    let mut agent = Scripted::new(5.0, 2, None);
    let cfg = TrainerConfig {
        return_window: 4,
        stop_at_return: Some(10.0),
        ..quick(100)
    };
    let s = sequential_train(&mut agent, &mut env, &cfg, &mut NullSink).unwrap();
    assert!(s.stopped_early);
    assert_eq!(s.timesteps, 4);
}

#[test]
fn config_validation_names_fields() {
    let cfg = TrainerConfig {
        log_interval: 0,
        ..TrainerConfig::new(10)
    };
    assert!(matches!(cfg.validate(), Err(TrainerError::Config { field: "log_interval", .. })));
    let cfg = TrainerConfig {
        eval_interval: 20,
        log_interval: 5,
        ..TrainerConfig::new(10)
    };
    assert!(matches!(cfg.validate(), Err(TrainerError::Config { field: "eval_interval", .. })));
}

#[test]
fn evaluate_counts_requested_episodes() {
    let env_params: EnvParams = [("max_episode_steps".to_string(), 2.0)].into_iter().collect();
    let mut env = make_env("echo", 3, 0, &env_params).unwrap();
    let mut agent = Scripted::new(1.5, 3, None);
    let r = evaluate(&mut agent, &mut env, 4, 100).unwrap();
    assert_eq!(r, vec![3.0; 4]);
}

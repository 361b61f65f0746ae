use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;

fn params(pairs: &[(&str, f64)]) -> EnvParams {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn factory_builds_each_kernel() {
    let env = make_env("cartpole", 512, 0, &EnvParams::new()).unwrap();
    assert_eq!(env.num_envs(), 512);
    assert_eq!(env.device(), "cpu");

    let env = make_env("pendulum", 1, 0, &EnvParams::new()).unwrap();
    assert_eq!(env.num_envs(), 1);
    assert!(matches!(env.action_space(), Space::Box { low, .. } if low.len() == 1));

    let env = make_env("gridworld", 4, 0, &params(&[("size", 5.0)])).unwrap();
    assert_eq!(env.observation_space(), &Space::Discrete { n: 25 });
    assert_eq!(env.action_space(), &Space::Discrete { n: 4 });
}

#[test]
fn factory_errors() {
    assert_eq!(
        make_env("ant", 1, 0, &EnvParams::new()).unwrap_err(),
        EnvError::UnknownEnv("ant".into())
    );
    assert!(matches!(
        make_env("gridworld", 1, 0, &params(&[("size", 0.0)])),
        Err(EnvError::InvalidParam { .. })
    ));
    assert!(matches!(
        make_env("gridworld", 1, 0, &params(&[("sise", 5.0)])),
        Err(EnvError::UnknownParam(k)) if k == "sise"
    ));
    assert_eq!(make_env("cartpole", 0, 0, &EnvParams::new()).unwrap_err(), EnvError::NoEnvs);
}

#[test]
fn space_validation() {
    assert!(Space::discrete(0).is_err());
    assert!(Space::bounded(vec![1.0], vec![1.0]).is_err());
    assert!(Space::bounded(vec![0.0, 0.0], vec![1.0]).is_err());
    let s = Space::bounded(vec![-1.0], vec![1.0]).unwrap();
    assert!(s.contains(&[0.5]) && !s.contains(&[1.5]));
}

#[test]
fn cartpole_reset_within_init_bound() {
    let mut env = make_env("cartpole", 64, 3, &EnvParams::new()).unwrap();
    let obs = env.reset().unwrap();
    assert_eq!((obs.rows(), obs.cols()), (64, 4));
    assert!(obs.data().iter().all(|v| v.abs() <= 0.05));
}

#[test]
fn gridworld_reset_at_start_cell() {
    let mut env = make_env("gridworld", 4, 3, &EnvParams::new()).unwrap();
    assert!(env.reset().unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn same_seed_same_reset() {
    let mut a = make_env("pendulum", 8, 99, &EnvParams::new()).unwrap();
    let mut b = make_env("pendulum", 8, 99, &EnvParams::new()).unwrap();
    assert_eq!(a.reset().unwrap(), b.reset().unwrap());
}

#[test]
fn pendulum_upright_rest_has_zero_reward() {
    let mut env = make_env("pendulum", 1, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    env.set_state(0, &[0.0, 0.0]).unwrap();
    let out = env.step(&Batch::column(vec![0.0])).unwrap();
    assert_eq!(out.rewards[0], 0.0);
    assert!(!out.dones[0]);
}

#[test]
fn pendulum_reward_formula() {
    let mut env = make_env("pendulum", 1, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    // theta = 3pi/2 wraps to -pi/2
    env.set_state(0, &[1.5 * std::f64::consts::PI, 2.0]).unwrap();
    let out = env.step(&Batch::column(vec![5.0])).unwrap();
    let th = -std::f64::consts::FRAC_PI_2;
    let expected = -(th * th + 0.1 * 4.0 + 0.001 * 4.0);
    assert!((out.rewards[0] - expected).abs() < 1e-12);
}

/// Frictionless cart-pole equations of motion, written out independently.
fn cartpole_oracle(s: [f64; 4], push_right: bool) -> [f64; 4] {
    let (g, mc, mp, l, tau) = (9.8, 1.0, 0.1, 0.5, 0.02);
    let f = if push_right { 10.0 } else { -10.0 };
    let [x, v, th, w] = s;
    let m = mc + mp;
    let th_acc = (g * th.sin() + th.cos() * ((-f - mp * l * w * w * th.sin()) / m))
        / (l * (4.0 / 3.0 - mp * th.cos().powi(2) / m));
    let x_acc = (f + mp * l * (w * w * th.sin() - th_acc * th.cos())) / m;
    [x + tau * v, v + tau * x_acc, th + tau * w, w + tau * th_acc]
}

#[test]
fn cartpole_step_matches_independent_dynamics() {
    let mut env = make_env("cartpole", 2, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    let start = [0.1, -0.3, 0.05, 0.4];
    env.set_state(0, &start).unwrap();
    env.set_state(1, &start).unwrap();
    let out = env.step(&Batch::column(vec![1.0, 0.0])).unwrap();
    for (row, right) in [(0, true), (1, false)] {
        let want = cartpole_oracle(start, right);
        for (got, w) in out.observations.row(row).iter().zip(want) {
            assert!((got - w).abs() < 1e-12, "row {row}: {got} vs {w}");
        }
        assert_eq!(out.rewards[row], 1.0);
    }
}

#[test]
fn cartpole_terminates_out_of_bounds() {
    let mut env = make_env("cartpole", 1, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    env.set_state(0, &[2.399, 1.0, 0.0, 0.0]).unwrap();
    let out = env.step(&Batch::column(vec![1.0])).unwrap();
    assert!(out.dones[0] && out.terminated(0));
    assert!(out.final_observation(0)[0] > 2.4);
    assert!(out.observations.data().iter().all(|v| v.abs() <= 0.05));

    env.set_state(0, &[0.0, 0.0, 0.2, 1.0]).unwrap();
    let out = env.step(&Batch::column(vec![0.0])).unwrap();
    assert!(out.dones[0]);
}

#[test]
fn cartpole_time_limit_counts_as_done() {
    let mut env = make_env("cartpole", 1, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    for t in 1..=500 {
        env.set_state(0, &[0.0; 4]).unwrap();
        let out = env.step(&Batch::column(vec![(t % 2) as f64])).unwrap();
        assert_eq!(out.dones[0], t == 500, "step {t}");
        if t == 500 {
            assert!(out.truncated(0) && !out.terminated(0));
        }
    }
}

#[test]
fn echo_reflects_actions_in_infos() {
    let mut env = make_env("echo", 3, 0, &params(&[("action_dim", 2.0)])).unwrap();
    env.reset().unwrap();
    let actions = Batch::new(3, 2, vec![1.0, -2.0, 0.125, 7.0, -1e8, 3.5]);
    let out = env.step(&actions).unwrap();
    for i in 0..3 {
        assert_eq!(out.infos[i].get(ACTION).unwrap(), actions.row(i));
    }
    assert_eq!(out.observations, actions);
}

#[test]
fn step_rejects_bad_actions() {
    let mut env = make_env("cartpole", 2, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    assert!(matches!(env.step(&Batch::column(vec![1.0])), Err(EnvError::ActionShape { .. })));
    assert_eq!(
        env.step(&Batch::column(vec![1.0, 2.0])).unwrap_err(),
        EnvError::ActionRange { row: 1, value: 2.0, n: 2 }
    );
}

#[test]
fn gridworld_reaches_goal() {
    let mut env = make_env("gridworld", 1, 0, &EnvParams::new()).unwrap();
    env.reset().unwrap();
    let mut total = 0.0;
    for a in [1, 1, 1, 1, 2, 2, 2, 2] {
        let out = env.step(&Batch::column(vec![a as f64])).unwrap();
        total += out.rewards[0];
        if out.dones[0] {
            assert_eq!(out.final_observation(0), &[24.0]);
            assert_eq!(out.observations.row(0), &[0.0]);
        }
    }
    assert_eq!(total, 7.0 * -1.0 + 10.0);
}

struct SingleCartPole {
    inner: cartpole::CartPole,
    state: [f64; 4],
    rng: ChaCha8Rng,
}

impl ExternalEnv for SingleCartPole {
    fn observation_space(&self) -> Space {
        self.inner.observation_space()
    }
    fn action_space(&self) -> Space {
        self.inner.action_space()
    }
    fn reset(&mut self) -> Option<Vec<f64>> {
        self.inner.reset_state(&mut self.rng, &mut self.state);
        Some(self.state.to_vec())
    }
    fn step(&mut self, actions: &[f64]) -> Option<ExternalStep> {
        let (r, done) = self.inner.step_state(&mut self.state, actions);
        Some(ExternalStep {
            observations: self.state.to_vec(),
            rewards: vec![r],
            dones: vec![done],
            truncated: vec![false],
        })
    }
}

struct BatchedEcho(usize);

impl ExternalEnv for BatchedEcho {
    fn observation_space(&self) -> Space {
        Space::bounded(vec![-1.0], vec![1.0]).unwrap()
    }
    fn action_space(&self) -> Space {
        self.observation_space()
    }
    fn num_envs(&self) -> Option<usize> {
        Some(self.0)
    }
    fn reset(&mut self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.0])
    }
    fn step(&mut self, actions: &[f64]) -> Option<ExternalStep> {
        Some(ExternalStep {
            observations: actions.to_vec(),
            rewards: vec![0.0; self.0],
            dones: vec![false; self.0],
            truncated: vec![false; self.0],
        })
    }
}

struct ResetOnly;

impl ExternalEnv for ResetOnly {
    fn observation_space(&self) -> Space {
        Space::Discrete { n: 2 }
    }
    fn action_space(&self) -> Space {
        Space::Discrete { n: 2 }
    }
    fn provides(&self, method: Method) -> bool {
        method == Method::Reset
    }
    fn reset(&mut self) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }
}

#[test]
fn wrap_single_source_batches_to_one_row() {
    let src = SingleCartPole {
        inner: cartpole::CartPole { max_episode_steps: 500 },
        state: [0.0; 4],
        rng: ChaCha8Rng::seed_from_u64(1),
    };
    let mut env = wrap(Box::new(src)).unwrap();
    assert_eq!(env.num_envs(), 1);
    let obs = env.reset().unwrap();
    assert_eq!((obs.rows(), obs.cols()), (1, 4));
    // drive it over the edge and check the wrapper resets it
    let mut saw_done = false;
    for _ in 0..200 {
        let out = env.step(&Batch::column(vec![1.0])).unwrap();
        assert_eq!((out.observations.rows(), out.observations.cols()), (1, 4));
        if out.dones[0] {
            assert!(out.infos[0].get(TERMINAL_OBSERVATION).is_some());
            assert!(out.observations.data().iter().all(|v| v.abs() <= 0.05));
            saw_done = true;
            break;
        }
    }
    assert!(saw_done);
}

#[test]
fn wrap_batched_source_keeps_num_envs() {
    let mut env = wrap(Box::new(BatchedEcho(8))).unwrap();
    assert_eq!(env.num_envs(), 8);
    env.reset().unwrap();
    let out = env.step(&Batch::column(vec![0.5; 8])).unwrap();
    assert_eq!(out.observations.rows(), 8);
}

#[test]
fn wrap_rejects_source_without_step() {
    let err = wrap(Box::new(ResetOnly)).unwrap_err();
    assert_eq!(err, EnvError::MissingMethod("step"));
    assert!(err.to_string().contains("step"));
}

fn in_initial_support(name: &str, obs: &[f64]) -> bool {
    match name {
        "cartpole" => obs.iter().all(|v| v.abs() <= 0.05),
        "pendulum" => obs[2].abs() <= 1.0 && ((obs[0].powi(2) + obs[1].powi(2)) - 1.0).abs() < 1e-12,
        "gridworld" => obs[0] == 0.0,
        _ => obs.iter().all(|&v| v == 0.0),
    }
}

fn random_actions(env: &VecEnv, rng: &mut ChaCha8Rng) -> Batch {
    let rows: Vec<Vec<f64>> = (0..env.num_envs()).map(|_| env.action_space().sample(rng)).collect();
    Batch::from_rows(&rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_seeds_give_identical_streams(seed in any::<u64>(), which in 0usize..4) {
        let name = ENV_NAMES[which];
        let p = if name == "echo" { params(&[("max_episode_steps", 7.0)]) } else { EnvParams::new() };
        let mut a = make_env(name, 5, seed, &p).unwrap();
        let mut b = make_env(name, 5, seed, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        prop_assert_eq!(a.reset().unwrap(), b.reset().unwrap());
        for _ in 0..60 {
            let act = random_actions(&a, &mut rng);
            let (ra, rb) = (a.step(&act).unwrap(), b.step(&act).unwrap());
            prop_assert_eq!(&ra, &rb);
            for (i, done) in ra.dones.iter().enumerate() {
                if *done {
                    prop_assert!(in_initial_support(name, ra.observations.row(i)));
                }
            }
        }
    }

    #[test]
    fn batched_outputs_lead_with_num_envs(n in 1usize..40, seed in any::<u64>()) {
        let mut env = make_env("pendulum", n, seed, &EnvParams::new()).unwrap();
        let obs = env.reset().unwrap();
        prop_assert_eq!(obs.rows(), n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = env.step(&random_actions(&env, &mut rng)).unwrap();
        prop_assert_eq!(out.observations.rows(), n);
        prop_assert_eq!(out.rewards.len(), n);
        prop_assert_eq!(out.dones.len(), n);
        prop_assert_eq!(out.infos.len(), n);
        let _ = rng.gen::<u8>();
    }
}

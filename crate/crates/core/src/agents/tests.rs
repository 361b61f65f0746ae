use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ppo::{policy_evaluate, policy_model};
use super::util::{state_action, Trained};
use super::*;
use crate::batch::Batch;
use crate::env::{make_env, EnvParams, Space, VecEnv};
use crate::model::{instantiate_model, Activation, HeadKind, ModelSpec, QTable};
use crate::tensor::{no_grad, Tensor};

fn step_info(timestep: usize, total: usize) -> StepInfo {
    StepInfo {
        timestep,
        total_timesteps: total,
    }
}

/// Drives `agent` on `env` for `steps` steps, checking finiteness after
/// every update call.
fn drive(agent: &mut dyn Agent, env: &mut VecEnv, steps: usize) -> usize {
    let mut states = env.reset().unwrap();
    let mut updates = 0;
    for t in 0..steps {
        let info = step_info(t, steps);
        let actions = agent.act(&states, info).unwrap();
        let res = env.step(&actions).unwrap();
        let n = res.rewards.len();
        let next = res.next_observations();
        let terminated: Vec<bool> = (0..n).map(|i| res.terminated(i)).collect();
        let truncated: Vec<bool> = (0..n).map(|i| res.truncated(i)).collect();
        agent
            .record_transition(
                &Transition {
                    states: &states,
                    actions: &actions,
                    rewards: &res.rewards,
                    next_states: &next,
                    terminated: &terminated,
                    truncated: &truncated,
                },
                info,
            )
            .unwrap();
        if !agent.post_interaction(info).unwrap().is_empty() {
            updates += 1;
        }
        assert!(agent.parameters_finite(), "{} produced non-finite parameters", agent.kind());
        states = res.observations;
    }
    updates
}

fn env(name: &str, n: usize) -> VecEnv {
    make_env(name, n, 7, &EnvParams::new()).unwrap()
}

fn env_for(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::QLearning | AgentKind::Sarsa => "gridworld",
        AgentKind::Ddpg | AgentKind::Td3 | AgentKind::Sac => "pendulum",
        _ => "cartpole",
    }
}

/// Small-batch configs so every agent updates within a few hundred steps.
fn quick_config(kind: AgentKind) -> AgentConfig {
    let table: toml::Value = match kind {
        AgentKind::Cem => toml::toml! { episodes_per_update = 2 }.into(),
        AgentKind::Dqn | AgentKind::Ddqn => toml::toml! { batch_size = 16 target_update_interval = 10 }.into(),
        AgentKind::Ddpg | AgentKind::Td3 | AgentKind::Sac => toml::toml! { batch_size = 16 }.into(),
        AgentKind::Ppo => toml::toml! { rollouts = 16 epochs = 2 minibatches = 2 }.into(),
        AgentKind::Trpo => toml::toml! { rollouts = 16 value_epochs = 2 }.into(),
        _ => toml::Value::Table(Default::default()),
    };
    AgentConfig::from_toml(kind, table).unwrap()
}

fn build(kind: AgentKind, e: &VecEnv, seed: u64) -> Box<dyn Agent> {
    build_agent(
        &quick_config(kind),
        e.observation_space(),
        e.action_space(),
        e.num_envs(),
        None,
        seed,
    )
    .unwrap()
}

#[test]
fn qlearning_first_update_is_half() {
    let mut q = QTable::zeros(4, 2);
    let v = qlearning_update(&mut q, 0, 1, 1.0, 2, false, 0.5, 0.9).unwrap();
    assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(q.get(0, 1).unwrap(), 0.5, epsilon = 1e-12);
}

#[test]
fn qlearning_zero_step_size_leaves_table() {
    let mut q = QTable::zeros(3, 2);
    q.set(2, 0, 4.0).unwrap();
    let before = q.clone();
    qlearning_update(&mut q, 1, 0, 1.0, 2, false, 0.0, 0.9).unwrap();
    assert_eq!(q, before);
}

#[test]
fn qlearning_terminal_target_is_reward() {
    let mut q = QTable::zeros(3, 2);
    q.set(2, 0, 100.0).unwrap();
    let v = qlearning_update(&mut q, 1, 0, 3.0, 2, true, 1.0, 0.9).unwrap();
    assert_eq!(v, 3.0);
}

#[test]
fn qlearning_rejects_bad_index() {
    let mut q = QTable::zeros(3, 2);
    assert!(qlearning_update(&mut q, 5, 0, 1.0, 0, false, 0.5, 0.9).is_err());
    assert!(qlearning_update(&mut q, 0, 2, 1.0, 0, false, 0.5, 0.9).is_err());
}

#[test]
fn sarsa_new_value_two() {
    let mut q = QTable::zeros(3, 2);
    q.set(1, 1, 2.0).unwrap();
    let v = sarsa_update(&mut q, 0, 0, 1.0, 1, 1, false, 1.0, 0.5).unwrap();
    assert_eq!(v, 2.0);
}

#[test]
fn sarsa_matches_qlearning_on_greedy_next_action() {
    let mut a = QTable::zeros(3, 3);
    for (i, v) in a.values_mut().iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin();
    }
    let mut b = a.clone();
    let greedy = a.greedy(2).unwrap();
    let x = qlearning_update(&mut a, 0, 1, 0.3, 2, false, 0.4, 0.9).unwrap();
    let y = sarsa_update(&mut b, 0, 1, 0.3, 2, greedy, false, 0.4, 0.9).unwrap();
    assert_eq!(x, y);
}

#[test]
fn sarsa_terminal_target_is_reward() {
    let mut q = QTable::zeros(3, 2);
    q.set(1, 1, 9.0).unwrap();
    assert_eq!(sarsa_update(&mut q, 0, 0, -1.0, 1, 1, true, 1.0, 0.5).unwrap(), -1.0);
}

#[test]
fn cem_elite_is_top_quartile() {
    assert_eq!(cem_elite_mask(&[1.0, 2.0, 3.0, 4.0], 0.25), vec![false, false, false, true]);
}

#[test]
fn cem_equal_returns_all_elite() {
    assert!(cem_elite_mask(&[2.5; 6], 0.2).iter().all(|&e| e));
}

#[test]
fn cem_fraction_one_keeps_everything() {
    assert!(cem_elite_mask(&[5.0, -1.0, 3.0, 0.0], 1.0).iter().all(|&e| e));
}

#[test]
fn quantile_interpolates_linearly() {
    assert_abs_diff_eq!(numpy_quantile(&[1.0, 2.0, 3.0, 4.0], 0.75), 3.25, epsilon = 1e-12);
    assert_abs_diff_eq!(numpy_quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5, epsilon = 1e-12);
}

#[test]
fn cem_update_requires_episodes() {
    let spec = ModelSpec::new(2, 2, &[4], Activation::Tanh);
    let mut policy = Trained::new(instantiate_model(&spec, HeadKind::Categorical, 0).unwrap(), 1e-2);
    assert!(cem::cem_update(&mut policy, &[], 0.2, 1, 2).is_err());
}

#[test]
fn cem_update_raises_elite_likelihood() {
    let spec = ModelSpec::new(1, 2, &[4], Activation::Tanh);
    let mut policy = Trained::new(instantiate_model(&spec, HeadKind::Categorical, 3).unwrap(), 5e-2);
    let episodes = vec![
        Episode {
            ret: 10.0,
            states: vec![0.5; 4],
            actions: vec![1; 4],
        },
        Episode {
            ret: 0.0,
            states: vec![0.5; 4],
            actions: vec![0; 4],
        },
    ];
    let first = cem::cem_update(&mut policy, &episodes, 0.5, 1, 1).unwrap();
    let later = cem::cem_update(&mut policy, &episodes, 0.5, 20, 1).unwrap();
    assert!(later < first, "nll {later} not below {first}");
}

#[test]
fn dqn_target_formula() {
    let q = Batch::from_rows(&[[2.0, 1.0]]);
    assert_abs_diff_eq!(dqn_targets(&[1.0], &[0.0], &q, &q, 0.9, false)[0], 2.8, epsilon = 1e-12);
    assert_eq!(dqn_targets(&[1.0], &[1.0], &q, &q, 0.9, false)[0], 1.0);
}

#[test]
fn double_dqn_selects_with_online_network() {
    let target = Batch::from_rows(&[[1.0, 2.0]]);
    let online = Batch::from_rows(&[[5.0, 1.0]]);
    let dqn = dqn_targets(&[0.0], &[0.0], &target, &online, 1.0, false)[0];
    let ddqn = dqn_targets(&[0.0], &[0.0], &target, &online, 1.0, true)[0];
    assert_eq!(dqn, 2.0);
    assert_eq!(ddqn, 1.0);
}

#[test]
fn double_dqn_equals_dqn_when_networks_agree() {
    let q = Batch::from_rows(&[[0.3, -1.0, 0.7], [2.0, 2.5, -3.0]]);
    let r = [1.0, -0.5];
    let d = [0.0, 1.0];
    assert_eq!(dqn_targets(&r, &d, &q, &q, 0.99, false), dqn_targets(&r, &d, &q, &q, 0.99, true));
}

#[test]
fn ddpg_target_formula() {
    assert_abs_diff_eq!(ddpg_targets(&[0.5], &[0.0], &[1.0], 0.9)[0], 1.4, epsilon = 1e-12);
    assert_eq!(ddpg_targets(&[0.5, -2.0], &[0.0, 0.0], &[7.0, 3.0], 0.0), vec![0.5, -2.0]);
}

#[test]
fn ddpg_constant_critic_gives_zero_actor_gradient() {
    let actor_spec = ModelSpec::new(3, 1, &[8], Activation::Relu).with_output_scale(vec![[-2.0, 2.0]]);
    let actor = instantiate_model(&actor_spec, HeadKind::Deterministic, 1).unwrap();
    let critic_spec = ModelSpec::new(4, 1, &[8], Activation::Relu);
    let mut critic = instantiate_model(&critic_spec, HeadKind::Deterministic, 2).unwrap();
    let w = critic.params()[2].shape().to_vec();
    critic.params_mut()[2] = Tensor::parameter(&w, vec![0.0; 8]).unwrap();
    critic.params_mut()[3] = Tensor::parameter(&[1], vec![3.0]).unwrap();
    let critic = critic.frozen();
    let states = Batch::from_rows(&[[0.1, -0.4, 0.9], [1.0, 0.0, -1.0]]);
    let a = crate::model::deterministic_act(&actor, &states).unwrap();
    let loss = critic
        .forward(&state_action(&states.to_tensor(), &a).unwrap())
        .unwrap()
        .mean()
        .unwrap()
        .neg();
    assert_eq!(loss.item(), -3.0);
    let grads = loss.backward().unwrap();
    for p in actor.params() {
        assert!(grads.get_or_zeros(p).iter().all(|g| *g == 0.0));
    }
}

#[test]
fn td3_smoothing_clip_and_min_rule() {
    assert_eq!(clip_smoothing_noise(0.9, 0.5), 0.5);
    assert_eq!(clip_smoothing_noise(-0.9, 0.5), -0.5);
    assert_eq!(clip_smoothing_noise(0.1, 0.5), 0.1);
    assert_eq!(td3_targets(&[0.0], &[0.0], &[1.0], &[3.0], 1.0), vec![1.0]);
}

#[test]
fn td3_actor_updates_follow_policy_delay() {
    let mut e = env("pendulum", 2);
    let cfg = Td3Config {
        batch_size: 16,
        gradient_steps: 3,
        ..Td3Config::default()
    };
    let mut agent = Td3Agent::new(&cfg, e.observation_space(), e.action_space(), 2, None, 5).unwrap();
    drive(&mut agent, &mut e, 40);
    assert!(agent.critic_updates() > 0);
    assert_eq!(agent.actor_updates(), agent.critic_updates() / 2);
}

#[test]
fn sac_target_entropy_is_negative_action_dim() {
    let e = env("pendulum", 1);
    let agent = SacAgent::new(&SacConfig::default(), e.observation_space(), e.action_space(), 1, None, 0).unwrap();
    assert_eq!(agent.target_entropy(), -1.0);
    assert_abs_diff_eq!(agent.entropy_coefficient(), 0.2, epsilon = 1e-12);
}

#[test]
fn sac_temperature_gradient_sign() {
    let log_alpha = Tensor::parameter(&[], vec![0.0]).unwrap();
    // Entropy 2 exceeds the target -1, so alpha should shrink.
    let g = temperature_loss(&log_alpha, &[-2.0, -2.0], -1.0).backward().unwrap();
    assert!(g.get_or_zeros(&log_alpha)[0] > 0.0);
    let g = temperature_loss(&log_alpha, &[3.0, 3.0], -1.0).backward().unwrap();
    assert!(g.get_or_zeros(&log_alpha)[0] < 0.0);
}

#[test]
fn sac_target_without_discount_or_entropy_is_reward() {
    let y = sac_targets(&[0.25, -1.0], &[0.0, 0.0], &[4.0, 2.0], &[5.0, 1.0], &[-0.3, 0.8], 0.0, 0.0);
    assert_eq!(y, vec![0.25, -1.0]);
    let y = sac_targets(&[1.0], &[0.0], &[4.0], &[5.0], &[0.5], 0.2, 0.5);
    assert_abs_diff_eq!(y[0], 1.0 + 0.5 * (4.0 - 0.1), epsilon = 1e-12);
}

/// Independent backward recursion over a single env.
fn gae_oracle(r: &[f64], v: &[f64], done: &[f64], last: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let t = r.len();
    let mut out = vec![0.0; t];
    for i in (0..t).rev() {
        let next_v = if i + 1 < t { v[i + 1] } else { last };
        let next_a = if i + 1 < t { out[i + 1] } else { 0.0 };
        let delta = r[i] + gamma * next_v * (1.0 - done[i]) - v[i];
        out[i] = delta + gamma * lam * (1.0 - done[i]) * next_a;
    }
    out
}

#[test]
fn gae_lambda_zero_is_td_error() {
    let r = [1.0, 0.5, -1.0];
    let v = [0.2, 0.4, 0.1];
    let d = [0.0, 1.0, 0.0];
    let (adv, ret) = gae(&r, &v, &d, &[0.7], 0.9, 0.0).unwrap();
    let expected = [1.0 + 0.9 * 0.4 - 0.2, 0.5 - 0.4, -1.0 + 0.9 * 0.7 - 0.1];
    for i in 0..3 {
        assert_abs_diff_eq!(adv[i], expected[i], epsilon = 1e-12);
        assert_abs_diff_eq!(ret[i], adv[i] + v[i], epsilon = 1e-12);
    }
}

#[test]
fn gae_telescopes_without_discounting() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let v = [0.5, -0.2, 0.9, 1.5];
    let (adv, _) = gae(&r, &v, &[0.0; 4], &[2.0], 1.0, 1.0).unwrap();
    for t in 0..4 {
        let tail: f64 = r[t..].iter().sum();
        assert_abs_diff_eq!(adv[t], tail + 2.0 - v[t], epsilon = 1e-12);
    }
}

#[test]
fn gae_two_step_case_matches_recursion() {
    let (adv, _) = gae(&[1.0, 1.0], &[0.5, 0.5], &[0.0, 0.0], &[0.5], 0.9, 0.95).unwrap();
    let oracle = gae_oracle(&[1.0, 1.0], &[0.5, 0.5], &[0.0, 0.0], 0.5, 0.9, 0.95);
    for (a, o) in adv.iter().zip(&oracle) {
        assert_abs_diff_eq!(*a, *o, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(adv[0], 1.76225, epsilon = 1e-12);
}

#[test]
fn gae_interleaved_envs_are_independent() {
    let r = [[1.0, 0.0, 2.0], [-1.0, 3.0, 0.5]];
    let v = [[0.1, 0.2, 0.3], [0.4, -0.5, 0.6]];
    let d = [[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
    let last = [0.9, -0.3];
    let mut flat = (vec![], vec![], vec![]);
    for t in 0..3 {
        for e in 0..2 {
            flat.0.push(r[e][t]);
            flat.1.push(v[e][t]);
            flat.2.push(d[e][t]);
        }
    }
    let (adv, _) = gae(&flat.0, &flat.1, &flat.2, &last, 0.97, 0.9).unwrap();
    for e in 0..2 {
        let oracle = gae_oracle(&r[e], &v[e], &d[e], last[e], 0.97, 0.9);
        for t in 0..3 {
            assert_abs_diff_eq!(adv[t * 2 + e], oracle[t], epsilon = 1e-12);
        }
    }
}

#[test]
fn gae_rejects_length_mismatch() {
    assert!(gae(&[1.0, 2.0], &[0.0], &[0.0, 0.0], &[0.0], 0.9, 0.9).is_err());
    assert!(gae(&[1.0, 2.0, 3.0], &[0.0; 3], &[0.0; 3], &[0.0, 0.0], 0.9, 0.9).is_err());
}

#[test]
fn ppo_clip_selects_bounded_term() {
    assert_abs_diff_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2, epsilon = 1e-12);
    assert_abs_diff_eq!(clipped_surrogate(1.0, -0.7, 0.2), -0.7, epsilon = 1e-12);
    assert_abs_diff_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8, epsilon = 1e-12);
}

#[test]
fn ppo_unchanged_policy_has_unit_ratio_and_zero_kl() {
    let e = env("cartpole", 4);
    let model = policy_model(&PpoConfig::default().policy, e.observation_space(), e.action_space(), 3).unwrap();
    let states = Batch::from_rows(&[[0.01, 0.2, -0.03, 0.1], [0.0, -0.5, 0.02, 0.3], [0.1, 0.0, 0.0, -0.2]]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let old = no_grad(|| ppo::policy_sample(&model, &states, &mut rng)).unwrap();
    let new = policy_evaluate(&model, &states, &old.action_batch(), &mut rng).unwrap();
    let adv = [0.5, -1.0, 2.0];
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for i in 0..3 {
        let ratio = (new.log_probs.data()[i] - old.log_probs.data()[i]).exp();
        assert_eq!(ratio, 1.0);
        surrogate += clipped_surrogate(ratio, adv[i], 0.2) / 3.0;
        kl += (old.log_probs.data()[i] - new.log_probs.data()[i]) / 3.0;
    }
    assert_abs_diff_eq!(surrogate, adv.iter().sum::<f64>() / 3.0, epsilon = 1e-12);
    assert_eq!(kl, 0.0);
}

#[test]
fn ppo_zero_advantage_gives_zero_policy_gradient() {
    let e = env("pendulum", 1);
    let model = policy_model(&PpoConfig::default().policy, e.observation_space(), e.action_space(), 3).unwrap();
    let states = Batch::from_rows(&[[1.0, 0.0, 0.3], [0.0, 1.0, -0.3]]);
    let actions = Batch::from_rows(&[[0.4], [-1.1]]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = policy_evaluate(&model, &states, &actions, &mut rng).unwrap();
    let old = Tensor::from_vec(out.log_probs.data().iter().map(|l| l - 0.1).collect());
    let ratio = out.log_probs.sub(&old).unwrap().exp();
    let adv = Tensor::from_vec(vec![0.0, 0.0]);
    let surr = ratio.mul(&adv).unwrap();
    let clipped = ratio.clamp(0.8, 1.2).unwrap().mul(&adv).unwrap();
    let loss = surr.minimum(&clipped).unwrap().mean().unwrap().neg();
    let grads = loss.backward().unwrap();
    for p in model.params() {
        assert!(grads.get_or_zeros(p).iter().all(|g| *g == 0.0));
    }
}

#[test]
fn cg_identity_returns_rhs_in_one_iteration() {
    let mut calls = 0;
    let b = [1.5, -2.0, 0.25];
    let x = conjugate_gradient(
        |v| {
            calls += 1;
            v.to_vec()
        },
        &b,
        10,
        1e-20,
    )
    .unwrap();
    assert_eq!(calls, 1);
    for (x, b) in x.iter().zip(&b) {
        assert_abs_diff_eq!(*x, *b, epsilon = 1e-12);
    }
}

#[test]
fn cg_solves_two_by_two() {
    let a = [[4.0, 1.0], [1.0, 3.0]];
    let b = [1.0, 2.0];
    let x = conjugate_gradient(|v| vec![a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]], &b, 10, 1e-20)
        .unwrap();
    // Cramer's rule.
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let oracle = [(b[0] * a[1][1] - a[0][1] * b[1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det];
    assert_abs_diff_eq!(x[0], oracle[0], epsilon = 1e-10);
    assert_abs_diff_eq!(x[1], oracle[1], epsilon = 1e-10);
    assert_abs_diff_eq!(x[0], 0.0909, epsilon = 1e-4);
    assert_abs_diff_eq!(x[1], 0.6364, epsilon = 1e-4);
}

#[test]
fn cg_zero_rhs_gives_zero() {
    let x = conjugate_gradient(|v| v.iter().map(|x| 2.0 * x).collect(), &[0.0, 0.0], 10, 1e-10).unwrap();
    assert_eq!(x, vec![0.0, 0.0]);
}

#[test]
fn cg_aborts_on_non_finite() {
    let err = conjugate_gradient(|v| vec![f64::NAN; v.len()], &[1.0, 1.0], 10, 1e-10).unwrap_err();
    assert!(matches!(err, CgError::NonFinite { .. }));
}

fn tr() -> TrustRegion {
    TrustRegion::from(&TrpoConfig::default())
}

#[test]
fn natural_gradient_matches_closed_form_on_quadratic() {
    // KL(theta) = 0.5 (theta - c)' F (theta - c), so grad KL is linear with Hessian F.
    let f = [[2.0, 0.5], [0.5, 1.0]];
    let c = [0.3, -0.2];
    let kl_grad = |t: &[f64]| -> Result<Vec<f64>, AgentError> {
        let d = [t[0] - c[0], t[1] - c[1]];
        Ok(vec![f[0][0] * d[0] + f[0][1] * d[1], f[1][0] * d[0] + f[1][1] * d[1]])
    };
    let g = [1.0, -1.0];
    let settings = TrustRegion { damping: 0.0, ..tr() };
    let x = natural_gradient(kl_grad, &c, &g, &settings).unwrap();
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let oracle = [(f[1][1] * g[0] - f[0][1] * g[1]) / det, (f[0][0] * g[1] - f[1][0] * g[0]) / det];
    assert_abs_diff_eq!(x[0], oracle[0], epsilon = 1e-4);
    assert_abs_diff_eq!(x[1], oracle[1], epsilon = 1e-4);
}

#[test]
fn fisher_vector_product_adds_damping() {
    let fv = fisher_vector_product(|t: &[f64]| Ok(t.iter().map(|x| 3.0 * x).collect()), &[1.0, 2.0], &[1.0, -1.0], 1e-6, 0.1)
        .unwrap();
    assert_abs_diff_eq!(fv[0], 3.1, epsilon = 1e-6);
    assert_abs_diff_eq!(fv[1], -3.1, epsilon = 1e-6);
}

#[test]
fn trust_region_accepts_within_kl_bound() {
    // Surrogate g'theta, KL 0.5 |theta|^2: the full step lands on the bound.
    let g = [0.6, 0.8];
    let out = trust_region_step(
        &[0.0, 0.0],
        &g,
        |t: &[f64]| Ok(t.to_vec()),
        |t: &[f64]| Ok(g[0] * t[0] + g[1] * t[1]),
        |t: &[f64]| Ok(0.5 * (t[0] * t[0] + t[1] * t[1])),
        &TrustRegion { damping: 0.0, ..tr() },
    )
    .unwrap();
    match out {
        StepOutcome::Accepted { theta, kl } => {
            assert!(kl <= 0.01);
            assert!(theta[0] > 0.0 && theta[1] > 0.0);
        }
        StepOutcome::Rejected => panic!("step rejected"),
    }
}

#[test]
fn trust_region_rejects_when_kl_always_too_large() {
    let mut kl_calls = 0;
    let out = trust_region_step(
        &[0.0, 0.0],
        &[1.0, 0.0],
        |t: &[f64]| Ok(t.to_vec()),
        |t: &[f64]| Ok(t[0]),
        |_: &[f64]| {
            kl_calls += 1;
            Ok(1.0)
        },
        &tr(),
    )
    .unwrap();
    assert_eq!(out, StepOutcome::Rejected);
    assert_eq!(kl_calls, 10);
}

#[test]
fn trust_region_zero_gradient_is_rejected() {
    let out = trust_region_step(
        &[0.4],
        &[0.0],
        |t: &[f64]| Ok(t.to_vec()),
        |_: &[f64]| Ok(0.0),
        |_: &[f64]| Ok(0.0),
        &tr(),
    )
    .unwrap();
    assert_eq!(out, StepOutcome::Rejected);
}

#[test]
fn trpo_zero_advantages_leave_policy_unchanged() {
    let mut e = env("cartpole", 2);
    let cfg = TrpoConfig {
        rollouts: 8,
        ..TrpoConfig::default()
    };
    let mut agent = TrpoAgent::new(&cfg, e.observation_space(), e.action_space(), 2, 4).unwrap();
    let mut states = e.reset().unwrap();
    for t in 0..8 {
        let actions = agent.act(&states, step_info(t, 8)).unwrap();
        let res = e.step(&actions).unwrap();
        let n = res.rewards.len();
        let next = res.next_observations();
        let term: Vec<bool> = (0..n).map(|i| res.terminated(i)).collect();
        let trunc: Vec<bool> = (0..n).map(|i| res.truncated(i)).collect();
        let tr = Transition {
            states: &states,
            actions: &actions,
            rewards: &res.rewards,
            next_states: &next,
            terminated: &term,
            truncated: &trunc,
        };
        agent.record_transition(&tr, step_info(t, 8)).unwrap();
        states = res.observations;
    }
    let before = agent.policy().named_tensors("p");
    let mut data = agent.rollout.finish(&agent.value.model, 0.99, 0.95, false).unwrap();
    data.advantages.iter_mut().for_each(|a| *a = 0.0);
    let (improved, value_loss) = agent.update(&data).unwrap();
    assert!(!improved);
    assert!(value_loss.is_finite());
    let after = agent.policy().named_tensors("p");
    for ((_, a), (_, b)) in before.iter().zip(&after) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn trpo_committed_steps_respect_kl_bound() {
    let mut e = env("cartpole", 4);
    let mut agent = build(AgentKind::Trpo, &e, 2);
    let updates = drive(agent.as_mut(), &mut e, 160);
    assert_eq!(updates, 10);
    let cfg = TrpoConfig::default();
    let mut e2 = env("cartpole", 4);
    let mut trpo = TrpoAgent::new(
        &TrpoConfig {
            rollouts: 16,
            ..cfg.clone()
        },
        e2.observation_space(),
        e2.action_space(),
        4,
        2,
    )
    .unwrap();
    drive(&mut trpo, &mut e2, 160);
    assert!(!trpo.committed_kls().is_empty());
    assert!(trpo.committed_kls().iter().all(|&kl| kl <= cfg.max_kl));
}

#[test]
fn every_agent_stays_finite_and_updates() {
    for kind in AgentKind::ALL {
        let mut e = env(env_for(kind), 4);
        let mut agent = build(kind, &e, 11);
        let updates = drive(agent.as_mut(), &mut e, 300);
        assert!(updates > 0, "{kind} never updated");
    }
}

#[test]
fn checkpoint_round_trip_restores_behavior() {
    for kind in AgentKind::ALL {
        let mut e = env(env_for(kind), 2);
        let mut agent = build(kind, &e, 21);
        drive(agent.as_mut(), &mut e, 120);
        let saved = agent.named_tensors();
        let mut bytes = Vec::new();
        crate::tensor::checkpoint::write_tensors(&mut bytes, &saved).unwrap();
        let loaded = crate::tensor::checkpoint::read_tensors(bytes.as_slice()).unwrap();
        let mut fresh = build(kind, &e, 99);
        fresh.load_named(&loaded).unwrap();
        let states = e.reset().unwrap();
        assert_eq!(
            agent.eval_act(&states).unwrap(),
            fresh.eval_act(&states).unwrap(),
            "{kind} eval actions differ after reload"
        );
        let names_a: Vec<&String> = saved.iter().map(|(n, _)| n).collect();
        let names_b: Vec<String> = fresh.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names_a, names_b.iter().collect::<Vec<_>>());
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    for kind in [AgentKind::Dqn, AgentKind::Sac, AgentKind::Ppo] {
        let run = || {
            let mut e = env(env_for(kind), 2);
            let mut agent = build(kind, &e, 5);
            drive(agent.as_mut(), &mut e, 100);
            agent.named_tensors()
        };
        let (a, b) = (run(), run());
        for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{kind} {na}");
        }
    }
}

#[test]
fn shared_memory_rejected_for_on_policy_agents() {
    let e = env("cartpole", 2);
    let mem = crate::memory::Memory::new(10, 2, 0).unwrap().shared();
    let err = build_agent(
        &AgentConfig::default_for(AgentKind::Ppo),
        e.observation_space(),
        e.action_space(),
        2,
        Some(mem),
        0,
    );
    assert!(matches!(err, Err(AgentError::Config { .. })));
}

#[test]
fn continuous_agents_reject_discrete_actions() {
    let e = env("cartpole", 1);
    for kind in [AgentKind::Ddpg, AgentKind::Td3, AgentKind::Sac] {
        let r = build_agent(&AgentConfig::default_for(kind), e.observation_space(), e.action_space(), 1, None, 0);
        assert!(matches!(r, Err(AgentError::Space { .. })), "{kind}");
    }
    let p = env("pendulum", 1);
    for kind in [AgentKind::Dqn, AgentKind::Ddqn, AgentKind::Cem] {
        let r = build_agent(&AgentConfig::default_for(kind), p.observation_space(), p.action_space(), 1, None, 0);
        assert!(matches!(r, Err(AgentError::Space { .. })), "{kind}");
    }
}

#[test]
fn off_policy_agents_share_one_memory() {
    let e = env("pendulum", 4);
    let mem = crate::memory::Memory::new(100, 4, 0).unwrap().shared();
    let cfg = quick_config(AgentKind::Ddpg);
    let mut a = build_agent(&cfg, e.observation_space(), e.action_space(), 2, Some(mem.clone()), 1).unwrap();
    let mut b = build_agent(&cfg, e.observation_space(), e.action_space(), 2, Some(mem.clone()), 2).unwrap();
    let s = Batch::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    let act = Batch::from_rows(&[[0.5], [-0.5]]);
    let t = Transition {
        states: &s,
        actions: &act,
        rewards: &[1.0, 2.0],
        next_states: &s,
        terminated: &[false, false],
        truncated: &[false, false],
    };
    a.record_transition(&t, step_info(0, 10)).unwrap();
    b.record_transition(&t, step_info(0, 10)).unwrap();
    assert_eq!(mem.lock().unwrap().stored_count(), 4);
}

#[test]
fn tabular_agent_learns_gridworld_greedy_path() {
    let mut e = env("gridworld", 4);
    let cfg = TabularConfig::default();
    let mut agent = TabularAgent::new(AgentKind::QLearning, &cfg, e.observation_space(), e.action_space(), 4, 0).unwrap();
    drive(&mut agent, &mut e, 3000);
    // Greedy rollout from the start cell reaches the goal in 8 moves.
    let grid = crate::env::gridworld::GridWorld {
        size: 5,
        max_episode_steps: 100,
    };
    let mut cell = 0;
    for _ in 0..8 {
        cell = grid.transition(cell, agent.q_table().greedy(cell).unwrap());
    }
    assert_eq!(cell, grid.goal());
}

#[test]
fn space_mismatch_is_reported_for_tabular() {
    let e = env("cartpole", 1);
    let r = TabularAgent::new(
        AgentKind::Sarsa,
        &TabularConfig::default(),
        e.observation_space(),
        &Space::discrete(2).unwrap(),
        1,
        0,
    );
    assert!(matches!(r, Err(AgentError::Space { .. })));
}

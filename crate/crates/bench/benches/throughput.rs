use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use vecrl::agents::{build_agent, AgentConfig, AgentKind};
use vecrl::env::{make_env, EnvParams};
use vecrl::memory::{Dtype, Memory};
use vecrl::model::{instantiate_model, Activation, HeadKind, ModelSpec};
use vecrl::tensor::Tensor;
use vecrl::trainer::{partition_scopes, simultaneous_train, NullSink, TrainerConfig};
use vecrl::Batch;

fn mlp_forward_backward(c: &mut Criterion) {
    let spec = ModelSpec::new(8, 4, &[64, 64], Activation::Tanh);
    let model = instantiate_model(&spec, HeadKind::Deterministic, 0).unwrap();
    let mut group = c.benchmark_group("mlp_64x64");
    for rows in [32usize, 256] {
        let x = Tensor::matrix(rows, 8, (0..rows * 8).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        group.throughput(Throughput::Elements(rows as u64));
        group.bench_function(format!("forward_backward_{rows}"), |b| {
            b.iter(|| {
                let y = model.forward(black_box(&x)).unwrap();
                y.square().mean().unwrap().backward().unwrap()
            })
        });
    }
    group.finish();
}

fn env_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("env_step");
    for (name, n) in [("cartpole", 512usize), ("pendulum", 512)] {
        let mut env = make_env(name, n, 0, &EnvParams::new()).unwrap();
        env.reset().unwrap();
        let dim = env.action_space().dim();
        let actions = Batch::new(n, dim, vec![if name == "cartpole" { 1.0 } else { 0.5 }; n * dim]);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_function(format!("{name}_{n}"), |b| b.iter(|| env.step(black_box(&actions)).unwrap()));
    }
    group.finish();
}

fn memory_add_sample(c: &mut Criterion) {
    let rows = 512;
    let mut mem = Memory::new(1000, rows, 0).unwrap();
    mem.create_tensor("states", 3, Dtype::F64).unwrap();
    mem.create_tensor("rewards", 1, Dtype::F64).unwrap();
    let states = Batch::new(rows, 3, vec![0.25; rows * 3]);
    let rewards = Batch::new(rows, 1, vec![-1.0; rows]);
    for _ in 0..100 {
        mem.add_samples(&[("states", &states), ("rewards", &rewards)]).unwrap();
    }
    let mut group = c.benchmark_group("memory");
    group.throughput(Throughput::Elements(rows as u64));
    group.bench_function("add_512", |b| {
        b.iter(|| mem.add_samples(&[("states", &states), ("rewards", &rewards)]).unwrap())
    });
    group.bench_function("sample_256", |b| b.iter(|| mem.sample(&["states", "rewards"], 256).unwrap()));
    group.finish();
}

fn training_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_100_steps");
    group.sample_size(10);
    for (kind, env_name, n) in [
        (AgentKind::Ddpg, "pendulum", 1usize),
        (AgentKind::Sac, "pendulum", 1),
        (AgentKind::Ppo, "cartpole", 512),
    ] {
        group.bench_function(format!("{kind}_{env_name}_{n}"), |b| {
            b.iter_batched(
                || {
                    let env = make_env(env_name, n, 0, &EnvParams::new()).unwrap();
                    let (obs, act) = (env.observation_space().clone(), env.action_space().clone());
                    let agent = build_agent(&AgentConfig::default_for(kind), &obs, &act, n, None, 0).unwrap();
                    (env, vec![agent])
                },
                |(mut env, mut agents)| {
                    let scopes = partition_scopes(n, &[], 1).unwrap();
                    let mut cfg = TrainerConfig::new(100);
                    cfg.eval_interval = 100;
                    cfg.log_interval = 100;
                    simultaneous_train(&mut agents, &scopes, &mut env, &cfg, &mut NullSink).unwrap()
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, mlp_forward_backward, env_step, memory_add_sample, training_steps);
criterion_main!(benches);

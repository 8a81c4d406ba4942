//! Hot-path benchmarks: environment stepping, recurrent forward/backward
//! passes, Riccati synthesis, optimizer updates, and a full training
//! iteration at a small scale.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use reach_core::autodiff::Tape;
use reach_core::config::TrainConfig;
use reach_core::env::{Control, EnvParams, PlaneEnv};
use reach_core::lqr::{solve_care, ReachSystem};
use reach_core::nets::{InitConfig, TransitionModel};
use reach_core::optim::{Adam, GradBuffer};
use reach_core::rng::{stream, Purpose};
use reach_core::trainer::Trainer;

fn bench_env_step(c: &mut Criterion) {
    c.bench_function("env_step_noisy", |b| {
        let mut env = PlaneEnv::new(EnvParams::default(), 1, &[0]);
        env.reset([0.0; 4]).unwrap();
        let mut t = 0u64;
        b.iter(|| {
            let u = Control([((t as f64) * 0.01).sin(), 0.3]);
            t += 1;
            black_box(env.step(u));
        });
    });
}

fn bench_gru_forward(c: &mut Criterion) {
    let mut init_rng = stream(7, Purpose::Init, &[0]);
    let model = TransitionModel::new(64, &InitConfig::default(), &mut init_rng);
    c.bench_function("transition_forward_b128", |b| {
        b.iter_batched(
            Tape::new,
            |tape| {
                let bound = model.bind(&tape, false);
                let y = tape.constant(&[128, 4], vec![0.1; 512]).unwrap();
                let u = tape.constant(&[128, 2], vec![0.2; 256]).unwrap();
                let h = bound.initial_hidden(128);
                black_box(bound.forward(&y, &u, &h).unwrap());
            },
            BatchSize::SmallInput,
        );
    });
}

fn bench_bptt_backward(c: &mut Criterion) {
    let mut init_rng = stream(7, Purpose::Init, &[1]);
    let model = TransitionModel::new(64, &InitConfig::default(), &mut init_rng);
    c.bench_function("transition_bptt_50steps_b64", |b| {
        b.iter_batched(
            Tape::new,
            |tape| {
                let bound = model.bind(&tape, true);
                let mut h = bound.initial_hidden(64);
                let y = tape.constant(&[64, 4], vec![0.1; 256]).unwrap();
                let u = tape.constant(&[64, 2], vec![0.2; 128]).unwrap();
                let mut loss: Option<reach_core::Tensor> = None;
                for _ in 0..50 {
                    let (mu, _, hn) = bound.forward(&y, &u, &h).unwrap();
                    h = hn;
                    let term = mu.square().sum();
                    loss = Some(match loss {
                        None => term,
                        Some(acc) => acc.add(&term).unwrap(),
                    });
                }
                loss.unwrap().backward().unwrap();
            },
            BatchSize::SmallInput,
        );
    });
}

fn bench_care_solve(c: &mut Criterion) {
    c.bench_function("care_newton_kleinman", |b| {
        let sys = ReachSystem::point_mass(5.0);
        b.iter(|| black_box(solve_care(&sys).unwrap()));
    });
}

fn bench_adam(c: &mut Criterion) {
    let mut init_rng = stream(7, Purpose::Init, &[2]);
    let model = TransitionModel::new(64, &InitConfig::default(), &mut init_rng);
    c.bench_function("adam_step_h64", |b| {
        let mut params = model.params().clone();
        let mut adam = Adam::new(5e-4);
        let mut grads = GradBuffer::zeros_like(&params);
        for buf in grads.buffers.iter_mut() {
            for (i, g) in buf.iter_mut().enumerate() {
                *g = (i as f64 * 0.37).sin() * 1e-3;
            }
        }
        b.iter(|| adam.step(&mut params, &grads).unwrap());
    });
}

fn bench_training_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("trainer");
    group.sample_size(10);
    group.bench_function("iteration_tiny", |b| {
        b.iter_batched(
            || {
                Trainer::new(TrainConfig {
                    iterations: 1,
                    episode_steps: 40,
                    episodes_per_iteration: 2,
                    memory_size: 10,
                    transition_hidden_size: 16,
                    policy_hidden_size: 16,
                    transition_batch_size: 4,
                    policy_batch_size: 4,
                    transition_batches_per_iteration: 2,
                    policy_batches_per_iteration: 2,
                    warmup_steps: 10,
                    unroll_steps: 5,
                    heldout_episodes: 1,
                    log_wall_time: false,
                    ..TrainConfig::default()
                })
                .unwrap()
            },
            |mut t| {
                t.run_iteration().unwrap();
            },
            BatchSize::PerIteration,
        );
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_env_step,
    bench_gru_forward,
    bench_bptt_backward,
    bench_care_solve,
    bench_adam,
    bench_training_iteration
);
criterion_main!(benches);

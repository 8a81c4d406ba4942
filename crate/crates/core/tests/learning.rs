//! Small-scale end-to-end learning checks: the transition objective
//! improves with updates, and a partially trained model notices rotated
//! dynamics. These run a real (tiny) training loop, so they are the
//! slowest tests in the crate.

use std::sync::LazyLock;

use reach_core::config::TrainConfig;
use reach_core::env::{EnvParams, PlaneEnv};
use reach_core::eval::{self, autoregressive_position_errors, Controller};
use reach_core::lqr::{solve_care, ReachSystem};
use reach_core::memory::{EpisodeMeta, EpisodeRecord};
use reach_core::trainer::Trainer;

fn tiny_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        episode_steps: 100,
        episodes_per_iteration: 6,
        memory_size: 60,
        transition_hidden_size: 24,
        policy_hidden_size: 24,
        transition_batch_size: 16,
        policy_batch_size: 16,
        transition_batches_per_iteration: 6,
        policy_batches_per_iteration: 2,
        warmup_steps: 20,
        unroll_steps: 10,
        heldout_episodes: 4,
        log_wall_time: false,
        ..TrainConfig::default()
    }
}

/// One shared tiny training run for the model-quality tests.
static TRAINED: LazyLock<Trainer> = LazyLock::new(|| {
    let mut trainer = Trainer::new(tiny_config(8)).expect("trainer");
    trainer.run(|_, _| Ok(())).expect("tiny training run");
    trainer
});

#[test]
fn transition_heldout_loss_drops_within_thirty_updates() {
    let mut cfg = tiny_config(1);
    cfg.transition_batches_per_iteration = 30;
    cfg.policy_batches_per_iteration = 1;
    let mut trainer = Trainer::new(cfg).unwrap();
    let heldout: Vec<EpisodeRecord> = trainer.heldout().to_vec();
    let before = trainer.transition_nll_on(&heldout).unwrap();
    trainer.run_iteration().unwrap();
    let after = trainer.transition_nll_on(&heldout).unwrap();
    assert!(
        after < before,
        "held-out NLL should drop after 30 updates: {before} -> {after}"
    );
}

#[test]
fn rotated_actions_break_autoregressive_predictions() {
    let trainer = &*TRAINED;
    let steps = trainer.config.episode_steps;

    // Record one LQR-driven episode in the plain environment and one in a
    // 60-degree rotated environment, then score the trained model on both.
    let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
    let controller = Controller::from_gain(&gain, 1.0);
    let record_with = |gamma_deg: f64| {
        let mut params = EnvParams::noiseless();
        params.gamma = gamma_deg.to_radians();
        let mut env = PlaneEnv::new(params, 31, &[0]);
        let targets = vec![[0.5, -0.3, 0.0, 0.0]; steps + 1];
        let trace = eval::run_episode(&controller, &mut env, [0.0; 4], &targets, steps, 31, &[0])
            .unwrap();
        EpisodeRecord::from_trace(
            EpisodeMeta {
                seed: 31,
                iteration: 0,
                variant: "stationary".to_string(),
            },
            &trace,
        )
    };
    let plain = record_with(0.0);
    let rotated = record_with(60.0);

    let (warmup, horizon) = (20, 60);
    let err_plain = autoregressive_position_errors(trainer.transition(), &plain, warmup, horizon)
        .unwrap();
    let err_rot = autoregressive_position_errors(trainer.transition(), &rotated, warmup, horizon)
        .unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&err_rot) > mean(&err_plain),
        "rotated-dynamics episode should predict worse: {} vs {}",
        mean(&err_rot),
        mean(&err_plain)
    );
}

#[test]
fn heldout_mse_improves_during_tiny_training() {
    let trainer = &*TRAINED;
    let first = trainer.log().records.first().unwrap().mse_1step;
    let last = trainer.log().records.last().unwrap().mse_1step;
    assert!(
        last < first,
        "one-step MSE should improve: {first} -> {last}"
    );
}

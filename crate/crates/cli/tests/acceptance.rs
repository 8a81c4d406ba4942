//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`). The desk-scale training run
//! is shared by the criteria that need trained models.

use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;
use std::time::Instant;

use reach_core::config::TrainConfig;
use reach_core::env::{Control, EnvParams, State};
use reach_core::eval::{
    autoregressive_position_errors, make_task, perturbation_sweep, Controller, PolicyController,
    PolicyInput, TaskVariant,
};
use reach_core::lqr::{solve_care, ReachSystem};
use reach_core::nets::ActionMode;
use reach_core::rng::{stream, Purpose};
use reach_core::trainer::{heldout_episodes, init_models, one_step_mse, Trainer};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reach"))
}

fn report(criterion: &str, pass: bool, detail: String) {
    println!(
        "ACCEPTANCE {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

/// Desk-scale shared training artifacts. Criteria 5 and 6 are judged at
/// iteration 20; the run then continues to iteration 60 so criterion 7 can
/// use a better-converged policy (the first 20 iterations are bit-identical
/// to a standalone 20-iteration run, so nothing about the earlier criteria
/// changes).
struct DeskRun {
    config: TrainConfig,
    trainer: Trainer,
    transition_at_20: reach_core::nets::TransitionModel,
    mse0: f64,
    j0: f64,
    autoreg0: f64,
}

const DESK_CHECK_ITER: u64 = 20;
const DESK_TOTAL_ITERS: u64 = 60;

static DESK: LazyLock<DeskRun> = LazyLock::new(|| {
    let config = TrainConfig::desk(DESK_TOTAL_ITERS);
    let (transition0, _) = init_models(&config);
    let heldout = heldout_episodes(&config).expect("held-out episodes");
    let mse0 = one_step_mse(&transition0, &heldout);
    let autoreg0 = mean(
        &autoregressive_position_errors(&transition0, &heldout[0], 30, 100)
            .expect("autoregressive eval"),
    );
    let mut trainer = Trainer::new(config.clone()).expect("trainer");
    let j0 = trainer
        .evaluate_j(TaskVariant::Stationary)
        .expect("untrained evaluation");
    let mut transition_at_20 = transition0.clone();
    trainer
        .run(|t, record| {
            if record.iter == DESK_CHECK_ITER {
                transition_at_20 = t.transition().clone();
            }
            Ok(())
        })
        .expect("desk training run");
    DeskRun {
        config,
        trainer,
        transition_at_20,
        mse0,
        j0,
        autoreg0,
    }
});

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_1_lqr_gain_exactness() {
    let started = Instant::now();
    let output = bin().arg("lqr").output().expect("run reach lqr");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();

    let mut k_rows = Vec::new();
    let mut residual = f64::INFINITY;
    let mut lines = stdout.lines();
    while let Some(line) = lines.next() {
        if line.trim() == "K =" {
            for _ in 0..2 {
                let row: Vec<f64> = lines
                    .next()
                    .unwrap()
                    .split(',')
                    .map(|v| v.parse().unwrap())
                    .collect();
                k_rows.push(row);
            }
        } else if let Some(v) = line.strip_prefix("care_residual = ") {
            residual = v.parse().unwrap();
        }
    }
    let expect = [
        [3.16227766, 0.0, 1.50496215, 0.0],
        [0.0, 3.16227766, 0.0, 1.50496215],
    ];
    let mut max_err = 0.0f64;
    for i in 0..2 {
        for j in 0..4 {
            max_err = max_err.max((k_rows[i][j] - expect[i][j]).abs());
        }
    }
    report(
        "criterion 1 (LQR gain exactness)",
        max_err < 1e-6 && residual <= 1e-9 && elapsed < 1.0,
        format!("max |K err| = {max_err:.2e}, residual = {residual:.2e}, {elapsed:.2}s"),
    );
}

#[test]
fn criterion_2_lqr_scenario_behavior() {
    let started = Instant::now();
    let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
    let controller = Controller::from_gain(&gain, 1.0);
    let (_, metrics) = reach_core::eval::rollout_to_target(
        &controller,
        &EnvParams::noiseless(),
        [-0.5, 0.5, 0.0, 0.0],
        [0.5, -0.5, 0.0, 0.0],
        200,
        1,
    )
    .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    report(
        "criterion 2 (LQR scenario)",
        metrics.final_position_error <= 0.02 && metrics.overshoot <= 0.1 && elapsed < 1.0,
        format!(
            "final error = {:.4}, overshoot = {:.4}, {elapsed:.2}s",
            metrics.final_position_error, metrics.overshoot
        ),
    );
}

/// Plain scalar transcription of the plant update, kept deliberately
/// separate from the library implementation.
fn scalar_euler(
    state: [f64; 6],
    u: [f64; 2],
    dt: f64,
    kappa: f64,
    gamma: f64,
    x_max: f64,
    v_max: f64,
    u_max: f64,
    a_max: f64,
) -> [f64; 6] {
    let clip = |v: f64, b: f64| {
        if v > b {
            b
        } else if v < -b {
            -b
        } else {
            v
        }
    };
    let u1 = clip(u[0], u_max);
    let u2 = clip(u[1], u_max);
    let (s, c) = gamma.sin_cos();
    let ur1 = u1 * c + u2 * s;
    let ur2 = -u1 * s + u2 * c;
    let mut next = [0.0; 6];
    next[0] = clip(state[0] + dt * state[2], x_max);
    next[1] = clip(state[1] + dt * state[3], x_max);
    next[2] = clip(state[2] + dt * state[4], v_max);
    next[3] = clip(state[3] + dt * state[5], v_max);
    next[4] = clip(kappa * ur1, a_max);
    next[5] = clip(kappa * ur2, a_max);
    [next[0], next[1], next[2], next[3], next[4], next[5]]
}

#[test]
fn criterion_3_environment_oracle() {
    use rand::Rng;
    let params = EnvParams::noiseless();
    let mut rng = stream(1234, Purpose::Test, &[0]);
    let mut prng = stream(0, Purpose::ProcessNoise, &[0]);
    let mut orng = stream(0, Purpose::ObservationNoise, &[0]);
    let mut worst = 0.0f64;
    for trial in 0..1000u64 {
        let gamma = rng.random_range(-2.0..2.0);
        let mut p = params;
        p.gamma = gamma;
        let state = State {
            pos: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            vel: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            acc: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        };
        let u = Control([rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]);
        let (next, _) = reach_core::env::step(&state, u, &p, &mut prng, &mut orng);
        let expect = scalar_euler(
            [state.pos[0], state.pos[1], state.vel[0], state.vel[1], state.acc[0], state.acc[1]],
            u.0,
            p.dt,
            p.kappa,
            gamma,
            p.x_max,
            p.v_max,
            p.u_max,
            p.a_max,
        );
        let got = [next.pos[0], next.pos[1], next.vel[0], next.vel[1], next.acc[0], next.acc[1]];
        for i in 0..6 {
            worst = worst.max((got[i] - expect[i]).abs());
        }
        let _ = trial;
    }

    // Impulse from rest: velocity moves on step 2, position on step 3.
    let mut s = State::zeros();
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for _ in 0..3 {
        let (n, _) = reach_core::env::step(&s, Control([1.0, 0.0]), &params, &mut prng, &mut orng);
        positions.push(n.pos[0]);
        velocities.push(n.vel[0]);
        s = n;
    }
    let delay_ok = positions[0] == 0.0
        && positions[1] == 0.0
        && (positions[2] - 0.002).abs() < 1e-15
        && velocities[0] == 0.0
        && velocities[1] != 0.0;
    report(
        "criterion 3 (environment oracle)",
        worst <= 1e-12 && delay_ok,
        format!("max |step err| = {worst:.2e}, delay pattern ok = {delay_ok}"),
    );
}

#[test]
fn criterion_4_gradient_suite() {
    let started = Instant::now();
    let output = bin().arg("gradcheck").output().expect("run reach gradcheck");
    let elapsed = started.elapsed().as_secs_f64();
    let stdout = String::from_utf8(output.stdout).unwrap();
    let mut all_within = output.status.success();
    for line in stdout.lines() {
        if let Some(rest) = line.strip_prefix("suite ") {
            let err: f64 = rest
                .split("max_rel_err = ")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse().ok())
                .unwrap_or(f64::INFINITY);
            let threshold = if rest.contains("rollout") { 1e-3 } else { 1e-4 };
            if err > threshold {
                all_within = false;
            }
        }
    }
    report(
        "criterion 4 (gradient suite)",
        all_within && elapsed < 30.0,
        format!("exit ok = {}, {elapsed:.1}s\n{stdout}", output.status.success()),
    );
}

#[test]
fn criterion_5_transition_learning() {
    let desk = &*DESK;
    let heldout = desk.trainer.heldout();
    let mse20 = one_step_mse(&desk.transition_at_20, heldout);
    let autoreg20 = mean(
        &autoregressive_position_errors(&desk.transition_at_20, &heldout[0], 30, 100).unwrap(),
    );
    let ratio = mse20 / desk.mse0;
    report(
        "criterion 5 (transition learning)",
        ratio <= 0.2 && autoreg20 < desk.autoreg0,
        format!(
            "held-out MSE ratio at iter {DESK_CHECK_ITER} = {ratio:.4} (<= 0.2), \
             autoregressive error {:.4} -> {:.4}",
            desk.autoreg0, autoreg20
        ),
    );
}

#[test]
fn criterion_6_policy_learning_desk() {
    let desk = &*DESK;
    let j20 = desk
        .trainer
        .log()
        .records
        .iter()
        .find(|r| r.iter == DESK_CHECK_ITER)
        .unwrap()
        .j_stationary;
    let ratio = j20 / desk.j0;
    report(
        "criterion 6 (policy learning)",
        ratio <= 0.5,
        format!(
            "J untrained = {:.2}, J at iter {DESK_CHECK_ITER} = {j20:.2}, ratio = {ratio:.3} (<= 0.5)",
            desk.j0
        ),
    );
}

/// The optional full-size run (hours): J within 25% above the LQR J on
/// stationary targets. Run manually with `--ignored`.
#[test]
#[ignore]
fn criterion_6_full_scale_policy_vs_lqr() {
    let mut config = TrainConfig::default();
    config.log_wall_time = false;
    let mut trainer = Trainer::new(config.clone()).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    let j_policy = trainer.log().records.last().unwrap().j_stationary;

    let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
    let lqr = Controller::from_gain(&gain, 1.0);
    let task = make_task(TaskVariant::Stationary, 200, 0.02);
    let j_lqr = reach_core::eval::evaluate(&lqr, &task, &config.eval_env_params(), 200, config.seed)
        .unwrap()
        .total;
    report(
        "criterion 6 (full scale vs LQR)",
        j_policy <= 1.25 * j_lqr,
        format!("J policy = {j_policy:.3}, J lqr = {j_lqr:.3}"),
    );
}

#[test]
fn criterion_7_perturbation_failure_mode() {
    let desk = &*DESK;
    let grid: Vec<f64> = (-8..=8).map(|i| i as f64 * 15.0).collect();
    let task = make_task(TaskVariant::Stationary, 200, 0.02);
    let params = desk.config.eval_env_params();

    let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
    let controllers: Vec<(&str, Controller)> = vec![
        ("lqr", Controller::from_gain(&gain, 1.0)),
        (
            "policy",
            Controller::Policy(Box::new(PolicyController {
                policy: desk.trainer.policy().clone(),
                mode: ActionMode::Mean,
                input: PolicyInput::Observation,
                transition: None,
            })),
        ),
    ];

    let mut pass = true;
    let mut detail = String::new();
    for (name, controller) in &controllers {
        let reports =
            perturbation_sweep(controller, &task, &params, 200, &grid, desk.config.seed).unwrap();
        let j_at = |deg: f64| {
            reports
                .iter()
                .find(|r| (r.gamma_deg - deg).abs() < 1e-9)
                .unwrap()
                .total
        };
        let ratio_pos = j_at(90.0) / j_at(0.0);
        let ratio_neg = j_at(-90.0) / j_at(0.0);
        if ratio_pos < 3.0 || ratio_neg < 3.0 {
            pass = false;
        }
        for sign in [1.0, -1.0] {
            let mut prev = j_at(0.0);
            for step in 1..=6 {
                let cur = j_at(sign * 15.0 * step as f64);
                if cur < prev {
                    pass = false;
                    detail.push_str(&format!(
                        "{name}: J({:+.0}) = {cur:.3} < J({:+.0}) = {prev:.3}; ",
                        sign * 15.0 * step as f64,
                        sign * 15.0 * (step as f64 - 1.0)
                    ));
                }
                prev = cur;
            }
        }
        detail.push_str(&format!(
            "{name}: J(+-90)/J(0) = {ratio_pos:.2}/{ratio_neg:.2}; "
        ));
    }
    report("criterion 7 (perturbation failure mode)", pass, detail);
}

#[test]
fn criterion_8_bookkeeping_exactness() {
    // The episode/step/update counters depend only on the iteration
    // structure (I, E, T, n), which stays at the defaults; the network
    // width and batch size do not enter the counts and are shrunk so the
    // run finishes quickly.
    let config = TrainConfig {
        transition_hidden_size: 8,
        policy_hidden_size: 8,
        transition_batch_size: 4,
        policy_batch_size: 4,
        heldout_episodes: 2,
        log_wall_time: false,
        ..TrainConfig::default()
    };
    assert_eq!(config.iterations, 150);
    assert_eq!(config.episodes_per_iteration, 10);
    assert_eq!(config.episode_steps, 200);
    assert_eq!(config.transition_batches_per_iteration, 30);
    assert_eq!(config.policy_batches_per_iteration, 30);
    assert_eq!(config.memory_size, 1500);
    let mut trainer = Trainer::new(config).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    let log = trainer.log();
    let pass = log.records.len() == 150
        && log.episodes_total == 1500
        && log.env_steps_total == 300_000
        && log.transition_updates_total == 4500
        && log.policy_updates_total == 4500;
    report(
        "criterion 8 (bookkeeping exactness)",
        pass,
        format!(
            "rows = {}, episodes = {}, env steps = {}, updates = {}/{}",
            log.records.len(),
            log.episodes_total,
            log.env_steps_total,
            log.transition_updates_total,
            log.policy_updates_total
        ),
    );
}

#[test]
fn criterion_9_determinism() {
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_determinism");
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let config = TrainConfig {
        iterations: 3,
        episode_steps: 50,
        episodes_per_iteration: 3,
        memory_size: 20,
        transition_hidden_size: 16,
        policy_hidden_size: 16,
        transition_batch_size: 6,
        policy_batch_size: 6,
        transition_batches_per_iteration: 3,
        policy_batches_per_iteration: 3,
        warmup_steps: 10,
        unroll_steps: 8,
        heldout_episodes: 2,
        log_wall_time: false,
        ..TrainConfig::default()
    };
    let config_path = tmp.join("config.txt");
    std::fs::write(&config_path, config.emit()).unwrap();

    let run = |dir: &Path| {
        let status = bin()
            .arg("train")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(dir)
            .status()
            .expect("run reach train");
        assert!(status.success());
        (
            std::fs::read(dir.join("log.csv")).unwrap(),
            std::fs::read(dir.join("transition.ck")).unwrap(),
            std::fs::read(dir.join("policy.ck")).unwrap(),
        )
    };
    let a = run(&tmp.join("a"));
    let b = run(&tmp.join("b"));
    let pass = a == b;
    report(
        "criterion 9 (determinism)",
        pass,
        format!(
            "log {} bytes, transition {} bytes, policy {} bytes, all bit-identical = {pass}",
            a.0.len(),
            a.1.len(),
            a.2.len()
        ),
    );
}

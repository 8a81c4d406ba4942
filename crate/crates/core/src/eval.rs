//! The reaching benchmark: eight equidistant targets presented in sequence,
//! the time-integrated distance metric J, controller rollouts, the
//! rotation-perturbation sweep, and autoregressive prediction scoring for a
//! trained transition model.

use crate::env::{Control, EnvParams, PlaneEnv};
use crate::lqr::{self, Mat};
use crate::memory::EpisodeRecord;
use crate::nets::{ActionMode, PolicyModel, TransitionModel};
use crate::rng::{self, Purpose};
use crate::svg::{trace_color, PlanePlot};
use crate::trace::{EpisodeTrace, TraceStep};
use crate::autodiff::Tape;
use rand::Rng;
use std::fmt;
use std::fmt::Write as _;
use thiserror::Error;

/// Targets sit on a circle of this radius around the center start.
pub const TARGET_DISTANCE: f64 = 0.7;
/// Moving targets launch at this speed, perpendicular to the spoke.
pub const TARGET_SPEED: f64 = 0.5;
/// Half-width of the plane the targets are clipped to.
pub const PLANE_HALF_WIDTH: f64 = 1.0;
pub const NUM_TARGETS: usize = 8;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error("trajectory has {traj} positions but {targets} targets")]
    LengthMismatch { traj: usize, targets: usize },
    #[error("episode of {len} steps is too short for warmup {warmup} + horizon {horizon}")]
    EpisodeTooShort {
        len: usize,
        warmup: usize,
        horizon: usize,
    },
    #[error("policy controller in estimate mode needs a transition model")]
    MissingTransition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskVariant {
    Stationary,
    Moving,
}

impl fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskVariant::Stationary => write!(f, "stationary"),
            TaskVariant::Moving => write!(f, "moving"),
        }
    }
}

impl std::str::FromStr for TaskVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stationary" => Ok(TaskVariant::Stationary),
            "moving" => Ok(TaskVariant::Moving),
            other => Err(format!("unknown task variant '{other}' (stationary|moving)")),
        }
    }
}

/// The benchmark layout: eight target trajectories of length `T + 1`
/// (entry 0 is the target at reset time) and the shared start state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTask {
    pub variant: TaskVariant,
    pub start: [f64; 4],
    pub targets: Vec<Vec<[f64; 4]>>,
}

/// Builds the eight-target task. Target `k` sits at angle `45 deg * k`
/// counterclockwise from the +x axis. Moving targets are free particles
/// with the initial perpendicular (clockwise) velocity, Euler-integrated
/// and clipped to the plane.
pub fn make_task(variant: TaskVariant, steps: usize, dt: f64) -> ReachTask {
    assert!(steps > 0, "steps must be positive");
    let mut targets = Vec::with_capacity(NUM_TARGETS);
    for k in 0..NUM_TARGETS {
        let angle = (k as f64) * std::f64::consts::FRAC_PI_4;
        let pos0 = [TARGET_DISTANCE * angle.cos(), TARGET_DISTANCE * angle.sin()];
        let vel = match variant {
            TaskVariant::Stationary => [0.0, 0.0],
            // Clockwise: rotate the outward spoke by -90 degrees.
            TaskVariant::Moving => [TARGET_SPEED * angle.sin(), -TARGET_SPEED * angle.cos()],
        };
        let mut traj = Vec::with_capacity(steps + 1);
        let mut pos = pos0;
        traj.push([pos[0], pos[1], vel[0], vel[1]]);
        for _ in 0..steps {
            for i in 0..2 {
                pos[i] = (pos[i] + dt * vel[i]).clamp(-PLANE_HALF_WIDTH, PLANE_HALF_WIDTH);
            }
            traj.push([pos[0], pos[1], vel[0], vel[1]]);
        }
        targets.push(traj);
    }
    ReachTask {
        variant,
        start: [0.0; 4],
        targets,
    }
}

/// Time-integrated Euclidean position distance: `J = dt * sum_t |p_t - g_t|`.
pub fn performance(
    positions: &[[f64; 2]],
    target_positions: &[[f64; 2]],
    dt: f64,
) -> Result<f64, EvalError> {
    if positions.len() != target_positions.len() {
        return Err(EvalError::LengthMismatch {
            traj: positions.len(),
            targets: target_positions.len(),
        });
    }
    let sum: f64 = positions
        .iter()
        .zip(target_positions.iter())
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum();
    Ok(dt * sum)
}

/// How a policy controller feeds its state input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyInput {
    /// The raw environment observation (default during interaction).
    Observation,
    /// The transition model's state estimate.
    Estimate,
}

pub struct PolicyController {
    pub policy: PolicyModel,
    pub mode: ActionMode,
    pub input: PolicyInput,
    pub transition: Option<TransitionModel>,
}

/// A controller the harness can roll out.
pub enum Controller {
    Lqr { k: Mat<2, 4>, u_max: f64 },
    Policy(Box<PolicyController>),
    Random { u_max: f64 },
}

impl Controller {
    pub fn id(&self) -> &'static str {
        match self {
            Controller::Lqr { .. } => "lqr",
            Controller::Policy(_) => "policy",
            Controller::Random { .. } => "random",
        }
    }

    pub fn from_gain(gain: &lqr::ReachGain, u_max: f64) -> Self {
        Controller::Lqr { k: gain.k, u_max }
    }
}

/// Rolls one episode from `start` against a per-step target trajectory
/// (`targets.len() == steps + 1`). Recurrent state is fresh, so episodes
/// are independent.
pub fn run_episode(
    controller: &Controller,
    env: &mut PlaneEnv,
    start: [f64; 4],
    targets: &[[f64; 4]],
    steps: usize,
    seed: u64,
    episode_path: &[u64],
) -> Result<EpisodeTrace, EvalError> {
    assert!(
        targets.len() >= steps + 1,
        "need steps + 1 targets, got {}",
        targets.len()
    );
    let (x0, y0) = env.reset(start)?;
    let mut trace = EpisodeTrace::new(x0.as_vec4(), y0.0);

    match controller {
        Controller::Lqr { k, u_max } => {
            let mut y = y0.0;
            for t in 0..steps {
                let u = lqr::lqr_control(&y, &targets[t], k, *u_max);
                let (state, obs) = env.step(u);
                trace.steps.push(TraceStep {
                    x: state.as_vec4(),
                    u: u.0,
                    y: obs.0,
                    target: targets[t],
                });
                y = obs.0;
            }
        }
        Controller::Random { u_max } => {
            let mut action_rng = rng::stream(seed, Purpose::PolicySampling, episode_path);
            for t in 0..steps {
                let u = Control([
                    action_rng.random_range(-u_max..*u_max),
                    action_rng.random_range(-u_max..*u_max),
                ]);
                let (state, obs) = env.step(u);
                trace.steps.push(TraceStep {
                    x: state.as_vec4(),
                    u: u.0,
                    y: obs.0,
                    target: targets[t],
                });
            }
        }
        Controller::Policy(pc) => {
            if pc.input == PolicyInput::Estimate && pc.transition.is_none() {
                return Err(EvalError::MissingTransition);
            }
            let tape = Tape::new();
            let bound_policy = pc.policy.bind(&tape, false);
            let bound_transition = pc.transition.as_ref().map(|t| t.bind(&tape, false));
            let mut h_p = bound_policy.initial_hidden(1);
            let mut h_t = bound_transition.as_ref().map(|b| b.initial_hidden(1));
            let mut action_rng = rng::stream(seed, Purpose::PolicySampling, episode_path);
            let mut model_rng = rng::stream(seed, Purpose::ModelSampling, episode_path);

            let mut y = y0.0;
            let mut estimate = y0.0;
            for t in 0..steps {
                let input_vec = match pc.input {
                    PolicyInput::Observation => y,
                    PolicyInput::Estimate => estimate,
                };
                let x_in = tape.constant(&[1, 4], input_vec.to_vec())?;
                let g_in = tape.constant(&[1, 4], targets[t].to_vec())?;
                let (u_t, _, _, h_next) =
                    bound_policy.forward(&x_in, &g_in, &h_p, &mut action_rng, pc.mode)?;
                h_p = h_next;
                let u_vals = u_t.value();
                let u = Control([u_vals[0], u_vals[1]]);
                let (state, obs) = env.step(u);
                if let (Some(bt), Some(ht)) = (&bound_transition, &h_t) {
                    let y_in = tape.constant(&[1, 4], y.to_vec())?;
                    let u_in = tape.constant(&[1, 2], u.0.to_vec())?;
                    let (x_hat, mu_x, _, ht_next) =
                        bt.predict_state(&y_in, &u_in, ht, &mut model_rng)?;
                    estimate = match pc.mode {
                        ActionMode::Sample => {
                            let v = x_hat.value();
                            [v[0], v[1], v[2], v[3]]
                        }
                        ActionMode::Mean => {
                            let v = mu_x.value();
                            [v[0], v[1], v[2], v[3]]
                        }
                    };
                    h_t = Some(ht_next);
                }
                trace.steps.push(TraceStep {
                    x: state.as_vec4(),
                    u: u.0,
                    y: obs.0,
                    target: targets[t],
                });
                y = obs.0;
            }
        }
    }
    Ok(trace)
}

/// Result of one eight-target evaluation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub controller: String,
    pub variant: TaskVariant,
    pub gamma_deg: f64,
    pub per_target: Vec<f64>,
    pub total: f64,
    /// Per-step distance to target, per target.
    pub distance_traces: Vec<Vec<f64>>,
    pub traces: Vec<EpisodeTrace>,
}

impl EvalReport {
    /// One CSV row per target: `controller,variant,gamma,target_idx,J`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("controller,variant,gamma,target_idx,J\n");
        for (k, j) in self.per_target.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{k},{j}",
                self.controller, self.variant, self.gamma_deg
            );
        }
        out
    }

    /// Trajectory plot: target markers (and paths when moving), one colored
    /// trace per episode, start cross.
    pub fn to_svg(&self) -> String {
        let mut plot = PlanePlot::new(PLANE_HALF_WIDTH);
        for (k, trace) in self.traces.iter().enumerate() {
            if let Some(first) = trace.steps.first() {
                plot.circle([first.target[0], first.target[1]], 0.03, "#2955a3", false);
            }
            let target_path: Vec<[f64; 2]> =
                trace.steps.iter().map(|s| [s.target[0], s.target[1]]).collect();
            if self.variant == TaskVariant::Moving {
                plot.polyline(&target_path, "#b9c6e0", 1.0);
            }
            let mut path = vec![[trace.x0[0], trace.x0[1]]];
            path.extend(trace.steps.iter().map(|s| [s.x[0], s.x[1]]));
            plot.polyline(&path, trace_color(k), 1.5);
        }
        plot.cross([0.0, 0.0], 0.04, "#c03030");
        plot.label(&format!(
            "{} {} gamma={} J={:.3}",
            self.controller, self.variant, self.gamma_deg, self.total
        ));
        plot.to_svg()
    }
}

/// Runs the eight targets in sequence, resetting the environment (and any
/// recurrent state) before each one.
pub fn evaluate(
    controller: &Controller,
    task: &ReachTask,
    params: &EnvParams,
    steps: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let gamma_deg = params.gamma.to_degrees();
    let mut per_target = Vec::with_capacity(NUM_TARGETS);
    let mut distance_traces = Vec::with_capacity(NUM_TARGETS);
    let mut traces = Vec::with_capacity(NUM_TARGETS);
    for (k, target_traj) in task.targets.iter().enumerate() {
        let path = [k as u64];
        let mut env = PlaneEnv::new(*params, seed, &path);
        let trace = run_episode(controller, &mut env, task.start, target_traj, steps, seed, &path)?;
        let positions: Vec<[f64; 2]> = trace.steps.iter().map(|s| [s.x[0], s.x[1]]).collect();
        let goal_positions: Vec<[f64; 2]> =
            target_traj[1..=steps].iter().map(|g| [g[0], g[1]]).collect();
        let j = performance(&positions, &goal_positions, params.dt)?;
        let distances: Vec<f64> = positions
            .iter()
            .zip(goal_positions.iter())
            .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
            .collect();
        per_target.push(j);
        distance_traces.push(distances);
        traces.push(trace);
    }
    let total = per_target.iter().sum();
    Ok(EvalReport {
        controller: controller.id().to_string(),
        variant: task.variant,
        gamma_deg,
        per_target,
        total,
        distance_traces,
        traces,
    })
}

/// Evaluates at every rotation angle in `gamma_degs`, leaving all other
/// parameters untouched.
pub fn perturbation_sweep(
    controller: &Controller,
    task: &ReachTask,
    params: &EnvParams,
    steps: usize,
    gamma_degs: &[f64],
    seed: u64,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut out = Vec::with_capacity(gamma_degs.len());
    for &deg in gamma_degs {
        let mut p = *params;
        p.gamma = deg.to_radians();
        out.push(evaluate(controller, task, &p, steps, seed)?);
    }
    Ok(out)
}

/// The default sweep grid: -120 to 120 degrees in 15-degree steps.
pub fn default_sweep_grid() -> Vec<f64> {
    (-8..=8).map(|i| i as f64 * 15.0).collect()
}

/// Combined sweep CSV, one row per angle: `controller,variant,gamma,J`.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("controller,variant,gamma,J\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{}", r.controller, r.variant, r.gamma_deg, r.total);
    }
    out
}

/// Scores autoregressive prediction: warm the transition model on recorded
/// steps, then let it run on its own mean predictions while replaying the
/// recorded actions. Returns the per-step Euclidean position error against
/// the recorded observations over the horizon.
pub fn autoregressive_position_errors(
    transition: &TransitionModel,
    episode: &EpisodeRecord,
    warmup: usize,
    horizon: usize,
) -> Result<Vec<f64>, EvalError> {
    if episode.len() < warmup + horizon || warmup == 0 || horizon == 0 {
        return Err(EvalError::EpisodeTooShort {
            len: episode.len(),
            warmup,
            horizon,
        });
    }
    let tape = Tape::new();
    let bound = transition.bind(&tape, false);
    let mut h = bound.initial_hidden(1);
    let mut estimate: Vec<f64> = episode.steps[0].y.to_vec();
    for t in 0..warmup {
        let y = tape.constant(&[1, 4], episode.steps[t].y.to_vec())?;
        let u = tape.constant(&[1, 2], episode.steps[t].u.to_vec())?;
        let (mu_d, _, h_next) = bound.forward(&y, &u, &h)?;
        h = h_next;
        let d = mu_d.value();
        let yv = &episode.steps[t].y;
        estimate = vec![yv[0] + d[0], yv[1] + d[1], yv[2] + d[2], yv[3] + d[3]];
    }
    let mut errors = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let truth = &episode.steps[warmup + i].y;
        let err = ((estimate[0] - truth[0]).powi(2) + (estimate[1] - truth[1]).powi(2)).sqrt();
        errors.push(err);
        if i + 1 == horizon {
            break;
        }
        let x_in = tape.constant(&[1, 4], estimate.clone())?;
        let u_in = tape.constant(&[1, 2], episode.steps[warmup + i].u.to_vec())?;
        let (mu_d, _, h_next) = bound.forward(&x_in, &u_in, &h)?;
        h = h_next;
        let d = mu_d.value();
        estimate = vec![
            estimate[0] + d[0],
            estimate[1] + d[1],
            estimate[2] + d[2],
            estimate[3] + d[3],
        ];
    }
    Ok(errors)
}

/// Straight-line run to a single fixed target, with closeness metrics.
#[derive(Debug, Clone, Copy)]
pub struct RolloutMetrics {
    pub j: f64,
    pub final_position_error: f64,
    /// Farthest the position ever travelled beyond the target along the
    /// start-to-target direction.
    pub overshoot: f64,
}

pub fn rollout_to_target(
    controller: &Controller,
    params: &EnvParams,
    start: [f64; 4],
    target: [f64; 4],
    steps: usize,
    seed: u64,
) -> Result<(EpisodeTrace, RolloutMetrics), EvalError> {
    let mut env = PlaneEnv::new(*params, seed, &[0]);
    let targets = vec![target; steps + 1];
    let trace = run_episode(controller, &mut env, start, &targets, steps, seed, &[0])?;
    let positions: Vec<[f64; 2]> = trace.steps.iter().map(|s| [s.x[0], s.x[1]]).collect();
    let goals: Vec<[f64; 2]> = vec![[target[0], target[1]]; steps];
    let j = performance(&positions, &goals, params.dt)?;
    let last = positions.last().expect("steps > 0");
    let final_position_error =
        ((last[0] - target[0]).powi(2) + (last[1] - target[1]).powi(2)).sqrt();
    let dir = [target[0] - start[0], target[1] - start[1]];
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(1e-12);
    let dir = [dir[0] / norm, dir[1] / norm];
    let overshoot = positions
        .iter()
        .map(|p| (p[0] - target[0]) * dir[0] + (p[1] - target[1]) * dir[1])
        .fold(0.0f64, f64::max);
    Ok((
        trace,
        RolloutMetrics {
            j,
            final_position_error,
            overshoot,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{solve_care, ReachSystem};

    #[test]
    fn stationary_targets_are_equidistant_at_45_degrees() {
        let task = make_task(TaskVariant::Stationary, 10, 0.02);
        assert_eq!(task.targets.len(), 8);
        for (k, traj) in task.targets.iter().enumerate() {
            let first = traj[0];
            let d = (first[0].powi(2) + first[1].powi(2)).sqrt();
            assert!((d - TARGET_DISTANCE).abs() < 1e-12, "target {k} distance {d}");
            let angle = first[1].atan2(first[0]).rem_euclid(2.0 * std::f64::consts::PI);
            let expect = (k as f64 * 45.0f64).to_radians();
            assert!((angle - expect).abs() < 1e-12, "target {k} angle {angle}");
            // Stationary: constant for every step.
            assert!(traj.iter().all(|g| *g == first));
        }
    }

    #[test]
    fn first_target_placements() {
        let task = make_task(TaskVariant::Stationary, 3, 0.02);
        let t0 = task.targets[0][0];
        assert!((t0[0] - 0.7).abs() < 1e-15 && t0[1].abs() < 1e-15);
        let t2 = task.targets[2][0];
        assert!(t2[0].abs() < 1e-12 && (t2[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn moving_target_zero_starts_clockwise() {
        let task = make_task(TaskVariant::Moving, 5, 0.02);
        let g0 = task.targets[0][0];
        assert_eq!(g0, [0.7, 0.0, 0.0, -0.5]);
        // Euler integration moves it down the -y axis.
        let g1 = task.targets[0][1];
        assert!((g1[1] + 0.01).abs() < 1e-15);
        assert!((g1[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn moving_targets_clip_at_the_plane() {
        let task = make_task(TaskVariant::Moving, 2000, 0.02);
        for traj in &task.targets {
            for g in traj {
                assert!(g[0].abs() <= PLANE_HALF_WIDTH + 1e-12);
                assert!(g[1].abs() <= PLANE_HALF_WIDTH + 1e-12);
            }
        }
    }

    #[test]
    fn performance_constant_distance() {
        let positions = vec![[0.0, 0.0]; 200];
        let targets = vec![[0.7, 0.0]; 200];
        let j = performance(&positions, &targets, 0.02).unwrap();
        assert!((j - 2.8).abs() < 1e-12);
    }

    #[test]
    fn performance_on_target_is_zero_and_velocity_free() {
        let positions = vec![[0.3, -0.4]; 50];
        let j = performance(&positions, &positions, 0.02).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn performance_matches_bruteforce_accumulation() {
        let mut rng = crate::rng::stream(9, Purpose::Test, &[5]);
        let positions: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let targets: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mut expect = 0.0;
        for i in 0..10 {
            let dx = positions[i][0] - targets[i][0];
            let dy = positions[i][1] - targets[i][1];
            expect += 0.02 * (dx * dx + dy * dy).sqrt();
        }
        let j = performance(&positions, &targets, 0.02).unwrap();
        assert!((j - expect).abs() < 1e-15);
    }

    #[test]
    fn performance_rejects_length_mismatch() {
        let err = performance(&[[0.0, 0.0]], &[], 0.02).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { .. }));
    }

    #[test]
    fn j_total_is_sum_of_targets() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 50, 0.02);
        let report = evaluate(&controller, &task, &EnvParams::noiseless(), 50, 3).unwrap();
        let sum: f64 = report.per_target.iter().sum();
        assert!((report.total - sum).abs() < 1e-12);
        assert_eq!(report.per_target.len(), 8);
    }

    #[test]
    fn lqr_reaches_every_stationary_target() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 200, 0.02);
        let report = evaluate(&controller, &task, &EnvParams::noiseless(), 200, 3).unwrap();
        for (k, trace) in report.traces.iter().enumerate() {
            let last = trace.steps.last().unwrap();
            let g = last.target;
            let err = ((last.x[0] - g[0]).powi(2) + (last.x[1] - g[1]).powi(2)).sqrt();
            assert!(err <= 0.02, "target {k}: final error {err}");
        }
    }

    #[test]
    fn appendix_scenario_reaches_with_minimal_overshoot() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let (_, metrics) = rollout_to_target(
            &controller,
            &EnvParams::noiseless(),
            [-0.5, 0.5, 0.0, 0.0],
            [0.5, -0.5, 0.0, 0.0],
            200,
            1,
        )
        .unwrap();
        assert!(metrics.final_position_error <= 0.02, "{metrics:?}");
        assert!(metrics.overshoot <= 0.1, "{metrics:?}");
    }

    #[test]
    fn target_equals_start_gives_near_zero_j() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let (_, metrics) = rollout_to_target(
            &controller,
            &EnvParams::noiseless(),
            [0.2, -0.3, 0.0, 0.0],
            [0.2, -0.3, 0.0, 0.0],
            200,
            1,
        )
        .unwrap();
        assert!(metrics.j < 1e-9, "{metrics:?}");
    }

    #[test]
    fn quarter_turn_rotation_breaks_the_lqr() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 200, 0.02);
        let baseline = evaluate(&controller, &task, &EnvParams::noiseless(), 200, 3).unwrap();
        let mut rotated = EnvParams::noiseless();
        rotated.gamma = 90.0f64.to_radians();
        let failed = evaluate(&controller, &task, &rotated, 200, 3).unwrap();
        assert!(
            failed.total >= 3.0 * baseline.total,
            "J(90deg) = {} vs J(0) = {}",
            failed.total,
            baseline.total
        );
    }

    #[test]
    fn lqr_sweep_is_monotone_in_rotation_magnitude() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 200, 0.02);
        let grid = default_sweep_grid();
        let reports =
            perturbation_sweep(&controller, &task, &EnvParams::noiseless(), 200, &grid, 3).unwrap();
        assert_eq!(reports.len(), grid.len());
        let j_at = |deg: f64| {
            reports
                .iter()
                .find(|r| (r.gamma_deg - deg).abs() < 1e-9)
                .unwrap()
                .total
        };
        for sign in [1.0, -1.0] {
            let mut prev = j_at(0.0);
            for step in 1..=6 {
                let cur = j_at(sign * 15.0 * step as f64);
                assert!(
                    cur >= prev,
                    "J should not improve as |gamma| grows: {cur} < {prev} at {}",
                    sign * 15.0 * step as f64
                );
                prev = cur;
            }
        }
    }

    #[test]
    fn sweep_csv_has_one_row_per_gamma() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 20, 0.02);
        let grid = [0.0, 15.0, -15.0];
        let reports =
            perturbation_sweep(&controller, &task, &EnvParams::noiseless(), 20, &grid, 3).unwrap();
        let csv = sweep_csv(&reports);
        assert_eq!(csv.lines().count(), 1 + grid.len());
    }

    #[test]
    fn single_angle_sweep_matches_plain_evaluate() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Moving, 60, 0.02);
        let params = EnvParams::noiseless();
        let direct = evaluate(&controller, &task, &params, 60, 3).unwrap();
        let swept = perturbation_sweep(&controller, &task, &params, 60, &[0.0], 3).unwrap();
        assert_eq!(direct.total, swept[0].total);
        assert_eq!(direct.per_target, swept[0].per_target);
    }

    #[test]
    fn untrained_transition_diverges_autoregressively() {
        use crate::memory::{EpisodeMeta, EpisodeRecord};
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let mut env = PlaneEnv::new(EnvParams::noiseless(), 5, &[0]);
        let targets = vec![[0.5, -0.5, 0.0, 0.0]; 201];
        let trace = run_episode(&controller, &mut env, [0.0; 4], &targets, 200, 5, &[0]).unwrap();
        let record = EpisodeRecord::from_trace(
            EpisodeMeta {
                seed: 5,
                iteration: 0,
                variant: "stationary".to_string(),
            },
            &trace,
        );
        let mut init_rng = crate::rng::stream(17, Purpose::Init, &[0]);
        let model = TransitionModel::new(32, &crate::nets::InitConfig::default(), &mut init_rng);
        let errors = autoregressive_position_errors(&model, &record, 30, 100).unwrap();
        assert_eq!(errors.len(), 100);
        let max = errors.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(max > 0.1, "untrained model should drift: max err {max}");
    }

    #[test]
    fn autoregressive_eval_rejects_short_episodes() {
        use crate::memory::{EpisodeMeta, EpisodeRecord};
        let trace = EpisodeTrace::new([0.0; 4], [0.0; 4]);
        let record = EpisodeRecord::from_trace(
            EpisodeMeta {
                seed: 0,
                iteration: 0,
                variant: "stationary".to_string(),
            },
            &trace,
        );
        let model = TransitionModel::zeros(8);
        assert!(matches!(
            autoregressive_position_errors(&model, &record, 30, 100),
            Err(EvalError::EpisodeTooShort { .. })
        ));
    }

    #[test]
    fn estimate_input_mode_runs_and_differs_from_observation_mode() {
        use crate::nets::{InitConfig, PolicyModel};
        let mut init_rng = crate::rng::stream(3, Purpose::Init, &[7]);
        let policy = PolicyModel::new(16, 1.0, &InitConfig::default(), &mut init_rng);
        let transition = TransitionModel::new(16, &InitConfig::default(), &mut init_rng);
        let run = |input: PolicyInput| {
            let controller = Controller::Policy(Box::new(PolicyController {
                policy: policy.clone(),
                mode: ActionMode::Mean,
                input,
                transition: Some(transition.clone()),
            }));
            let mut env = PlaneEnv::new(EnvParams::noiseless(), 9, &[0]);
            let targets = vec![[0.7, 0.0, 0.0, 0.0]; 41];
            run_episode(&controller, &mut env, [0.0; 4], &targets, 40, 9, &[0]).unwrap()
        };
        let with_estimate = run(PolicyInput::Estimate);
        let with_observation = run(PolicyInput::Observation);
        assert_eq!(with_estimate.len(), 40);
        // A random transition model's estimates differ from the raw
        // observations, so the two input modes act differently.
        assert_ne!(with_estimate.steps, with_observation.steps);
    }

    #[test]
    fn estimate_input_without_transition_is_an_error() {
        use crate::nets::{InitConfig, PolicyModel};
        let mut init_rng = crate::rng::stream(3, Purpose::Init, &[8]);
        let policy = PolicyModel::new(8, 1.0, &InitConfig::default(), &mut init_rng);
        let controller = Controller::Policy(Box::new(PolicyController {
            policy,
            mode: ActionMode::Mean,
            input: PolicyInput::Estimate,
            transition: None,
        }));
        let mut env = PlaneEnv::new(EnvParams::noiseless(), 9, &[0]);
        let targets = vec![[0.7, 0.0, 0.0, 0.0]; 11];
        let err = run_episode(&controller, &mut env, [0.0; 4], &targets, 10, 9, &[0]).unwrap_err();
        assert!(matches!(err, EvalError::MissingTransition));
    }

    #[test]
    fn report_csv_shape() {
        let gain = solve_care(&ReachSystem::point_mass(5.0)).unwrap();
        let controller = Controller::from_gain(&gain, 1.0);
        let task = make_task(TaskVariant::Stationary, 10, 0.02);
        let report = evaluate(&controller, &task, &EnvParams::noiseless(), 10, 3).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("controller,variant,gamma,target_idx,J\n"));
        assert_eq!(csv.lines().count(), 9);
        let svg = report.to_svg();
        assert!(svg.contains("polyline"));
    }
}

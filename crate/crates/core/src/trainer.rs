//! Training orchestration: interleaved data collection, transition-model
//! updates on replayed episodes, and policy updates through imagined
//! rollouts inside the learned model.
//!
//! The two networks are trained by two fully separate optimizers. During a
//! policy update the transition parameters are bound as constants, so the
//! policy loss cannot push the transition model toward predicting targets;
//! its gradient with respect to those parameters is structurally zero.

use crate::autodiff::{Tape, Tensor};
use crate::config::TrainConfig;
use crate::env::PlaneEnv;
use crate::eval::{
    self, evaluate, make_task, Controller, PolicyController, PolicyInput, TaskVariant,
    TARGET_DISTANCE, TARGET_SPEED,
};
use crate::checkpoint::{CheckpointError, Container};
use crate::losses::TargetGain;
use crate::memory::{EpisodeMeta, EpisodeRecord, MemoryBuffer};
use crate::nets::{ActionMode, InitConfig, PolicyModel, TransitionModel};
use crate::optim::{Adam, GradBuffer, OptimError};
use crate::rng::{self, Purpose};
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("non-finite {which} loss at iteration {iteration}, update {update}")]
    NonFiniteLoss {
        which: &'static str,
        iteration: u64,
        update: usize,
    },
    #[error("log line {line}: {detail}")]
    BadLog { line: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const TRAINLOG_HEADER: &str = "iter,loss_t,loss_p,mse_1step,J_stationary,J_moving,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    pub loss_t: f64,
    pub loss_p: f64,
    pub mse_1step: f64,
    pub j_stationary: f64,
    pub j_moving: f64,
    pub seconds: f64,
}

/// Per-iteration records plus run-level counters. The counters track only
/// the training interaction itself; evaluation and held-out episodes do
/// not touch them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
    pub episodes_total: u64,
    pub env_steps_total: u64,
    pub transition_updates_total: u64,
    pub policy_updates_total: u64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAINLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter, r.loss_t, r.loss_p, r.mse_1step, r.j_stationary, r.j_moving, r.seconds
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<IterationRecord>, TrainError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != TRAINLOG_HEADER {
            return Err(TrainError::BadLog {
                line: 1,
                detail: format!("bad header '{header}'"),
            });
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(TrainError::BadLog {
                    line: lineno + 2,
                    detail: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let parse = |f: &str| -> Result<f64, TrainError> {
                f.parse().map_err(|_| TrainError::BadLog {
                    line: lineno + 2,
                    detail: format!("cannot parse '{f}'"),
                })
            };
            records.push(IterationRecord {
                iter: fields[0].parse().map_err(|_| TrainError::BadLog {
                    line: lineno + 2,
                    detail: format!("cannot parse iteration '{}'", fields[0]),
                })?,
                loss_t: parse(fields[1])?,
                loss_p: parse(fields[2])?,
                mse_1step: parse(fields[3])?,
                j_stationary: parse(fields[4])?,
                j_moving: parse(fields[5])?,
                seconds: parse(fields[6])?,
            });
        }
        Ok(records)
    }
}

/// Initial model pair for a configuration; fully determined by the seed.
pub fn init_models(config: &TrainConfig) -> (TransitionModel, PolicyModel) {
    let init_t = InitConfig {
        logvar_bias: config.transition_logvar_bias_init,
    };
    let init_p = InitConfig {
        logvar_bias: config.policy_logvar_bias_init,
    };
    let mut rng_t = rng::stream(config.seed, Purpose::Init, &[0]);
    let mut rng_p = rng::stream(config.seed, Purpose::Init, &[1]);
    let transition = TransitionModel::new(config.transition_hidden_size, &init_t, &mut rng_t);
    let policy = PolicyModel::new(
        config.policy_hidden_size,
        config.control_range,
        &init_p,
        &mut rng_p,
    );
    (transition, policy)
}

/// Target trajectory for one training episode: a uniformly random direction
/// at the benchmark distance, stationary or launched clockwise like the
/// benchmark's moving targets.
fn training_targets(config: &TrainConfig, iteration: u64, episode: u64) -> Vec<[f64; 4]> {
    let mut task_rng = rng::stream(config.seed, Purpose::Task, &[iteration, episode]);
    let angle = task_rng.random_range(0.0..std::f64::consts::TAU);
    let pos0 = [TARGET_DISTANCE * angle.cos(), TARGET_DISTANCE * angle.sin()];
    let vel = match config.task_variant {
        TaskVariant::Stationary => [0.0, 0.0],
        TaskVariant::Moving => [TARGET_SPEED * angle.sin(), -TARGET_SPEED * angle.cos()],
    };
    let mut traj = Vec::with_capacity(config.episode_steps + 1);
    let mut pos = pos0;
    traj.push([pos[0], pos[1], vel[0], vel[1]]);
    for _ in 0..config.episode_steps {
        for i in 0..2 {
            pos[i] = (pos[i] + config.time_step * vel[i])
                .clamp(-config.position_range, config.position_range);
        }
        traj.push([pos[0], pos[1], vel[0], vel[1]]);
    }
    traj
}

/// Episodes that never enter the replay buffer, driven by the untrained
/// policy. They stay fixed for the whole run, so one-step prediction scores
/// are comparable across iterations (and across resumes).
pub fn heldout_episodes(config: &TrainConfig) -> Result<Vec<EpisodeRecord>, TrainError> {
    let (transition, policy) = init_models(config);
    let controller = controller_for(config, &transition, &policy, ActionMode::Sample);
    let mut out = Vec::with_capacity(config.heldout_episodes);
    for e in 0..config.heldout_episodes {
        let path = [u64::MAX, e as u64];
        let targets = training_targets(config, u64::MAX, e as u64);
        let mut env = PlaneEnv::new(config.env_params(), config.seed, &path);
        let trace = eval::run_episode(
            &controller,
            &mut env,
            [0.0; 4],
            &targets,
            config.episode_steps,
            config.seed,
            &path,
        )?;
        out.push(EpisodeRecord::from_trace(
            EpisodeMeta {
                seed: config.seed,
                iteration: u64::MAX,
                variant: config.task_variant.to_string(),
            },
            &trace,
        ));
    }
    Ok(out)
}

fn controller_for(
    config: &TrainConfig,
    transition: &TransitionModel,
    policy: &PolicyModel,
    mode: ActionMode,
) -> Controller {
    Controller::Policy(Box::new(PolicyController {
        policy: policy.clone(),
        mode,
        input: config.policy_input,
        transition: match config.policy_input {
            PolicyInput::Observation => None,
            PolicyInput::Estimate => Some(transition.clone()),
        },
    }))
}

/// Mean squared one-step prediction error of the mean head over a set of
/// episodes (averaged over episodes, steps, and state dimensions).
pub fn one_step_mse(model: &TransitionModel, episodes: &[EpisodeRecord]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let mut h = bound.initial_hidden(1);
        for s in &ep.steps {
            let y = tape.constant(&[1, 4], s.y.to_vec()).expect("shape");
            let u = tape.constant(&[1, 2], s.u.to_vec()).expect("shape");
            let (mu_d, _, h_next) = bound.forward(&y, &u, &h).expect("shapes agree");
            h = h_next;
            let d = mu_d.value();
            for i in 0..4 {
                let pred = s.y[i] + d[i];
                let err = pred - s.y_next[i];
                sum += err * err;
                count += 1;
            }
        }
    }
    sum / count.max(1) as f64
}

pub struct Trainer {
    pub config: TrainConfig,
    transition: TransitionModel,
    policy: PolicyModel,
    opt_transition: Adam,
    opt_policy: Adam,
    memory: MemoryBuffer,
    heldout: Vec<EpisodeRecord>,
    log: TrainLog,
    iter_done: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let (transition, policy) = init_models(&config);
        let heldout = heldout_episodes(&config)?;
        Ok(Trainer {
            opt_transition: Adam::new(config.transition_learning_rate),
            opt_policy: Adam::new(config.policy_learning_rate),
            memory: MemoryBuffer::new(config.memory_size, config.episode_steps),
            heldout,
            log: TrainLog::default(),
            iter_done: 0,
            config,
            transition,
            policy,
        })
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn iterations_done(&self) -> u64 {
        self.iter_done
    }

    pub fn memory(&self) -> &MemoryBuffer {
        &self.memory
    }

    pub fn heldout(&self) -> &[EpisodeRecord] {
        &self.heldout
    }

    /// Plays out `episodes_per_iteration` episodes with the current policy
    /// (sampled actions) and pushes them into memory.
    fn collect_episodes(&mut self) -> Result<(), TrainError> {
        let controller = controller_for(
            &self.config,
            &self.transition,
            &self.policy,
            ActionMode::Sample,
        );
        let iteration = self.iter_done;
        for e in 0..self.config.episodes_per_iteration {
            let path = [iteration, e as u64];
            let targets = training_targets(&self.config, iteration, e as u64);
            let mut env = PlaneEnv::new(self.config.env_params(), self.config.seed, &path);
            let trace = eval::run_episode(
                &controller,
                &mut env,
                [0.0; 4],
                &targets,
                self.config.episode_steps,
                self.config.seed,
                &path,
            )?;
            self.memory.push(EpisodeRecord::from_trace(
                EpisodeMeta {
                    seed: self.config.seed,
                    iteration,
                    variant: self.config.task_variant.to_string(),
                },
                &trace,
            ))?;
            self.log.episodes_total += 1;
            self.log.env_steps_total += self.config.episode_steps as u64;
        }
        Ok(())
    }

    /// One teacher-forced pass over a chunk of episodes. Returns the raw
    /// (unnormalized) likelihood sum and the parameter gradients of it.
    fn transition_chunk_pass(
        &self,
        episodes: &[Arc<EpisodeRecord>],
    ) -> Result<(f64, Vec<Option<Vec<f64>>>), TrainError> {
        let b = episodes.len();
        let t_steps = self.config.episode_steps;
        let eps = self.config.variance_floor;
        let tape = Tape::new();
        let bound = self.transition.bind(&tape, true);
        let mut h = bound.initial_hidden(b);
        let mut raw: Option<Tensor> = None;
        for t in 0..t_steps {
            let mut y_data = Vec::with_capacity(b * 4);
            let mut u_data = Vec::with_capacity(b * 2);
            let mut next_data = Vec::with_capacity(b * 4);
            for ep in episodes {
                let s = &ep.steps[t];
                y_data.extend_from_slice(&s.y);
                u_data.extend_from_slice(&s.u);
                next_data.extend_from_slice(&s.y_next);
            }
            let y = tape.constant(&[b, 4], y_data)?;
            let u = tape.constant(&[b, 2], u_data)?;
            let y_next = tape.constant(&[b, 4], next_data)?;
            let (mu_d, var_d, h_next) = bound.forward(&y, &u, &h)?;
            h = h_next;
            let mu_x = y.add(&mu_d)?;
            let var_floored = var_d.clamp_min(eps);
            let term = var_floored
                .log()
                .add(&mu_x.sub(&y_next)?.square().div(&var_floored)?)?
                .sum();
            raw = Some(match raw {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let raw = raw.expect("episode_steps > 0").affine(0.5, 0.0);
        raw.backward()?;
        let grads = bound.leaves.iter().map(|l| l.grad()).collect();
        Ok((raw.scalar_value(), grads))
    }

    /// Runs the transition updates for this iteration; returns the mean
    /// normalized loss over the batches.
    fn update_transition(&mut self) -> Result<f64, TrainError> {
        let cfg = &self.config;
        let (n_batches, batch_size) = (
            cfg.transition_batches_per_iteration,
            cfg.transition_batch_size,
        );
        let norm = 1.0 / (cfg.episode_steps * batch_size) as f64;
        let mut total = 0.0;
        for b in 0..n_batches {
            let mut sample_rng = rng::stream(
                cfg.seed,
                Purpose::MemorySampling,
                &[self.iter_done, 0, b as u64],
            );
            let episodes = self.memory.sample(batch_size, &mut sample_rng)?;
            let mut grads = GradBuffer::zeros_like(self.transition.params());
            let mut raw_sum = 0.0;
            for chunk in episodes.chunks(cfg.batch_chunk) {
                let (raw, g) = self.transition_chunk_pass(chunk)?;
                raw_sum += raw;
                grads.accumulate(&g);
            }
            let loss = raw_sum * norm;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    which: "transition",
                    iteration: self.iter_done,
                    update: b,
                });
            }
            grads.scale(norm);
            if cfg.grad_clip_norm > 0.0 {
                grads.clip_global_norm(cfg.grad_clip_norm);
            }
            self.opt_transition
                .step(self.transition.params_mut(), &grads)?;
            self.log.transition_updates_total += 1;
            total += loss;
        }
        Ok(total / n_batches as f64)
    }

    /// One warm-up + imagined-unroll pass over a chunk of episodes for one
    /// segment. The transition model is bound frozen; gradients reach only
    /// the policy parameters.
    #[allow(clippy::too_many_arguments)]
    fn policy_segment_pass(
        &self,
        episodes: &[Arc<EpisodeRecord>],
        seg: usize,
        batch_index: u64,
        chunk_index: u64,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>), TrainError> {
        let cfg = &self.config;
        let (b, w, r) = (episodes.len(), cfg.warmup_steps, cfg.unroll_steps);
        let seg_start = seg * w;
        let tape = Tape::new();
        let bound_t = self.transition.bind(&tape, false);
        let bound_p = self.policy.bind(&tape, true);
        let mut h_t = bound_t.initial_hidden(b);
        let mut h_p = bound_p.initial_hidden(b);
        let path = [self.iter_done, batch_index, chunk_index, seg as u64];
        let mut model_rng = rng::stream(cfg.seed, Purpose::ModelSampling, &path);
        let mut action_rng = rng::stream(cfg.seed, Purpose::PolicySampling, &path);

        // Warm up both recurrent states on recorded steps (teacher forcing).
        let mut x_hat: Option<Tensor> = None;
        for t in seg_start..seg_start + w {
            let mut y_data = Vec::with_capacity(b * 4);
            let mut u_data = Vec::with_capacity(b * 2);
            let mut g_data = Vec::with_capacity(b * 4);
            for ep in episodes {
                let s = &ep.steps[t];
                y_data.extend_from_slice(&s.y);
                u_data.extend_from_slice(&s.u);
                g_data.extend_from_slice(&s.target);
            }
            let y = tape.constant(&[b, 4], y_data)?;
            let u = tape.constant(&[b, 2], u_data)?;
            let g = tape.constant(&[b, 4], g_data)?;
            let (xh, _, _, ht_next) = bound_t.predict_state(&y, &u, &h_t, &mut model_rng)?;
            h_t = ht_next;
            x_hat = Some(xh);
            let (_, _, _, hp_next) =
                bound_p.forward(&y, &g, &h_p, &mut action_rng, ActionMode::Mean)?;
            h_p = hp_next;
        }
        let mut x_hat = x_hat.expect("warmup_steps > 0");

        // Targets held at the last warm-up step for the imagined horizon.
        let mut g_data = Vec::with_capacity(b * 4);
        for ep in episodes {
            g_data.extend_from_slice(&ep.steps[seg_start + w - 1].target);
        }
        let g_imag = tape.constant(&[b, 4], g_data.clone())?;
        let mut g_tiled = Vec::with_capacity(b * r * 4);
        for row in g_data.chunks(4) {
            for _ in 0..r {
                g_tiled.extend_from_slice(row);
            }
        }
        let g_full = tape.constant(&[b, r, 4], g_tiled)?;

        // Alternate policy and transition autoregressively on the sampled
        // state estimate.
        let mut imagined = Vec::with_capacity(r);
        for _ in 0..r {
            let (u, _, _, hp_next) =
                bound_p.forward(&x_hat, &g_imag, &h_p, &mut action_rng, ActionMode::Sample)?;
            h_p = hp_next;
            let (xh, _, _, ht_next) = bound_t.predict_state(&x_hat, &u, &h_t, &mut model_rng)?;
            h_t = ht_next;
            x_hat = xh;
            imagined.push(x_hat.clone());
        }
        let refs: Vec<&Tensor> = imagined.iter().collect();
        let stacked = Tensor::concat(&refs)?.reshape(&[b, r, 4])?;
        let diff_sq = stacked.sub(&g_full)?.square().reshape(&[b * r, 4])?;
        let gain = tape.constant(&[1, 4], TargetGain::position_only().0.to_vec())?;
        let raw = diff_sq.mul(&gain)?.sum();
        raw.backward()?;
        let grads = bound_p.leaves.iter().map(|l| l.grad()).collect();
        Ok((raw.scalar_value(), grads))
    }

    /// Runs the policy updates for this iteration; returns the mean
    /// normalized loss over the batches. The transition parameters are
    /// untouched by construction.
    fn update_policy(&mut self) -> Result<f64, TrainError> {
        let cfg = &self.config;
        let (n_batches, batch_size) = (cfg.policy_batches_per_iteration, cfg.policy_batch_size);
        let n_rollouts = cfg.episode_steps / cfg.warmup_steps;
        let norm = 1.0 / (batch_size * cfg.unroll_steps * n_rollouts) as f64;
        let mut total = 0.0;
        for b in 0..n_batches {
            let mut sample_rng = rng::stream(
                cfg.seed,
                Purpose::MemorySampling,
                &[self.iter_done, 1, b as u64],
            );
            let episodes = self.memory.sample(batch_size, &mut sample_rng)?;
            let mut grads = GradBuffer::zeros_like(self.policy.params());
            let mut raw_sum = 0.0;
            for (ci, chunk) in episodes.chunks(cfg.batch_chunk).enumerate() {
                for seg in 0..n_rollouts {
                    let (raw, g) = self.policy_segment_pass(chunk, seg, b as u64, ci as u64)?;
                    raw_sum += raw;
                    grads.accumulate(&g);
                }
            }
            let loss = raw_sum * norm;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    which: "policy",
                    iteration: self.iter_done,
                    update: b,
                });
            }
            grads.scale(norm);
            if cfg.grad_clip_norm > 0.0 {
                grads.clip_global_norm(cfg.grad_clip_norm);
            }
            self.opt_policy.step(self.policy.params_mut(), &grads)?;
            self.log.policy_updates_total += 1;
            total += loss;
        }
        Ok(total / n_batches as f64)
    }

    /// Normalized transition NLL evaluated on a fixed set of episodes
    /// without touching any parameters (diagnostic).
    pub fn transition_nll_on(&self, episodes: &[EpisodeRecord]) -> Result<f64, TrainError> {
        let arcs: Vec<Arc<EpisodeRecord>> = episodes.iter().cloned().map(Arc::new).collect();
        let mut raw = 0.0;
        for chunk in arcs.chunks(self.config.batch_chunk) {
            let (r, _) = self.transition_chunk_pass(chunk)?;
            raw += r;
        }
        Ok(raw / (self.config.episode_steps * episodes.len()) as f64)
    }

    /// Benchmark J with the current policy in mean mode on a noiseless (by
    /// default) environment.
    pub fn evaluate_j(&self, variant: TaskVariant) -> Result<f64, TrainError> {
        let task = make_task(variant, self.config.episode_steps, self.config.time_step);
        let controller = controller_for(&self.config, &self.transition, &self.policy, ActionMode::Mean);
        let report = evaluate(
            &controller,
            &task,
            &self.config.eval_env_params(),
            self.config.episode_steps,
            self.config.seed,
        )?;
        Ok(report.total)
    }

    pub fn run_iteration(&mut self) -> Result<IterationRecord, TrainError> {
        let started = Instant::now();
        self.collect_episodes()?;
        let loss_t = self.update_transition()?;
        let loss_p = self.update_policy()?;
        let mse_1step = one_step_mse(&self.transition, &self.heldout);
        let j_stationary = self.evaluate_j(TaskVariant::Stationary)?;
        let j_moving = self.evaluate_j(TaskVariant::Moving)?;
        self.iter_done += 1;
        let seconds = if self.config.log_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let record = IterationRecord {
            iter: self.iter_done,
            loss_t,
            loss_p,
            mse_1step,
            j_stationary,
            j_moving,
            seconds,
        };
        self.log.records.push(record);
        Ok(record)
    }

    /// Runs the remaining iterations, invoking the callback after each one
    /// (for checkpointing and logging).
    pub fn run<F>(&mut self, mut on_iteration: F) -> Result<(), TrainError>
    where
        F: FnMut(&Trainer, &IterationRecord) -> Result<(), TrainError>,
    {
        while self.iter_done < self.config.iterations {
            let record = self.run_iteration()?;
            on_iteration(self, &record)?;
        }
        Ok(())
    }

    /// Persists everything needed to continue this run: models, optimizer
    /// moments, counters, configuration, the replay buffer, and the log.
    pub fn save_state(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut c = Container::new("trainer-state");
        c.set_meta("iteration", self.iter_done);
        c.set_meta("config", self.config.emit());
        c.set_meta("episodes_total", self.log.episodes_total);
        c.set_meta("env_steps_total", self.log.env_steps_total);
        c.set_meta("transition_updates_total", self.log.transition_updates_total);
        c.set_meta("policy_updates_total", self.log.policy_updates_total);
        self.transition.params().store(&mut c, "t.");
        self.policy.params().store(&mut c, "p.");
        self.opt_transition.store(&mut c, "opt_t.", self.transition.params());
        self.opt_policy.store(&mut c, "opt_p.", self.policy.params());
        c.write(&dir.join("state.ck"))?;
        self.memory.save_dir(&dir.join("memory"))?;
        let log_path = dir.join("log.csv");
        std::fs::write(&log_path, self.log.to_csv()).map_err(|source| TrainError::Io {
            path: log_path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    /// Rebuilds a trainer from [`save_state`] output and continues from the
    /// recorded iteration.
    pub fn resume(dir: &Path) -> Result<Self, TrainError> {
        let c = Container::read_tagged(&dir.join("state.ck"), "trainer-state")?;
        let config_text: String = c.meta_parsed("config", "string")?;
        let config = TrainConfig::parse(&config_text)?;
        let iter_done: u64 = c.meta_parsed("iteration", "u64")?;
        let (mut transition, mut policy) = init_models(&config);
        transition.params_mut().load(&c, "t.")?;
        policy.params_mut().load(&c, "p.")?;
        let opt_transition = Adam::load(&c, "opt_t.", transition.params())?;
        let opt_policy = Adam::load(&c, "opt_p.", policy.params())?;
        let memory = MemoryBuffer::load_dir(
            &dir.join("memory"),
            config.memory_size,
            config.episode_steps,
        )?;
        let heldout = heldout_episodes(&config)?;
        let log_path = dir.join("log.csv");
        let records = if log_path.exists() {
            let text = std::fs::read_to_string(&log_path).map_err(|source| TrainError::Io {
                path: log_path.display().to_string(),
                source,
            })?;
            TrainLog::parse_csv(&text)?
        } else {
            Vec::new()
        };
        let log = TrainLog {
            records,
            episodes_total: c.meta_parsed("episodes_total", "u64")?,
            env_steps_total: c.meta_parsed("env_steps_total", "u64")?,
            transition_updates_total: c.meta_parsed("transition_updates_total", "u64")?,
            policy_updates_total: c.meta_parsed("policy_updates_total", "u64")?,
        };
        Ok(Trainer {
            config,
            transition,
            policy,
            opt_transition,
            opt_policy,
            memory,
            heldout,
            log,
            iter_done,
        })
    }
}

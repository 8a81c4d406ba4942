//! Flat `key = value` run configuration.
//!
//! Keys mirror the task and model hyperparameter names; unknown keys are
//! hard errors that suggest the nearest valid name. `emit` produces a
//! canonical snapshot that parses back to the same configuration.

use crate::env::EnvParams;
use crate::eval::{PolicyInput, TaskVariant};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown key '{key}' (did you mean '{suggestion}'?)")]
    UnknownKey { key: String, suggestion: String },
    #[error("key '{key}': cannot parse '{value}' as {kind}")]
    BadValue {
        key: String,
        value: String,
        kind: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    // Task
    pub episode_steps: usize,
    pub episodes_per_iteration: usize,
    pub iterations: u64,
    pub time_step: f64,
    pub memory_size: usize,
    pub rotation_angle_deg: f64,
    pub acceleration_constant: f64,
    pub process_noise_std: f64,
    pub observation_noise_std: f64,
    pub position_range: f64,
    pub velocity_range: f64,
    pub control_range: f64,
    pub acceleration_range: f64,
    pub task_variant: TaskVariant,
    pub seed: u64,
    // Transition model
    pub transition_hidden_size: usize,
    pub transition_learning_rate: f64,
    pub transition_batches_per_iteration: usize,
    pub transition_batch_size: usize,
    // Policy model
    pub policy_hidden_size: usize,
    pub policy_learning_rate: f64,
    pub policy_batches_per_iteration: usize,
    pub policy_batch_size: usize,
    pub warmup_steps: usize,
    pub unroll_steps: usize,
    // Implementation knobs
    pub variance_floor: f64,
    pub transition_logvar_bias_init: f64,
    pub policy_logvar_bias_init: f64,
    pub grad_clip_norm: f64,
    pub policy_input: PolicyInput,
    pub heldout_episodes: usize,
    pub eval_noise: bool,
    pub batch_chunk: usize,
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episode_steps: 200,
            episodes_per_iteration: 10,
            iterations: 150,
            time_step: 0.02,
            memory_size: 1500,
            rotation_angle_deg: 0.0,
            acceleration_constant: 5.0,
            process_noise_std: 0.001,
            observation_noise_std: 0.001,
            position_range: 1.0,
            velocity_range: 1.0,
            control_range: 1.0,
            acceleration_range: 5.0,
            task_variant: TaskVariant::Stationary,
            seed: 42,
            transition_hidden_size: 256,
            transition_learning_rate: 0.0005,
            transition_batches_per_iteration: 30,
            transition_batch_size: 1024,
            policy_hidden_size: 256,
            policy_learning_rate: 0.0005,
            policy_batches_per_iteration: 30,
            policy_batch_size: 1024,
            warmup_steps: 30,
            unroll_steps: 20,
            variance_floor: 1e-6,
            transition_logvar_bias_init: -6.0,
            policy_logvar_bias_init: 0.0,
            grad_clip_norm: 0.0,
            policy_input: PolicyInput::Observation,
            heldout_episodes: 10,
            eval_noise: false,
            batch_chunk: 64,
            log_wall_time: true,
        }
    }
}

const KEYS: &[&str] = &[
    "episode_steps",
    "episodes_per_iteration",
    "iterations",
    "time_step",
    "memory_size",
    "rotation_angle_deg",
    "acceleration_constant",
    "process_noise_std",
    "observation_noise_std",
    "position_range",
    "velocity_range",
    "control_range",
    "acceleration_range",
    "task_variant",
    "seed",
    "transition_hidden_size",
    "transition_learning_rate",
    "transition_batches_per_iteration",
    "transition_batch_size",
    "policy_hidden_size",
    "policy_learning_rate",
    "policy_batches_per_iteration",
    "policy_batch_size",
    "warmup_steps",
    "unroll_steps",
    "variance_floor",
    "transition_logvar_bias_init",
    "policy_logvar_bias_init",
    "grad_clip_norm",
    "policy_input",
    "heldout_episodes",
    "eval_noise",
    "batch_chunk",
    "log_wall_time",
];

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur[j + 1] = (prev[j + 1] + 1).min(cur[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn nearest_key(key: &str) -> String {
    KEYS.iter()
        .min_by_key(|k| levenshtein(key, k))
        .unwrap_or(&KEYS[0])
        .to_string()
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: lineno + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(
            key: &str,
            value: &str,
            kind: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                kind,
            })
        }
        match key {
            "episode_steps" => self.episode_steps = num(key, value, "usize")?,
            "episodes_per_iteration" => self.episodes_per_iteration = num(key, value, "usize")?,
            "iterations" => self.iterations = num(key, value, "u64")?,
            "time_step" => self.time_step = num(key, value, "f64")?,
            "memory_size" => self.memory_size = num(key, value, "usize")?,
            "rotation_angle_deg" => self.rotation_angle_deg = num(key, value, "f64")?,
            "acceleration_constant" => self.acceleration_constant = num(key, value, "f64")?,
            "process_noise_std" => self.process_noise_std = num(key, value, "f64")?,
            "observation_noise_std" => self.observation_noise_std = num(key, value, "f64")?,
            "position_range" => self.position_range = num(key, value, "f64")?,
            "velocity_range" => self.velocity_range = num(key, value, "f64")?,
            "control_range" => self.control_range = num(key, value, "f64")?,
            "acceleration_range" => self.acceleration_range = num(key, value, "f64")?,
            "task_variant" => {
                self.task_variant = value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    kind: "stationary|moving",
                })?
            }
            "seed" => self.seed = num(key, value, "u64")?,
            "transition_hidden_size" => self.transition_hidden_size = num(key, value, "usize")?,
            "transition_learning_rate" => self.transition_learning_rate = num(key, value, "f64")?,
            "transition_batches_per_iteration" => {
                self.transition_batches_per_iteration = num(key, value, "usize")?
            }
            "transition_batch_size" => self.transition_batch_size = num(key, value, "usize")?,
            "policy_hidden_size" => self.policy_hidden_size = num(key, value, "usize")?,
            "policy_learning_rate" => self.policy_learning_rate = num(key, value, "f64")?,
            "policy_batches_per_iteration" => {
                self.policy_batches_per_iteration = num(key, value, "usize")?
            }
            "policy_batch_size" => self.policy_batch_size = num(key, value, "usize")?,
            "warmup_steps" => self.warmup_steps = num(key, value, "usize")?,
            "unroll_steps" => self.unroll_steps = num(key, value, "usize")?,
            "variance_floor" => self.variance_floor = num(key, value, "f64")?,
            "transition_logvar_bias_init" => {
                self.transition_logvar_bias_init = num(key, value, "f64")?
            }
            "policy_logvar_bias_init" => self.policy_logvar_bias_init = num(key, value, "f64")?,
            "grad_clip_norm" => self.grad_clip_norm = num(key, value, "f64")?,
            "policy_input" => {
                self.policy_input = match value {
                    "observation" => PolicyInput::Observation,
                    "estimate" => PolicyInput::Estimate,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            kind: "observation|estimate",
                        })
                    }
                }
            }
            "heldout_episodes" => self.heldout_episodes = num(key, value, "usize")?,
            "eval_noise" => self.eval_noise = num(key, value, "bool")?,
            "batch_chunk" => self.batch_chunk = num(key, value, "usize")?,
            "log_wall_time" => self.log_wall_time = num(key, value, "bool")?,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                    suggestion: nearest_key(other),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("episode_steps", self.episode_steps),
            ("episodes_per_iteration", self.episodes_per_iteration),
            ("memory_size", self.memory_size),
            ("transition_hidden_size", self.transition_hidden_size),
            ("transition_batches_per_iteration", self.transition_batches_per_iteration),
            ("transition_batch_size", self.transition_batch_size),
            ("policy_hidden_size", self.policy_hidden_size),
            ("policy_batches_per_iteration", self.policy_batches_per_iteration),
            ("policy_batch_size", self.policy_batch_size),
            ("warmup_steps", self.warmup_steps),
            ("unroll_steps", self.unroll_steps),
            ("heldout_episodes", self.heldout_episodes),
            ("batch_chunk", self.batch_chunk),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.warmup_steps > self.episode_steps {
            return Err(ConfigError::Invalid(format!(
                "warmup_steps = {} exceeds episode_steps = {}",
                self.warmup_steps, self.episode_steps
            )));
        }
        if !(self.transition_learning_rate > 0.0) || !(self.policy_learning_rate > 0.0) {
            return Err(ConfigError::Invalid("learning rates must be positive".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(ConfigError::Invalid("variance_floor must be positive".into()));
        }
        self.env_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Environment parameters for data collection (training noise).
    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            dt: self.time_step,
            kappa: self.acceleration_constant,
            gamma: self.rotation_angle_deg.to_radians(),
            zeta: [self.process_noise_std; 3],
            xi: [self.observation_noise_std; 2],
            x_max: self.position_range,
            v_max: self.velocity_range,
            u_max: self.control_range,
            a_max: self.acceleration_range,
        }
    }

    /// Environment parameters for evaluation episodes: noise off unless
    /// `eval_noise` restores it.
    pub fn eval_env_params(&self) -> EnvParams {
        let mut p = self.env_params();
        if !self.eval_noise {
            p.zeta = [0.0; 3];
            p.xi = [0.0; 2];
        }
        p
    }

    /// Canonical text snapshot; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "episode_steps = {}", self.episode_steps);
        let _ = writeln!(s, "episodes_per_iteration = {}", self.episodes_per_iteration);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "time_step = {}", self.time_step);
        let _ = writeln!(s, "memory_size = {}", self.memory_size);
        let _ = writeln!(s, "rotation_angle_deg = {}", self.rotation_angle_deg);
        let _ = writeln!(s, "acceleration_constant = {}", self.acceleration_constant);
        let _ = writeln!(s, "process_noise_std = {}", self.process_noise_std);
        let _ = writeln!(s, "observation_noise_std = {}", self.observation_noise_std);
        let _ = writeln!(s, "position_range = {}", self.position_range);
        let _ = writeln!(s, "velocity_range = {}", self.velocity_range);
        let _ = writeln!(s, "control_range = {}", self.control_range);
        let _ = writeln!(s, "acceleration_range = {}", self.acceleration_range);
        let _ = writeln!(s, "task_variant = {}", self.task_variant);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "transition_hidden_size = {}", self.transition_hidden_size);
        let _ = writeln!(s, "transition_learning_rate = {}", self.transition_learning_rate);
        let _ = writeln!(
            s,
            "transition_batches_per_iteration = {}",
            self.transition_batches_per_iteration
        );
        let _ = writeln!(s, "transition_batch_size = {}", self.transition_batch_size);
        let _ = writeln!(s, "policy_hidden_size = {}", self.policy_hidden_size);
        let _ = writeln!(s, "policy_learning_rate = {}", self.policy_learning_rate);
        let _ = writeln!(
            s,
            "policy_batches_per_iteration = {}",
            self.policy_batches_per_iteration
        );
        let _ = writeln!(s, "policy_batch_size = {}", self.policy_batch_size);
        let _ = writeln!(s, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "unroll_steps = {}", self.unroll_steps);
        let _ = writeln!(s, "variance_floor = {}", self.variance_floor);
        let _ = writeln!(s, "transition_logvar_bias_init = {}", self.transition_logvar_bias_init);
        let _ = writeln!(s, "policy_logvar_bias_init = {}", self.policy_logvar_bias_init);
        let _ = writeln!(s, "grad_clip_norm = {}", self.grad_clip_norm);
        let _ = writeln!(
            s,
            "policy_input = {}",
            match self.policy_input {
                PolicyInput::Observation => "observation",
                PolicyInput::Estimate => "estimate",
            }
        );
        let _ = writeln!(s, "heldout_episodes = {}", self.heldout_episodes);
        let _ = writeln!(s, "eval_noise = {}", self.eval_noise);
        let _ = writeln!(s, "batch_chunk = {}", self.batch_chunk);
        let _ = writeln!(s, "log_wall_time = {}", self.log_wall_time);
        s
    }

    /// A small configuration for quick experiments and tests.
    pub fn desk(iterations: u64) -> Self {
        TrainConfig {
            iterations,
            transition_hidden_size: 64,
            policy_hidden_size: 64,
            transition_batch_size: 128,
            policy_batch_size: 128,
            transition_batches_per_iteration: 10,
            policy_batches_per_iteration: 10,
            ..TrainConfig::default()
        }
    }
}

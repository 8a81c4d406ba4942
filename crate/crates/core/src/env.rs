//! Planar point-mass environment.
//!
//! A unit mass on a bounded 2D plane, driven by a two-dimensional control
//! signal through a chain of clipped forward-Euler integrators. The control
//! feeds acceleration, acceleration feeds velocity, velocity feeds position,
//! each stage one step behind the previous one, so a control impulse from
//! rest moves the velocity after two steps and the position after three.
//! Optionally the control is rotated by a fixed angle before it acts, and
//! Gaussian noise can be injected at every integrator stage and on the
//! emitted observation.

use crate::rng::{self, Purpose};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("initial state component {index} = {value} outside range ±{bound}")]
    InitialOutOfRange {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("invalid environment parameter: {0}")]
    InvalidParams(String),
}

/// Full integrator state. The acceleration stage is internal bookkeeping;
/// models only ever see the exposed 4-vector `[pos, vel]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

impl State {
    pub fn zeros() -> Self {
        State {
            pos: [0.0; 2],
            vel: [0.0; 2],
            acc: [0.0; 2],
        }
    }

    /// The exposed 4-vector `[x1, x2, v1, v2]`.
    pub fn as_vec4(&self) -> [f64; 4] {
        [self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

/// Two-dimensional control command, clipped to `±u_max` at the environment
/// boundary so a misbehaving controller cannot crash an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control(pub [f64; 2]);

/// Noisy view of the exposed state, `y = [pos, vel] + noise`. Not re-clipped
/// after the noise is added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; 4]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    /// Integration step size in seconds.
    pub dt: f64,
    /// Gain from (rotated) control to commanded acceleration.
    pub kappa: f64,
    /// Rotation applied to the control before it acts, radians.
    pub gamma: f64,
    /// Process-noise std per integrator stage: `[position, velocity, acceleration]`.
    pub zeta: [f64; 3],
    /// Observation-noise std: `[position, velocity]`.
    pub xi: [f64; 2],
    pub x_max: f64,
    pub v_max: f64,
    pub u_max: f64,
    pub a_max: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            dt: 0.02,
            kappa: 5.0,
            gamma: 0.0,
            zeta: [0.001; 3],
            xi: [0.001; 2],
            x_max: 1.0,
            v_max: 1.0,
            u_max: 1.0,
            // The acceleration bound is not an independent knob here: with
            // the default gain the commanded acceleration never exceeds
            // kappa * u_max, so clipping at that value is inactive.
            a_max: 5.0,
        }
    }
}

impl EnvParams {
    /// Default parameters with all noise switched off.
    pub fn noiseless() -> Self {
        EnvParams {
            zeta: [0.0; 3],
            xi: [0.0; 2],
            ..EnvParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.dt > 0.0) {
            return Err(EnvError::InvalidParams(format!("dt = {} must be > 0", self.dt)));
        }
        for (name, v) in [
            ("x_max", self.x_max),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("a_max", self.a_max),
        ] {
            if !(v > 0.0) {
                return Err(EnvError::InvalidParams(format!("{name} = {v} must be > 0")));
            }
        }
        for z in self.zeta.iter().chain(self.xi.iter()) {
            if !(*z >= 0.0) {
                return Err(EnvError::InvalidParams(format!("noise std {z} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn clip(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

/// Rotates a control vector by `gamma`, treating it as a row vector
/// multiplied from the left: `u' = u * [[cos, -sin], [sin, cos]]`.
pub fn rotate_control(u: Control, gamma: f64) -> Control {
    let (s, c) = gamma.sin_cos();
    let [u1, u2] = u.0;
    Control([u1 * c + u2 * s, -u1 * s + u2 * c])
}

/// One forward-Euler step in the fixed stage order: position from the old
/// velocity, velocity from the old acceleration, acceleration from the
/// (clipped, rotated, scaled) control. Each stage adds its process noise and
/// is clipped to its range. Also emits the noisy observation of the new
/// exposed state.
pub fn step(
    s: &State,
    u: Control,
    p: &EnvParams,
    process_rng: &mut ChaCha12Rng,
    obs_rng: &mut ChaCha12Rng,
) -> (State, Observation) {
    let noise = |std: f64, rng: &mut ChaCha12Rng| -> f64 {
        if std > 0.0 {
            std * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    };

    let u_clipped = Control([clip(u.0[0], p.u_max), clip(u.0[1], p.u_max)]);
    let u_rot = rotate_control(u_clipped, p.gamma);

    let mut next = State::zeros();
    for i in 0..2 {
        let pos = s.pos[i] + p.dt * s.vel[i] + noise(p.zeta[0], process_rng);
        next.pos[i] = clip(pos, p.x_max);
    }
    for i in 0..2 {
        let vel = s.vel[i] + p.dt * s.acc[i] + noise(p.zeta[1], process_rng);
        next.vel[i] = clip(vel, p.v_max);
    }
    for i in 0..2 {
        let acc = p.kappa * u_rot.0[i] + noise(p.zeta[2], process_rng);
        next.acc[i] = clip(acc, p.a_max);
    }

    let obs = observe(&next, p, obs_rng);
    (next, obs)
}

/// Noisy observation of a state's exposed 4-vector.
pub fn observe(s: &State, p: &EnvParams, obs_rng: &mut ChaCha12Rng) -> Observation {
    let v = s.as_vec4();
    let mut y = [0.0; 4];
    for i in 0..4 {
        let std = if i < 2 { p.xi[0] } else { p.xi[1] };
        let n = if std > 0.0 {
            std * obs_rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        y[i] = v[i] + n;
    }
    Observation(y)
}

/// Builds a state from an exposed 4-vector, rejecting out-of-range values.
pub fn reset(p: &EnvParams, initial: [f64; 4]) -> Result<State, EnvError> {
    for (i, &v) in initial.iter().enumerate() {
        let bound = if i < 2 { p.x_max } else { p.v_max };
        if v.abs() > bound || !v.is_finite() {
            return Err(EnvError::InitialOutOfRange {
                index: i,
                value: v,
                bound,
            });
        }
    }
    Ok(State {
        pos: [initial[0], initial[1]],
        vel: [initial[2], initial[3]],
        acc: [0.0; 2],
    })
}

/// Stateful wrapper owning the current state and the per-episode noise
/// substreams. Instances are independent; running several in parallel with
/// distinct stream paths reproduces exactly.
pub struct PlaneEnv {
    pub params: EnvParams,
    state: State,
    process_rng: ChaCha12Rng,
    obs_rng: ChaCha12Rng,
}

impl PlaneEnv {
    /// Creates an environment whose noise streams are derived from
    /// `(seed, episode_path)`.
    pub fn new(params: EnvParams, seed: u64, episode_path: &[u64]) -> Self {
        PlaneEnv {
            params,
            state: State::zeros(),
            process_rng: rng::stream(seed, Purpose::ProcessNoise, episode_path),
            obs_rng: rng::stream(seed, Purpose::ObservationNoise, episode_path),
        }
    }

    /// Resets to `initial` and returns the first observation.
    pub fn reset(&mut self, initial: [f64; 4]) -> Result<(State, Observation), EnvError> {
        self.state = reset(&self.params, initial)?;
        let obs = observe(&self.state, &self.params, &mut self.obs_rng);
        Ok((self.state, obs))
    }

    pub fn step(&mut self, u: Control) -> (State, Observation) {
        let (next, obs) = step(
            &self.state,
            u,
            &self.params,
            &mut self.process_rng,
            &mut self.obs_rng,
        );
        self.state = next;
        (next, obs)
    }

    pub fn state(&self) -> &State {
        &self.state
    }
}

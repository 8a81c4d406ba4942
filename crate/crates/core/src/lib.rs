//! Learned continuous control on a planar point mass.
//!
//! The crate wires together a small simulated reaching task, a from-scratch
//! reverse-mode autodiff engine, recurrent transition and policy networks
//! trained from replayed interaction, an LQR reference controller, and the
//! evaluation harness that compares them.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod lqr;
pub mod memory;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod svg;
pub mod trainer;
pub mod trace;

pub use autodiff::{Tape, Tensor, TensorError};
pub use config::TrainConfig;
pub use env::{Control, EnvParams, Observation, PlaneEnv, State};
pub use eval::{Controller, EvalReport, ReachTask, TaskVariant};
pub use lqr::{solve_care, LinearSystem, LqrGain, ReachSystem};
pub use nets::{ActionMode, PolicyModel, TransitionModel};
pub use trainer::{TrainLog, Trainer};

//! The two function approximators: a recurrent transition network that
//! predicts a Gaussian over the next state delta, and a recurrent policy
//! network that emits a Gaussian over control actions squashed to the
//! control range. Both are a single GRU layer followed by linear mean and
//! log-variance heads.

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::checkpoint::{CheckpointError, Container};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;

pub const STATE_DIM: usize = 4;
pub const CONTROL_DIM: usize = 2;
pub const TARGET_DIM: usize = 4;

/// A named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered, named collection of parameter arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elems(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Creates leaf tensors for every parameter, in order.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| {
                tape.leaf(&p.shape, p.data.clone(), trainable)
                    .expect("parameter shapes are consistent by construction")
            })
            .collect()
    }

    /// Copies arrays into a checkpoint container under a prefix.
    pub fn store(&self, c: &mut Container, prefix: &str) {
        for p in &self.params {
            c.push_array(&format!("{prefix}{}", p.name), &p.shape, p.data.clone());
        }
    }

    /// Loads arrays from a container, requiring every name and shape to
    /// match this set exactly. Nothing is modified on error.
    pub fn load(&mut self, c: &Container, prefix: &str) -> Result<(), CheckpointError> {
        let mut staged = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let name = format!("{prefix}{}", p.name);
            let a = c.array(&name)?;
            if a.shape != p.shape {
                return Err(CheckpointError::ArrayShape {
                    name,
                    expected: p.shape.clone(),
                    got: a.shape.clone(),
                });
            }
            staged.push(a.data.clone());
        }
        for (p, data) in self.params.iter_mut().zip(staged) {
            p.data = data;
        }
        Ok(())
    }
}

/// Weight initialization knobs. The log-variance head bias starts negative
/// so initial output distributions are narrow rather than saturated.
#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub logvar_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { logvar_bias: -2.0 }
    }
}

fn uniform_init(rng: &mut ChaCha12Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn push_gru_params(
    ps: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: Option<&mut ChaCha12Rng>,
) {
    let h3 = 3 * hidden;
    match rng {
        Some(rng) => {
            ps.push(&format!("{prefix}.w_ih"), &[input, h3], uniform_init(rng, input * h3, input));
            ps.push(&format!("{prefix}.w_hh"), &[hidden, h3], uniform_init(rng, hidden * h3, hidden));
            ps.push(&format!("{prefix}.b_ih"), &[1, h3], vec![0.0; h3]);
            ps.push(&format!("{prefix}.b_hh"), &[1, h3], vec![0.0; h3]);
        }
        None => {
            ps.push(&format!("{prefix}.w_ih"), &[input, h3], vec![0.0; input * h3]);
            ps.push(&format!("{prefix}.w_hh"), &[hidden, h3], vec![0.0; hidden * h3]);
            ps.push(&format!("{prefix}.b_ih"), &[1, h3], vec![0.0; h3]);
            ps.push(&format!("{prefix}.b_hh"), &[1, h3], vec![0.0; h3]);
        }
    }
}

fn push_head_params(
    ps: &mut ParamSet,
    prefix: &str,
    hidden: usize,
    out: usize,
    logvar_bias: f64,
    rng: Option<&mut ChaCha12Rng>,
) {
    match rng {
        Some(rng) => {
            ps.push(&format!("{prefix}.w_mu"), &[hidden, out], uniform_init(rng, hidden * out, hidden));
            let w_lv = uniform_init(rng, hidden * out, hidden);
            ps.push(&format!("{prefix}.b_mu"), &[1, out], vec![0.0; out]);
            ps.push(&format!("{prefix}.w_logvar"), &[hidden, out], w_lv);
            ps.push(&format!("{prefix}.b_logvar"), &[1, out], vec![logvar_bias; out]);
        }
        None => {
            ps.push(&format!("{prefix}.w_mu"), &[hidden, out], vec![0.0; hidden * out]);
            ps.push(&format!("{prefix}.b_mu"), &[1, out], vec![0.0; out]);
            ps.push(&format!("{prefix}.w_logvar"), &[hidden, out], vec![0.0; hidden * out]);
            ps.push(&format!("{prefix}.b_logvar"), &[1, out], vec![0.0; out]);
        }
    }
}

/// GRU cell weights bound onto a tape.
pub struct BoundGru {
    tape: Tape,
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl BoundGru {
    pub fn initial_hidden(&self, batch: usize) -> Tensor {
        self.tape.zeros(&[batch, self.hidden], false)
    }

    /// One recurrence step: returns the new hidden state.
    pub fn step(&self, x: &Tensor, h: &Tensor) -> Result<Tensor, TensorError> {
        let hs = self.hidden;
        let gi = x.matmul(&self.w_ih)?.add(&self.b_ih)?;
        let gh = h.matmul(&self.w_hh)?.add(&self.b_hh)?;
        let reset = gi.slice(0, hs)?.add(&gh.slice(0, hs)?)?.sigmoid();
        let update = gi.slice(hs, 2 * hs)?.add(&gh.slice(hs, 2 * hs)?)?.sigmoid();
        let cand = gi
            .slice(2 * hs, 3 * hs)?
            .add(&reset.mul(&gh.slice(2 * hs, 3 * hs)?)?)?
            .tanh();
        // h' = cand + update * (h - cand)
        cand.add(&update.mul(&h.sub(&cand)?)?)
    }
}

/// Gaussian output head bound onto a tape: linear mean, exp of a linear
/// log-variance (so the variance is positive for all finite parameters).
pub struct BoundHead {
    w_mu: Tensor,
    b_mu: Tensor,
    w_logvar: Tensor,
    b_logvar: Tensor,
}

impl BoundHead {
    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let mu = h.matmul(&self.w_mu)?.add(&self.b_mu)?;
        let var = h.matmul(&self.w_logvar)?.add(&self.b_logvar)?.exp();
        Ok((mu, var))
    }
}

fn bind_gru(tape: &Tape, tensors: &[Tensor], offset: usize, hidden: usize) -> BoundGru {
    BoundGru {
        tape: tape.clone(),
        w_ih: tensors[offset].clone(),
        w_hh: tensors[offset + 1].clone(),
        b_ih: tensors[offset + 2].clone(),
        b_hh: tensors[offset + 3].clone(),
        hidden,
    }
}

fn bind_head(tensors: &[Tensor], offset: usize) -> BoundHead {
    BoundHead {
        w_mu: tensors[offset].clone(),
        b_mu: tensors[offset + 1].clone(),
        w_logvar: tensors[offset + 2].clone(),
        b_logvar: tensors[offset + 3].clone(),
    }
}

/// Recurrent forward model `g(y, u) -> N(mu_delta, var_delta)` over state
/// deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub hidden_size: usize,
    params: ParamSet,
}

impl TransitionModel {
    pub const INPUT: usize = STATE_DIM + CONTROL_DIM;
    const TAG: &'static str = "transition";

    pub fn new(hidden_size: usize, init: &InitConfig, rng: &mut ChaCha12Rng) -> Self {
        let mut params = ParamSet::new();
        push_gru_params(&mut params, "gru", Self::INPUT, hidden_size, Some(rng));
        push_head_params(&mut params, "head", hidden_size, STATE_DIM, init.logvar_bias, Some(rng));
        TransitionModel { hidden_size, params }
    }

    /// All-zero parameters (variance head then outputs exp(0) = 1).
    pub fn zeros(hidden_size: usize) -> Self {
        let mut params = ParamSet::new();
        push_gru_params(&mut params, "gru", Self::INPUT, hidden_size, None);
        push_head_params(&mut params, "head", hidden_size, STATE_DIM, 0.0, None);
        TransitionModel { hidden_size, params }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundTransition {
        let tensors = self.params.bind(tape, trainable);
        BoundTransition {
            tape: tape.clone(),
            gru: bind_gru(tape, &tensors, 0, self.hidden_size),
            head: bind_head(&tensors, 4),
            leaves: tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut c = Container::new(Self::TAG);
        c.set_meta("hidden_size", self.hidden_size);
        self.params.store(&mut c, "");
        c.write(path)
    }

    /// Loads a checkpoint, taking the hidden size from the file.
    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let c = Container::read_tagged(path, Self::TAG)?;
        let hidden: usize = c.meta_parsed("hidden_size", "usize")?;
        let mut model = TransitionModel::zeros(hidden);
        model.params.load(&c, "")?;
        Ok(model)
    }

    /// Loads a checkpoint into this instance; the stored shapes must match.
    pub fn load_into(&mut self, path: &Path) -> Result<(), CheckpointError> {
        let c = Container::read_tagged(path, Self::TAG)?;
        self.params.load(&c, "")
    }
}

pub struct BoundTransition {
    tape: Tape,
    pub gru: BoundGru,
    pub head: BoundHead,
    /// Parameter leaves in `ParamSet` order, for gradient readout.
    pub leaves: Vec<Tensor>,
}

impl BoundTransition {
    pub fn initial_hidden(&self, batch: usize) -> Tensor {
        self.gru.initial_hidden(batch)
    }

    /// One step of the delta head: `(mu_delta, var_delta, h')`.
    pub fn forward(
        &self,
        y_prev: &Tensor,
        u_prev: &Tensor,
        h: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor), TensorError> {
        let x = Tensor::concat(&[y_prev, u_prev])?;
        let h_next = self.gru.step(&x, h)?;
        let (mu_d, var_d) = self.head.forward(&h_next)?;
        Ok((mu_d, var_d, h_next))
    }

    /// Full state estimate: `mu_x = y_prev + mu_delta`, `var_x = var_delta`,
    /// and a reparameterized sample `x_hat` that stays differentiable with
    /// respect to the parameters and both inputs.
    #[allow(clippy::type_complexity)]
    pub fn predict_state(
        &self,
        y_prev: &Tensor,
        u_prev: &Tensor,
        h: &Tensor,
        rng: &mut ChaCha12Rng,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor), TensorError> {
        let (mu_d, var_d, h_next) = self.forward(y_prev, u_prev, h)?;
        let mu_x = y_prev.add(&mu_d)?;
        let x_hat = self.tape.reparam_sample(&mu_x, &var_d, rng)?;
        Ok((x_hat, mu_x, var_d, h_next))
    }
}

/// How the policy turns its Gaussian into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Reparameterized draw, used while collecting data and imagining.
    Sample,
    /// Deterministic mean, used for evaluation.
    Mean,
}

/// Recurrent controller `pi(x, target) -> N(mu_u, var_u)`, with the action
/// squashed through `u_max * tanh(.)` so its mean always lies strictly
/// inside the control box.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub hidden_size: usize,
    pub u_max: f64,
    params: ParamSet,
}

impl PolicyModel {
    pub const INPUT: usize = STATE_DIM + TARGET_DIM;
    const TAG: &'static str = "policy";

    pub fn new(hidden_size: usize, u_max: f64, init: &InitConfig, rng: &mut ChaCha12Rng) -> Self {
        let mut params = ParamSet::new();
        push_gru_params(&mut params, "gru", Self::INPUT, hidden_size, Some(rng));
        push_head_params(&mut params, "head", hidden_size, CONTROL_DIM, init.logvar_bias, Some(rng));
        PolicyModel {
            hidden_size,
            u_max,
            params,
        }
    }

    pub fn zeros(hidden_size: usize, u_max: f64) -> Self {
        let mut params = ParamSet::new();
        push_gru_params(&mut params, "gru", Self::INPUT, hidden_size, None);
        push_head_params(&mut params, "head", hidden_size, CONTROL_DIM, 0.0, None);
        PolicyModel {
            hidden_size,
            u_max,
            params,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &Tape, trainable: bool) -> BoundPolicy {
        let tensors = self.params.bind(tape, trainable);
        BoundPolicy {
            tape: tape.clone(),
            gru: bind_gru(tape, &tensors, 0, self.hidden_size),
            head: bind_head(&tensors, 4),
            u_max: self.u_max,
            leaves: tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut c = Container::new(Self::TAG);
        c.set_meta("hidden_size", self.hidden_size);
        c.set_meta("u_max", self.u_max);
        self.params.store(&mut c, "");
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let c = Container::read_tagged(path, Self::TAG)?;
        let hidden: usize = c.meta_parsed("hidden_size", "usize")?;
        let u_max: f64 = c.meta_parsed("u_max", "f64")?;
        let mut model = PolicyModel::zeros(hidden, u_max);
        model.params.load(&c, "")?;
        Ok(model)
    }

    pub fn load_into(&mut self, path: &Path) -> Result<(), CheckpointError> {
        let c = Container::read_tagged(path, Self::TAG)?;
        self.params.load(&c, "")
    }
}

pub struct BoundPolicy {
    tape: Tape,
    pub gru: BoundGru,
    pub head: BoundHead,
    pub u_max: f64,
    pub leaves: Vec<Tensor>,
}

impl BoundPolicy {
    pub fn initial_hidden(&self, batch: usize) -> Tensor {
        self.gru.initial_hidden(batch)
    }

    /// One policy step: `(u, mu_u, var_u, h')` with `u` squashed into the
    /// open control box.
    #[allow(clippy::type_complexity)]
    pub fn forward(
        &self,
        x: &Tensor,
        target: &Tensor,
        h: &Tensor,
        rng: &mut ChaCha12Rng,
        mode: ActionMode,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor), TensorError> {
        let inp = Tensor::concat(&[x, target])?;
        let h_next = self.gru.step(&inp, h)?;
        let (mu_u, var_u) = self.head.forward(&h_next)?;
        let pre = match mode {
            ActionMode::Mean => mu_u.clone(),
            ActionMode::Sample => self.tape.reparam_sample(&mu_u, &var_u, rng)?,
        };
        let u = pre.tanh().affine(self.u_max, 0.0);
        Ok((u, mu_u, var_u, h_next))
    }
}

//! Adaptive-moment gradient optimizer with bias correction, plus the
//! optional global-norm gradient clip.

use crate::checkpoint::{CheckpointError, Container};
use crate::nets::ParamSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in '{param}' at element {index}: {value}")]
    NonFiniteGradient {
        param: String,
        index: usize,
        value: f64,
    },
    #[error("gradient layout does not match parameters: {0}")]
    LayoutMismatch(String),
}

/// Gradient buffers aligned with a [`ParamSet`]'s order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub buffers: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradBuffer {
            buffers: params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>]) {
        for (buf, g) in self.buffers.iter_mut().zip(grads.iter()) {
            if let Some(g) = g {
                for (b, gi) in buf.iter_mut().zip(g.iter()) {
                    *b += gi;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.buffers.iter_mut() {
            for b in buf.iter_mut() {
                *b *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.buffers
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`. Returns the
    /// norm before clipping. A `max_norm` of zero or below means "off".
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if max_norm > 0.0 && norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Adam with the standard bias-corrected update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// touched, naming the offending parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBuffer) -> Result<(), OptimError> {
        if grads.buffers.len() != params.len() {
            return Err(OptimError::LayoutMismatch(format!(
                "{} gradient buffers for {} parameters",
                grads.buffers.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads.buffers.iter()) {
            if p.data.len() != g.len() {
                return Err(OptimError::LayoutMismatch(format!(
                    "'{}' has {} elements but gradient has {}",
                    p.name,
                    p.data.len(),
                    g.len()
                )));
            }
            if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    param: p.name.clone(),
                    index,
                    value,
                });
            }
        }
        if self.m.is_empty() {
            self.m = grads.buffers.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.buffers.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Serializes moments and step counter under a name prefix.
    pub fn store(&self, c: &mut Container, prefix: &str, params: &ParamSet) {
        c.set_meta(format!("{prefix}step").as_str(), self.step);
        c.set_meta(format!("{prefix}lr").as_str(), self.lr);
        if self.m.is_empty() {
            return;
        }
        for (p, (m, v)) in params.iter().zip(self.m.iter().zip(self.v.iter())) {
            c.push_array(&format!("{prefix}m.{}", p.name), &p.shape, m.clone());
            c.push_array(&format!("{prefix}v.{}", p.name), &p.shape, v.clone());
        }
    }

    pub fn load(c: &Container, prefix: &str, params: &ParamSet) -> Result<Adam, CheckpointError> {
        let step: u64 = c.meta_parsed(&format!("{prefix}step"), "u64")?;
        let lr: f64 = c.meta_parsed(&format!("{prefix}lr"), "f64")?;
        let mut adam = Adam::new(lr);
        adam.step = step;
        if step > 0 {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for p in params.iter() {
                m.push(c.array(&format!("{prefix}m.{}", p.name))?.data.clone());
                v.push(c.array(&format!("{prefix}v.{}", p.name))?.data.clone());
            }
            adam.m = m;
            adam.v = v;
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("w", &[2, 2], vec![0.1, -0.2, 0.3, -0.4]);
        ps.push("b", &[1, 2], vec![0.0, 0.5]);
        ps
    }

    fn grads_of(params: &ParamSet, f: impl Fn(usize, usize) -> f64) -> GradBuffer {
        GradBuffer {
            buffers: params
                .iter()
                .enumerate()
                .map(|(pi, p)| (0..p.data.len()).map(|i| f(pi, i)).collect())
                .collect(),
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = toy_params();
        let before = params.clone();
        let mut adam = Adam::new(0.001);
        let grads = grads_of(&params, |_, _| 0.0);
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With a constant gradient c, the bias-corrected first update is
        // lr * c / (|c| + eps) which is the learning rate up to eps.
        let mut params = toy_params();
        let before = params.clone();
        let lr = 0.001;
        let mut adam = Adam::new(lr);
        let grads = grads_of(&params, |_, _| 2.0);
        adam.step(&mut params, &grads).unwrap();
        for (p, q) in params.iter().zip(before.iter()) {
            for (a, b) in p.data.iter().zip(q.data.iter()) {
                let delta = b - a;
                assert!((delta - lr).abs() < 1e-9, "delta {delta}");
            }
        }
    }

    #[test]
    fn constant_gradient_drifts_monotonically() {
        let mut params = toy_params();
        let mut adam = Adam::new(0.01);
        let grads = grads_of(&params, |_, _| -1.5);
        let mut prev = params.get("w").unwrap().data[0];
        for _ in 0..50 {
            adam.step(&mut params, &grads).unwrap();
            let cur = params.get("w").unwrap().data[0];
            assert!(cur > prev, "parameter should drift against the gradient");
            prev = cur;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut params = toy_params();
        let mut adam = Adam::new(0.01);
        let mut grads = grads_of(&params, |_, _| 1.0);
        grads.buffers[1][1] = f64::NAN;
        let before = params.clone();
        let err = adam.step(&mut params, &grads).unwrap_err();
        assert!(err.to_string().contains("'b'"), "{err}");
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clip_global_norm_rescales() {
        let params = toy_params();
        let mut grads = grads_of(&params, |_, _| 3.0);
        let norm_before = grads.global_norm();
        let reported = grads.clip_global_norm(1.0);
        assert!((reported - norm_before).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
        // Off switch.
        let mut grads2 = grads_of(&params, |_, _| 3.0);
        grads2.clip_global_norm(0.0);
        assert_eq!(grads2.global_norm(), norm_before);
    }

    #[test]
    fn state_round_trips_through_container() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adam.ck");
        let mut params = toy_params();
        let mut adam = Adam::new(0.005);
        for k in 0..7 {
            let grads = grads_of(&params, |pi, i| (pi + i + k) as f64 * 0.1 - 0.2);
            adam.step(&mut params, &grads).unwrap();
        }
        let mut c = Container::new("optim-test");
        adam.store(&mut c, "adam.", &params);
        c.write(&path).unwrap();
        let back = Container::read(&path).unwrap();
        let restored = Adam::load(&back, "adam.", &params).unwrap();
        assert_eq!(adam, restored);
    }
}

//! Training objectives: Gaussian negative log-likelihood for the transition
//! model and the gain-weighted squared target error for the policy.

use crate::autodiff::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("variance floor epsilon must be > 0, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("{op}: expected shape {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
}

/// Per-dimension weights on the policy's target error. `[1, 1, 0, 0]`
/// penalizes position only, which keeps the velocity needed to get there
/// from being punished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetGain(pub [f64; 4]);

impl TargetGain {
    pub fn position_only() -> Self {
        TargetGain([1.0, 1.0, 0.0, 0.0])
    }
}

impl Default for TargetGain {
    fn default() -> Self {
        Self::position_only()
    }
}

/// Gaussian negative log-likelihood of observations `y` under per-step
/// predictions `(mu, var)`, all shaped `[batch, steps, dims]`:
///
/// `(1 / 2T) * mean over batch of sum_t sum_d [ log(max(var, eps)) +
/// (mu - y)^2 / max(var, eps) ]`
///
/// The additive constant is omitted; `eps` floors the variance so the
/// division never blows up.
pub fn transition_nll(
    mu: &Tensor,
    var: &Tensor,
    y: &Tensor,
    eps: f64,
) -> Result<Tensor, LossError> {
    if !(eps > 0.0) {
        return Err(LossError::NonPositiveEpsilon(eps));
    }
    let shape = mu.shape().to_vec();
    if shape.len() != 3 {
        return Err(LossError::Shape {
            op: "transition_nll",
            expected: "[batch, steps, dims]",
            got: shape,
        });
    }
    for (name, t) in [("var", var), ("y", y)] {
        if t.shape() != shape.as_slice() {
            let _ = name;
            return Err(TensorError::ShapeMismatch {
                op: "transition_nll",
                lhs: shape,
                rhs: t.shape().to_vec(),
            }
            .into());
        }
    }
    let (batch, steps) = (shape[0], shape[1]);
    let var_floored = var.clamp_min(eps);
    let sq_err = mu.sub(y)?.square();
    let terms = var_floored.log().add(&sq_err.div(&var_floored)?)?;
    let scale = 1.0 / (2.0 * steps as f64 * batch as f64);
    Ok(terms.sum().affine(scale, 0.0))
}

/// Gain-weighted squared distance of an imagined trajectory `x_hat`
/// (`[batch, steps, 4]`) from its target (`[batch, 4]`, held fixed over the
/// horizon, or `[batch, steps, 4]` per step):
///
/// `(1 / r) * mean over batch of sum_t sum_d g .* (x_hat - target)^2`
pub fn policy_loss(
    x_hat: &Tensor,
    target: &Tensor,
    gain: TargetGain,
) -> Result<Tensor, LossError> {
    let shape = x_hat.shape().to_vec();
    if shape.len() != 3 || shape[2] != 4 {
        return Err(LossError::Shape {
            op: "policy_loss",
            expected: "[batch, steps, 4]",
            got: shape,
        });
    }
    let (batch, steps) = (shape[0], shape[1]);
    let target_full = if target.shape() == shape.as_slice() {
        target.clone()
    } else if target.shape() == [batch, 4] {
        // Tile the fixed target across the horizon.
        let tiled: Vec<&Tensor> = std::iter::repeat(target).take(steps).collect();
        Tensor::concat(&tiled)?.reshape(&shape)?
    } else {
        return Err(TensorError::ShapeMismatch {
            op: "policy_loss",
            lhs: shape,
            rhs: target.shape().to_vec(),
        }
        .into());
    };
    let err_sq = x_hat.sub(&target_full)?.square();
    // Flatten to rows of 4 so the gain broadcasts as a row vector.
    let flat = err_sq.reshape(&[batch * steps, 4])?;
    let gain_row = flat_gain_row(&flat, gain)?;
    let weighted = flat.mul(&gain_row)?;
    let scale = 1.0 / (steps as f64 * batch as f64);
    Ok(weighted.sum().affine(scale, 0.0))
}

fn flat_gain_row(like: &Tensor, gain: TargetGain) -> Result<Tensor, TensorError> {
    like.tape().constant(&[1, 4], gain.0.to_vec())
}

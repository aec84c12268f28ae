//! RMSprop with the epsilon added outside the square root:
//!
//! ```text
//! v ← ρ·v + (1 − ρ)·g²
//! θ ← θ − lr·g / (√v + ε)
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            learning_rate: 1e-4,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

impl RmspropConfig {
    /// Checks the hyperparameter ranges. A learning rate of exactly zero is accepted so
    /// that frozen-parameter runs are possible.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho {} outside [0, 1)", self.rho)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Running mean of squared gradients for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<S: Scalar = f32> {
    pub v: Tensor<S>,
    pub step: u64,
}

impl<S: Scalar> RmspropState<S> {
    pub fn new_like(param: &Tensor<S>) -> Self {
        RmspropState {
            v: Tensor::zeros_like(param),
            step: 0,
        }
    }
}

pub fn attach_states<S: Scalar>(params: &[Tensor<S>]) -> Vec<RmspropState<S>> {
    params.iter().map(RmspropState::new_like).collect()
}

/// Applies one RMSprop update to `param` in place.
pub fn rmsprop_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut RmspropState<S>,
    cfg: &RmspropConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.v.shape() {
        return Err(Error::ShapeMismatch {
            op: "rmsprop_step",
            left: param.shape().to_vec(),
            right: if param.shape() != grad.shape() {
                grad.shape().to_vec()
            } else {
                state.v.shape().to_vec()
            },
        });
    }
    let rho = S::from_f64_lossy(cfg.rho);
    let one_minus_rho = S::from_f64_lossy(1.0 - cfg.rho);
    let lr = S::from_f64_lossy(cfg.learning_rate);
    let eps = S::from_f64_lossy(cfg.epsilon);
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.v.data_mut())
    {
        *v = rho * *v + one_minus_rho * g * g;
        *p = *p - lr * g / (v.sqrt() + eps);
    }
    state.step += 1;
    Ok(())
}

use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)` during training so
/// evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutParams {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutParams {
    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutParams { rate, mode })
    }
}

/// Per-element multiplier applied in the forward pass; `None` means identity.
#[derive(Debug, Clone)]
pub struct DropoutMask<S: Scalar = f32> {
    shape: Vec<usize>,
    scale: Option<Vec<S>>,
}

impl<S: Scalar> DropoutMask<S> {
    pub fn kept(&self) -> Option<usize> {
        self.scale
            .as_ref()
            .map(|s| s.iter().filter(|&&v| v != S::zero()).count())
    }
}

pub fn dropout_forward<S: Scalar, R: Rng + ?Sized>(
    x: &Tensor<S>,
    p: &DropoutParams,
    rng: &mut R,
) -> Result<(Tensor<S>, DropoutMask<S>)> {
    DropoutParams::new(p.rate, p.mode)?;
    if p.mode == Mode::Eval || p.rate == 0.0 {
        return Ok((
            x.clone(),
            DropoutMask {
                shape: x.shape().to_vec(),
                scale: None,
            },
        ));
    }
    let keep = S::from_f64_lossy(1.0 / (1.0 - p.rate));
    // draws are f64 regardless of S so f32 and f64 runs share masks
    let scale: Vec<S> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < p.rate {
                S::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = x.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    Ok((
        Tensor::from_vec(x.shape().to_vec(), data)?,
        DropoutMask {
            shape: x.shape().to_vec(),
            scale: Some(scale),
        },
    ))
}

pub fn dropout_backward<S: Scalar>(d_y: &Tensor<S>, mask: &DropoutMask<S>) -> Result<Tensor<S>> {
    if d_y.shape() != mask.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "dropout_backward",
            left: d_y.shape().to_vec(),
            right: mask.shape.clone(),
        });
    }
    match &mask.scale {
        None => Ok(d_y.clone()),
        Some(scale) => {
            let data = d_y.data().iter().zip(scale).map(|(&g, &s)| g * s).collect();
            Tensor::from_vec(mask.shape.clone(), data)
        }
    }
}

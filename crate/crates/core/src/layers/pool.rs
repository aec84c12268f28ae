//! Max pooling with valid padding. The forward pass records the input offset of every
//! window maximum; the backward pass routes gradients back through those offsets,
//! accumulating where windows overlap.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaxPoolParams {
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride: usize,
}

impl MaxPoolParams {
    pub fn new(pool_h: usize, pool_w: usize, stride: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "pool {pool_h}x{pool_w} stride {stride}: extents must be at least 1"
            )));
        }
        Ok(MaxPoolParams {
            pool_h,
            pool_w,
            stride,
        })
    }
}

pub fn pool_output_extent(input: usize, pool: usize, stride: usize) -> Result<usize> {
    if pool > input {
        return Err(Error::invalid(format!(
            "pool window {pool} larger than input {input} under valid padding"
        )));
    }
    Ok((input - pool) / stride + 1)
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input offset of the maximum for each output element.
    argmax: Vec<usize>,
}

impl MaxPoolCache {
    /// Flat input offset selected for each output element.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &MaxPoolParams,
) -> Result<(Tensor<S>, MaxPoolCache)> {
    let s = x.shape4()?;
    let oh = pool_output_extent(s.h, p.pool_h, p.stride)?;
    let ow = pool_output_extent(s.w, p.pool_w, p.stride)?;
    let xd = x.data();
    let mut y = Vec::with_capacity(s.n * oh * ow * s.c);
    let mut argmax = Vec::with_capacity(y.capacity());
    for b in 0..s.n {
        let base = b * s.h * s.w * s.c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..s.c {
                    let mut best = base + ((oy * p.stride) * s.w + ox * p.stride) * s.c + ch;
                    for ky in 0..p.pool_h {
                        for kx in 0..p.pool_w {
                            let idx =
                                base + ((oy * p.stride + ky) * s.w + ox * p.stride + kx) * s.c + ch;
                            // strict comparison keeps the first maximum in scan order
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let output_shape = vec![s.n, oh, ow, s.c];
    Ok((
        Tensor::from_vec(output_shape.clone(), y)?,
        MaxPoolCache {
            input_shape: s.to_vec(),
            output_shape,
            argmax,
        },
    ))
}

pub fn maxpool_backward<S: Scalar>(d_y: &Tensor<S>, cache: &MaxPoolCache) -> Result<Tensor<S>> {
    if d_y.shape() != cache.output_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "maxpool_backward",
            left: d_y.shape().to_vec(),
            right: cache.output_shape.clone(),
        });
    }
    let mut dx = Tensor::zeros(cache.input_shape.clone())?;
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(d_y.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

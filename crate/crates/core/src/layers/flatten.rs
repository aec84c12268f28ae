use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct FlattenCache {
    input_shape: Vec<usize>,
}

/// `[n, h, w, c]` → `[n, h·w·c]`, keeping row-major order within each sample.
pub fn flatten_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, FlattenCache)> {
    let s = x.shape4()?;
    let y = x.reshape([s.n, s.h * s.w * s.c])?;
    Ok((
        y,
        FlattenCache {
            input_shape: s.to_vec(),
        },
    ))
}

pub fn flatten_backward<S: Scalar>(d_y: &Tensor<S>, cache: &FlattenCache) -> Result<Tensor<S>> {
    let n = cache.input_shape[0];
    let f: usize = cache.input_shape[1..].iter().product();
    if d_y.shape() != [n, f] {
        return Err(Error::ShapeMismatch {
            op: "flatten_backward",
            left: d_y.shape().to_vec(),
            right: vec![n, f],
        });
    }
    d_y.reshape(cache.input_shape.clone())
}

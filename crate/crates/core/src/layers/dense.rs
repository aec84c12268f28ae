use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer, `y = x·W + b`.
#[derive(Debug, Clone)]
pub struct DenseParams<S: Scalar = f32> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[in_features, out_features]`
    pub weights: Tensor<S>,
    /// `[out_features]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> DenseParams<S> {
    pub fn new(weights: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let &[in_features, out_features] = weights.shape() else {
            return Err(Error::InvalidShape {
                shape: weights.shape().to_vec(),
                reason: "dense weights must be [in, out]".into(),
            });
        };
        if bias.shape() != [out_features] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(DenseParams {
            in_features,
            out_features,
            weights,
            bias,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache<S: Scalar = f32> {
    input: Tensor<S>,
    weights: Tensor<S>,
}

pub fn dense_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &DenseParams<S>,
) -> Result<(Tensor<S>, DenseCache<S>)> {
    match x.shape() {
        &[_, f] if f == p.in_features => {}
        _ => {
            return Err(Error::ShapeMismatch {
                op: "dense_forward",
                left: x.shape().to_vec(),
                right: p.weights.shape().to_vec(),
            })
        }
    }
    let y = x.matmul(&p.weights)?.bias_add(&p.bias)?;
    Ok((
        y,
        DenseCache {
            input: x.clone(),
            weights: p.weights.clone(),
        },
    ))
}

pub fn dense_backward<S: Scalar>(d_y: &Tensor<S>, cache: &DenseCache<S>) -> Result<LayerGrad<S>> {
    let n = cache.input.shape()[0];
    let (fin, fout) = (cache.weights.shape()[0], cache.weights.shape()[1]);
    if d_y.shape() != [n, fout] {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: d_y.shape().to_vec(),
            right: vec![n, fout],
        });
    }
    // d_weights = xᵀ · d_y
    let mut dw = vec![S::zero(); fin * fout];
    S::gemm(
        fin,
        n,
        fout,
        S::one(),
        cache.input.data(),
        (1, fin as isize),
        d_y.data(),
        (fout as isize, 1),
        S::zero(),
        &mut dw,
        (fout as isize, 1),
    );
    let mut db = vec![S::zero(); fout];
    for row in d_y.data().chunks_exact(fout) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    // d_input = d_y · Wᵀ
    let mut dx = vec![S::zero(); n * fin];
    S::gemm(
        n,
        fout,
        fin,
        S::one(),
        d_y.data(),
        (fout as isize, 1),
        cache.weights.data(),
        (1, fout as isize),
        S::zero(),
        &mut dx,
        (fin as isize, 1),
    );
    Ok(LayerGrad {
        d_input: Tensor::from_vec([n, fin], dx)?,
        d_params: vec![
            Tensor::from_vec([fin, fout], dw)?,
            Tensor::from_vec([fout], db)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec([2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let mut eye = Tensor::zeros([3, 3]).unwrap();
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let p = DenseParams::new(eye, Tensor::zeros([3]).unwrap()).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn weight_gradient_is_outer_product() {
        let x = Tensor::from_vec([2, 3], vec![1.0f64, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let p = DenseParams::new(
            Tensor::from_vec([3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap(),
            Tensor::zeros([4]).unwrap(),
        )
        .unwrap();
        let (_, cache) = dense_forward(&x, &p).unwrap();
        let dy = Tensor::from_vec([2, 4], (0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
        let g = dense_backward(&dy, &cache).unwrap();
        let expect = x.transpose2d().unwrap().matmul(&dy).unwrap();
        assert!(g.d_params[0].max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn accepts_wide_flattened_input() {
        let p = DenseParams::new(
            Tensor::<f32>::zeros([20736, 512]).unwrap(),
            Tensor::zeros([512]).unwrap(),
        )
        .unwrap();
        let (y, _) = dense_forward(&Tensor::zeros([2, 20736]).unwrap(), &p).unwrap();
        assert_eq!(y.shape(), &[2, 512]);
        assert!(dense_forward(&Tensor::zeros([2, 100]).unwrap(), &p).is_err());
    }
}

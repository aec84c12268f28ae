use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ReluCache {
    shape: Vec<usize>,
    active: Vec<bool>,
}

impl ReluCache {
    /// Whether each input element was strictly positive.
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > S::zero()).collect();
    let y = x.map(|v| if v > S::zero() { v } else { S::zero() });
    (
        y,
        ReluCache {
            shape: x.shape().to_vec(),
            active,
        },
    )
}

/// Passes the gradient where the input was strictly positive; the gradient at exactly
/// zero is zero.
pub fn relu_backward<S: Scalar>(d_y: &Tensor<S>, cache: &ReluCache) -> Result<Tensor<S>> {
    if d_y.shape() != cache.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            left: d_y.shape().to_vec(),
            right: cache.shape.clone(),
        });
    }
    let data = d_y
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { S::zero() })
        .collect();
    Tensor::from_vec(cache.shape.clone(), data)
}

/// Row-wise softmax of a `[n, c]` tensor, stabilised by subtracting each row maximum.
pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let &[_, c] = x.shape() else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "softmax expects [n, classes]".into(),
        });
    };
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec([3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let (y, cache) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dx = relu_backward(&Tensor::fill([3], 5.0).unwrap(), &cache).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0]);
        assert_eq!(relu_forward(&y).0, y);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::<f64>::zeros([1, 3]).unwrap()).unwrap();
        for &p in u.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = Tensor::from_vec([1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let s = softmax(&x).unwrap();
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, &p) in s.data().iter().enumerate() {
            assert!((p - ((i + 1) as f64).exp() / denom).abs() < 1e-6);
        }
        assert!(softmax(&Tensor::<f32>::zeros([3]).unwrap()).is_err());
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let x = Tensor::from_vec([1, 2], vec![1e30f32, -1e30]).unwrap();
        let s = softmax(&x).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_rows_normalised(v in proptest::collection::vec(-10.0f64..10.0, 12), k in -50.0f64..50.0) {
            let x = Tensor::from_vec([3, 4], v).unwrap();
            let s = softmax(&x).unwrap();
            for row in s.data().chunks(4) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
            let shifted = softmax(&x.map(|v| v + k)).unwrap();
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-6);
        }
    }
}

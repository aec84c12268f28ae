//! Categorical cross-entropy, its fused softmax gradient, accuracy, and the summary
//! statistics used when reporting repeated runs.

use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Mean per-sample loss in nats.
    pub mean_loss: f64,
    pub batch_size: usize,
}

impl LossValue {
    /// Loss scaled to the percent convention used in the metrics tables.
    pub fn as_percent(&self) -> f64 {
        self.mean_loss * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

fn check_pair<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, op: &'static str) -> Result<(usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[n, c], &[n2, c2]) if n == n2 && c == c2 => Ok((n, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }),
    }
}

/// Class index of a one-hot row, or an error describing why it is not one-hot.
fn hot_index<S: Scalar>(row: &[S], line: usize) -> Result<usize> {
    let mut hot = None;
    for (k, &v) in row.iter().enumerate() {
        if v == S::one() {
            if hot.is_some() {
                return Err(Error::invalid(format!("target row {line} has several ones")));
            }
            hot = Some(k);
        } else if v != S::zero() {
            return Err(Error::invalid(format!("target row {line} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::invalid(format!("target row {line} has no hot entry")))
}

/// Mean over the batch of `-Σ_k t_k ln(clamp(y_k))`.
pub fn cross_entropy<S: Scalar>(probs: &Tensor<S>, targets: &Tensor<S>) -> Result<LossValue> {
    let (n, c) = check_pair(probs, targets, "cross_entropy")?;
    let mut total = 0.0f64;
    for (i, (p, t)) in probs
        .data()
        .chunks_exact(c)
        .zip(targets.data().chunks_exact(c))
        .enumerate()
    {
        let k = hot_index(t, i)?;
        let y = p[k].to_f64().unwrap_or(f64::NAN).clamp(PROB_FLOOR, 1.0);
        total -= y.ln();
    }
    Ok(LossValue {
        mean_loss: total / n as f64,
        batch_size: n,
    })
}

/// Gradient of the mean cross-entropy with respect to the logits feeding a softmax:
/// `(softmax(logits) - targets) / n`.
pub fn softmax_xent_grad<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c) = check_pair(logits, targets, "softmax_xent_grad")?;
    for (i, t) in targets.data().chunks_exact(c).enumerate() {
        hot_index(t, i)?;
    }
    let scale = S::from_usize_lossy(n);
    let probs = softmax(logits)?;
    Ok(probs.sub(targets)?.map(|v| v / scale))
}

/// Fraction of rows whose argmax matches the target; ties go to the lowest class index.
pub fn accuracy<S: Scalar>(probs: &Tensor<S>, targets: &Tensor<S>) -> Result<f64> {
    let (n, _) = check_pair(probs, targets, "accuracy")?;
    Ok(correct_count(probs, targets)? as f64 / n as f64)
}

pub fn correct_count<S: Scalar>(probs: &Tensor<S>, targets: &Tensor<S>) -> Result<usize> {
    check_pair(probs, targets, "accuracy")?;
    let pred = probs.argmax_rows()?;
    let truth = targets.argmax_rows()?;
    Ok(pred.iter().zip(&truth).filter(|(a, b)| a == b).count())
}

/// Arithmetic mean and sample standard deviation (`n - 1` denominator); the deviation of
/// a single value is zero.
pub fn aggregate_mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Renders `mean ± std` with four decimals, the format of the results tables.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: [usize; 2], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let p = t([1, 3], &[1.0, 0.0, 0.0]);
        assert!(cross_entropy(&p, &p).unwrap().mean_loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_three_class() {
        let p = t([1, 3], &[1.0 / 3.0; 3]);
        for k in 0..3 {
            let mut tg = [0.0; 3];
            tg[k] = 1.0;
            let l = cross_entropy(&p, &t([1, 3], &tg)).unwrap();
            assert!((l.mean_loss - 1.098612).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_mean_matches_scalar_formula() {
        let p = t([2, 3], &[0.7, 0.2, 0.1, 0.1, 0.3, 0.6]);
        let tg = t([2, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let expected = (-(0.7f64).ln() - (0.3f64).ln()) / 2.0;
        let l = cross_entropy(&p, &tg).unwrap();
        assert!((l.mean_loss - expected).abs() < 1e-12);
        assert_eq!(l.batch_size, 2);
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        let p = t([1, 2], &[0.0, 1.0]);
        let tg = t([1, 2], &[1.0, 0.0]);
        let l = cross_entropy(&p, &tg).unwrap().mean_loss;
        assert!((l - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn target_validation() {
        let p = t([1, 3], &[1.0 / 3.0; 3]);
        assert!(cross_entropy(&p, &t([1, 3], &[0.5, 0.5, 0.0])).is_err());
        assert!(cross_entropy(&p, &t([1, 3], &[0.0, 0.0, 0.0])).is_err());
        assert!(cross_entropy(&p, &t([1, 3], &[1.0, 1.0, 0.0])).is_err());
        assert!(cross_entropy(&p, &t([1, 2], &[1.0, 0.0])).is_err());
    }

    #[test]
    fn fused_gradient_examples() {
        let logits = t([2, 3], &[0.0; 6]);
        let tg = t([2, 3], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let g = softmax_xent_grad(&logits, &tg).unwrap();
        let expect = [(1.0 / 3.0 - 1.0) / 2.0, 1.0 / 6.0, 1.0 / 6.0];
        for row in g.data().chunks(3) {
            for (a, b) in row.iter().zip(expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        let tg = t([4, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&tg, &tg).unwrap(), 1.0);
        let p = t([4, 2], &[0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1]);
        assert_eq!(accuracy(&p, &tg).unwrap(), 0.25);
        let tie = t([1, 2], &[0.5, 0.5]);
        assert_eq!(accuracy(&tie, &t([1, 2], &[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn mean_std() {
        assert_eq!(aggregate_mean_std(&[5.0]).unwrap(), (5.0, 0.0));
        assert_eq!(aggregate_mean_std(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0));
        assert_eq!(aggregate_mean_std(&[4.2; 6]).unwrap().1, 0.0);
        assert!(aggregate_mean_std(&[]).is_err());
        assert_eq!(format_mean_std(97.92161, 0.02662), "97.9216 ± 0.0266");
    }

    fn one_hot(n: usize, c: usize, classes: &[usize]) -> Tensor<f64> {
        let mut d = vec![0.0; n * c];
        for (i, &k) in classes.iter().enumerate() {
            d[i * c + k % c] = 1.0;
        }
        Tensor::from_vec([n, c], d).unwrap()
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_grad_rows_sum_zero(
            logits in proptest::collection::vec(-10.0f64..10.0, 12),
            classes in proptest::collection::vec(0usize..4, 3),
        ) {
            let x = Tensor::from_vec([3, 4], logits).unwrap();
            let tg = one_hot(3, 4, &classes);
            let l = cross_entropy(&softmax(&x).unwrap(), &tg).unwrap();
            prop_assert!(l.mean_loss >= 0.0);
            let g = softmax_xent_grad(&x, &tg).unwrap();
            for row in g.data().chunks(4) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-6);
            }
        }

        #[test]
        fn fused_equals_composed(
            logits in proptest::collection::vec(-5.0f64..5.0, 8),
            classes in proptest::collection::vec(0usize..4, 2),
        ) {
            // chain rule through softmax: dL/dx_j = Σ_k dL/dy_k · y_k (δ_jk − y_j),
            // with dL/dy_k = −t_k / (n·y_k)
            let x = Tensor::from_vec([2, 4], logits).unwrap();
            let tg = one_hot(2, 4, &classes);
            let y = softmax(&x).unwrap();
            let fused = softmax_xent_grad(&x, &tg).unwrap();
            for i in 0..2 {
                let yr = &y.data()[i * 4..i * 4 + 4];
                let tr = &tg.data()[i * 4..i * 4 + 4];
                for j in 0..4 {
                    let mut g = 0.0;
                    for k in 0..4 {
                        let dl_dy = -tr[k] / (2.0 * yr[k]);
                        let delta = if j == k { 1.0 } else { 0.0 };
                        g += dl_dy * yr[k] * (delta - yr[j]);
                    }
                    prop_assert!((g - fused.data()[i * 4 + j]).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn accuracy_invariant_under_monotone_maps(
            probs in proptest::collection::vec(0.0f64..1.0, 15),
            classes in proptest::collection::vec(0usize..3, 5),
        ) {
            let p = Tensor::from_vec([5, 3], probs).unwrap();
            let tg = one_hot(5, 3, &classes);
            let a = accuracy(&p, &tg).unwrap();
            prop_assert_eq!(a, accuracy(&p.map(|v| (3.0 * v).exp() - 2.0), &tg).unwrap());
            prop_assert_eq!(a, accuracy(&p.map(|v| v.powi(3) * 7.0), &tg).unwrap());
        }
    }
}

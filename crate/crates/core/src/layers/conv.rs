//! 2-D convolution over NHWC batches, computed as im2col followed by a single GEMM.

use super::{LayerGrad, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent and leading pad for one spatial axis.
///
/// For `Same` the total pad is `max((ceil(in/stride) - 1)·stride + kernel - in, 0)`,
/// with the smaller half placed before the input.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if input == 0 || kernel == 0 || stride == 0 {
        return Err(Error::invalid(format!(
            "convolution extents must be positive (input {input}, kernel {kernel}, stride {stride})"
        )));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if kernel > input {
                return Err(Error::invalid(format!(
                    "kernel {kernel} larger than input {input} under valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dParams<S: Scalar = f32> {
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `[kernel_h, kernel_w, in_channels, filters]`
    pub weights: Tensor<S>,
    /// `[filters]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> Conv2dParams<S> {
    pub fn new(
        weights: Tensor<S>,
        bias: Tensor<S>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let &[kernel_h, kernel_w, _, filters] = weights.shape() else {
            return Err(Error::InvalidShape {
                shape: weights.shape().to_vec(),
                reason: "conv weights must be [kh, kw, in_c, filters]".into(),
            });
        };
        if bias.shape() != [filters] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be at least 1"));
        }
        Ok(Conv2dParams {
            filters,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let &[n, h, w, c] = input_shape else {
            return Err(Error::InvalidShape {
                shape: input_shape.to_vec(),
                reason: "conv2d input must be NHWC".into(),
            });
        };
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: input_shape.to_vec(),
                right: self.weights.shape().to_vec(),
            });
        }
        let (out_h, pad_top) = conv_output_extent(h, self.kernel_h, self.stride, self.padding)?;
        let (out_w, pad_left) = conv_output_extent(w, self.kernel_w, self.stride, self.padding)?;
        Ok(ConvGeometry {
            batch: n,
            in_h: h,
            in_w: w,
            in_c: c,
            out_h,
            out_w,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            stride: self.stride,
            pad_top,
            pad_left,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_c
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&v| v < extent)
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache<S: Scalar = f32> {
    geometry: ConvGeometry,
    /// `[batch·out_h·out_w, kernel_h·kernel_w·in_c]`
    cols: Vec<S>,
    weights: Tensor<S>,
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeometry) -> Vec<S> {
    let k = g.patch_len();
    let mut cols = vec![S::zero(); g.rows() * k];
    let mut row = 0;
    for b in 0..g.batch {
        let image = &x[b * g.in_h * g.in_w * g.in_c..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..g.kernel_h {
                    let Some(iy) = ConvGeometry::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kernel_w {
                        let Some(ix) = ConvGeometry::source(ox, kx, g.stride, g.pad_left, g.in_w)
                        else {
                            continue;
                        };
                        let src = (iy * g.in_w + ix) * g.in_c;
                        let off = (ky * g.kernel_w + kx) * g.in_c;
                        dst[off..off + g.in_c].copy_from_slice(&image[src..src + g.in_c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &[S], g: &ConvGeometry) -> Vec<S> {
    let k = g.patch_len();
    let mut dx = vec![S::zero(); g.batch * g.in_h * g.in_w * g.in_c];
    let mut row = 0;
    for b in 0..g.batch {
        let image = &mut dx[b * g.in_h * g.in_w * g.in_c..];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..g.kernel_h {
                    let Some(iy) = ConvGeometry::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kernel_w {
                        let Some(ix) = ConvGeometry::source(ox, kx, g.stride, g.pad_left, g.in_w)
                        else {
                            continue;
                        };
                        let dst = (iy * g.in_w + ix) * g.in_c;
                        let off = (ky * g.kernel_w + kx) * g.in_c;
                        for (d, &s) in image[dst..dst + g.in_c].iter_mut().zip(&src[off..off + g.in_c]) {
                            *d = *d + s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    p: &Conv2dParams<S>,
) -> Result<(Tensor<S>, ConvCache<S>)> {
    let g = p.geometry(x.shape())?;
    let cols = im2col(x.data(), &g);
    let (m, k, f) = (g.rows(), g.patch_len(), p.filters);
    let mut y = Vec::with_capacity(m * f);
    for _ in 0..g.batch * g.out_h * g.out_w {
        y.extend_from_slice(p.bias.data());
    }
    S::gemm(
        m,
        k,
        f,
        S::one(),
        &cols,
        (k as isize, 1),
        p.weights.data(),
        (f as isize, 1),
        S::one(),
        &mut y,
        (f as isize, 1),
    );
    let y = Tensor::from_vec([g.batch, g.out_h, g.out_w, f], y)?;
    Ok((
        y,
        ConvCache {
            geometry: g,
            cols,
            weights: p.weights.clone(),
        },
    ))
}

/// Gradients of `Σ d_y ⊙ y` with respect to the input, weights and bias.
pub fn conv2d_backward<S: Scalar>(d_y: &Tensor<S>, cache: &ConvCache<S>) -> Result<LayerGrad<S>> {
    let g = &cache.geometry;
    let f = cache.weights.shape()[3];
    let expected = [g.batch, g.out_h, g.out_w, f];
    if d_y.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: d_y.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let (m, k) = (g.rows(), g.patch_len());
    let dy = d_y.data();

    // d_weights = colsᵀ · d_y
    let mut dw = vec![S::zero(); k * f];
    S::gemm(
        k,
        m,
        f,
        S::one(),
        &cache.cols,
        (1, k as isize),
        dy,
        (f as isize, 1),
        S::zero(),
        &mut dw,
        (f as isize, 1),
    );

    let mut db = vec![S::zero(); f];
    for row in dy.chunks_exact(f) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }

    // d_cols = d_y · Wᵀ
    let mut dcols = vec![S::zero(); m * k];
    S::gemm(
        m,
        f,
        k,
        S::one(),
        dy,
        (f as isize, 1),
        cache.weights.data(),
        (1, f as isize),
        S::zero(),
        &mut dcols,
        (k as isize, 1),
    );
    let dx = col2im(&dcols, g);

    Ok(LayerGrad {
        d_input: Tensor::from_vec([g.batch, g.in_h, g.in_w, g.in_c], dx)?,
        d_params: vec![
            Tensor::from_vec(cache.weights.shape().to_vec(), dw)?,
            Tensor::from_vec([f], db)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extents() {
        assert_eq!(conv_output_extent(150, 3, 2, Padding::Same).unwrap(), (75, 0));
        // total pad = (75-1)*2 + 3 - 150 = 1 → split 0 before, 1 after
        assert_eq!(conv_output_extent(150, 3, 2, Padding::Same).unwrap().1, 0);
        assert_eq!(conv_output_extent(5, 3, 1, Padding::Same).unwrap(), (5, 1));
        assert_eq!(conv_output_extent(74, 3, 2, Padding::Same).unwrap(), (37, 0));
        assert_eq!(conv_output_extent(7, 3, 2, Padding::Valid).unwrap(), (3, 0));
        assert!(conv_output_extent(2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn reference_first_layer_shape() {
        let x = Tensor::<f32>::zeros([1, 150, 150, 3]).unwrap();
        let p = Conv2dParams::new(
            Tensor::zeros([3, 3, 3, 32]).unwrap(),
            Tensor::zeros([32]).unwrap(),
            2,
            Padding::Same,
        )
        .unwrap();
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 75, 75, 32]);
    }

    #[test]
    fn degenerate_one_by_one() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![3.0f32]).unwrap();
        let p = Conv2dParams::new(
            Tensor::from_vec([1, 1, 1, 1], vec![-2.5]).unwrap(),
            Tensor::zeros([1]).unwrap(),
            1,
            Padding::Valid,
        )
        .unwrap();
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[-7.5]);
    }

    #[test]
    fn bias_gradient_and_zero_upstream() {
        let x = Tensor::from_vec([2, 4, 4, 2], (0..64).map(|i| (i as f64 * 0.3).sin()).collect())
            .unwrap();
        let p = Conv2dParams::new(
            Tensor::from_vec([3, 3, 2, 3], (0..54).map(|i| (i as f64 * 0.7).cos()).collect())
                .unwrap(),
            Tensor::zeros([3]).unwrap(),
            2,
            Padding::Same,
        )
        .unwrap();
        let (y, cache) = conv2d_forward(&x, &p).unwrap();
        let dy = y.map(|v| v * 0.5 + 0.1);
        let g = conv2d_backward(&dy, &cache).unwrap();
        for f in 0..3 {
            let expect: f64 = dy.data().iter().skip(f).step_by(3).sum();
            assert!((g.d_params[1].data()[f] - expect).abs() < 1e-12);
        }

        let g0 = conv2d_backward(&Tensor::zeros_like(&y), &cache).unwrap();
        assert!(g0.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g0.d_params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = Tensor::<f32>::zeros([1, 4, 4, 2]).unwrap();
        let p = Conv2dParams::new(
            Tensor::zeros([3, 3, 3, 1]).unwrap(),
            Tensor::zeros([1]).unwrap(),
            1,
            Padding::Same,
        )
        .unwrap();
        assert!(conv2d_forward(&x, &p).is_err());
        let (_, cache) = conv2d_forward(
            &Tensor::<f32>::zeros([1, 4, 4, 3]).unwrap(),
            &p,
        )
        .unwrap();
        assert!(conv2d_backward(&Tensor::zeros([1, 3, 3, 1]).unwrap(), &cache).is_err());
    }
}

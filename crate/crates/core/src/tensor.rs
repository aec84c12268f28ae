//! Dense row-major tensors.
//!
//! Image batches use the NHWC layout throughout: `[batch, height, width, channels]`
//! with the channel axis fastest. The element type is generic over [`Scalar`] so that
//! the same kernels run in `f32` for training and in `f64` for gradient checking.

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// `c ← alpha·a·b + beta·c` for an `m×k` by `k×n` product with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("finite conversion")
    }
}

// Largest element offset a strided view may touch; used to bounds-check gemm calls.
fn max_offset(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k > 0 {
                    assert!(max_offset(m, k, a_strides) < a.len());
                    assert!(max_offset(k, n, b_strides) < b.len());
                }
                assert!(max_offset(m, n, c_strides) < c.len());
                // SAFETY: every offset the kernel can touch was bounds-checked above and
                // `c` is borrowed mutably, so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Binary elementwise operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Reduction operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Mean,
}

/// Batch of images interpreted as `[n, h, w, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        let s = Shape4 { n, h, w, c };
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "all NHWC extents must be at least 1".into(),
            });
        }
        Ok(s)
    }

    pub fn from_slice(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, h, w, c] => Shape4::new(n, h, w, c),
            _ => Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "expected rank-4 NHWC shape".into(),
            }),
        }
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.n, self.h, self.w, self.c]
    }

    pub fn numel(self) -> usize {
        self.n * self.h * self.w * self.c
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        if self.data.len() > PREVIEW {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: vec![],
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let numel = check_extents(&shape)?;
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {numel} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn fill(shape: impl Into<Vec<usize>>, value: S) -> Result<Self> {
        let shape = shape.into();
        let numel = check_extents(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::fill(shape, S::zero())
    }

    pub fn zeros_like(other: &Tensor<S>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![S::zero(); other.data.len()],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable access to the elements; the shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn shape4(&self) -> Result<Shape4> {
        Shape4::from_slice(&self.shape)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| T::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    fn ensure_same_shape(&self, other: &Tensor<S>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Elementwise binary operation on identically shaped tensors. Division follows
    /// IEEE semantics, so `x / 0` yields an infinity or NaN rather than an error.
    pub fn elementwise(&self, other: &Tensor<S>, op: BinaryOp) -> Result<Self> {
        self.ensure_same_shape(other, "elementwise")?;
        let f: fn(S, S) -> S = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
            BinaryOp::Div => |a, b| a / b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Tensor<S>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Div)
    }

    /// Adds `bias` (shape `[c]`) along the last axis.
    pub fn bias_add(&self, bias: &Tensor<S>) -> Result<Self> {
        let c = *self.shape.last().expect("rank >= 1");
        if bias.shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(c) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v = *v + b;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Tensor<S>) -> Result<Self> {
        let (m, k, k2, n) = match (self.shape.as_slice(), other.shape.as_slice()) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul (rank-2 operands required)",
                    left: self.shape.clone(),
                    right: other.shape.clone(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            &self.data,
            (k as isize, 1),
            &other.data,
            (n as isize, 1),
            S::zero(),
            &mut out,
            (n as isize, 1),
        );
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn reshape(&self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        let numel = check_extents(&new_shape)?;
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: new_shape,
            });
        }
        Ok(Tensor {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    pub fn into_reshape(self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        let numel = check_extents(&new_shape)?;
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: new_shape,
            });
        }
        Ok(Tensor {
            shape: new_shape,
            data: self.data,
        })
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let &[rows, cols] = self.shape.as_slice() else {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "transpose2d needs a rank-2 tensor".into(),
            });
        };
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..cols {
            for i in 0..rows {
                data.push(self.data[i * cols + j]);
            }
        }
        Ok(Tensor {
            shape: vec![cols, rows],
            data,
        })
    }

    /// Reduces along `axis`, removing it from the shape. Reducing a rank-1 tensor
    /// yields shape `[1]`.
    pub fn reduce(&self, axis: usize, op: ReduceOp) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let lane = (0..len).map(|r| self.data[base + r * inner]);
                let v = match op {
                    ReduceOp::Sum => lane.fold(S::zero(), |a, b| a + b),
                    ReduceOp::Mean => {
                        lane.fold(S::zero(), |a, b| a + b) / S::from_usize_lossy(len)
                    }
                    ReduceOp::Max => lane.fold(S::neg_infinity(), |a, b| a.max(b)),
                };
                out.push(v);
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor { shape, data: out })
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> Result<S> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Index of the largest element in each row of a rank-2 tensor; ties go to the
    /// lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let &[_, c] = self.shape.as_slice() else {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "argmax_rows needs a rank-2 tensor".into(),
            });
        };
        Ok(self
            .data
            .chunks_exact(c)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

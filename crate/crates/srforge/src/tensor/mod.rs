//! Dense rank-4 tensors (batch, channel, height, width) and the raw numeric
//! kernels everything else is built on.
//!
//! Tensors are value-semantic: every public operation returns a new tensor and
//! checks that the result is finite. Kernels accumulate in 64-bit regardless of
//! the element type.

mod conv;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
pub use conv::bench_conv3x3_rows2;

use crate::{Error, Result};
use std::fmt;

/// Element type of a [`Tensor`]: `f32` for production models, `f64` for
/// gradient checking.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Shape of a rank-4 tensor in NCHW order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 array in row-major NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// All-zero tensor.
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![S::ZERO; shape.len()],
        }
    }

    /// Constant-filled tensor.
    pub fn filled(shape: Shape, value: S) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wrap an existing buffer. The length must match the shape.
    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {} expects {} elements, got {}", shape, shape.len(), data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    /// Flat index of `(n, c, y, x)`.
    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.index(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One `(n, c)` image plane as a contiguous slice.
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Reinterpret the buffer under a new shape of the same length.
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor<S>> {
        if shape.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{} -> {}", self.shape, shape),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Convert elements to another precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    fn same_shape(&self, other: &Tensor<S>, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{} vs {}", self.shape, other.shape),
            });
        }
        Ok(())
    }

    /// Pointwise sum.
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Tensor { shape: self.shape, data }.check_finite("add")
    }

    /// Pointwise difference.
    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Tensor { shape: self.shape, data }.check_finite("sub")
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, factor: S) -> Result<Tensor<S>> {
        let data = self.data.iter().map(|&a| a * factor).collect();
        Tensor { shape: self.shape, data }.check_finite("scale")
    }

    /// Bound every element to `[lo, hi]`.
    pub fn clamp(&self, lo: S, hi: S) -> Result<Tensor<S>> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidConfig(format!("clamp bounds [{lo}, {hi}]")));
        }
        let data = self
            .data
            .iter()
            .map(|&a| if a < lo { lo } else if a > hi { hi } else { a })
            .collect();
        Tensor { shape: self.shape, data }.check_finite("clamp")
    }
}

/// Half mean squared error and its gradient with respect to `pred`.
///
/// The loss is `1/(2N) * sum((target - pred)^2)` over all `N` elements of the
/// batch; the gradient is `-(target - pred)/N`.
pub fn mse_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    pred.same_shape(target, "mse_loss")?;
    let n = pred.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = t.to_f64() - p.to_f64();
        acc += d * d;
        grad.push(S::from_f64(-d / n));
    }
    let loss = acc / (2.0 * n);
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "mse_loss" });
    }
    let grad = Tensor {
        shape: pred.shape,
        data: grad,
    }
    .check_finite("mse_loss")?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), data: Vec<f32>) -> Tensor {
        Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2, shape.3), data).unwrap()
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let r = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn add_zero_is_identity() {
        let a = t((1, 1, 2, 2), vec![1.0, -2.0, 3.5, 0.0]);
        let z = Tensor::zeros(a.shape());
        assert_eq!(a.add(&z).unwrap(), a);
    }

    #[test]
    fn sub_then_add_round_trips() {
        let y = t((1, 1, 2, 2), vec![0.25, 1.5, -3.0, 7.0]);
        let x = t((1, 1, 2, 2), vec![0.125, 0.5, 1.0, -2.0]);
        let r = y.sub(&x).unwrap();
        let back = x.add(&r).unwrap();
        for (a, b) in back.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= f32::EPSILON * b.abs());
        }
    }

    #[test]
    fn clamp_bounds_elements() {
        let a = t((1, 1, 1, 3), vec![-0.1, 0.5, 1.2]);
        let c = a.clamp(0.0, 1.0).unwrap();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 3));
        assert!(a.add(&b).is_err());
        assert!(a.sub(&b).is_err());
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let a = t((1, 1, 1, 2), vec![f32::MAX, 1.0]);
        assert!(matches!(a.scale(f32::MAX), Err(Error::NonFinite { .. })));
        let nan = t((1, 1, 1, 1), vec![f32::NAN]);
        assert!(nan.clamp(0.0, 1.0).is_err());
    }

    #[test]
    fn mse_loss_at_optimum_is_zero() {
        let p = t((2, 1, 2, 2), vec![0.1; 8]);
        let (loss, grad) = mse_loss(&p, &p).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_loss_of_unit_residual_is_half() {
        let p = t((1, 2, 3, 4), vec![0.0; 24]);
        let y = t((1, 2, 3, 4), vec![1.0; 24]);
        let (loss, grad) = mse_loss(&p, &y).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
        for &g in grad.data() {
            assert!((g + 1.0 / 24.0).abs() < 1e-7);
        }
    }
}

//! Dense row-major tensors and the numeric kernels the layers are built from.
//!
//! A [`Tensor`] owns a contiguous buffer and an immutable shape. There are no
//! strided or broadcast views; kernels that need a transpose get it through
//! the strides passed to the matrix-multiply backend.

mod conv;
mod matmul;
mod pool;
mod reduce;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use conv::{col2im, conv2d, conv2d_backward, im2col, ConvGeometry, Padding};
pub use matmul::matmul;
pub(crate) use matmul::{gemm, MatRef};
pub use pool::{pool2d, pool2d_backward, PoolMode};
pub use reduce::reduce_mean;

/// Floating point element type of a tensor.
///
/// Implemented for `f32` (training) and `f64` (gradient checking). A graph is
/// built for one element type; mixing is a type error.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` on raw strided storage.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must be
    /// in bounds for the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every float element type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float element converts to f64")
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Dense n-dimensional array stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {expected} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    /// Same shape as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Tensor {
            shape,
            data: (0..len).map(f).collect(),
        })
    }

    /// Zero-mean Gaussian entries with the given standard deviation.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut Rng) -> Result<Self> {
        Self::from_fn(shape, |_| {
            let z: f64 = rng.sample(StandardNormal);
            T::of(z * std)
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        Self::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// Converts to another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_ndim(&self, ndim: usize, op: &str) -> Result<()> {
        if self.shape.len() != ndim {
            return Err(Error::dim(format!(
                "{op}: expected a {ndim}-d tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Builds a tensor without validation; callers guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{:?} [", std::any::type_name::<T>(), self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ... ({} total)", self.data.len())?;
        }
        write!(f, "]")
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::dim("tensor shape must have at least one dimension"));
    }
    if shape.contains(&0) {
        return Err(Error::dim(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(Tensor::<f32>::zeros(vec![3, 0]).is_err());
        assert!(Tensor::<f32>::zeros(Vec::new()).is_err());
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64).unwrap();
        let r = t.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4]).is_err());
    }

    #[test]
    fn randn_is_seed_deterministic() {
        let a = Tensor::<f32>::randn(vec![64], 1.0, &mut Rng::new(3)).unwrap();
        let b = Tensor::<f32>::randn(vec![64], 1.0, &mut Rng::new(3)).unwrap();
        let c = Tensor::<f32>::randn(vec![64], 1.0, &mut Rng::new(4)).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
    }
}

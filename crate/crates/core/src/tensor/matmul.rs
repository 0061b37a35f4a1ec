use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Borrowed strided matrix view: `rows x cols` with row/column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub(crate) fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix view out of bounds");
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub(crate) fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = a * b + beta * c` where `c` is row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!(c.len(), a.rows * b.cols, "gemm output size");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        c.iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    // SAFETY: both views were bounds-checked at construction and the output
    // length is asserted above; strides describe row-major or transposed
    // row-major layouts of those same buffers.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Matrix product of a `M x K` and a `K x N` tensor.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim(format!(
            "matmul: cannot multiply {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(
        MatRef::row_major(&a.data, m, k),
        MatRef::row_major(&b.data, k, n),
        T::zero(),
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_product() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let i = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul::<f64>(&a, &i).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
        let c = matmul::<f64>(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[5.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Tensor::<f64>::randn(vec![7, 5], 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::randn(vec![5, 3], 1.0, &mut rng).unwrap();
        let c = matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(naive(&a, &b)) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(vec![4, 2]).unwrap();
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn transposed_views() {
        let a = Tensor::<f64>::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        // a^T a, 3x3
        let mut c = vec![0.0; 9];
        gemm(
            MatRef::row_major(a.data(), 2, 3).t(),
            MatRef::row_major(a.data(), 2, 3),
            0.0,
            &mut c,
        );
        assert_eq!(c, vec![17., 22., 27., 22., 29., 36., 27., 36., 45.]);
    }
}

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Arithmetic mean over `axes`; reduced dimensions are removed. Reducing every
/// axis yields a one-element tensor of shape `[1]`.
pub fn reduce_mean<T: Element>(t: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    if axes.is_empty() {
        return Err(Error::invalid("reduce_mean: empty reduction set"));
    }
    let ndim = t.ndim();
    let mut reduced = vec![false; ndim];
    for &a in axes {
        if a >= ndim {
            return Err(Error::invalid(format!(
                "reduce_mean: axis {a} out of range for shape {:?}",
                t.shape()
            )));
        }
        if reduced[a] {
            return Err(Error::invalid(format!("reduce_mean: axis {a} listed twice")));
        }
        reduced[a] = true;
    }

    let shape = t.shape();
    let out_shape: Vec<usize> = (0..ndim).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
    let count: usize = (0..ndim).filter(|&d| reduced[d]).map(|d| shape[d]).product();

    // Stride of each input axis inside the output buffer (0 for reduced axes).
    let mut out_strides = vec![0usize; ndim];
    let mut s = 1;
    for d in (0..ndim).rev() {
        if !reduced[d] {
            out_strides[d] = s;
            s *= shape[d];
        }
    }

    let mut sums = vec![T::zero(); s];
    let mut index = vec![0usize; ndim];
    for &v in t.data() {
        let o: usize = index.iter().zip(&out_strides).map(|(i, st)| i * st).sum();
        sums[o] = sums[o] + v;
        for d in (0..ndim).rev() {
            index[d] += 1;
            if index[d] < shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    let n = T::of(count as f64);
    let data: Vec<T> = sums.into_iter().map(|v| v / n).collect();
    let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
    Ok(Tensor::from_parts(out_shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn vector_mean() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(reduce_mean(&t, &[0]).unwrap().data(), &[2.0]);
    }

    #[test]
    fn constant_tensor() {
        let t = Tensor::<f64>::full(vec![3, 4, 2], 0.375).unwrap();
        let m = reduce_mean(&t, &[0, 2]).unwrap();
        assert_eq!(m.shape(), &[4]);
        assert!(m.data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn rows_match_summation_oracle() {
        let t = Tensor::<f64>::randn(vec![4, 5], 1.0, &mut Rng::new(2)).unwrap();
        let m = reduce_mean(&t, &[1]).unwrap();
        for r in 0..4 {
            let oracle: f64 = t.data()[r * 5..r * 5 + 5].iter().sum::<f64>() / 5.0;
            assert!((m.data()[r] - oracle).abs() <= 1e-15);
        }
        let cols = reduce_mean(&t, &[0]).unwrap();
        for c in 0..5 {
            let oracle: f64 = (0..4).map(|r| t.data()[r * 5 + c]).sum::<f64>() / 4.0;
            assert!((cols.data()[c] - oracle).abs() <= 1e-15);
        }
    }

    #[test]
    fn concatenated_halves() {
        let half = Tensor::<f64>::randn(vec![6], 1.0, &mut Rng::new(8)).unwrap();
        let mut both = half.data().to_vec();
        both.extend_from_slice(half.data());
        let both = Tensor::new(vec![12], both).unwrap();
        let a = reduce_mean(&half, &[0]).unwrap().data()[0];
        let b = reduce_mean(&both, &[0]).unwrap().data()[0];
        assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn errors() {
        let t = Tensor::<f32>::zeros(vec![2, 2]).unwrap();
        assert!(matches!(reduce_mean(&t, &[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(reduce_mean(&t, &[2]), Err(Error::InvalidArgument(_))));
        assert!(matches!(reduce_mean(&t, &[1, 1]), Err(Error::InvalidArgument(_))));
    }
}

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean softmax cross-entropy over a batch of `N x C` logits, and its gradient
/// `(softmax - onehot) / N`. Uses max subtraction for stability.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_ndim(2, "softmax_cross_entropy")?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::dim(format!(
            "softmax_cross_entropy: {n} rows of logits but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        loss = loss + (z.ln() - (row[label] - max));
        for (j, e) in exps.into_iter().enumerate() {
            let p = e / z;
            let y = if j == label { T::one() } else { T::zero() };
            grad.push((p - y) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::from_parts(vec![n, c], grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn uniform_logits() {
        let logits = Tensor::<f64>::zeros(vec![3, 10]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_class() {
        let logits = Tensor::<f64>::new(vec![1, 3], vec![0.0, 800.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-12 && loss.is_finite());
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_match_fd() {
        let mut rng = Rng::new(4);
        let logits = Tensor::<f64>::randn(vec![4, 5], 2.0, &mut rng).unwrap();
        let labels = [1, 0, 4, 2];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        for row in grad.data().chunks_exact(5) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&plus, &labels).unwrap().0
                - softmax_cross_entropy(&minus, &labels).unwrap().0)
                / (2.0 * h);
            let a = grad.data()[i];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-6, "{a} vs {fd}");
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(vec![1, 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::InvalidArgument(_))
        ));
    }
}

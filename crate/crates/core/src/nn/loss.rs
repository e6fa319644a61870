use super::{NnError, Tensor};
use crate::Scalar;

/// Mean cross-entropy over the batch. `logits` is `[B, K, ...]` with `K` classes per sample
/// (trailing dims must be 1). Returns the loss and its gradient w.r.t. the logits.
pub fn loss_ce<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    let b = logits.batch();
    if labels.len() != b {
        return Err(NnError::ShapeMismatch { expected: vec![b], actual: vec![labels.len()] });
    }
    let k = logits.numel() / b;
    if logits.dims()[2..].iter().any(|&d| d != 1) || labels.iter().any(|&l| l >= k) {
        return Err(NnError::ShapeMismatch { expected: vec![b, k, 1, 1], actual: logits.dims().to_vec() });
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Tensor::zeros(logits.dims());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        total += log_z - row[label];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gj = (p - if j == label { T::one() } else { T::zero() }) * inv_b;
        }
    }
    Ok((total * inv_b, grad))
}

/// Mean squared error over all elements, with its gradient w.r.t. `pred`.
pub fn loss_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), NnError> {
    if pred.dims() != target.dims() {
        return Err(NnError::ShapeMismatch { expected: target.dims().to_vec(), actual: pred.dims().to_vec() });
    }
    let n = T::of(pred.numel() as f64);
    let two = T::of(2.0);
    let mut grad = Tensor::zeros(pred.dims());
    let mut total = T::zero();
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        total += d * d;
        *g = two * d / n;
    }
    Ok((total / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros(&[3, 10, 1, 1]);
        let (l, _) = loss_ce(&logits, &[0, 4, 9]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_gradient() {
        let logits = Tensor::<f64>::zeros(&[1, 2]);
        let (_, g) = loss_ce(&logits, &[0]).unwrap();
        assert_eq!(g.data(), &[-0.5, 0.5]);
        let logits = Tensor::<f64>::zeros(&[2, 2]);
        let (_, g) = loss_ce(&logits, &[0, 1]).unwrap();
        assert_eq!(g.data(), &[-0.25, 0.25, 0.25, -0.25]);
    }

    #[test]
    fn confident_logits_vanish() {
        let logits = Tensor::<f64>::new(vec![1, 3], vec![20.0, 0.0, 0.0]).unwrap();
        let (l, _) = loss_ce(&logits, &[0]).unwrap();
        assert!((0.0..1e-8).contains(&l), "{l}");
    }

    #[test]
    fn mse_zero_when_equal() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let (l, g) = loss_mse(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(loss_mse(&a, &Tensor::zeros(&[3, 2])).is_err());
    }
}

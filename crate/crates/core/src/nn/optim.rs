use super::Parameter;
use crate::Scalar;

/// `value <- value - lr * (grad + 2 * weight_decay * value)`, then zero the gradient.
///
/// The decay term is the gradient of `weight_decay * ||w||^2`.
pub fn sgd_step<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Parameter<T>>, lr: T, weight_decay: T) {
    let two_wd = T::of(2.0) * weight_decay;
    for p in params {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()) {
            *v -= lr * (*g + two_wd * *v);
            *g = T::zero();
        }
    }
}

/// Adam with bias correction. State is keyed by the order parameters are passed in, so
/// callers must pass the same parameters in the same order every step.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam { lr, beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8), step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for (i, p) in params.into_iter().enumerate() {
            if self.m.len() <= i {
                self.m.push(vec![T::zero(); p.value.numel()]);
                self.v.push(vec![T::zero(); p.value.numel()]);
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()).enumerate() {
                m[j] = self.beta1 * m[j] + (T::one() - self.beta1) * *g;
                v[j] = self.beta2 * v[j] + (T::one() - self.beta2) * *g * *g;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *g = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_param(v: f64) -> Parameter<f64> {
        Parameter::new(Tensor::new(vec![1], vec![v]).unwrap())
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut p = scalar_param(0.7);
        sgd_step([&mut p], 0.1, 0.0);
        assert_eq!(p.value.data(), &[0.7]);
    }

    #[test]
    fn weight_decay_arithmetic() {
        let mut p = scalar_param(1.0);
        sgd_step([&mut p], 0.1, 0.5);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, w <- w - 0.1 * 2w = 0.8 w, so |w_100| = 0.8^100 ~ 2e-10
        let mut p = scalar_param(1.0);
        for _ in 0..100 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * w;
            sgd_step([&mut p], 0.1, 0.0);
        }
        let w = p.value.data()[0];
        assert!(w.abs() < 1e-6);
        assert!((w - 0.8f64.powi(100)).abs() < 1e-18);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = scalar_param(3.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (w - 1.0);
            opt.step([&mut p]);
        }
        assert!((p.value.data()[0] - 1.0).abs() < 1e-3);
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SearchError;
use crate::graph::SuperNet;
use crate::nn::{NnError, Parameter, Sequential, Tensor};
use crate::Scalar;

/// Weights for every candidate of a supernet. Each candidate path owns its parameters; the
/// stem and head are shared.
#[derive(Debug, Clone)]
pub struct SuperNetModel<T> {
    pub net: SuperNet,
    pub stem: Sequential<T>,
    pub stages: Vec<Vec<Sequential<T>>>,
    pub head: Sequential<T>,
    /// Output of each stage from the last forward pass.
    stage_outputs: Vec<Tensor<T>>,
    active: Vec<usize>,
}

impl<T: Scalar> SuperNetModel<T> {
    /// Initializes stem, every candidate in order, then head from one seeded stream.
    pub fn new(net: &SuperNet, seed: u64) -> Result<Self, SearchError> {
        let report = net.validate();
        if !report.is_valid() {
            return Err(NnError::InvalidOp(format!("invalid supernet: {:?}", report.findings)).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Sequential::new(&net.stem, &mut rng)?;
        let mut stages = Vec::with_capacity(net.stages.len());
        for st in &net.stages {
            let mut cands = Vec::with_capacity(st.len());
            for c in &st.candidates {
                cands.push(Sequential::new(c.ops(), &mut rng)?);
            }
            stages.push(cands);
        }
        let head = Sequential::new(&net.head, &mut rng)?;
        Ok(SuperNetModel { net: net.clone(), stem, stages, head, stage_outputs: Vec::new(), active: Vec::new() })
    }

    /// Runs the path selected by `gate` (one candidate index per stage).
    pub fn forward(&mut self, x: &Tensor<T>, gate: &[usize]) -> Result<Tensor<T>, SearchError> {
        if gate.len() != self.stages.len() {
            return Err(SearchError::LengthMismatch(gate.len(), self.stages.len()));
        }
        let mut cur = self.stem.forward(x)?;
        self.stage_outputs.clear();
        for (stage, &g) in self.stages.iter_mut().zip(gate) {
            let cand = stage.get_mut(g).ok_or(SearchError::LengthMismatch(g, 0))?;
            cur = cand.forward(&cur)?;
            self.stage_outputs.push(cur.clone());
        }
        self.active = gate.to_vec();
        Ok(self.head.forward(&cur)?)
    }

    /// Backpropagates through the last forward path, accumulating parameter gradients on it.
    /// Returns `dL/dg` for the active gate of each stage: the stage output is `g * y` with
    /// `g = 1`, so `dL/dg = <dL/dy, y>`.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Vec<T>, SearchError> {
        if self.stage_outputs.len() != self.stages.len() {
            return Err(NnError::StaleState.into());
        }
        let mut g = self.head.backward(upstream)?;
        let mut dl_dg = vec![T::zero(); self.stages.len()];
        for i in (0..self.stages.len()).rev() {
            dl_dg[i] = g.dot(&self.stage_outputs[i]);
            g = self.stages[i][self.active[i]].backward(&g)?;
        }
        self.stem.backward(&g)?;
        self.stage_outputs.clear();
        Ok(dl_dg)
    }

    /// Parameters touched by the path `gate`.
    pub fn active_params_mut(&mut self, gate: &[usize]) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.stem.params_mut().collect();
        for (stage, &g) in self.stages.iter_mut().zip(gate) {
            out.extend(stage[g].params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.stem.zero_grad();
        self.stages.iter_mut().flatten().for_each(Sequential::zero_grad);
        self.head.zero_grad();
    }

    /// `||w||^2` over all weights of the supernet.
    pub fn weight_sq_norm(&self) -> T {
        self.stem.weight_sq_norm()
            + self.stages.iter().flatten().map(Sequential::weight_sq_norm).sum::<T>()
            + self.head.weight_sq_norm()
    }

    /// Flat copy of every weight, in a fixed order (for equality checks).
    pub fn weights_snapshot(&self) -> Vec<T> {
        let mut out = Vec::new();
        let mut push = |s: &Sequential<T>| {
            for (_, p) in s.named_params() {
                out.extend_from_slice(p.value.data());
            }
        };
        push(&self.stem);
        self.stages.iter().flatten().for_each(&mut push);
        push(&self.head);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::three_stage;
    use crate::nn::loss_ce;

    #[test]
    fn forward_backward_along_a_path() {
        let net = three_stage();
        let mut m = SuperNetModel::<f64>::new(&net, 3).unwrap();
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let out = m.forward(&x, &[1, 0, 1]).unwrap();
        assert_eq!(out.dims(), &[2, 10, 1, 1]);
        let (_, g) = loss_ce(&out, &[3, 7]).unwrap();
        let dl_dg = m.backward(&g).unwrap();
        assert_eq!(dl_dg.len(), 3);
        assert!(dl_dg.iter().all(|v| v.is_finite()));
        // inactive candidates accumulate nothing
        for (i, active) in [1usize, 0, 1].iter().enumerate() {
            for (j, cand) in m.stages[i].iter().enumerate() {
                let touched = cand.named_params().iter().any(|(_, p)| p.grad.sum_sq() > 0.0);
                if j != *active {
                    assert!(!touched, "stage {i} candidate {j}");
                }
            }
        }
        assert!(matches!(m.backward(&g), Err(SearchError::Nn(NnError::StaleState))));
    }

    #[test]
    fn gate_gradient_matches_output_scaling() {
        // dL/dg is the derivative of the loss when the stage output is scaled by g at g = 1
        let net = three_stage();
        let mut m = SuperNetModel::<f64>::new(&net, 5).unwrap();
        let x = Tensor::from_fn(&[1, 3, 16, 16], |i| ((i * 31) % 17) as f64 / 17.0 - 0.4);
        let gate = [0, 1, 0];
        let out = m.forward(&x, &gate).unwrap();
        let (_, g) = loss_ce(&out, &[2]).unwrap();
        let dl_dg = m.backward(&g).unwrap();
        m.zero_grad();

        let loss_scaled = |m: &mut SuperNetModel<f64>, scale: f64| {
            let mut cur = m.stem.forward(&x).unwrap();
            for (i, &c) in gate.iter().enumerate() {
                cur = m.stages[i][c].forward(&cur).unwrap();
                if i == 1 {
                    cur.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
            let out = m.head.forward(&cur).unwrap();
            loss_ce(&out, &[2]).unwrap().0
        };
        let h = 1e-5;
        let fd = (loss_scaled(&mut m, 1.0 + h) - loss_scaled(&mut m, 1.0 - h)) / (2.0 * h);
        assert!((fd - dl_dg[1]).abs() < 1e-6 * dl_dg[1].abs().max(1e-3), "{fd} vs {}", dl_dg[1]);
    }

    #[test]
    fn init_is_deterministic() {
        let net = three_stage();
        let a = SuperNetModel::<f64>::new(&net, 9).unwrap();
        let b = SuperNetModel::<f64>::new(&net, 9).unwrap();
        assert_eq!(a.weights_snapshot(), b.weights_snapshot());
        let c = SuperNetModel::<f64>::new(&net, 10).unwrap();
        assert_ne!(a.weights_snapshot(), c.weights_snapshot());
    }
}

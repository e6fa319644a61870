//! Latency-regularized supernet search with sampled binary path gates.
//!
//! Each stage `i` carries architecture parameters `alpha_i`; `p_i = softmax(alpha_i)` are the
//! path probabilities and a one-hot gate sampled from `p_i` selects the single active
//! candidate per batch. The architecture gradient uses the full softmax Jacobian,
//! `dL/d alpha_i = sum_j dL/dg_j * p_j * (delta_ij - p_i)`, with `dL/dg_j` available only for the
//! sampled path (zero elsewhere). Note the `p_j` factor: the derivative of `p_j` w.r.t.
//! `alpha_j` is `p_j (1 - p_j)`, and dropping `p_j` would not be a gradient of anything.
//!
//! Training alternates weight steps on the training split with architecture steps on the
//! validation split; the expected-latency term enters the architecture step in closed form.

mod compact;
mod config;
mod model;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compact::{evaluate, train_compact, CompactModel, Metrics, TrainConfig};
pub use config::SearchConfig;
pub use model::SuperNetModel;
pub use train::{train_search, RoundRecord, SearchHistory, SearchState};

use crate::data::Targets;
use crate::graph::{CompactNet, GraphError, StageChoice, SuperNet};
use crate::latency::LatencyError;
use crate::nn::{loss_ce, loss_mse, NnError, Tensor};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss in round {round} ({phase} step {step}); state: {snapshot}")]
    NonFiniteLoss { round: usize, phase: &'static str, step: usize, snapshot: String },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("architecture parameters are not finite")]
    NonFiniteArch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `softmax(alpha)` with max-subtraction.
pub fn path_probs<T: Scalar>(alpha: &[T]) -> Vec<T> {
    let max = alpha.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = alpha.iter().map(|&a| (a - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Draws a candidate index from the categorical distribution `p` (inverse CDF on one
/// uniform draw). Indices with zero probability are never returned.
pub fn sample_gate<T: Scalar, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (j, &pj) in p.iter().enumerate() {
        let pj = pj.as_f64();
        if pj > 0.0 {
            cum += pj;
            last = j;
            if u < cum {
                return j;
            }
        }
    }
    last
}

/// `dL/d alpha_i = sum_j dL/dg_j * p_j * (delta_ij - p_i)`.
pub fn arch_grad<T: Scalar>(dl_dg: &[T], p: &[T]) -> Result<Vec<T>, SearchError> {
    if dl_dg.len() != p.len() {
        return Err(SearchError::LengthMismatch(dl_dg.len(), p.len()));
    }
    // sum_j d_j p_j (delta_ij - p_i) = p_i (d_i - sum_j d_j p_j)
    let mean: T = dl_dg.iter().zip(p).map(|(&d, &pj)| d * pj).sum();
    Ok(dl_dg.iter().zip(p).map(|(&d, &pi)| pi * (d - mean)).collect())
}

/// `ce + lambda1 * ||w||^2 + lambda2 * E[latency]`. Training applies the `lambda1` term as SGD
/// weight decay; this recomputes it for logging.
pub fn total_loss<T: Scalar>(ce: T, weight_sq_norm: T, e_latency: T, cfg: &SearchConfig) -> T {
    ce + T::of(cfg.lambda1) * weight_sq_norm + T::of(cfg.lambda2) * e_latency
}

/// Cross-entropy for labels, mean squared error for target images.
pub fn task_loss<T: Scalar>(out: &Tensor<T>, targets: &Targets<T>) -> Result<(T, Tensor<T>), NnError> {
    match targets {
        Targets::Labels(l) => loss_ce(out, l),
        Targets::Images(t) => loss_mse(out, t),
    }
}

/// Architecture parameters, one vector per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams<T> {
    pub alpha: Vec<Vec<T>>,
}

impl<T: Scalar> ArchParams<T> {
    /// All zeros, i.e. uniform path probabilities.
    pub fn zeros(stage_sizes: &[usize]) -> Self {
        ArchParams { alpha: stage_sizes.iter().map(|&m| vec![T::zero(); m]).collect() }
    }

    pub fn probs(&self) -> Vec<Vec<T>> {
        self.alpha.iter().map(|a| path_probs(a)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().flatten().all(|v| v.is_finite())
    }

    /// Per stage: index of the largest `alpha` (lowest index on ties) and whether it tied.
    pub fn argmax(&self) -> Vec<StageChoice> {
        self.alpha
            .iter()
            .map(|a| {
                let mut best = 0;
                for (j, &v) in a.iter().enumerate().skip(1) {
                    if v > a[best] {
                        best = j;
                    }
                }
                let tie = a.iter().enumerate().any(|(j, &v)| j != best && v == a[best]);
                StageChoice { index: best, tie }
            })
            .collect()
    }
}

/// One sampled candidate per stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathGate {
    pub active: Vec<usize>,
    pub stage_sizes: Vec<usize>,
}

impl PathGate {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(probs: &[Vec<T>], rng: &mut R) -> Self {
        PathGate {
            active: probs.iter().map(|p| sample_gate(p, rng)).collect(),
            stage_sizes: probs.iter().map(Vec::len).collect(),
        }
    }

    pub fn one_hot(&self, stage: usize) -> Vec<u8> {
        (0..self.stage_sizes[stage]).map(|j| u8::from(j == self.active[stage])).collect()
    }
}

/// Keeps the highest-weight candidate of each stage.
pub fn derive_compact<T: Scalar>(net: &SuperNet, arch: &ArchParams<T>) -> Result<CompactNet, SearchError> {
    let sizes = net.stage_sizes();
    if arch.alpha.len() != sizes.len() {
        return Err(SearchError::LengthMismatch(arch.alpha.len(), sizes.len()));
    }
    for (a, &m) in arch.alpha.iter().zip(&sizes) {
        if a.len() != m {
            return Err(SearchError::LengthMismatch(a.len(), m));
        }
    }
    let choices = arch.argmax();
    let idx: Vec<usize> = choices.iter().map(|c| c.index).collect();
    let mut compact = CompactNet::from_choices(net, &idx)?;
    compact.choices = choices;
    Ok(compact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::three_stage;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probs_examples() {
        assert_eq!(path_probs(&[0.0, 0.0]), vec![0.5, 0.5]);
        for c in [-700.0, 0.0, 3.5, 800.0] {
            let p: Vec<f64> = path_probs(&[c, c, c]);
            assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        let p = path_probs(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = path_probs(&[1000.0f32, 0.0]);
        assert!(p[0].is_finite() && p[0] == 1.0);
    }

    #[test]
    fn gate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_gate(&[1.0, 0.0], &mut rng) == 0));
        assert!((0..1000).all(|_| sample_gate(&[0.0, 1.0], &mut rng) == 1));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let hits = (0..100_000).filter(|_| sample_gate(&[0.5, 0.5], &mut rng) == 0).count();
        let freq = hits as f64 / 1e5;
        assert!((0.494..=0.506).contains(&freq), "{freq}");
        let draw = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            (0..50).map(|_| sample_gate(&[0.2, 0.3, 0.5], &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn arch_grad_examples() {
        assert_eq!(arch_grad(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), vec![0.25, -0.25]);
        let g: Vec<f64> = arch_grad(&[2.0, 2.0, 2.0], &[0.2, 0.3, 0.5]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(arch_grad(&[3.0, -1.0], &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(arch_grad(&[1.0], &[0.5, 0.5]), Err(SearchError::LengthMismatch(1, 2))));
    }

    #[test]
    fn arch_grad_matches_finite_differences() {
        // linearized loss sum_j softmax(alpha)_j d_j
        let alpha = [0.3, -1.2, 0.7];
        let d = [0.9, -0.4, 2.0];
        let f = |a: &[f64]| path_probs(a).iter().zip(&d).map(|(p, d)| p * d).sum::<f64>();
        let g = arch_grad(&d, &path_probs(&alpha)).unwrap();
        for i in 0..3 {
            let (mut ap, mut am) = (alpha, alpha);
            ap[i] += 1e-6;
            am[i] -= 1e-6;
            let fd = (f(&ap) - f(&am)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn total_loss_examples() {
        let mut cfg = SearchConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        assert_eq!(total_loss(1.7, 5.0, 9.0, &cfg), 1.7);
        cfg.lambda1 = 0.1;
        cfg.lambda2 = 0.5;
        assert!((total_loss(1.0f64, 2.0, 3.0, &cfg) - 2.7).abs() < 1e-15);
        let low = total_loss(1.0, 2.0, 3.0, &cfg);
        cfg.lambda2 = 0.6;
        assert!(total_loss(1.0, 2.0, 3.0, &cfg) > low);
    }

    #[test]
    fn derive_examples() {
        let net = three_stage();
        let arch = ArchParams { alpha: vec![vec![0.2, 1.3, -0.5], vec![1.0, 1.0], vec![0.0, 2.0]] };
        let c = derive_compact(&net, &arch).unwrap();
        assert_eq!(c.choices, vec![
            StageChoice { index: 1, tie: false },
            StageChoice { index: 0, tie: true },
            StageChoice { index: 1, tie: false },
        ]);
        assert_eq!(c.stages[0], net.stages[0].candidates[1]);
        let shifted = ArchParams { alpha: arch.alpha.iter().map(|a| a.iter().map(|v| v + 5.0).collect()).collect() };
        assert_eq!(derive_compact(&net, &shifted).unwrap(), c);
        let bad = ArchParams { alpha: vec![vec![0.0; 3]] };
        assert!(derive_compact(&net, &bad).is_err());
    }

    #[test]
    fn one_hot_gate() {
        let probs = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0]];
        let g = PathGate::sample(&probs, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(g.one_hot(0), vec![0, 1, 0]);
        assert_eq!(g.one_hot(1), vec![1, 0]);
    }
}

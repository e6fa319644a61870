use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{arch_grad, total_loss, ArchParams, PathGate, SearchConfig, SearchError, SuperNetModel};
use crate::data::Dataset;
use crate::graph::SuperNet;
use crate::latency::{latency_alpha_grad, LatencyTable, NetworkLatencyModel};
use crate::nn::sgd_step;
use crate::Scalar;

// independent random streams derived from the one seed
const STREAM_INIT: u64 = 0;
const STREAM_GATES: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_VAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Cycles through shuffled epochs of `0..n`.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        BatchSampler { order: (0..n).collect(), pos: n, rng }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        let n = self.order.len();
        let batch = batch.min(n);
        if self.pos + batch > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + batch].to_vec();
        self.pos += batch;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean task loss over the round's weight steps.
    pub train_loss: f64,
    /// Mean task loss over the round's architecture steps.
    pub val_loss: f64,
    /// Expected latency under the path probabilities at the end of the round.
    pub e_latency_ms: f64,
    /// `val_loss + lambda1 ||w||^2 + lambda2 E[latency]`.
    pub total_loss: f64,
    pub probs: Vec<Vec<f64>>,
    /// Argmax candidate per stage at the end of the round.
    pub chosen: Vec<usize>,
}

/// Append-only per-round log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    records: Vec<RoundRecord>,
}

impl SearchHistory {
    pub fn push(&mut self, rec: RoundRecord) -> Result<(), SearchError> {
        let expected = self.records.last().map_or(0, |r| r.round + 1);
        if rec.round != expected {
            return Err(SearchError::InvalidConfig(format!("round {} appended after {}", rec.round, expected)));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `round,train_loss,val_loss,e_latency_ms,stage{i}_cand{j},...`. Floats use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self, stage_sizes: &[usize]) -> String {
        let mut out = String::from("round,train_loss,val_loss,e_latency_ms");
        for (i, &m) in stage_sizes.iter().enumerate() {
            for j in 0..m {
                out.push_str(&format!(",stage{i}_cand{j}"));
            }
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.round, r.train_loss, r.val_loss, r.e_latency_ms));
            for p in r.probs.iter().flatten() {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trained supernet weights and architecture parameters.
#[derive(Debug, Clone)]
pub struct SearchState<T> {
    pub model: SuperNetModel<T>,
    pub arch: ArchParams<T>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Alternating search. Each round runs `weight_steps_per_round` SGD steps on `train` along a
/// freshly sampled path (only that path's weights change), then `arch_steps_per_round`
/// gradient steps on `alpha` using `val`, resampling the gates each step and leaving all
/// weights untouched. Deterministic given `cfg.seed`.
pub fn train_search<T: Scalar>(
    net: &SuperNet,
    lut: &LatencyTable,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &SearchConfig,
) -> Result<(SearchState<T>, SearchHistory), SearchError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    let latency = NetworkLatencyModel::from_lut(net, lut)?;
    let mut init = stream(cfg.seed, STREAM_INIT);
    let model = SuperNetModel::new(net, rand::Rng::gen(&mut init))?;
    let mut state = SearchState { model, arch: ArchParams::zeros(&net.stage_sizes()) };
    let mut history = SearchHistory::default();

    let mut gate_rng = stream(cfg.seed, STREAM_GATES);
    let mut train_batches = BatchSampler::new(train.len(), stream(cfg.seed, STREAM_TRAIN));
    let mut val_batches = BatchSampler::new(val.len(), stream(cfg.seed, STREAM_VAL));
    let (lr_w, wd) = (T::of(cfg.lr_weights), T::of(cfg.lambda1));
    let (lr_a, lambda2) = (T::of(cfg.lr_arch), T::of(cfg.lambda2));
    let stage_f: Vec<Vec<T>> = (0..net.stages.len()).map(|i| latency.stage_latencies(i)).collect();

    for round in 0..cfg.rounds {
        let snapshot = |state: &SearchState<T>, gate: &PathGate| {
            format!("alpha={:?} gate={:?}", state.arch.alpha, gate.active)
        };

        let mut train_losses = Vec::with_capacity(cfg.weight_steps_per_round);
        for step in 0..cfg.weight_steps_per_round {
            let gate = PathGate::sample(&state.arch.probs(), &mut gate_rng);
            let batch = train.batch(&train_batches.next(cfg.batch_size));
            let out = state.model.forward(&batch.inputs, &gate.active)?;
            let (loss, grad) = super::task_loss(&out, &batch.targets)?;
            if !loss.is_finite() {
                return Err(SearchError::NonFiniteLoss { round, phase: "weight", step, snapshot: snapshot(&state, &gate) });
            }
            state.model.backward(&grad)?;
            sgd_step(state.model.active_params_mut(&gate.active), lr_w, wd);
            train_losses.push(loss.as_f64());
        }

        let update_arch = round >= cfg.warmup_rounds;
        let mut val_losses = Vec::with_capacity(cfg.arch_steps_per_round);
        for step in 0..cfg.arch_steps_per_round {
            let probs = state.arch.probs();
            let gate = PathGate::sample(&probs, &mut gate_rng);
            let batch = val.batch(&val_batches.next(cfg.batch_size));
            let out = state.model.forward(&batch.inputs, &gate.active)?;
            let (loss, grad) = super::task_loss(&out, &batch.targets)?;
            if !loss.is_finite() {
                return Err(SearchError::NonFiniteLoss { round, phase: "arch", step, snapshot: snapshot(&state, &gate) });
            }
            let dl_dg_active = state.model.backward(&grad)?;
            state.model.zero_grad();
            val_losses.push(loss.as_f64());
            if !update_arch {
                continue;
            }
            for (i, p) in probs.iter().enumerate() {
                let mut dl_dg = vec![T::zero(); p.len()];
                dl_dg[gate.active[i]] = dl_dg_active[i];
                let g_ce = arch_grad(&dl_dg, p)?;
                let g_lat = latency_alpha_grad(p, &stage_f[i])?;
                for (a, (gc, gl)) in state.arch.alpha[i].iter_mut().zip(g_ce.into_iter().zip(g_lat)) {
                    *a -= lr_a * (gc + lambda2 * gl);
                }
            }
            if !state.arch.is_finite() {
                return Err(SearchError::NonFiniteArch);
            }
        }

        let probs = state.arch.probs();
        let e_lat = latency.expected(&probs)?.as_f64();
        let val_loss = mean(&val_losses);
        history.push(RoundRecord {
            round,
            train_loss: mean(&train_losses),
            val_loss,
            e_latency_ms: e_lat,
            total_loss: total_loss(val_loss, state.model.weight_sq_norm().as_f64(), e_lat, cfg),
            probs: probs.iter().map(|p| p.iter().map(|v| v.as_f64()).collect()).collect(),
            chosen: state.arch.argmax().iter().map(|c| c.index).collect(),
        })?;
    }
    Ok((state, history))
}

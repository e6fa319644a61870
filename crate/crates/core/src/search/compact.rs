use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{task_loss, SearchError};
use crate::data::{Dataset, Targets, PSNR_CAP_DB};
use crate::graph::CompactNet;
use crate::nn::{sgd_step, Sequential, Tensor};
use crate::Scalar;

/// Retraining hyperparameters for a derived network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, lr: 0.05, weight_decay: 1e-4, batch_size: 16, seed: 42 }
    }
}

/// A derived network with its own weights.
#[derive(Debug, Clone)]
pub struct CompactModel<T> {
    pub net: CompactNet,
    pub model: Sequential<T>,
}

impl<T: Scalar> CompactModel<T> {
    pub fn new(net: &CompactNet, seed: u64) -> Result<Self, SearchError> {
        let model = Sequential::new(&net.layers(), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(CompactModel { net: net.clone(), model })
    }

    /// Forward pass without retaining backward state.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, SearchError> {
        let out = self.model.forward(x)?;
        self.model.layers.iter_mut().for_each(|l| l.clear_cache());
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    /// Fraction of correct labels (classification).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    /// PSNR of the pooled squared error over the whole split, peak 1 (super-resolution).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
}

/// Trains a freshly initialized copy of `net` from scratch with minibatch SGD. Returns the
/// model and the mean training loss of each epoch.
pub fn train_compact<T: Scalar>(
    net: &CompactNet,
    train: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(CompactModel<T>, Vec<f64>), SearchError> {
    if train.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) || !(cfg.weight_decay.is_finite() && cfg.weight_decay >= 0.0) {
        return Err(SearchError::InvalidConfig("batch_size and lr must be positive".into()));
    }
    let mut cm = CompactModel::new(net, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (lr, wd) = (T::of(cfg.lr), T::of(cfg.weight_decay));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.batch(idx);
            let out = cm.model.forward(&batch.inputs)?;
            let (loss, grad) = task_loss(&out, &batch.targets)?;
            if !loss.is_finite() {
                return Err(SearchError::NonFiniteLoss {
                    round: epoch,
                    phase: "compact",
                    step,
                    snapshot: format!("weight norm {}", cm.model.weight_sq_norm()),
                });
            }
            cm.model.backward(&grad)?;
            sgd_step(cm.model.params_mut(), lr, wd);
            total += loss.as_f64();
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((cm, epoch_losses))
}

/// Mean loss plus accuracy or PSNR over `data`, in batches of `batch_size`.
pub fn evaluate<T: Scalar>(model: &mut CompactModel<T>, data: &Dataset<T>, batch_size: usize) -> Result<Metrics, SearchError> {
    if data.is_empty() {
        return Err(SearchError::EmptyDataset);
    }
    let n = data.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut sq_err = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk);
        let out = model.predict(&batch.inputs)?;
        let (l, _) = task_loss(&out, &batch.targets)?;
        loss += l.as_f64() * chunk.len() as f64;
        match &batch.targets {
            Targets::Labels(labels) => {
                let k = out.numel() / chunk.len();
                for (b, &label) in labels.iter().enumerate() {
                    let row = &out.data()[b * k..(b + 1) * k];
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    correct += usize::from(best == label);
                }
            }
            Targets::Images(t) => {
                sq_err += out.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>();
                count += t.numel();
            }
        }
    }
    let loss = loss / n as f64;
    Ok(match &data.targets {
        Targets::Labels(_) => Metrics { loss, accuracy: Some(correct as f64 / n as f64), psnr_db: None },
        Targets::Images(_) => {
            let mse = sq_err / count as f64;
            let db = if mse == 0.0 { PSNR_CAP_DB } else { (-10.0 * mse.log10()).min(PSNR_CAP_DB) };
            Metrics { loss, accuracy: None, psnr_db: Some(db) }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_classification_dataset, generate_sr_dataset, DatasetSpec};
    use crate::graph::{OperatorSpec, Task, TensorShape};

    #[test]
    fn linear_probe_separates_fixed_phase_classes() {
        let mut spec = DatasetSpec::classification(200, 8, 2, 42);
        spec.random_phase = false;
        let d = generate_classification_dataset(&spec).unwrap();
        let mut net = CompactNet::chain(Task::Classification, TensorShape::new(3, 8, 8), vec![OperatorSpec::linear(192, 2)]);
        net.num_classes = Some(2);
        let cfg = TrainConfig { epochs: 20, lr: 0.05, weight_decay: 0.0, batch_size: 16, seed: 1 };
        let (mut m, losses) = train_compact::<f64>(&net, &d.train, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let acc = evaluate(&mut m, &d.train, 64).unwrap().accuracy.unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn constant_images_are_recovered_exactly_by_nearest_upsampling() {
        let mut spec = DatasetSpec::super_resolution(10, 4, 9);
        spec.constant_images = true;
        let d = generate_sr_dataset(&spec).unwrap();
        let net = CompactNet::chain(Task::SuperResolution, TensorShape::new(3, 4, 4), vec![OperatorSpec::upsample_nearest(3, 2)]);
        let mut m = CompactModel::<f64>::new(&net, 0).unwrap();
        let met = evaluate(&mut m, &d.test, 4).unwrap();
        assert_eq!(met.psnr_db, Some(crate::data::PSNR_CAP_DB));
        assert_eq!(met.loss, 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let d = generate_classification_dataset(&DatasetSpec::classification(40, 8, 4, 3)).unwrap();
        let net = CompactNet::chain(
            Task::Classification,
            TensorShape::new(3, 8, 8),
            vec![OperatorSpec::conv(3, 2, 3, 4), OperatorSpec::relu(4), OperatorSpec::linear(64, 4)],
        );
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..Default::default() };
        let (a, la) = train_compact::<f64>(&net, &d.train, &cfg).unwrap();
        let (b, lb) = train_compact::<f64>(&net, &d.train, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(
            crate::nn::Checkpoint::from_model(&a.model),
            crate::nn::Checkpoint::from_model(&b.model)
        );
    }
}

//! Built-in desk-scale search spaces and matching dataset recipes.

use crate::data::DatasetSpec;
use crate::graph::{Candidate, MixedStage, OperatorSpec, SuperNet, Task, TensorShape};
use crate::search::{SearchConfig, TrainConfig};

const CLS_CHANNELS: u32 = 16;
const CLS_CLASSES: u32 = 10;
const CLS_SIZE: u32 = 16;

/// 3 stages x 3 candidates on 3x16x16 inputs, 10 classes:
///
/// - stem: 3x3 stride-2 convolution to 16 channels (8x8 maps)
/// - stage 0: 3x3 conv | 5x5 conv | depthwise 3x3 + pointwise
/// - stage 1: ReLU | LeakyReLU | per-channel LeakyReLU
/// - stage 2: 3x3 conv + ReLU | pointwise conv + ReLU | identity
/// - head: 5x5 stride-4 average pool (2x2 maps), linear classifier
pub fn classification_supernet() -> SuperNet {
    let c = CLS_CHANNELS;
    SuperNet {
        task: Task::Classification,
        input_shape: TensorShape::new(3, CLS_SIZE, CLS_SIZE),
        stem: vec![OperatorSpec::conv(3, 2, 3, c)],
        stages: vec![
            MixedStage::new(vec![
                OperatorSpec::conv(3, 1, c, c).into(),
                OperatorSpec::conv(5, 1, c, c).into(),
                Candidate::path(vec![OperatorSpec::dwconv(3, 1, c), OperatorSpec::pointwise(1, c, c)]),
            ]),
            MixedStage::new(vec![
                OperatorSpec::relu(c).into(),
                OperatorSpec::leaky_relu(c, 0.1).into(),
                OperatorSpec::leaky_relu_per_channel(c, 0.1).into(),
            ]),
            MixedStage::new(vec![
                Candidate::path(vec![OperatorSpec::conv(3, 1, c, c), OperatorSpec::relu(c)]),
                Candidate::path(vec![OperatorSpec::pointwise(1, c, c), OperatorSpec::relu(c)]),
                OperatorSpec::identity(c).into(),
            ]),
        ],
        head: vec![OperatorSpec::avg_pool(5, 4, c), OperatorSpec::linear(c * 4, CLS_CLASSES)],
        num_classes: Some(CLS_CLASSES),
        sr_scale: None,
    }
}

pub fn classification_data(seed: u64) -> DatasetSpec {
    DatasetSpec { noise: 2.0, ..DatasetSpec::classification(1000, CLS_SIZE, CLS_CLASSES, seed) }
}

const SR_CHANNELS: u32 = 8;
const SR_SIZE: u32 = 32;

/// 3x32x32 -> 3x64x64 super-resolution:
///
/// - stem: 3x3 convolution to 8 channels
/// - stage 0: 3x3 conv | 5x5 conv
/// - stage 1: ReLU | LeakyReLU
/// - stage 2: nearest upsampling | bilinear upsampling | pointwise expansion + DepthToSpace
/// - head: 3x3 convolution to 3 channels
pub fn sr_supernet() -> SuperNet {
    let c = SR_CHANNELS;
    SuperNet {
        task: Task::SuperResolution,
        input_shape: TensorShape::new(3, SR_SIZE, SR_SIZE),
        stem: vec![OperatorSpec::conv(3, 1, 3, c)],
        stages: vec![
            MixedStage::new(vec![OperatorSpec::conv(3, 1, c, c).into(), OperatorSpec::conv(5, 1, c, c).into()]),
            MixedStage::new(vec![OperatorSpec::relu(c).into(), OperatorSpec::leaky_relu(c, 0.1).into()]),
            MixedStage::new(vec![
                OperatorSpec::upsample_nearest(c, 2).into(),
                OperatorSpec::upsample_bilinear(c, 2, false).into(),
                Candidate::path(vec![OperatorSpec::pointwise(1, c, 4 * c), OperatorSpec::depth_to_space(4 * c, 2)]),
            ]),
        ],
        head: vec![OperatorSpec::conv(3, 1, c, 3)],
        num_classes: None,
        sr_scale: Some(2),
    }
}

pub fn sr_data(seed: u64) -> DatasetSpec {
    DatasetSpec::super_resolution(120, SR_SIZE, seed)
}

/// Search settings used for the toy spaces.
pub fn search_config(seed: u64, lambda2: f64) -> SearchConfig {
    SearchConfig {
        lambda1: 1e-4,
        lambda2,
        lr_weights: 0.05,
        lr_arch: 0.5,
        weight_steps_per_round: 16,
        arch_steps_per_round: 4,
        rounds: 40,
        batch_size: 16,
        seed,
        warmup_rounds: 10,
        latency_source: None,
    }
}

/// Retraining settings used for derived toy networks.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 8, lr: 0.05, weight_decay: 1e-4, batch_size: 16, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_spaces_validate() {
        for net in [classification_supernet(), sr_supernet()] {
            let r = net.validate();
            assert!(r.is_valid(), "{:?}", r.findings);
        }
        assert_eq!(classification_supernet().stage_sizes(), vec![3, 3, 3]);
        assert_eq!(sr_supernet().stage_sizes(), vec![2, 2, 3]);
        let shapes = sr_supernet().infer_shapes().unwrap();
        assert_eq!(*shapes.last().unwrap(), TensorShape::new(3, 64, 64));
    }
}

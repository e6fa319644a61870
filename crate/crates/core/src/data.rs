//! Deterministic synthetic datasets for the classification and super-resolution tasks,
//! plus image-quality metrics.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Task;
use crate::nn::{NnError, Tensor};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn default_channels() -> u32 {
    3
}

fn default_noise() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Recipe for a synthetic dataset; generation is a pure function of this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub num_samples: usize,
    /// Side length of the (low-resolution, for SR) input images.
    pub image_size: u32,
    #[serde(default = "default_channels")]
    pub channels: u32,
    #[serde(default)]
    pub num_classes: Option<u32>,
    #[serde(default)]
    pub sr_scale: Option<u32>,
    pub seed: u64,
    /// Standard deviation of additive pixel noise (classification only).
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Random grating phase per sample. With a fixed phase every class is one template plus
    /// noise, which makes the task linearly separable.
    #[serde(default = "default_true")]
    pub random_phase: bool,
    /// Super-resolution only: every image is a single random constant.
    #[serde(default)]
    pub constant_images: bool,
}

impl DatasetSpec {
    pub fn classification(num_samples: usize, image_size: u32, num_classes: u32, seed: u64) -> Self {
        DatasetSpec {
            task: Task::Classification,
            num_samples,
            image_size,
            channels: 3,
            num_classes: Some(num_classes),
            sr_scale: None,
            seed,
            noise: default_noise(),
            random_phase: true,
            constant_images: false,
        }
    }

    pub fn super_resolution(num_samples: usize, image_size: u32, seed: u64) -> Self {
        DatasetSpec {
            task: Task::SuperResolution,
            num_samples,
            image_size,
            channels: 3,
            num_classes: None,
            sr_scale: Some(2),
            seed,
            noise: 0.0,
            random_phase: true,
            constant_images: false,
        }
    }

    fn check(&self) -> Result<(), DataError> {
        if self.num_samples == 0 || self.image_size == 0 || self.channels == 0 {
            return Err(DataError::InvalidSpec("sizes must be positive".into()));
        }
        match self.task {
            Task::Classification => match self.num_classes {
                Some(k) if k >= 2 => Ok(()),
                _ => Err(DataError::InvalidSpec("classification needs num_classes >= 2".into())),
            },
            Task::SuperResolution => match self.sr_scale {
                Some(2) => Ok(()),
                other => Err(DataError::InvalidSpec(format!("sr_scale must be 2, got {other:?}"))),
            },
        }
    }
}

/// Supervision for a dataset: class labels or high-resolution target images.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Labels(Vec<usize>),
    Images(Tensor<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
}

/// A mini-batch view.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<T> {
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Images(t) => Targets::Images(t.gather_batch(idx)),
        };
        Batch { inputs: self.inputs.gather_batch(idx), targets }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let b = self.batch(idx);
        Dataset { inputs: b.inputs, targets: b.targets }
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            inputs: self.inputs.cast(),
            targets: match &self.targets {
                Targets::Labels(l) => Targets::Labels(l.clone()),
                Targets::Images(t) => Targets::Images(t.cast()),
            },
        }
    }
}

/// Train / validation / test partitions (70 / 15 / 15).
#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}

fn split<T: Scalar>(all: Dataset<T>) -> Splits<T> {
    let n = all.len();
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let idx: Vec<usize> = (0..n).collect();
    Splits {
        train: all.subset(&idx[..n_train]),
        val: all.subset(&idx[n_train..n_train + n_val]),
        test: all.subset(&idx[n_train + n_val..]),
    }
}

/// Dispatches on `spec.task`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Splits<f64>, DataError> {
    match spec.task {
        Task::Classification => generate_classification_dataset(spec),
        Task::SuperResolution => generate_sr_dataset(spec),
    }
}

/// Oriented gratings: class `k` of `K` has orientation `pi * k / K`. Each sample gets a random
/// (or fixed) phase, a small random frequency jitter, per-channel gains and Gaussian noise.
/// Labels are balanced (`i mod K`) and shuffled.
pub fn generate_classification_dataset(spec: &DatasetSpec) -> Result<Splits<f64>, DataError> {
    spec.check()?;
    if spec.task != Task::Classification {
        return Err(DataError::InvalidSpec("expected a classification spec".into()));
    }
    let k = spec.num_classes.unwrap() as usize;
    let (c, s) = (spec.channels as usize, spec.image_size as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| DataError::InvalidSpec(e.to_string()))?;

    let mut labels: Vec<usize> = (0..spec.num_samples).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let mut data = Vec::with_capacity(spec.num_samples * c * s * s);
    for &label in &labels {
        let theta = PI * label as f64 / k as f64;
        let (phase, freq, gains) = if spec.random_phase {
            let g: Vec<f64> = (0..c).map(|_| rng.gen_range(0.6..1.0)).collect();
            (rng.gen_range(0.0..2.0 * PI), 2.5 * rng.gen_range(0.9..1.1), g)
        } else {
            (0.0, 2.5, vec![0.8; c])
        };
        let omega = 2.0 * PI * freq / s as f64;
        let (dx, dy) = (theta.cos(), theta.sin());
        for gain in gains.iter().take(c) {
            for y in 0..s {
                for x in 0..s {
                    let v = gain * (omega * (x as f64 * dx + y as f64 * dy) + phase).sin();
                    data.push(v + noise.sample(&mut rng));
                }
            }
        }
    }
    let inputs = Tensor::new(vec![spec.num_samples, c, s, s], data)?;
    Ok(split(Dataset { inputs, targets: Targets::Labels(labels) }))
}

/// Smooth random textures in `[0, 1]` at `scale * image_size`, paired with their
/// `scale x scale` box-filtered downsamples as inputs.
pub fn generate_sr_dataset(spec: &DatasetSpec) -> Result<Splits<f64>, DataError> {
    spec.check()?;
    if spec.task != Task::SuperResolution {
        return Err(DataError::InvalidSpec("expected a super-resolution spec".into()));
    }
    let scale = spec.sr_scale.unwrap() as usize;
    let (c, s) = (spec.channels as usize, spec.image_size as usize);
    let hs = s * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut hr = Vec::with_capacity(spec.num_samples * c * hs * hs);
    for _ in 0..spec.num_samples {
        if spec.constant_images {
            let v: f64 = rng.gen_range(0.0..1.0);
            hr.extend(std::iter::repeat_n(v, c * hs * hs));
            continue;
        }
        // a few sinusoids shared across channels with per-channel mixing
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                let theta = rng.gen_range(0.0..PI);
                let freq = rng.gen_range(1.0..6.0);
                (theta, 2.0 * PI * freq / hs as f64, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.3..1.0))
            })
            .collect();
        let mix: Vec<Vec<f64>> = (0..c).map(|_| (0..4).map(|_| rng.gen_range(0.2..1.0)).collect()).collect();
        for m in &mix {
            let norm: f64 = m.iter().zip(&waves).map(|(a, w)| a * w.3).sum();
            for y in 0..hs {
                for x in 0..hs {
                    let v: f64 = m
                        .iter()
                        .zip(&waves)
                        .map(|(a, &(t, om, ph, amp))| a * amp * (om * (x as f64 * t.cos() + y as f64 * t.sin()) + ph).sin())
                        .sum();
                    hr.push(0.5 + 0.5 * v / norm);
                }
            }
        }
    }
    let hr = Tensor::new(vec![spec.num_samples, c, hs, hs], hr)?;
    let lr = box_downsample(&hr, scale);
    Ok(split(Dataset { inputs: lr, targets: Targets::Images(hr) }))
}

/// Mean over non-overlapping `scale x scale` blocks.
pub fn box_downsample<T: Scalar>(hr: &Tensor<T>, scale: usize) -> Tensor<T> {
    let d = hr.dims();
    let (b, c, h, w) = (d[0], d[1], d[2], d[3]);
    let (lh, lw) = (h / scale, w / scale);
    let inv = T::one() / T::of((scale * scale) as f64);
    let mut out = Tensor::zeros(&[b, c, lh, lw]);
    for p in 0..b * c {
        for y in 0..lh {
            for x in 0..lw {
                let mut acc = T::zero();
                for i in 0..scale {
                    for j in 0..scale {
                        acc += hr.data()[p * h * w + (y * scale + i) * w + x * scale + j];
                    }
                }
                out.data_mut()[p * lh * lw + y * lw + x] = acc * inv;
            }
        }
    }
    out
}

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// `pred == target` exactly; `db` is then [`PSNR_CAP_DB`].
    pub exact: bool,
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, peak: f64) -> Result<Psnr, NnError> {
    if pred.dims() != target.dims() {
        return Err(NnError::ShapeMismatch { expected: target.dims().to_vec(), actual: pred.dims().to_vec() });
    }
    let mse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, exact: true });
    }
    Ok(Psnr { db: (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB), exact: false })
}

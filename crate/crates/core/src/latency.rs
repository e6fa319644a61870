//! Latency lookup tables and the differentiable expected-latency model.
//!
//! A stage with path probabilities `p` and per-candidate latencies `f` has expected latency
//! `sum_j p_j f_j`; the network's expected latency is the sum over stages plus the fixed stem
//! and head layers, assuming layers execute sequentially and their latencies add. With
//! `p = softmax(alpha)` the gradient is `d/d alpha_k = sum_j f_j p_j (delta_jk - p_k)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{canonical_key, CompactNet, GraphError, OperatorSpec, SuperNet, TensorShape};
use crate::Scalar;

/// Probability vectors must sum to one within this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("latency table has no entry for {0}")]
    MissingEntry(String),
    #[error("length mismatch: {0} probabilities vs {1} latencies")]
    LengthMismatch(usize, usize),
    #[error("probabilities are not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("invalid latency entry {key}: {value}")]
    InvalidEntry { key: String, value: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("latency table parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencySource {
    MeasuredDevice,
    CostModel,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutMetadata {
    pub source: LatencySource,
    pub device: String,
    /// RFC 3339 creation time; excluded from reproducibility hashes.
    #[serde(default)]
    pub created: String,
    /// Set when profiling failed part-way; the table holds only completed entries.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub incomplete: bool,
}

/// Canonical operator key -> latency in milliseconds. Written as `.lut.json`:
/// `{"metadata": {...}, "entries": {"<key>": <ms>, ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTable {
    pub metadata: LutMetadata,
    pub entries: BTreeMap<String, f64>,
}

impl LatencyTable {
    pub fn new(source: LatencySource, device: impl Into<String>) -> Self {
        LatencyTable {
            metadata: LutMetadata { source, device: device.into(), created: String::new(), incomplete: false },
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: String, latency_ms: f64) -> Result<(), LatencyError> {
        if !latency_ms.is_finite() || latency_ms < 0.0 {
            return Err(LatencyError::InvalidEntry { key, value: latency_ms });
        }
        self.entries.insert(key, latency_ms);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<f64, LatencyError> {
        self.entries.get(key).copied().ok_or_else(|| LatencyError::MissingEntry(key.to_string()))
    }

    pub fn lookup(&self, op: &OperatorSpec, input: TensorShape) -> Result<f64, LatencyError> {
        self.get(&canonical_key(op, input)?)
    }

    /// Sum of the entries of every layer of a compact net.
    pub fn compact_latency(&self, net: &CompactNet) -> Result<f64, LatencyError> {
        let mut total = 0.0;
        for (op, s) in net.layer_inputs()? {
            total += self.lookup(&op, s)?;
        }
        Ok(total)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, LatencyError> {
        let t: LatencyTable = serde_json::from_str(text).map_err(|e| LatencyError::Parse(e.to_string()))?;
        for (k, &v) in &t.entries {
            if !v.is_finite() || v < 0.0 {
                return Err(LatencyError::InvalidEntry { key: k.clone(), value: v });
            }
        }
        Ok(t)
    }
}

fn check<T: Scalar>(p: &[T], f: &[T]) -> Result<(), LatencyError> {
    if p.len() != f.len() {
        return Err(LatencyError::LengthMismatch(p.len(), f.len()));
    }
    let sum: f64 = p.iter().map(|v| v.as_f64()).sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|&v| v < T::zero()) {
        return Err(LatencyError::NotNormalized(sum));
    }
    Ok(())
}

/// `sum_j p_j f_j`.
pub fn expected_stage_latency<T: Scalar>(p: &[T], f: &[T]) -> Result<T, LatencyError> {
    check(p, f)?;
    Ok(p.iter().zip(f).map(|(&a, &b)| a * b).sum())
}

/// Sum of per-stage expectations.
pub fn expected_network_latency<T: Scalar>(stages: &[(Vec<T>, Vec<T>)]) -> Result<T, LatencyError> {
    stages.iter().map(|(p, f)| expected_stage_latency(p, f)).sum()
}

/// Gradient of `sum_j softmax(alpha)_j f_j` w.r.t. `alpha`, given `p = softmax(alpha)`:
/// `g_k = sum_j f_j p_j (delta_jk - p_k)`.
pub fn latency_alpha_grad<T: Scalar>(p: &[T], f: &[T]) -> Result<Vec<T>, LatencyError> {
    check(p, f)?;
    Ok((0..p.len())
        .map(|k| {
            f.iter()
                .zip(p)
                .enumerate()
                .map(|(j, (&fj, &pj))| {
                    let delta = if j == k { T::one() } else { T::zero() };
                    fj * pj * (delta - p[k])
                })
                .sum()
        })
        .collect())
}

/// Per-candidate latencies for a supernet, resolved from a lookup table once.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLatencyModel {
    /// Stem and head latency, counted with probability one.
    pub fixed_ms: f64,
    /// `stage_ms[i][j]`: latency of candidate `j` of stage `i` (sum over its path).
    pub stage_ms: Vec<Vec<f64>>,
}

impl NetworkLatencyModel {
    pub fn from_lut(net: &SuperNet, lut: &LatencyTable) -> Result<Self, LatencyError> {
        let mut fixed_ms = 0.0;
        for (op, s) in net.fixed_ops()? {
            fixed_ms += lut.lookup(&op, s)?;
        }
        let mut stage_ms = Vec::with_capacity(net.stages.len());
        for (stage, input) in net.stages.iter().zip(net.stage_input_shapes()?) {
            let mut fs = Vec::with_capacity(stage.len());
            for cand in &stage.candidates {
                let mut total = 0.0;
                for (op, s) in cand.op_inputs(input)? {
                    total += lut.lookup(&op, s)?;
                }
                fs.push(total);
            }
            stage_ms.push(fs);
        }
        Ok(NetworkLatencyModel { fixed_ms, stage_ms })
    }

    /// Expected network latency under per-stage probabilities.
    pub fn expected<T: Scalar>(&self, probs: &[Vec<T>]) -> Result<T, LatencyError> {
        if probs.len() != self.stage_ms.len() {
            return Err(LatencyError::LengthMismatch(probs.len(), self.stage_ms.len()));
        }
        let stages: Vec<(Vec<T>, Vec<T>)> = probs
            .iter()
            .zip(&self.stage_ms)
            .map(|(p, f)| (p.clone(), f.iter().map(|&v| T::of(v)).collect()))
            .collect();
        Ok(T::of(self.fixed_ms) + expected_network_latency(&stages)?)
    }

    /// Latency of a single path (one candidate index per stage).
    pub fn path_latency(&self, choice: &[usize]) -> f64 {
        self.fixed_ms + choice.iter().zip(&self.stage_ms).map(|(&c, f)| f[c]).sum::<f64>()
    }

    pub fn stage_latencies<T: Scalar>(&self, stage: usize) -> Vec<T> {
        self.stage_ms[stage].iter().map(|&v| T::of(v)).collect()
    }
}

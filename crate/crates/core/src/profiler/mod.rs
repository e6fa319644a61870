//! Operator latency measurement by stacking, lookup-table construction and calibration.
//!
//! A single operator run is dominated by fixed graph overhead, so operators are measured as
//! stacks. A shape-preserving operator is repeated `N` times and `F = median(L) / N`. An
//! operator that changes shape is followed by `N` copies of a pointwise-convolution anchor on
//! its output shape, whose per-copy cost `f_a` was measured first, giving
//! `F = median(L) - N * f_a`. The same-shape estimate keeps an `overhead / N` bias; in the
//! mixed estimate the overhead cancels when `f_a` was measured with the same `N`.

mod external;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::ExternalCommandRunner;
pub use sim::SimulatedVpu;

use crate::graph::{canonical_key, CompactNet, GraphError, OpKind, OperatorSpec, SuperNet, Task, TensorShape};
use crate::latency::{LatencyError, LatencySource, LatencyTable, NetworkLatencyModel};

/// Default stack depth.
pub const DEFAULT_STACK: usize = 20;
/// Default number of trials per measurement.
pub const DEFAULT_TRIALS: usize = 5;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("operator {0} changes its input shape and cannot be stacked on itself")]
    NotStackable(String),
    #[error("device error: {0}")]
    Device(String),
    #[error("device returned {got} samples for {expected} trials")]
    SampleCount { expected: usize, got: usize },
    #[error("invalid measurement parameters: {0}")]
    InvalidArgument(String),
    #[error("supernet failed validation: {0}")]
    InvalidNet(String),
    #[error("profiling stopped after {} entries: {source}", partial.len())]
    Incomplete { partial: Box<LatencyTable>, source: Box<ProfilerError> },
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Something that can time a subgraph.
pub trait DeviceRunner {
    fn name(&self) -> String;

    /// Runs `subgraph` `trials` times and returns one latency (ms) per trial.
    fn run(&mut self, subgraph: &CompactNet, trials: usize) -> Result<Vec<f64>, ProfilerError>;
}

impl<D: DeviceRunner + ?Sized> DeviceRunner for Box<D> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn run(&mut self, subgraph: &CompactNet, trials: usize) -> Result<Vec<f64>, ProfilerError> {
        (**self).run(subgraph, trials)
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn run_median<D: DeviceRunner + ?Sized>(device: &mut D, net: &CompactNet, trials: usize) -> Result<f64, ProfilerError> {
    if trials == 0 {
        return Err(ProfilerError::InvalidArgument("trials must be at least 1".into()));
    }
    let samples = device.run(net, trials)?;
    if samples.len() != trials {
        return Err(ProfilerError::SampleCount { expected: trials, got: samples.len() });
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(ProfilerError::Device(format!("invalid latency sample {bad}")));
    }
    Ok(median(&samples))
}

/// `median(L) / N` for a stack of `n` copies of a shape-preserving `op`.
pub fn measure_stacked_same<D: DeviceRunner + ?Sized>(
    device: &mut D,
    op: &OperatorSpec,
    input: TensorShape,
    n: usize,
    trials: usize,
) -> Result<f64, ProfilerError> {
    if n == 0 {
        return Err(ProfilerError::InvalidArgument("stack depth must be at least 1".into()));
    }
    let out = op.output_shape(input).map_err(|reason| GraphError::InvalidOp { reason })?;
    if out != input {
        return Err(ProfilerError::NotStackable(canonical_key(op, input)?));
    }
    let net = CompactNet::chain(Task::Classification, input, vec![op.clone(); n]);
    Ok(run_median(device, &net, trials)? / n as f64)
}

/// Result of a mixed-stack measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedEstimate {
    pub latency_ms: f64,
    /// The raw estimate was negative and has been clamped to zero.
    pub clamped: bool,
}

/// `median(L) - N * f_a` for `op_b` followed by `n` copies of `anchor`.
pub fn measure_stacked_mixed<D: DeviceRunner + ?Sized>(
    device: &mut D,
    op_b: &OperatorSpec,
    anchor: &OperatorSpec,
    f_a: f64,
    input: TensorShape,
    n: usize,
    trials: usize,
) -> Result<MixedEstimate, ProfilerError> {
    if n == 0 {
        return Err(ProfilerError::InvalidArgument("stack depth must be at least 1".into()));
    }
    let mid = op_b.output_shape(input).map_err(|reason| GraphError::InvalidOp { reason })?;
    if anchor.output_shape(mid).ok() != Some(mid) {
        return Err(ProfilerError::NotStackable(canonical_key(anchor, mid)?));
    }
    let mut ops = vec![op_b.clone()];
    ops.extend(std::iter::repeat_n(anchor.clone(), n));
    let net = CompactNet::chain(Task::Classification, input, ops);
    let raw = run_median(device, &net, trials)? - n as f64 * f_a;
    if raw < 0.0 {
        log::warn!("negative estimate {raw:.6} ms for {} clamped to 0", canonical_key(op_b, input)?);
        return Ok(MixedEstimate { latency_ms: 0.0, clamped: true });
    }
    Ok(MixedEstimate { latency_ms: raw, clamped: false })
}

/// The anchor used for operators producing `shape`.
pub fn anchor_for(shape: TensorShape) -> OperatorSpec {
    OperatorSpec::pointwise(1, shape.channels, shape.channels)
}

/// Measures every unique operator of `net` into a new table. Identity entries are zero and
/// never measured; each canonical key (including anchors) is run at most once. On failure the
/// entries measured so far are returned inside [`ProfilerError::Incomplete`].
pub fn build_lut<D: DeviceRunner + ?Sized>(
    device: &mut D,
    net: &SuperNet,
    n: usize,
    trials: usize,
) -> Result<LatencyTable, ProfilerError> {
    let report = net.validate();
    if !report.is_valid() {
        return Err(ProfilerError::InvalidNet(format!("{:?}", report.findings)));
    }
    let mut lut = LatencyTable::new(LatencySource::MeasuredDevice, device.name());
    let mut anchors: BTreeMap<String, f64> = BTreeMap::new();
    let ops = net.unique_ops()?;
    for (key, op, input) in ops {
        match measure_entry(device, &op, input, n, trials, &lut, &mut anchors) {
            Ok(v) => lut.insert(key, v)?,
            Err(e) => {
                lut.metadata.incomplete = true;
                return Err(ProfilerError::Incomplete { partial: Box::new(lut), source: Box::new(e) });
            }
        }
    }
    Ok(lut)
}

fn measure_entry<D: DeviceRunner + ?Sized>(
    device: &mut D,
    op: &OperatorSpec,
    input: TensorShape,
    n: usize,
    trials: usize,
    lut: &LatencyTable,
    anchors: &mut BTreeMap<String, f64>,
) -> Result<f64, ProfilerError> {
    if op.kind == OpKind::Identity {
        return Ok(0.0);
    }
    let out = op.output_shape(input).map_err(|reason| GraphError::InvalidOp { reason })?;
    if out == input {
        let key = canonical_key(op, input)?;
        if let Some(&v) = anchors.get(&key) {
            return Ok(v);
        }
        return measure_stacked_same(device, op, input, n, trials);
    }
    let anchor = anchor_for(out);
    let akey = canonical_key(&anchor, out)?;
    let f_a = match anchors.get(&akey).copied().or_else(|| lut.entries.get(&akey).copied()) {
        Some(v) => v,
        None => {
            let v = measure_stacked_same(device, &anchor, out, n, trials)?;
            anchors.insert(akey, v);
            v
        }
    };
    Ok(measure_stacked_mixed(device, op, &anchor, f_a, input, n, trials)?.latency_ms)
}

/// Predicted-vs-measured comparison over sampled networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `(predicted_ms, measured_ms)` per sampled network.
    pub points: Vec<(f64, f64)>,
    /// Candidate index per stage for each point.
    pub choices: Vec<Vec<usize>>,
    /// Mean of `|predicted - measured| / measured`, in percent.
    pub mape_pct: f64,
    /// `None` when undefined (fewer than two points or zero variance).
    pub pearson: Option<f64>,
}

impl CalibrationReport {
    pub fn from_points(points: Vec<(f64, f64)>, choices: Vec<Vec<usize>>) -> Self {
        let mape_pct = mape_pct(&points);
        let pearson = pearson(&points);
        CalibrationReport { points, choices, mape_pct, pearson }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("predicted_ms,measured_ms\n");
        for (p, m) in &self.points {
            s.push_str(&format!("{p},{m}\n"));
        }
        s
    }

    /// Summary without the individual points.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "num_samples": self.points.len(),
            "mape_pct": self.mape_pct,
            "pearson": self.pearson,
            "pearson_defined": self.pearson.is_some(),
        })
    }
}

/// Mean absolute percentage error of `(predicted, actual)` pairs, in percent.
pub fn mape_pct(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    100.0 * points.iter().map(|(p, m)| ((p - m) / m).abs()).sum::<f64>() / points.len() as f64
}

/// Pearson correlation, or `None` if undefined.
pub fn pearson(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Samples `num_samples` uniform random paths through `net`, predicts each from `lut` (the
/// expected latency under one-hot probabilities) and measures the whole network on `device`.
pub fn calibrate<D: DeviceRunner + ?Sized>(
    device: &mut D,
    net: &SuperNet,
    lut: &LatencyTable,
    num_samples: usize,
    seed: u64,
    trials: usize,
) -> Result<CalibrationReport, ProfilerError> {
    let model = NetworkLatencyModel::from_lut(net, lut)?;
    let sizes = net.stage_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(num_samples);
    let mut choices = Vec::with_capacity(num_samples);
    let mut seen = BTreeSet::new();
    for _ in 0..num_samples {
        let choice: Vec<usize> = sizes.iter().map(|&m| rng.gen_range(0..m)).collect();
        let one_hot: Vec<Vec<f64>> =
            choice.iter().zip(&sizes).map(|(&c, &m)| (0..m).map(|j| if j == c { 1.0 } else { 0.0 }).collect()).collect();
        let predicted = model.expected(&one_hot)?;
        let compact = CompactNet::from_choices(net, &choice)?;
        let measured = run_median(device, &compact, trials)?;
        seen.insert(choice.clone());
        points.push((predicted, measured));
        choices.push(choice);
    }
    log::debug!("calibration: {} samples, {} distinct paths", num_samples, seen.len());
    Ok(CalibrationReport::from_points(points, choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::three_stage;
    use crate::graph::MixedStage;

    /// Additive device with hand-set per-op costs.
    struct Table {
        overhead: f64,
        costs: BTreeMap<String, f64>,
        calls: Vec<String>,
    }

    impl DeviceRunner for Table {
        fn name(&self) -> String {
            "table".into()
        }

        fn run(&mut self, net: &CompactNet, trials: usize) -> Result<Vec<f64>, ProfilerError> {
            let mut total = self.overhead;
            let mut keys = Vec::new();
            for (op, s) in net.layer_inputs()? {
                let k = canonical_key(&op, s)?;
                total += self.costs.get(&k).copied().ok_or_else(|| ProfilerError::Device(format!("no cost for {k}")))?;
                keys.push(k);
            }
            self.calls.push(keys.join("|"));
            Ok(vec![total; trials])
        }
    }

    fn shape() -> TensorShape {
        TensorShape::new(16, 8, 8)
    }

    fn table(costs: &[(&OperatorSpec, TensorShape, f64)]) -> Table {
        Table {
            overhead: 0.2,
            costs: costs.iter().map(|(op, s, c)| (canonical_key(op, *s).unwrap(), *c)).collect(),
            calls: Vec::new(),
        }
    }

    #[test]
    fn same_shape_examples() {
        let op = OperatorSpec::conv(3, 1, 16, 16);
        let mut dev = table(&[(&op, shape(), 0.5)]);
        let f10 = measure_stacked_same(&mut dev, &op, shape(), 10, 3).unwrap();
        assert!((f10 - 0.52).abs() < 1e-12);
        let f100 = measure_stacked_same(&mut dev, &op, shape(), 100, 3).unwrap();
        assert!((f100 - 0.502).abs() < 1e-12);
        let down = OperatorSpec::conv(3, 2, 16, 16);
        assert!(matches!(measure_stacked_same(&mut dev, &down, shape(), 10, 3), Err(ProfilerError::NotStackable(_))));
    }

    #[test]
    fn mixed_examples() {
        let b = OperatorSpec::conv(3, 2, 16, 32);
        let out = TensorShape::new(32, 4, 4);
        let a = anchor_for(out);
        let mut dev = table(&[(&b, shape(), 0.8), (&a, out, 0.5)]);
        let f_a = measure_stacked_same(&mut dev, &a, out, 10, 1).unwrap();
        assert!((f_a - 0.52).abs() < 1e-12);
        let e = measure_stacked_mixed(&mut dev, &b, &a, f_a, shape(), 10, 1).unwrap();
        assert!((e.latency_ms - 0.8).abs() < 1e-12 && !e.clamped);
        let e1 = measure_stacked_mixed(&mut dev, &b, &a, 0.5, shape(), 1, 1).unwrap();
        assert!((e1.latency_ms - 1.0).abs() < 1e-12);
        let neg = measure_stacked_mixed(&mut dev, &b, &a, 5.0, shape(), 10, 1).unwrap();
        assert_eq!(neg, MixedEstimate { latency_ms: 0.0, clamped: true });
    }

    #[test]
    fn median_is_order_invariant() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 2.0, 1.0, 3.0]), median(&[3.0, 2.0, 1.0, 1.0, 2.0]));
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }

    #[test]
    fn build_lut_deduplicates_and_zeroes_identity() {
        let s = shape();
        let conv = OperatorSpec::conv(3, 1, 16, 16);
        let pw = OperatorSpec::pointwise(1, 16, 16);
        let net = SuperNet {
            task: Task::Classification,
            input_shape: s,
            stem: vec![],
            stages: vec![
                MixedStage::new(vec![conv.clone().into(), pw.clone().into(), OperatorSpec::identity(16).into()]),
                MixedStage::new(vec![conv.clone().into(), pw.clone().into()]),
            ],
            head: vec![OperatorSpec::avg_pool(7, 8, 16), OperatorSpec::linear(16, 16)],
            num_classes: Some(16),
            sr_scale: None,
        };
        let pooled = TensorShape::new(16, 1, 1);
        let head_anchor = anchor_for(pooled);
        let mut dev = table(&[
            (&conv, s, 0.5),
            (&pw, s, 0.1),
            (&net.head[0], s, 0.05),
            (&head_anchor, pooled, 0.01),
            (&net.head[1], pooled, 0.02),
        ]);
        let lut = build_lut(&mut dev, &net, 10, 3).unwrap();
        let keys: BTreeSet<String> = net.unique_ops().unwrap().into_iter().map(|(k, _, _)| k).collect();
        assert_eq!(lut.entries.keys().cloned().collect::<BTreeSet<_>>(), keys);
        assert_eq!(lut.lookup(&OperatorSpec::identity(16), s).unwrap(), 0.0);
        // conv, pw, pool anchor, pool, linear (its anchor is the pool anchor): 5 runs, no repeats
        assert_eq!(dev.calls.len(), 5, "{:?}", dev.calls);
        assert_eq!(dev.calls.iter().collect::<BTreeSet<_>>().len(), dev.calls.len());
        assert!((lut.lookup(&conv, s).unwrap() - 0.52).abs() < 1e-12);
        assert!((lut.lookup(&net.head[0], s).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(lut.metadata.source, LatencySource::MeasuredDevice);
    }

    #[test]
    fn build_lut_reports_partial_table() {
        let net = three_stage();
        let mut dev = table(&[]);
        match build_lut(&mut dev, &net, 10, 3) {
            Err(ProfilerError::Incomplete { partial, .. }) => assert!(partial.metadata.incomplete),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_net_makes_no_device_calls() {
        let mut net = three_stage();
        net.stages[1].candidates.clear();
        let mut dev = table(&[]);
        assert!(matches!(build_lut(&mut dev, &net, 10, 3), Err(ProfilerError::InvalidNet(_))));
        assert!(dev.calls.is_empty());
    }

    #[test]
    fn calibration_single_point_has_no_correlation() {
        let net = three_stage();
        let mut sim = SimulatedVpu::default();
        let lut = sim.closed_form_lut(&net).unwrap();
        let r = calibrate(&mut sim, &net, &lut, 1, 3, 1).unwrap();
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.pearson, None);
        assert!(r.to_csv().starts_with("predicted_ms,measured_ms\n"));
    }

    #[test]
    fn closed_form_lut_predicts_measured_minus_overhead() {
        let net = three_stage();
        let mut sim = SimulatedVpu::default();
        let lut = sim.closed_form_lut(&net).unwrap();
        let r = calibrate(&mut sim, &net, &lut, 10, 5, 3).unwrap();
        for (p, m) in &r.points {
            assert!((p - (m - 0.2)).abs() < 1e-12, "{p} {m}");
        }
    }

    #[test]
    fn pearson_and_mape() {
        assert!((pearson(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[(1.0, 2.0), (1.0, 4.0)]), None);
        assert!((mape_pct(&[(110.0, 100.0), (90.0, 100.0)]) - 10.0).abs() < 1e-12);
    }
}

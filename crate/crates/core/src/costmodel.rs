//! Learned latency predictor: a small MLP over encoded operator descriptors that regresses
//! `log(cycles)`, plus record I/O, evaluation and lookup-table generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, OpKind, OperatorSpec, SuperNet, TensorShape};
use crate::latency::{LatencyError, LatencySource, LatencyTable};
use crate::nn::{loss_mse, Adam, Checkpoint, NnError, Sequential, Tensor};
use crate::profiler::{ProfilerError, SimulatedVpu};

/// 13 kind slots, 8 log-scaled size fields, 1 flag.
pub const FEATURE_LEN: usize = 22;
/// Default device clock used to convert cycles to milliseconds.
pub const DEFAULT_CLOCK_GHZ: f64 = 0.7;
pub const MIN_RECORDS: usize = 50;
const MODEL_FORMAT: &str = "hwnas-costmodel";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CostModelError {
    #[error("invalid operator: {0}")]
    InvalidOp(String),
    #[error("need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("record {index}: measured value must be finite and positive, got {value}")]
    InvalidRecord { index: usize, value: f64 },
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("empty record set")]
    EmptySet,
    #[error("model file: {0}")]
    Format(String),
    #[error("records line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
}

/// One measured workload. Stored one JSON object per line in `.records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRecord {
    pub op: OperatorSpec,
    pub input_shape: TensorShape,
    pub measured_cycles: f64,
}

impl ProfileRecord {
    pub fn from_ms(op: OperatorSpec, input_shape: TensorShape, ms: f64, clock_ghz: f64) -> Self {
        ProfileRecord { op, input_shape, measured_cycles: ms_to_cycles(ms, clock_ghz) }
    }
}

pub fn ms_to_cycles(ms: f64, clock_ghz: f64) -> f64 {
    ms * clock_ghz * 1e6
}

pub fn cycles_to_ms(cycles: f64, clock_ghz: f64) -> f64 {
    cycles / (clock_ghz * 1e6)
}

pub fn records_to_jsonl(records: &[ProfileRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serialization is infallible") + "\n").collect()
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<ProfileRecord>, CostModelError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CostModelError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

fn l2(x: f64) -> f64 {
    (1.0 + x).log2()
}

/// `[kind one-hot (13)] ++ log2(1 + [in_c, out_c, H, W, kernel, stride, expand numerator,
/// scale]) ++ [slope != 0]`.
pub fn encode_features(op: &OperatorSpec, input: TensorShape) -> Result<[f64; FEATURE_LEN], CostModelError> {
    op.output_shape(input).map_err(CostModelError::InvalidOp)?;
    let mut f = [0.0; FEATURE_LEN];
    f[op.kind.index()] = 1.0;
    let sizes = [
        op.in_channels,
        op.out_channels,
        input.height,
        input.width,
        op.kernel,
        op.stride,
        *op.expand_ratio.numer(),
        op.scale_factor,
    ];
    for (i, v) in sizes.iter().enumerate() {
        f[OpKind::ALL.len() + i] = l2(*v as f64);
    }
    f[FEATURE_LEN - 1] = if op.activation_slope != 0.0 { 1.0 } else { 0.0 };
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModelConfig {
    pub hidden: Vec<u32>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of records held out for validation.
    pub holdout: f64,
    pub seed: u64,
    pub clock_ghz: f64,
}

impl Default for CostModelConfig {
    fn default() -> Self {
        CostModelConfig { hidden: vec![64, 64], epochs: 600, lr: 3e-3, batch_size: 16, holdout: 0.2, seed: 3, clock_ghz: DEFAULT_CLOCK_GHZ }
    }
}

/// Per-epoch losses (normalized log space) and final errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub train_mape_pct: f64,
    /// `None` when nothing was held out.
    pub val_mape_pct: Option<f64>,
    pub num_train: usize,
    pub num_val: usize,
    /// Indices into the input records forming the held-out split.
    pub val_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Trained predictor.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub hidden: Vec<u32>,
    pub clock_ghz: f64,
    pub norm: Normalization,
    net: Sequential<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    hidden: Vec<u32>,
    clock_ghz: f64,
    normalization: Normalization,
    weights: Checkpoint,
}

fn mlp_specs(hidden: &[u32]) -> Vec<OperatorSpec> {
    let mut specs = Vec::new();
    let mut width = FEATURE_LEN as u32;
    for &h in hidden {
        specs.push(OperatorSpec::linear(width, h));
        specs.push(OperatorSpec::relu(h));
        width = h;
    }
    specs.push(OperatorSpec::linear(width, 1));
    specs
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - m).powi(2)).sum::<f64>() / n;
    // constant columns normalize to zero rather than dividing by zero
    (m, if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() })
}

impl CostModel {
    fn normalize(&self, f: &[f64; FEATURE_LEN]) -> Vec<f64> {
        f.iter().zip(&self.norm.feature_mean).zip(&self.norm.feature_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Predicted cycles for each query.
    pub fn predict_batch(&self, queries: &[(OperatorSpec, TensorShape)]) -> Result<Vec<f64>, CostModelError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut x = Vec::with_capacity(queries.len() * FEATURE_LEN);
        for (op, s) in queries {
            x.extend(self.normalize(&encode_features(op, *s)?));
        }
        let x = Tensor::new(vec![queries.len(), FEATURE_LEN, 1, 1], x)?;
        let mut net = self.net.clone();
        let y = net.forward(&x)?;
        Ok(y.data().iter().map(|v| (v * self.norm.target_std + self.norm.target_mean).exp()).collect())
    }

    pub fn predict(&self, op: &OperatorSpec, input: TensorShape) -> Result<f64, CostModelError> {
        Ok(self.predict_batch(&[(op.clone(), input)])?[0])
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            hidden: self.hidden.clone(),
            clock_ghz: self.clock_ghz,
            normalization: self.norm.clone(),
            weights: Checkpoint::from_model(&self.net),
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, CostModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| CostModelError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(CostModelError::Format(format!("unsupported model {} v{}", file.format, file.version)));
        }
        if file.normalization.feature_mean.len() != FEATURE_LEN || file.normalization.feature_std.len() != FEATURE_LEN {
            return Err(CostModelError::Format("normalization has the wrong length".into()));
        }
        let mut net = Sequential::new(&mlp_specs(&file.hidden), &mut ChaCha8Rng::seed_from_u64(0))?;
        file.weights.apply(&mut net)?;
        Ok(CostModel { hidden: file.hidden, clock_ghz: file.clock_ghz, norm: file.normalization, net })
    }
}

/// Fits the MLP to `log(measured_cycles)` with Adam on mean squared error.
pub fn train_cost_model(records: &[ProfileRecord], cfg: &CostModelConfig) -> Result<(CostModel, TrainingReport), CostModelError> {
    if records.len() < MIN_RECORDS {
        return Err(CostModelError::InsufficientData { needed: MIN_RECORDS, got: records.len() });
    }
    for (index, r) in records.iter().enumerate() {
        if !(r.measured_cycles.is_finite() && r.measured_cycles > 0.0) {
            return Err(CostModelError::InvalidRecord { index, value: r.measured_cycles });
        }
    }
    let feats: Vec<[f64; FEATURE_LEN]> =
        records.iter().map(|r| encode_features(&r.op, r.input_shape)).collect::<Result<_, _>>()?;
    let targets: Vec<f64> = records.iter().map(|r| r.measured_cycles.ln()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((records.len() as f64) * cfg.holdout.clamp(0.0, 0.9)).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let (val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());

    let (feature_mean, feature_std): (Vec<f64>, Vec<f64>) =
        (0..FEATURE_LEN).map(|j| mean_std(train_idx.iter().map(|&i| feats[i][j]))).unzip();
    let (target_mean, target_std) = mean_std(train_idx.iter().map(|&i| targets[i]));
    let norm = Normalization { feature_mean, feature_std, target_mean, target_std };

    let net = Sequential::new(&mlp_specs(&cfg.hidden), &mut rng)?;
    let mut model = CostModel { hidden: cfg.hidden.clone(), clock_ghz: cfg.clock_ghz, norm, net };
    let xs: Vec<Vec<f64>> = feats.iter().map(|f| model.normalize(f)).collect();
    let ys: Vec<f64> = targets.iter().map(|t| (t - model.norm.target_mean) / model.norm.target_std).collect();
    let batch = |idx: &[usize]| -> Result<(Tensor<f64>, Tensor<f64>), NnError> {
        let x = Tensor::new(vec![idx.len(), FEATURE_LEN, 1, 1], idx.iter().flat_map(|&i| xs[i].iter().copied()).collect())?;
        let y = Tensor::new(vec![idx.len(), 1, 1, 1], idx.iter().map(|&i| ys[i]).collect())?;
        Ok((x, y))
    };

    let mut adam = Adam::new(cfg.lr);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    let (val_x, val_y) = if val_idx.is_empty() { (None, None) } else { let (x, y) = batch(&val_idx)?; (Some(x), Some(y)) };
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size.max(1)) {
            let (x, y) = batch(chunk)?;
            let pred = model.net.forward(&x)?;
            let (loss, grad) = loss_mse(&pred, &y)?;
            if !loss.is_finite() {
                return Err(CostModelError::NonFiniteLoss(epoch));
            }
            model.net.backward(&grad)?;
            adam.step(model.net.params_mut());
            total += loss * chunk.len() as f64;
        }
        train_loss.push(total / train_idx.len() as f64);
        if let (Some(x), Some(y)) = (&val_x, &val_y) {
            let mut probe = model.net.clone();
            let (l, _) = loss_mse(&probe.forward(x)?, y)?;
            val_loss.push(l);
        }
    }

    let subset = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let mut sorted_train = train_idx.clone();
    sorted_train.sort_unstable();
    let train_mape_pct = evaluate_mape(&model, &subset(&sorted_train))?;
    let val_mape_pct = if val_idx.is_empty() { None } else { Some(evaluate_mape(&model, &subset(&val_idx))?) };
    let report = TrainingReport {
        train_loss,
        val_loss,
        train_mape_pct,
        val_mape_pct,
        num_train: train_idx.len(),
        num_val: val_idx.len(),
        val_indices: val_idx,
    };
    Ok((model, report))
}

/// Mean of `|pred - actual| / actual`, in percent.
pub fn evaluate_mape(model: &CostModel, records: &[ProfileRecord]) -> Result<f64, CostModelError> {
    if records.is_empty() {
        return Err(CostModelError::EmptySet);
    }
    let queries: Vec<_> = records.iter().map(|r| (r.op.clone(), r.input_shape)).collect();
    let preds = model.predict_batch(&queries)?;
    Ok(crate::profiler::mape_pct(&preds.into_iter().zip(records.iter().map(|r| r.measured_cycles)).collect::<Vec<_>>()))
}

/// A table over every unique operator of `net`, with `ms = cycles / (clock_ghz * 1e6)`.
pub fn lut_from_model(model: &CostModel, net: &SuperNet, clock_ghz: f64) -> Result<LatencyTable, CostModelError> {
    let ops = net.unique_ops()?;
    let queries: Vec<_> = ops.iter().map(|(_, op, s)| (op.clone(), *s)).collect();
    let preds = model.predict_batch(&queries)?;
    let mut lut = LatencyTable::new(LatencySource::CostModel, format!("cost-model@{clock_ghz}GHz"));
    for ((key, _, _), cycles) in ops.into_iter().zip(preds) {
        lut.insert(key, cycles_to_ms(cycles, clock_ghz))?;
    }
    Ok(lut)
}

/// A random valid workload drawn from sizes typical of small vision networks.
pub fn random_workload<R: Rng>(rng: &mut R) -> (OperatorSpec, TensorShape) {
    let chans = [3u32, 8, 12, 16, 24, 32, 48, 64, 96, 128];
    let sizes = [2u32, 4, 7, 8, 14, 16, 28, 32, 56];
    let kernels = [1u32, 3, 5, 7];
    loop {
        let c = *chans.choose(rng).unwrap();
        let co = *chans.choose(rng).unwrap();
        let hw = *sizes.choose(rng).unwrap();
        let k = *kernels.choose(rng).unwrap();
        let s = if rng.gen_bool(0.3) { 2 } else { 1 };
        let input = TensorShape::new(c, hw, hw);
        let op = match rng.gen_range(0..14) {
            0 | 1 => OperatorSpec::conv(k, s, c, co),
            2 => OperatorSpec::dwconv(k.max(3), s, c),
            3 => OperatorSpec::pointwise(s, c, co),
            4 => OperatorSpec::mbconv(k.max(3), s, *[3u32, 6].choose(rng).unwrap(), c, co),
            5 | 6 => {
                let (k, s) = (*[3u32, 5, 7].choose(rng).unwrap(), *[1u32, 2, 4].choose(rng).unwrap());
                if rng.gen_bool(0.5) {
                    OperatorSpec::avg_pool(k, s, c)
                } else {
                    OperatorSpec::max_pool(k, s, c)
                }
            }
            7 => OperatorSpec::relu(c),
            8 => {
                if rng.gen_bool(0.5) {
                    OperatorSpec::leaky_relu(c, 0.1)
                } else {
                    OperatorSpec::leaky_relu_per_channel(c, 0.1)
                }
            }
            9 => OperatorSpec::upsample_nearest(c, 2),
            10 => OperatorSpec::upsample_bilinear(c, 2, rng.gen_bool(0.5)),
            11 => {
                if !c.is_multiple_of(4) {
                    continue;
                }
                OperatorSpec::depth_to_space(c, 2)
            }
            12 => OperatorSpec::linear(c * hw * hw, co),
            _ => OperatorSpec::identity(c),
        };
        if op.output_shape(input).is_ok() && op.invariant_violations().is_empty() {
            return (op, input);
        }
    }
}

/// `n` records labelled by the simulator's noise-free cost.
pub fn simulate_records(sim: &SimulatedVpu, n: usize, seed: u64) -> Result<Vec<ProfileRecord>, CostModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (op, s) = random_workload(&mut rng);
        let ms = sim.op_cost_ms(&op, s)?;
        // zero-cost operators (Identity) carry no signal for a log-space regressor
        if ms > 0.0 {
            out.push(ProfileRecord::from_ms(op, s, ms, sim.clock_ghz));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_features() {
        let f = encode_features(&OperatorSpec::conv(3, 1, 16, 32), TensorShape::new(16, 32, 32)).unwrap();
        assert_eq!(f[OpKind::Conv.index()], 1.0);
        assert_eq!(f[..13].iter().sum::<f64>(), 1.0);
        let expect = [17f64.log2(), 33f64.log2(), 33f64.log2(), 33f64.log2(), 4f64.log2(), 1.0, 1.0, 1.0];
        assert_eq!(&f[13..21], &expect);
        assert_eq!(f[21], 0.0);
    }

    #[test]
    fn identity_and_stride_locality() {
        let f = encode_features(&OperatorSpec::identity(8), TensorShape::new(8, 4, 4)).unwrap();
        assert_eq!(f[OpKind::Identity.index()], 1.0);
        assert_eq!(f[13], f[14]);
        let a = encode_features(&OperatorSpec::conv(3, 1, 8, 8), TensorShape::new(8, 8, 8)).unwrap();
        let b = encode_features(&OperatorSpec::conv(3, 2, 8, 8), TensorShape::new(8, 8, 8)).unwrap();
        assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1);
        assert!(encode_features(&OperatorSpec::conv(3, 1, 8, 8), TensorShape::new(4, 8, 8)).is_err());
    }

    fn small_cfg() -> CostModelConfig {
        CostModelConfig { epochs: 60, ..Default::default() }
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<_> = (0..60)
            .map(|_| {
                let (op, s) = random_workload(&mut rng);
                ProfileRecord { op, input_shape: s, measured_cycles: 1234.0 }
            })
            .collect();
        let (m, r) = train_cost_model(&records, &small_cfg()).unwrap();
        assert!(r.train_mape_pct < 1.0, "{}", r.train_mape_pct);
        let all = evaluate_mape(&m, &records).unwrap();
        assert!(all < 5.0, "{all}");
    }

    #[test]
    fn deterministic_and_serializable() {
        let recs = simulate_records(&SimulatedVpu::default(), 60, 1).unwrap();
        let (a, ra) = train_cost_model(&recs, &small_cfg()).unwrap();
        let (b, rb) = train_cost_model(&recs, &small_cfg()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(ra, rb);
        let c = CostModel::from_json(&a.to_json()).unwrap();
        let q = (OperatorSpec::conv(3, 1, 16, 16), TensorShape::new(16, 8, 8));
        assert_eq!(a.predict(&q.0, q.1).unwrap(), c.predict(&q.0, q.1).unwrap());
        assert_eq!(a.predict(&q.0, q.1).unwrap(), a.predict(&q.0, q.1).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let recs = simulate_records(&SimulatedVpu::default(), 10, 1).unwrap();
        assert!(matches!(train_cost_model(&recs, &small_cfg()), Err(CostModelError::InsufficientData { .. })));
        let mut recs = simulate_records(&SimulatedVpu::default(), 60, 1).unwrap();
        recs[4].measured_cycles = 0.0;
        assert!(matches!(train_cost_model(&recs, &small_cfg()), Err(CostModelError::InvalidRecord { index: 4, .. })));
    }

    #[test]
    fn records_round_trip() {
        let recs = simulate_records(&SimulatedVpu::default(), 5, 2).unwrap();
        assert_eq!(records_from_jsonl(&records_to_jsonl(&recs)).unwrap(), recs);
        assert!(matches!(records_from_jsonl("{}\n"), Err(CostModelError::Parse { line: 1, .. })));
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(cycles_to_ms(700_000.0, 0.7), 1.0);
        assert_eq!(ms_to_cycles(2.0, 0.7), 1_400_000.0);
    }
}

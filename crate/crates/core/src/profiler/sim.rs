use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DeviceRunner, ProfilerError};
use crate::graph::{canonical_key, CompactNet, OpKind, OperatorSpec, SuperNet, TensorShape};
use crate::latency::{LatencySource, LatencyTable};

const BYTES_PER_ELEMENT: f64 = 2.0;
const BYTES_PER_MB: f64 = 1e6;

/// Deterministic analytic accelerator model.
///
/// Per layer: `(macs / (clock * macs_per_cycle * util) + bytes * dma_ms_per_mb) * dsp`, where
/// `util = out_c / ceil_to(out_c, channel_granularity)` for convolutions, `bytes` counts fp16
/// input, output and weights, and `dsp = dsp_penalty_factor` for operators routed to the DSP
/// (LeakyReLU with a nonzero slope, DepthToSpace, bilinear upsampling). A run of a subgraph adds
/// `graph_overhead_ms` once. When `noise_sigma_rel > 0`, the overhead and every layer term are
/// each multiplied by an independent `exp(noise_sigma_rel * z)` with `z` standard normal, so the
/// relative spread of a stack of `N` equal layers shrinks like `1/sqrt(N)`. The draws come from a
/// hash of `(seed, subgraph, trial)`, so runs are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedVpu {
    pub clock_ghz: f64,
    pub macs_per_cycle: f64,
    pub graph_overhead_ms: f64,
    pub dma_ms_per_mb: f64,
    pub channel_granularity: u32,
    pub dsp_penalty_factor: f64,
    pub noise_sigma_rel: f64,
    pub seed: u64,
}

impl Default for SimulatedVpu {
    /// A deliberately slow device (0.7 GMAC/s) so desk-sized layers take tenths of a
    /// millisecond and dominate the 0.2 ms graph overhead.
    fn default() -> Self {
        SimulatedVpu {
            clock_ghz: 0.7,
            macs_per_cycle: 1.0,
            graph_overhead_ms: 0.2,
            dma_ms_per_mb: 1.0,
            channel_granularity: 16,
            dsp_penalty_factor: 4.0,
            noise_sigma_rel: 0.0,
            seed: 0,
        }
    }
}

/// Work performed by one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Work {
    macs: f64,
    bytes: f64,
    util: f64,
}

impl SimulatedVpu {
    pub fn validate(&self) -> Result<(), ProfilerError> {
        let ok = self.clock_ghz > 0.0
            && self.macs_per_cycle > 0.0
            && self.graph_overhead_ms >= 0.0
            && self.dma_ms_per_mb >= 0.0
            && self.channel_granularity > 0
            && self.dsp_penalty_factor >= 1.0
            && self.noise_sigma_rel >= 0.0
            && [self.clock_ghz, self.macs_per_cycle, self.graph_overhead_ms, self.dma_ms_per_mb, self.dsp_penalty_factor, self.noise_sigma_rel]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ProfilerError::Device(format!("invalid simulator parameters: {self:?}")))
        }
    }

    fn util(&self, out_c: u32) -> f64 {
        let g = self.channel_granularity;
        out_c as f64 / (out_c.div_ceil(g) * g) as f64
    }

    fn conv_work(&self, in_c: u32, out_c: u32, k: u32, groups: u32, input: TensorShape, out: TensorShape) -> Work {
        let macs = out.numel() as f64 * (in_c / groups) as f64 * (k * k) as f64;
        let weights = (out_c as f64) * (in_c / groups) as f64 * (k * k) as f64 + out_c as f64;
        let bytes = (input.numel() + out.numel()) as f64 * BYTES_PER_ELEMENT + weights * BYTES_PER_ELEMENT;
        Work { macs, bytes, util: self.util(out_c) }
    }

    fn elementwise(input: TensorShape, out: TensorShape, ops_per_output: f64) -> Work {
        Work {
            macs: out.numel() as f64 * ops_per_output,
            bytes: (input.numel() + out.numel()) as f64 * BYTES_PER_ELEMENT,
            util: 1.0,
        }
    }

    fn layer_work(&self, op: &OperatorSpec, input: TensorShape) -> Result<Vec<Work>, ProfilerError> {
        let out = op.output_shape(input).map_err(ProfilerError::Device)?;
        let (ci, co, k) = (op.in_channels, op.out_channels, op.kernel);
        Ok(match op.kind {
            OpKind::Identity => vec![],
            OpKind::Conv => vec![self.conv_work(ci, co, k, 1, input, out)],
            OpKind::DWConv => vec![self.conv_work(ci, co, k, ci, input, out)],
            OpKind::PointwiseConv => vec![self.conv_work(ci, co, 1, 1, input, out)],
            OpKind::MBConv => {
                // expand 1x1, depthwise kxk (strided), project 1x1
                let h = op.hidden_channels().unwrap_or(ci);
                let hid_in = TensorShape::new(h, input.height, input.width);
                let hid_out = TensorShape::new(h, out.height, out.width);
                vec![
                    self.conv_work(ci, h, 1, 1, input, hid_in),
                    self.conv_work(h, h, k, h, hid_in, hid_out),
                    self.conv_work(h, co, 1, 1, hid_out, out),
                ]
            }
            OpKind::AvgPool | OpKind::MaxPool => vec![Self::elementwise(input, out, (k * k) as f64)],
            OpKind::ReLU | OpKind::LeakyReLU | OpKind::UpsampleNearest | OpKind::DepthToSpace => {
                vec![Self::elementwise(input, out, 1.0)]
            }
            OpKind::UpsampleBilinear => vec![Self::elementwise(input, out, 4.0)],
            OpKind::Linear => {
                let weights = ci as f64 * co as f64 + co as f64;
                vec![Work {
                    macs: ci as f64 * co as f64,
                    bytes: (input.numel() + out.numel()) as f64 * BYTES_PER_ELEMENT + weights * BYTES_PER_ELEMENT,
                    util: 1.0,
                }]
            }
        })
    }

    /// Whether the operator runs on the DSP.
    pub fn is_dsp_op(op: &OperatorSpec) -> bool {
        match op.kind {
            OpKind::LeakyReLU => op.activation_slope != 0.0 || op.per_channel,
            OpKind::DepthToSpace | OpKind::UpsampleBilinear => true,
            _ => false,
        }
    }

    /// Noise-free cost of one operator, excluding graph overhead.
    pub fn op_cost_ms(&self, op: &OperatorSpec, input: TensorShape) -> Result<f64, ProfilerError> {
        let per_ms = self.clock_ghz * 1e6 * self.macs_per_cycle;
        let base: f64 = self
            .layer_work(op, input)?
            .iter()
            .map(|w| w.macs / (per_ms * w.util) + w.bytes / BYTES_PER_MB * self.dma_ms_per_mb)
            .sum();
        Ok(if Self::is_dsp_op(op) { base * self.dsp_penalty_factor } else { base })
    }

    /// Noise-free latency of a whole run: overhead plus the sum of layer costs.
    pub fn closed_form_ms(&self, net: &CompactNet) -> Result<f64, ProfilerError> {
        let mut total = self.graph_overhead_ms;
        for (op, s) in net.layer_inputs()? {
            total += self.op_cost_ms(&op, s)?;
        }
        Ok(total)
    }

    /// Exact per-operator costs for every key of a supernet's search space.
    pub fn closed_form_lut(&self, net: &SuperNet) -> Result<LatencyTable, ProfilerError> {
        let mut lut = LatencyTable::new(LatencySource::Manual, format!("{} (closed form)", self.name()));
        for (key, op, s) in net.unique_ops()? {
            lut.insert(key, self.op_cost_ms(&op, s)?)?;
        }
        Ok(lut)
    }

    /// One noisy run: overhead and layer costs, each with its own log-normal factor.
    fn noisy_run(&self, overhead: f64, layers: &[f64], content: &str, trial: usize) -> f64 {
        if self.noise_sigma_rel == 0.0 {
            return overhead + layers.iter().sum::<f64>();
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(content.as_bytes());
        h.update((trial as u64).to_le_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut factor = || {
            let z: f64 = StandardNormal.sample(&mut rng);
            (self.noise_sigma_rel * z).exp()
        };
        let mut total = overhead * factor();
        for c in layers {
            total += c * factor();
        }
        total
    }
}

fn content_key(net: &CompactNet) -> Result<String, ProfilerError> {
    let keys = net
        .layer_inputs()?
        .iter()
        .map(|(op, s)| canonical_key(op, *s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(keys.join("|"))
}

impl DeviceRunner for SimulatedVpu {
    fn name(&self) -> String {
        format!("simulated-vpu(seed={}, sigma={})", self.seed, self.noise_sigma_rel)
    }

    fn run(&mut self, subgraph: &CompactNet, trials: usize) -> Result<Vec<f64>, ProfilerError> {
        self.validate()?;
        let layers =
            subgraph.layer_inputs()?.iter().map(|(op, s)| self.op_cost_ms(op, *s)).collect::<Result<Vec<_>, _>>()?;
        let content = content_key(subgraph)?;
        Ok((0..trials).map(|t| self.noisy_run(self.graph_overhead_ms, &layers, &content, t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Task;

    #[test]
    fn conv_cost_by_hand() {
        let sim = SimulatedVpu { dma_ms_per_mb: 0.0, ..Default::default() };
        // 16->16 3x3 at 8x8: 16*64*16*9 = 147456 MACs at 0.7e6 MAC/ms
        let c = sim.op_cost_ms(&OperatorSpec::conv(3, 1, 16, 16), TensorShape::new(16, 8, 8)).unwrap();
        assert!((c - 147456.0 / 0.7e6).abs() < 1e-15);
        // 24 output channels occupy 32 lanes
        let c24 = sim.op_cost_ms(&OperatorSpec::conv(3, 1, 16, 24), TensorShape::new(16, 8, 8)).unwrap();
        assert!((c24 - 16.0 * 64.0 * 24.0 * 9.0 / 0.7e6 * 32.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn dma_bytes_are_fp16() {
        let sim = SimulatedVpu { clock_ghz: 1e12, ..Default::default() };
        let c = sim.op_cost_ms(&OperatorSpec::relu(4), TensorShape::new(4, 10, 10)).unwrap();
        assert!((c - 800.0 * 2.0 / 1e6).abs() < 1e-12);
    }

    #[test]
    fn dsp_ops_are_penalized() {
        let sim = SimulatedVpu::default();
        let s = TensorShape::new(16, 8, 8);
        let relu = sim.op_cost_ms(&OperatorSpec::relu(16), s).unwrap();
        let leaky = sim.op_cost_ms(&OperatorSpec::leaky_relu(16, 0.1), s).unwrap();
        let zero_slope = sim.op_cost_ms(&OperatorSpec::leaky_relu(16, 0.0), s).unwrap();
        assert!((leaky - 4.0 * relu).abs() < 1e-15);
        assert_eq!(zero_slope, relu);
        assert_eq!(sim.op_cost_ms(&OperatorSpec::identity(16), s).unwrap(), 0.0);
    }

    #[test]
    fn mbconv_is_three_convs() {
        let sim = SimulatedVpu::default();
        let s = TensorShape::new(16, 8, 8);
        let mb = sim.op_cost_ms(&OperatorSpec::mbconv(3, 2, 6, 16, 32), s).unwrap();
        let expand = sim.op_cost_ms(&OperatorSpec::pointwise(1, 16, 96), s).unwrap();
        let dw = sim.op_cost_ms(&OperatorSpec::dwconv(3, 2, 96), TensorShape::new(96, 8, 8)).unwrap();
        let proj = sim.op_cost_ms(&OperatorSpec::pointwise(1, 96, 32), TensorShape::new(96, 4, 4)).unwrap();
        assert!((mb - (expand + dw + proj)).abs() < 1e-15);
    }

    fn log_sd(samples: &[f64], base: f64) -> (f64, f64) {
        let logs: Vec<f64> = samples.iter().map(|v| (v / base).ln()).collect();
        let n = logs.len() as f64;
        let m = logs.iter().sum::<f64>() / n;
        (m, (logs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn noise_is_pure_and_scaled() {
        let mut sim = SimulatedVpu { noise_sigma_rel: 0.05, seed: 7, graph_overhead_ms: 0.0, ..Default::default() };
        let net = CompactNet::chain(Task::Classification, TensorShape::new(16, 8, 8), vec![OperatorSpec::conv(3, 1, 16, 16)]);
        let a = sim.run(&net, 400).unwrap();
        assert_eq!(a, sim.run(&net, 400).unwrap());
        let (m, sd) = log_sd(&a, sim.closed_form_ms(&net).unwrap());
        assert!(m.abs() < 0.05 * 3.0 / 400f64.sqrt(), "{m}");
        assert!((sd - 0.05).abs() < 0.006, "{sd}");
        sim.seed = 8;
        assert_ne!(a, sim.run(&net, 400).unwrap());
    }

    #[test]
    fn stacking_averages_layer_noise() {
        let sim = SimulatedVpu { noise_sigma_rel: 0.05, seed: 3, graph_overhead_ms: 0.0, ..Default::default() };
        let s = TensorShape::new(16, 8, 8);
        let net = CompactNet::chain(Task::Classification, s, vec![OperatorSpec::conv(3, 1, 16, 16); 25]);
        let a = sim.clone().run(&net, 400).unwrap();
        let (_, sd) = log_sd(&a, sim.closed_form_ms(&net).unwrap());
        assert!((sd - 0.05 / 5.0).abs() < 0.002, "{sd}");
    }
}

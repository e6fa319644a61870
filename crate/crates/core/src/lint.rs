//! Design-rule checks for accelerator-friendly networks.
//!
//! | rule   | severity | flags |
//! |--------|----------|-------|
//! | VPU001 | warning  | operators executed on the DSP: per-channel LeakyReLU, DepthToSpace, bilinear upsampling with aligned corners |
//! | VPU002 | warning  | convolutions whose output channel count is not a multiple of 16 |
//! | VPU003 | advisory | depthwise convolution feeding a pointwise convolution through an activation larger than the streaming threshold |
//! | VPU004 | reserved | GeLU; not representable in the operator set |

use serde::{Deserialize, Serialize};

use crate::graph::{CompactNet, GraphError, OpKind, OperatorSpec, SuperNet, TensorShape};

pub const CHANNEL_MULTIPLE: u32 = 16;
const BYTES_PER_ELEMENT: u64 = 2;

/// Registered rules: `(id, description)`.
pub const RULES: [(&str, &str); 4] = [
    ("VPU001", "operator runs on the DSP"),
    ("VPU002", "convolution output channels are not a multiple of 16"),
    ("VPU003", "depthwise + pointwise pair whose activation needs streaming"),
    ("VPU004", "reserved: GeLU activation (not in the operator set)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule_id: String,
    pub severity: Severity,
    /// Position in the flattened layer list (compact nets), or of the stem layer / stage /
    /// head layer (supernets).
    pub layer_index: usize,
    /// Supernet candidate path such as `stage 1 candidate 2 op 0`; empty for compact nets.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LintConfig {
    /// Flag every LeakyReLU and every bilinear upsample, not just the per-channel /
    /// aligned-corners variants.
    pub strict: bool,
    /// VPU003 threshold on the activation between the depthwise and pointwise layers.
    pub streaming_threshold_bytes: u64,
}

impl Default for LintConfig {
    fn default() -> Self {
        LintConfig { strict: false, streaming_threshold_bytes: 1 << 20 }
    }
}

/// Either kind of network.
#[derive(Debug, Clone, Copy)]
pub enum NetRef<'a> {
    Compact(&'a CompactNet),
    Super(&'a SuperNet),
}

fn finding(rule: &str, severity: Severity, layer_index: usize, location: &str, message: String) -> LintFinding {
    LintFinding { rule_id: rule.into(), severity, layer_index, location: location.into(), message }
}

fn single_op_findings(cfg: &LintConfig, op: &OperatorSpec, input: TensorShape, index: usize, loc: &str, out: &mut Vec<LintFinding>) {
    let dsp = match op.kind {
        OpKind::LeakyReLU if op.per_channel => Some("LeakyReLU with per-channel slope".to_string()),
        OpKind::LeakyReLU if cfg.strict => Some("LeakyReLU".to_string()),
        OpKind::DepthToSpace => Some("DepthToSpace".to_string()),
        OpKind::UpsampleBilinear if op.align_corners => Some("bilinear interpolation with aligned corners".to_string()),
        OpKind::UpsampleBilinear if cfg.strict => Some("bilinear interpolation".to_string()),
        _ => None,
    };
    if let Some(what) = dsp {
        out.push(finding("VPU001", Severity::Warning, index, loc, format!("{what} runs on the DSP: {op}")));
    }
    if op.kind.is_conv_family() && !op.out_channels.is_multiple_of(CHANNEL_MULTIPLE) {
        out.push(finding(
            "VPU002",
            Severity::Warning,
            index,
            loc,
            format!("{} output channels are not a multiple of {CHANNEL_MULTIPLE}: {op}", op.out_channels),
        ));
    }
    if op.kind == OpKind::MBConv {
        if let (Some(h), Ok(out_shape)) = (op.hidden_channels(), op.output_shape(input)) {
            let bytes = h as u64 * out_shape.height as u64 * out_shape.width as u64 * BYTES_PER_ELEMENT;
            if bytes > cfg.streaming_threshold_bytes {
                out.push(finding(
                    "VPU003",
                    Severity::Advisory,
                    index,
                    loc,
                    format!("depthwise output of {bytes} bytes inside {op} exceeds the streaming threshold"),
                ));
            }
        }
    }
}

fn pair_finding(cfg: &LintConfig, a: &OperatorSpec, b: &OperatorSpec, mid: TensorShape, index: usize, loc: &str) -> Option<LintFinding> {
    if a.kind != OpKind::DWConv || b.kind != OpKind::PointwiseConv {
        return None;
    }
    let bytes = mid.numel() as u64 * BYTES_PER_ELEMENT;
    (bytes > cfg.streaming_threshold_bytes).then(|| {
        finding(
            "VPU003",
            Severity::Advisory,
            index,
            loc,
            format!("depthwise -> pointwise activation of {bytes} bytes exceeds the streaming threshold; both may be DMA bound"),
        )
    })
}

fn lint_chain(cfg: &LintConfig, layers: &[(OperatorSpec, TensorShape)], index_of: impl Fn(usize) -> usize, loc_of: impl Fn(usize) -> String, out: &mut Vec<LintFinding>) {
    for (i, (op, s)) in layers.iter().enumerate() {
        single_op_findings(cfg, op, *s, index_of(i), &loc_of(i), out);
        if let Some((next, mid)) = layers.get(i + 1) {
            if let Some(f) = pair_finding(cfg, op, next, *mid, index_of(i), &loc_of(i)) {
                out.push(f);
            }
        }
    }
}

/// Findings ordered by layer index, then rule id.
pub fn lint_network(net: NetRef<'_>, cfg: &LintConfig) -> Result<Vec<LintFinding>, GraphError> {
    let mut out = Vec::new();
    match net {
        NetRef::Compact(c) => {
            let layers = c.layer_inputs()?;
            lint_chain(cfg, &layers, |i| i, |_| String::new(), &mut out);
        }
        NetRef::Super(s) => {
            let stem_n = s.stem.len();
            let stage_inputs = s.stage_input_shapes()?;
            let mut fixed = Vec::new();
            let mut shape = s.input_shape;
            for op in &s.stem {
                fixed.push((op.clone(), shape));
                shape = op.output_shape(shape).map_err(|reason| GraphError::InvalidOp { reason })?;
            }
            lint_chain(cfg, &fixed, |i| i, |i| format!("stem op {i}"), &mut out);
            for (i, (stage, input)) in s.stages.iter().zip(stage_inputs).enumerate() {
                for (j, cand) in stage.candidates.iter().enumerate() {
                    let layers = cand.op_inputs(input)?;
                    lint_chain(cfg, &layers, |_| stem_n + i, |k| format!("stage {i} candidate {j} op {k}"), &mut out);
                }
            }
            let head: Vec<_> = s.head.iter().cloned().zip(s.head_input_shapes()?).collect();
            let base = stem_n + s.stages.len();
            lint_chain(cfg, &head, |i| base + i, |i| format!("head op {i}"), &mut out);
        }
    }
    out.sort_by(|a, b| (a.layer_index, &a.rule_id).cmp(&(b.layer_index, &b.rule_id)));
    Ok(out)
}

/// Count of findings for `rule`.
pub fn count_rule(findings: &[LintFinding], rule: &str) -> usize {
    findings.iter().filter(|f| f.rule_id == rule).count()
}

/// Fixed-width text table.
pub fn format_table(findings: &[LintFinding]) -> String {
    if findings.is_empty() {
        return "no findings\n".into();
    }
    let mut s = format!("{:<7} {:<9} {:>5}  {}\n", "rule", "severity", "layer", "message");
    for f in findings {
        let sev = match f.severity {
            Severity::Warning => "warning",
            Severity::Advisory => "advisory",
        };
        let loc = if f.location.is_empty() { String::new() } else { format!("[{}] ", f.location) };
        s.push_str(&format!("{:<7} {:<9} {:>5}  {}{}\n", f.rule_id, sev, f.layer_index, loc, f.message));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Task;

    fn chain(input: TensorShape, ops: Vec<OperatorSpec>) -> CompactNet {
        CompactNet::chain(Task::Classification, input, ops)
    }

    fn rules(f: &[LintFinding]) -> Vec<(&str, usize)> {
        f.iter().map(|f| (f.rule_id.as_str(), f.layer_index)).collect()
    }

    #[test]
    fn channel_multiple() {
        let s = TensorShape::new(16, 8, 8);
        let ok = lint_network(NetRef::Compact(&chain(s, vec![OperatorSpec::conv(3, 1, 16, 32)])), &LintConfig::default()).unwrap();
        assert!(ok.is_empty());
        let bad = lint_network(NetRef::Compact(&chain(s, vec![OperatorSpec::conv(3, 1, 16, 24)])), &LintConfig::default()).unwrap();
        assert_eq!(rules(&bad), vec![("VPU002", 0)]);
        assert_eq!(bad[0].severity, Severity::Warning);
    }

    #[test]
    fn dsp_ops() {
        let s = TensorShape::new(16, 8, 8);
        let net = chain(s, vec![
            OperatorSpec::leaky_relu(16, 0.1),
            OperatorSpec::leaky_relu_per_channel(16, 0.1),
            OperatorSpec::depth_to_space(16, 2),
            OperatorSpec::upsample_bilinear(4, 2, false),
            OperatorSpec::upsample_bilinear(4, 2, true),
        ]);
        let f = lint_network(NetRef::Compact(&net), &LintConfig::default()).unwrap();
        assert_eq!(rules(&f), vec![("VPU001", 1), ("VPU001", 2), ("VPU001", 4)]);
        let strict = lint_network(NetRef::Compact(&net), &LintConfig { strict: true, ..Default::default() }).unwrap();
        assert_eq!(rules(&strict), vec![("VPU001", 0), ("VPU001", 1), ("VPU001", 2), ("VPU001", 3), ("VPU001", 4)]);
    }

    #[test]
    fn streaming_pair() {
        let s = TensorShape::new(32, 128, 256);
        let net = chain(s, vec![OperatorSpec::dwconv(3, 1, 32), OperatorSpec::pointwise(1, 32, 32)]);
        let f = lint_network(NetRef::Compact(&net), &LintConfig::default()).unwrap();
        assert_eq!(rules(&f), vec![("VPU003", 0)]);
        assert_eq!(f[0].severity, Severity::Advisory);
        let small = chain(TensorShape::new(32, 8, 8), net.layers());
        assert!(lint_network(NetRef::Compact(&small), &LintConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn supernet_findings_name_candidates() {
        let net = crate::graph::tests::three_stage();
        let f = lint_network(NetRef::Super(&net), &LintConfig { strict: true, ..Default::default() }).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].rule_id, "VPU001");
        assert_eq!(f[0].layer_index, 3);
        assert_eq!(f[0].location, "stage 2 candidate 1 op 0");
        assert_eq!(f, lint_network(NetRef::Super(&net), &LintConfig { strict: true, ..Default::default() }).unwrap());
    }

    #[test]
    fn registry_covers_emitted_rules() {
        for id in ["VPU001", "VPU002", "VPU003"] {
            assert!(RULES.iter().any(|(r, _)| *r == id));
        }
        assert!(format_table(&[]).contains("no findings"));
    }
}

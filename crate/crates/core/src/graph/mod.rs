//! Network IR: operator descriptors, supernets, derived compact nets, shape inference,
//! validation, canonical operator keys and the `.net.json` file format.
//!
//! A supernet is a linear chain `stem -> stage_0 -> ... -> stage_{N-1} -> head`. Each stage
//! holds one or more candidates; a candidate is a short path of operators (usually one) that
//! maps the stage input shape to the stage output shape. Spatial operators use symmetric zero
//! padding of `(kernel - 1) / 2`, so stride-1 candidates of any odd kernel are interchangeable.

pub mod io;
mod op;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{deserialize, deserialize_compact, serialize, serialize_compact};
pub use op::{OpKind, OperatorSpec};

/// Feature map shape, channels first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 3]", into = "[u32; 3]")]
pub struct TensorShape {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl TensorShape {
    pub const fn new(channels: u32, height: u32, width: u32) -> Self {
        TensorShape { channels, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl TryFrom<[u32; 3]> for TensorShape {
    type Error = String;

    fn try_from(v: [u32; 3]) -> Result<Self, String> {
        if v.contains(&0) {
            return Err(format!("shape dimensions must be positive, got {v:?}"));
        }
        Ok(TensorShape::new(v[0], v[1], v[2]))
    }
}

impl From<TensorShape> for [u32; 3] {
    fn from(s: TensorShape) -> Self {
        [s.channels, s.height, s.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification,
    SuperResolution,
}

/// A stage candidate: a non-empty path of operators executed in order.
///
/// Most candidates are a single operator. Paths exist so that candidates with different
/// internal layouts (e.g. upsample-then-project vs. project-then-depth-to-space) can still
/// share the stage's input and output shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    ops: Vec<OperatorSpec>,
}

impl Candidate {
    /// Panics on an empty path.
    pub fn path(ops: Vec<OperatorSpec>) -> Self {
        assert!(!ops.is_empty(), "candidate path must contain at least one operator");
        Candidate { ops }
    }

    pub fn ops(&self) -> &[OperatorSpec] {
        &self.ops
    }

    /// Output shape after the whole path.
    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape, (usize, String)> {
        let mut s = input;
        for (i, op) in self.ops.iter().enumerate() {
            s = op.output_shape(s).map_err(|e| (i, e))?;
        }
        Ok(s)
    }

    /// `(op, input shape)` for every operator on the path.
    pub fn op_inputs(&self, input: TensorShape) -> Result<Vec<(OperatorSpec, TensorShape)>, GraphError> {
        let mut s = input;
        let mut out = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            out.push((op.clone(), s));
            s = op.output_shape(s).map_err(|reason| GraphError::InvalidOp { reason })?;
        }
        Ok(out)
    }

    /// Key identifying the whole path at a given input shape.
    pub fn key(&self, input: TensorShape) -> Result<String, GraphError> {
        let keys = self
            .op_inputs(input)?
            .iter()
            .map(|(op, s)| canonical_key(op, *s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(keys.join("|"))
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        self.ops.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(" > ")
    }
}

impl From<OperatorSpec> for Candidate {
    fn from(op: OperatorSpec) -> Self {
        Candidate { ops: vec![op] }
    }
}

/// One searchable stage. When `output_shape` is `None` the stage output is whatever the first
/// candidate produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStage {
    pub candidates: Vec<Candidate>,
    pub output_shape: Option<TensorShape>,
}

impl MixedStage {
    pub fn new(candidates: Vec<Candidate>) -> Self {
        MixedStage { candidates, output_shape: None }
    }

    pub fn with_output(candidates: Vec<Candidate>, output_shape: TensorShape) -> Self {
        MixedStage { candidates, output_shape: Some(output_shape) }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    pub task: Task,
    pub input_shape: TensorShape,
    pub stem: Vec<OperatorSpec>,
    pub stages: Vec<MixedStage>,
    pub head: Vec<OperatorSpec>,
    pub num_classes: Option<u32>,
    pub sr_scale: Option<u32>,
}

/// How a compact net's stage was chosen from its supernet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageChoice {
    pub index: usize,
    /// More than one candidate shared the maximal architecture weight.
    pub tie: bool,
}

/// A single-path network: one candidate per stage of the originating supernet.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactNet {
    pub task: Task,
    pub input_shape: TensorShape,
    pub stem: Vec<OperatorSpec>,
    pub stages: Vec<Candidate>,
    pub head: Vec<OperatorSpec>,
    pub num_classes: Option<u32>,
    pub sr_scale: Option<u32>,
    /// Empty unless the net was derived from a supernet.
    pub choices: Vec<StageChoice>,
}

impl CompactNet {
    /// A bare chain of operators, used for profiling subgraphs.
    pub fn chain(task: Task, input_shape: TensorShape, ops: Vec<OperatorSpec>) -> Self {
        CompactNet {
            task,
            input_shape,
            stem: Vec::new(),
            stages: ops.into_iter().map(Candidate::from).collect(),
            head: Vec::new(),
            num_classes: None,
            sr_scale: None,
            choices: Vec::new(),
        }
    }

    /// Flattened operator sequence.
    pub fn layers(&self) -> Vec<OperatorSpec> {
        let mut out = self.stem.clone();
        for c in &self.stages {
            out.extend(c.ops().iter().cloned());
        }
        out.extend(self.head.iter().cloned());
        out
    }

    /// `(op, input shape)` for each layer in execution order.
    pub fn layer_inputs(&self) -> Result<Vec<(OperatorSpec, TensorShape)>, GraphError> {
        let mut s = self.input_shape;
        let mut out = Vec::new();
        for (i, op) in self.layers().into_iter().enumerate() {
            let next = op
                .output_shape(s)
                .map_err(|reason| GraphError::InvalidOp { reason: format!("layer {i}: {reason}") })?;
            out.push((op, s));
            s = next;
        }
        Ok(out)
    }

    /// Picks candidate `choice[i]` in stage `i`.
    pub fn from_choices(net: &SuperNet, choice: &[usize]) -> Result<Self, GraphError> {
        if choice.len() != net.stages.len() {
            return Err(GraphError::InvalidOp {
                reason: format!("{} choices for {} stages", choice.len(), net.stages.len()),
            });
        }
        let mut stages = Vec::with_capacity(choice.len());
        for (i, (&c, st)) in choice.iter().zip(&net.stages).enumerate() {
            let cand = st.candidates.get(c).ok_or_else(|| GraphError::InvalidOp {
                reason: format!("stage {i} has no candidate {c}"),
            })?;
            stages.push(cand.clone());
        }
        Ok(CompactNet {
            task: net.task,
            input_shape: net.input_shape,
            stem: net.stem.clone(),
            stages,
            head: net.head.clone(),
            num_classes: net.num_classes,
            sr_scale: net.sr_scale,
            choices: choice.iter().map(|&index| StageChoice { index, tie: false }).collect(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("stage {stage} candidate {candidate}: output {actual} does not match stage output {expected}")]
    ShapeMismatch { stage: usize, candidate: usize, expected: TensorShape, actual: TensorShape },
    #[error("invalid operator: {reason}")]
    InvalidOp { reason: String },
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
}

/// Where in a network a finding or error applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Stem { layer: usize },
    Stage { stage: usize, candidate: usize, op: usize },
    Head { layer: usize },
    Network,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Stem { layer } => write!(f, "stem[{layer}]"),
            Location::Stage { stage, candidate, op } => write!(f, "stages[{stage}].candidates[{candidate}][{op}]"),
            Location::Head { layer } => write!(f, "head[{layer}]"),
            Location::Network => f.write_str("network"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Finding {
    InvariantViolation { location: Location, message: String },
    ShapeMismatch { stage: usize, candidate: usize, expected: TensorShape, actual: TensorShape },
    DuplicateCandidate { stage: usize, candidate: usize, key: String },
    EmptyStage { stage: usize },
    NoStages,
    TaskMetadata { message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

fn run_ops(
    ops: &[OperatorSpec],
    mut s: TensorShape,
    loc: impl Fn(usize) -> Location,
    shapes: &mut Vec<TensorShape>,
) -> Result<TensorShape, GraphError> {
    for (i, op) in ops.iter().enumerate() {
        s = op
            .output_shape(s)
            .map_err(|reason| GraphError::InvalidOp { reason: format!("{}: {reason}", loc(i)) })?;
        shapes.push(s);
    }
    Ok(s)
}

impl SuperNet {
    /// Output shape after every stem layer, every stage and every head layer.
    pub fn infer_shapes(&self) -> Result<Vec<TensorShape>, GraphError> {
        let mut shapes = Vec::new();
        let mut s = run_ops(&self.stem, self.input_shape, |layer| Location::Stem { layer }, &mut shapes)?;
        for (si, stage) in self.stages.iter().enumerate() {
            let mut declared = stage.output_shape;
            for (ci, cand) in stage.candidates.iter().enumerate() {
                let out = cand.output_shape(s).map_err(|(op, reason)| GraphError::InvalidOp {
                    reason: format!("{}: {reason}", Location::Stage { stage: si, candidate: ci, op }),
                })?;
                match declared {
                    None => declared = Some(out),
                    Some(d) if d != out => {
                        return Err(GraphError::ShapeMismatch { stage: si, candidate: ci, expected: d, actual: out })
                    }
                    _ => {}
                }
            }
            s = declared.ok_or_else(|| GraphError::InvalidOp { reason: format!("stage {si} has no candidates") })?;
            shapes.push(s);
        }
        run_ops(&self.head, s, |layer| Location::Head { layer }, &mut shapes)?;
        Ok(shapes)
    }

    /// Input shape of each stage.
    pub fn stage_input_shapes(&self) -> Result<Vec<TensorShape>, GraphError> {
        let shapes = self.infer_shapes()?;
        let n = self.stem.len();
        let mut out = Vec::with_capacity(self.stages.len());
        for i in 0..self.stages.len() {
            out.push(if n + i == 0 { self.input_shape } else { shapes[n + i - 1] });
        }
        Ok(out)
    }

    /// Input shape of each head layer.
    pub fn head_input_shapes(&self) -> Result<Vec<TensorShape>, GraphError> {
        let shapes = self.infer_shapes()?;
        let n = self.stem.len() + self.stages.len();
        Ok((0..self.head.len())
            .map(|i| if n + i == 0 { self.input_shape } else { shapes[n + i - 1] })
            .collect())
    }

    /// `(op, input)` pairs for the fixed stem and head layers.
    pub fn fixed_ops(&self) -> Result<Vec<(OperatorSpec, TensorShape)>, GraphError> {
        let shapes = self.infer_shapes()?;
        let mut out = Vec::new();
        let mut s = self.input_shape;
        for (i, op) in self.stem.iter().enumerate() {
            out.push((op.clone(), s));
            s = shapes[i];
        }
        for (op, s) in self.head.iter().zip(self.head_input_shapes()?) {
            out.push((op.clone(), s));
        }
        Ok(out)
    }

    /// Every `(op, input)` pair in the search space, deduplicated by canonical key, in
    /// stem / stage / head order.
    pub fn unique_ops(&self) -> Result<Vec<(String, OperatorSpec, TensorShape)>, GraphError> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut push = |op: &OperatorSpec, s: TensorShape, out: &mut Vec<_>| -> Result<(), GraphError> {
            let key = canonical_key(op, s)?;
            if seen.insert(key.clone()) {
                out.push((key, op.clone(), s));
            }
            Ok(())
        };
        let fixed = self.fixed_ops()?;
        let (stem, head) = fixed.split_at(self.stem.len());
        for (op, s) in stem {
            push(op, *s, &mut out)?;
        }
        for (stage, s) in self.stages.iter().zip(self.stage_input_shapes()?) {
            for cand in &stage.candidates {
                for (op, si) in cand.op_inputs(s)? {
                    push(&op, si, &mut out)?;
                }
            }
        }
        for (op, s) in head {
            push(op, *s, &mut out)?;
        }
        Ok(out)
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Candidate count per stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.len()).collect()
    }

    /// Checks every structural invariant without failing fast.
    pub fn validate(&self) -> ValidationReport {
        let mut findings = Vec::new();
        if self.stages.is_empty() {
            findings.push(Finding::NoStages);
        }
        match (self.task, self.num_classes, self.sr_scale) {
            (Task::Classification, Some(n), None) if n > 0 => {}
            (Task::SuperResolution, None, Some(s)) if s > 0 => {}
            (Task::Classification, ..) => findings.push(Finding::TaskMetadata {
                message: "classification nets need a positive num_classes and no sr_scale".into(),
            }),
            (Task::SuperResolution, ..) => findings.push(Finding::TaskMetadata {
                message: "super-resolution nets need a positive sr_scale and no num_classes".into(),
            }),
        }

        // Shape chaining continues past errors with the best-known shape so later stages are
        // still checked.
        let mut s = Some(self.input_shape);
        let chain = |ops: &[OperatorSpec], s: &mut Option<TensorShape>, loc: &dyn Fn(usize) -> Location, f: &mut Vec<Finding>| {
            for (i, op) in ops.iter().enumerate() {
                for v in op.invariant_violations() {
                    f.push(Finding::InvariantViolation { location: loc(i), message: v });
                }
                if let Some(cur) = *s {
                    match op.output_shape(cur) {
                        Ok(o) => *s = Some(o),
                        Err(e) => {
                            if op.invariant_violations().is_empty() {
                                f.push(Finding::InvariantViolation { location: loc(i), message: e });
                            }
                            *s = None;
                        }
                    }
                }
            }
        };
        chain(&self.stem, &mut s, &|layer| Location::Stem { layer }, &mut findings);

        for (si, stage) in self.stages.iter().enumerate() {
            if stage.candidates.is_empty() {
                findings.push(Finding::EmptyStage { stage: si });
                s = stage.output_shape;
                continue;
            }
            let mut keys = HashSet::new();
            let mut declared = stage.output_shape;
            for (ci, cand) in stage.candidates.iter().enumerate() {
                let mut cs = s;
                chain(
                    cand.ops(),
                    &mut cs,
                    &|op| Location::Stage { stage: si, candidate: ci, op },
                    &mut findings,
                );
                if let (Some(input), Some(out)) = (s, cs) {
                    if let Ok(k) = cand.key(input) {
                        if !keys.insert(k.clone()) {
                            findings.push(Finding::DuplicateCandidate { stage: si, candidate: ci, key: k });
                        }
                    }
                    match declared {
                        None => declared = Some(out),
                        Some(d) if d != out => findings.push(Finding::ShapeMismatch {
                            stage: si,
                            candidate: ci,
                            expected: d,
                            actual: out,
                        }),
                        _ => {}
                    }
                }
            }
            s = declared;
        }
        chain(&self.head, &mut s, &|layer| Location::Head { layer }, &mut findings);

        if let Some(out) = s {
            let expected = match (self.task, self.num_classes, self.sr_scale) {
                (Task::Classification, Some(n), _) => Some(TensorShape::new(n, 1, 1)),
                (Task::SuperResolution, _, Some(k)) => Some(TensorShape::new(
                    self.input_shape.channels,
                    self.input_shape.height * k,
                    self.input_shape.width * k,
                )),
                _ => None,
            };
            if let Some(e) = expected {
                if e != out {
                    findings.push(Finding::TaskMetadata {
                        message: format!("network output {out} does not match task output {e}"),
                    });
                }
            }
        }
        ValidationReport { findings }
    }
}

impl CompactNet {
    /// Output shape after every stem layer, every stage and every head layer.
    pub fn infer_shapes(&self) -> Result<Vec<TensorShape>, GraphError> {
        let mut shapes = Vec::new();
        let mut s = run_ops(&self.stem, self.input_shape, |layer| Location::Stem { layer }, &mut shapes)?;
        for (si, cand) in self.stages.iter().enumerate() {
            s = cand.output_shape(s).map_err(|(op, reason)| GraphError::InvalidOp {
                reason: format!("{}: {reason}", Location::Stage { stage: si, candidate: 0, op }),
            })?;
            shapes.push(s);
        }
        run_ops(&self.head, s, |layer| Location::Head { layer }, &mut shapes)?;
        Ok(shapes)
    }

    /// Output shape of the whole net.
    pub fn output_shape(&self) -> Result<TensorShape, GraphError> {
        Ok(self.infer_shapes()?.last().copied().unwrap_or(self.input_shape))
    }

    /// Views this net as a supernet with one candidate per stage.
    pub fn as_supernet(&self) -> SuperNet {
        SuperNet {
            task: self.task,
            input_shape: self.input_shape,
            stem: self.stem.clone(),
            stages: self.stages.iter().map(|c| MixedStage::new(vec![c.clone()])).collect(),
            head: self.head.clone(),
            num_classes: self.num_classes,
            sr_scale: self.sr_scale,
        }
    }
}

/// Deterministic text key for an operator applied at a given input shape.
///
/// Format: `Kind:k{K}:s{S}:e{E}:i{C}x{H}x{W}:o{C'}`, where `E` is the expand ratio in lowest
/// terms (`6`, `3/2`). Attributes that only some kinds carry are appended when they differ from
/// their defaults: `:a{slope}` (LeakyReLU slope, shortest round-trip decimal), `:pc`
/// (per-channel slope), `:x{scale}` (upsample / depth-to-space factor) and `:ac` (align corners).
pub fn canonical_key(op: &OperatorSpec, input: TensorShape) -> Result<String, GraphError> {
    op.output_shape(input).map_err(|reason| GraphError::InvalidOp { reason })?;
    let e = op.expand_ratio;
    let e = if e.is_integer() { e.to_integer().to_string() } else { format!("{}/{}", e.numer(), e.denom()) };
    let mut key = format!(
        "{}:k{}:s{}:e{}:i{}x{}x{}:o{}",
        op.kind, op.kernel, op.stride, e, input.channels, input.height, input.width, op.out_channels
    );
    if op.activation_slope != 0.0 {
        key.push_str(&format!(":a{}", op.activation_slope));
    }
    if op.per_channel {
        key.push_str(":pc");
    }
    if op.scale_factor != 1 {
        key.push_str(&format!(":x{}", op.scale_factor));
    }
    if op.align_corners {
        key.push_str(":ac");
    }
    Ok(key)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn three_stage() -> SuperNet {
        SuperNet {
            task: Task::Classification,
            input_shape: TensorShape::new(3, 16, 16),
            stem: vec![OperatorSpec::conv(3, 2, 3, 16)],
            stages: vec![
                MixedStage::new(vec![
                    OperatorSpec::conv(3, 1, 16, 16).into(),
                    OperatorSpec::conv(5, 1, 16, 16).into(),
                    OperatorSpec::identity(16).into(),
                ]),
                MixedStage::new(vec![
                    OperatorSpec::mbconv(3, 2, 3, 16, 32).into(),
                    OperatorSpec::conv(3, 2, 16, 32).into(),
                ]),
                MixedStage::new(vec![OperatorSpec::relu(32).into(), OperatorSpec::leaky_relu(32, 0.1).into()]),
            ],
            head: vec![OperatorSpec::avg_pool(3, 2, 32), OperatorSpec::linear(32 * 2 * 2, 10)],
            num_classes: Some(10),
            sr_scale: None,
        }
    }

    #[test]
    fn well_formed_net_validates() {
        let net = three_stage();
        assert!(net.validate().is_valid(), "{:?}", net.validate());
        let shapes = net.infer_shapes().unwrap();
        assert_eq!(shapes[0], TensorShape::new(16, 8, 8));
        assert_eq!(shapes[2], TensorShape::new(32, 4, 4));
        assert_eq!(*shapes.last().unwrap(), TensorShape::new(10, 1, 1));
    }

    #[test]
    fn declared_output_mismatch() {
        let mut net = three_stage();
        net.stages[0] = MixedStage::with_output(
            vec![OperatorSpec::conv(3, 1, 16, 32).into()],
            TensorShape::new(64, 8, 8),
        );
        let report = net.validate();
        let mismatches: Vec<_> =
            report.findings.iter().filter(|f| matches!(f, Finding::ShapeMismatch { .. })).collect();
        assert_eq!(mismatches.len(), 1);
        assert!(matches!(net.infer_shapes(), Err(GraphError::ShapeMismatch { stage: 0, candidate: 0, .. })));
    }

    #[test]
    fn identity_channel_violation() {
        let mut net = three_stage();
        let mut id = OperatorSpec::identity(16);
        id.out_channels = 32;
        net.stages[0].candidates[2] = id.into();
        let report = net.validate();
        let inv: Vec<_> =
            report.findings.iter().filter(|f| matches!(f, Finding::InvariantViolation { .. })).collect();
        assert_eq!(inv.len(), 1, "{report:?}");
    }

    #[test]
    fn duplicate_candidates_rejected() {
        let mut net = three_stage();
        net.stages[2].candidates.push(OperatorSpec::relu(32).into());
        assert!(net
            .validate()
            .findings
            .iter()
            .any(|f| matches!(f, Finding::DuplicateCandidate { stage: 2, candidate: 2, .. })));
    }

    #[test]
    fn key_examples() {
        let k = canonical_key(&OperatorSpec::conv(3, 1, 16, 32), TensorShape::new(16, 32, 32)).unwrap();
        assert_eq!(k, "Conv:k3:s1:e1:i16x32x32:o32");
        let k = canonical_key(&OperatorSpec::mbconv(5, 1, 6, 160, 160), TensorShape::new(160, 7, 7)).unwrap();
        assert_eq!(k, "MBConv:k5:s1:e6:i160x7x7:o160");
        let a = canonical_key(&OperatorSpec::leaky_relu(8, 0.1), TensorShape::new(8, 4, 4)).unwrap();
        let b = canonical_key(&OperatorSpec::leaky_relu(8, 0.2), TensorShape::new(8, 4, 4)).unwrap();
        assert_ne!(a, b);
        assert!(canonical_key(&OperatorSpec::conv(3, 1, 16, 32), TensorShape::new(8, 4, 4)).is_err());
    }

    #[test]
    fn compact_shapes_follow_stage_chain() {
        let net = three_stage();
        let c = CompactNet::from_choices(&net, &[1, 0, 1]).unwrap();
        assert_eq!(c.infer_shapes().unwrap(), net.infer_shapes().unwrap());
    }
}

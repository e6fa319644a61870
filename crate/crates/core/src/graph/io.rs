//! `.net.json` reading and writing.
//!
//! ```json
//! {"task": "Classification", "input_shape": [3, 16, 16],
//!  "stem": [op, ...],
//!  "stages": [{"candidates": [op, [op, op], ...], "output_shape": [16, 8, 8]}, ...],
//!  "head": [op, ...],
//!  "num_classes": 10}
//! ```
//!
//! A candidate is either one operator object or an array of operator objects (a path).
//! `output_shape` is optional. Compact nets use the same layout with exactly one candidate per
//! stage and may carry a top-level `"choices": [{"index": 1, "tie": false}, ...]`.

use std::fmt;

use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Candidate, CompactNet, GraphError, MixedStage, OperatorSpec, StageChoice, SuperNet, Task, TensorShape};

impl Serialize for Candidate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.ops() {
            [single] => single.serialize(s),
            many => many.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Candidate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct CandidateVisitor;

        impl<'de> Visitor<'de> for CandidateVisitor {
            type Value = Candidate;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an operator object or a non-empty array of operator objects")
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Candidate, A::Error> {
                let op = OperatorSpec::deserialize(de::value::MapAccessDeserializer::new(map))?;
                Ok(Candidate::from(op))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, seq: A) -> Result<Candidate, A::Error> {
                let ops = Vec::<OperatorSpec>::deserialize(de::value::SeqAccessDeserializer::new(seq))?;
                if ops.is_empty() {
                    return Err(de::Error::invalid_length(0, &self));
                }
                Ok(Candidate::path(ops))
            }
        }

        d.deserialize_any(CandidateVisitor)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageWire {
    candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_shape: Option<TensorShape>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetWire {
    task: Task,
    input_shape: TensorShape,
    #[serde(default)]
    stem: Vec<OperatorSpec>,
    stages: Vec<StageWire>,
    #[serde(default)]
    head: Vec<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sr_scale: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    choices: Vec<StageChoice>,
}

fn parse_wire(text: &str) -> Result<NetWire, GraphError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let wire: NetWire = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        GraphError::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })?;
    de.end().map_err(|e| GraphError::Parse {
        path: ".".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(wire)
}

fn to_text<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("network serialization is infallible");
    s.push('\n');
    s
}

/// Writes a supernet as `.net.json` text. Fails if the net does not validate.
pub fn serialize(net: &SuperNet) -> Result<String, GraphError> {
    if let Some(f) = net.validate().findings.first() {
        return Err(GraphError::InvalidOp { reason: format!("refusing to serialize invalid net: {f:?}") });
    }
    Ok(to_text(&NetWire {
        task: net.task,
        input_shape: net.input_shape,
        stem: net.stem.clone(),
        stages: net
            .stages
            .iter()
            .map(|s| StageWire { candidates: s.candidates.clone(), output_shape: s.output_shape })
            .collect(),
        head: net.head.clone(),
        num_classes: net.num_classes,
        sr_scale: net.sr_scale,
        choices: Vec::new(),
    }))
}

/// Reads a supernet. Structural problems beyond field types are left to [`SuperNet::validate`].
pub fn deserialize(text: &str) -> Result<SuperNet, GraphError> {
    let w = parse_wire(text)?;
    if !w.choices.is_empty() {
        return Err(GraphError::Parse {
            path: "choices".into(),
            line: 0,
            column: 0,
            message: "`choices` is only valid in compact network files".into(),
        });
    }
    Ok(SuperNet {
        task: w.task,
        input_shape: w.input_shape,
        stem: w.stem,
        stages: w
            .stages
            .into_iter()
            .map(|s| MixedStage { candidates: s.candidates, output_shape: s.output_shape })
            .collect(),
        head: w.head,
        num_classes: w.num_classes,
        sr_scale: w.sr_scale,
    })
}

pub fn serialize_compact(net: &CompactNet) -> Result<String, GraphError> {
    net.infer_shapes()?;
    Ok(to_text(&NetWire {
        task: net.task,
        input_shape: net.input_shape,
        stem: net.stem.clone(),
        stages: net
            .stages
            .iter()
            .map(|c| StageWire { candidates: vec![c.clone()], output_shape: None })
            .collect(),
        head: net.head.clone(),
        num_classes: net.num_classes,
        sr_scale: net.sr_scale,
        choices: net.choices.clone(),
    }))
}

/// Reads a compact net; every stage must hold exactly one candidate.
pub fn deserialize_compact(text: &str) -> Result<CompactNet, GraphError> {
    let w = parse_wire(text)?;
    let mut stages = Vec::with_capacity(w.stages.len());
    for (i, mut s) in w.stages.into_iter().enumerate() {
        if s.candidates.len() != 1 {
            return Err(GraphError::Parse {
                path: format!("stages[{i}].candidates"),
                line: 0,
                column: 0,
                message: format!("compact nets need exactly one candidate per stage, found {}", s.candidates.len()),
            });
        }
        stages.push(s.candidates.pop().unwrap());
    }
    if !w.choices.is_empty() && w.choices.len() != stages.len() {
        return Err(GraphError::Parse {
            path: "choices".into(),
            line: 0,
            column: 0,
            message: format!("{} choices for {} stages", w.choices.len(), stages.len()),
        });
    }
    Ok(CompactNet {
        task: w.task,
        input_shape: w.input_shape,
        stem: w.stem,
        stages,
        head: w.head,
        num_classes: w.num_classes,
        sr_scale: w.sr_scale,
        choices: w.choices,
    })
}

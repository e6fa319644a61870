use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NnError, Sequential, Tensor};
use crate::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// JSON checkpoint: canonical parameter name -> dims and flat values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Sequential<T>) -> Self {
        let params = model
            .named_params()
            .into_iter()
            .map(|(n, p)| {
                let values = p.value.data().iter().map(|v| v.as_f64()).collect();
                (n, CheckpointEntry { dims: p.value.dims().to_vec(), values })
            })
            .collect();
        Checkpoint { format: "hwnas-checkpoint".into(), version: CHECKPOINT_VERSION, params }
    }

    /// Loads values into `model`; names and dims must match exactly.
    pub fn apply<T: Scalar>(&self, model: &mut Sequential<T>) -> Result<(), NnError> {
        if self.format != "hwnas-checkpoint" || self.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        if expected.len() != self.params.len() || expected.iter().any(|n| !self.params.contains_key(n)) {
            return Err(NnError::Checkpoint("parameter names do not match the model".into()));
        }
        for (i, layer) in model.layers.iter_mut().enumerate() {
            for (n, p) in layer.params_mut() {
                let e = &self.params[&format!("layers.{i}.{n}")];
                if e.dims != p.value.dims() {
                    return Err(NnError::Checkpoint(format!("layers.{i}.{n}: dims {:?} != {:?}", e.dims, p.value.dims())));
                }
                p.value = Tensor::new(e.dims.clone(), e.values.iter().map(|&v| T::of(v)).collect())?;
                p.zero_grad();
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OperatorSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_restores_values() {
        let specs = [OperatorSpec::conv(3, 1, 2, 4), OperatorSpec::relu(4), OperatorSpec::mbconv(3, 1, 2, 4, 4)];
        let a = Sequential::<f64>::new(&specs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut b = Sequential::<f64>::new(&specs, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ck = Checkpoint::from_json(&Checkpoint::from_model(&a).to_json()).unwrap();
        ck.apply(&mut b).unwrap();
        for ((na, pa), (nb, pb)) in a.named_params().into_iter().zip(b.named_params()) {
            assert_eq!(na, nb);
            assert_eq!(pa.value, pb.value);
        }
        let mut c = Sequential::<f64>::new(&specs[..1], &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(ck.apply(&mut c).is_err());
    }
}

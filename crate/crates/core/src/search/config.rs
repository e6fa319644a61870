use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SearchError;

/// Search hyperparameters, stored as `.search.json`. Every field has a default, so `{}` is a
/// valid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Weight decay coefficient (`lambda1 * ||w||^2`). Default `1e-4`.
    pub lambda1: f64,
    /// Expected-latency weight, per millisecond. Default `0`.
    pub lambda2: f64,
    /// Default `0.05`.
    pub lr_weights: f64,
    /// Default `0.5`.
    pub lr_arch: f64,
    /// Default `8`.
    pub weight_steps_per_round: usize,
    /// Default `4`.
    pub arch_steps_per_round: usize,
    /// Default `20`.
    pub rounds: usize,
    /// Default `16`.
    pub batch_size: usize,
    /// Default `42`.
    pub seed: u64,
    /// Rounds of weight-only training before architecture updates start. Default `0`.
    pub warmup_rounds: usize,
    /// `.lut.json` or `.costmodel.json` supplying candidate latencies. Resolved by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_source: Option<PathBuf>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda1: 1e-4,
            lambda2: 0.0,
            lr_weights: 0.05,
            lr_arch: 0.5,
            weight_steps_per_round: 8,
            arch_steps_per_round: 4,
            rounds: 20,
            batch_size: 16,
            seed: 42,
            warmup_rounds: 0,
            latency_source: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.into()));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1 must be a finite non-negative number");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2 must be a finite non-negative number");
        }
        if !(self.lr_weights > 0.0 && self.lr_weights.is_finite()) || !(self.lr_arch > 0.0 && self.lr_arch.is_finite()) {
            return bad("learning rates must be positive");
        }
        if self.weight_steps_per_round + self.arch_steps_per_round == 0 || self.batch_size == 0 {
            return bad("batch size and at least one step count must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SearchError> {
        let cfg: SearchConfig = serde_json::from_str(text).map_err(|e| SearchError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(SearchConfig::from_json("{}").unwrap(), SearchConfig::default());
    }

    #[test]
    fn round_trip_and_rejects() {
        let c = SearchConfig { lambda2: 3.0, latency_source: Some("toy.lut.json".into()), ..Default::default() };
        assert_eq!(SearchConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(SearchConfig::from_json(r#"{"lambda2": -1}"#).is_err());
        assert!(SearchConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(SearchConfig::from_json(r#"{"lamda2": 1}"#).is_err());
    }
}

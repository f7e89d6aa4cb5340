//! Abstract inference-cost model: a fixed setup cost per invoked scorer plus
//! a per-pair cost for every query/candidate pair it scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerCost {
    pub per_pair: f64,
    #[serde(default)]
    pub setup: f64,
}

impl Default for ScorerCost {
    fn default() -> Self {
        Self {
            per_pair: 1.0,
            setup: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(default)]
    pub scorers: BTreeMap<String, ScorerCost>,
    /// Used for scorers without an entry.
    #[serde(default)]
    pub default: ScorerCost,
}

impl CostModel {
    pub fn with(mut self, id: impl Into<String>, per_pair: f64, setup: f64) -> Self {
        self.scorers.insert(id.into(), ScorerCost { per_pair, setup });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.scorers.iter().map(|(k, v)| (k.as_str(), v));
        for (id, c) in all.chain(std::iter::once(("default", &self.default))) {
            if !(c.per_pair >= 0.0 && c.setup >= 0.0 && c.per_pair.is_finite() && c.setup.is_finite()) {
                return Err(Error::Config(format!("cost of `{id}` must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn cost_of(&self, id: &str) -> ScorerCost {
        self.scorers.get(id).copied().unwrap_or(self.default)
    }
}

/// Σ over tiers of `setup + per_pair * pairs`.
pub fn cascade_cost<S: AsRef<str>>(model: &CostModel, tiers: &[(S, u64)]) -> f64 {
    tiers
        .iter()
        .map(|(id, pairs)| {
            let c = model.cost_of(id.as_ref());
            c.setup + c.per_pair * *pairs as f64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tier() {
        let m = CostModel::default().with("kge", 2.0, 5.0);
        assert_eq!(cascade_cost(&m, &[("kge", 10)]), 25.0);
    }

    #[test]
    fn zero_tiers() {
        let empty: [(&str, u64); 0] = [];
        assert_eq!(cascade_cost(&CostModel::default(), &empty), 0.0);
    }

    #[test]
    fn linear_without_setup() {
        let m = CostModel::default().with("a", 1.5, 0.0).with("b", 40.0, 0.0);
        let once = cascade_cost(&m, &[("a", 100), ("b", 7)]);
        let twice = cascade_cost(&m, &[("a", 200), ("b", 14)]);
        assert_eq!(twice, 2.0 * once);
    }

    #[test]
    fn monotone_in_pairs() {
        let m = CostModel::default().with("a", 0.5, 3.0);
        let mut prev = f64::NEG_INFINITY;
        for p in 0..50 {
            let c = cascade_cost(&m, &[("a", p), ("missing", p)]);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn negative_cost_rejected() {
        assert!(CostModel::default().with("a", -1.0, 0.0).validate().is_err());
        assert!(CostModel::default().with("a", 1.0, 0.0).validate().is_ok());
    }
}

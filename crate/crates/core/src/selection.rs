//! The common output of every selection method.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Higher scores are better (value estimates).
    Descending,
    /// Lower scores are better (Bellman-error scores).
    Ascending,
}

/// Per-candidate class choice and regression losses of a BE score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDetail {
    pub class_index: usize,
    pub train_loss: f64,
    pub val_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: String,
    pub order: Order,
    #[serde(with = "crate::serde_util::float::vec")]
    pub scores: Vec<f64>,
    /// Candidate indices, best first.
    pub ranking: Vec<usize>,
    pub chosen: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<ScoreDetail>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
}

/// Stable sort of indices by score; NaN and `-inf` (descending) or `+inf`
/// (ascending) land last, ties keep the lower index first.
pub fn rank_scores(scores: &[f64], order: Order) -> Vec<usize> {
    let key = |v: f64| -> (bool, f64) {
        match order {
            Order::Descending => (v.is_nan(), -v),
            Order::Ascending => (v.is_nan(), v),
        }
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (key(scores[i]), key(scores[j]));
        a.0.cmp(&b.0).then(if a.0 {
            std::cmp::Ordering::Equal
        } else {
            a.1.total_cmp(&b.1)
        })
    });
    idx
}

impl SelectionReport {
    pub fn new(method: impl Into<String>, scores: Vec<f64>, order: Order) -> Self {
        let ranking = rank_scores(&scores, order);
        let chosen = ranking.iter().take(1).copied().collect();
        Self {
            method: method.into(),
            order,
            scores,
            ranking,
            chosen,
            details: Vec::new(),
            config: serde_json::Value::Null,
            seed: 0,
        }
    }

    pub fn descending(method: impl Into<String>, scores: Vec<f64>) -> Self {
        Self::new(method, scores, Order::Descending)
    }

    pub fn ascending(method: impl Into<String>, scores: Vec<f64>) -> Self {
        Self::new(method, scores, Order::Ascending)
    }

    /// Sets the chosen set to the first `k` ranked candidates.
    pub fn with_top(mut self, k: usize) -> Self {
        self.chosen = self.ranking.iter().take(k).copied().collect();
        self
    }

    pub fn best(&self) -> usize {
        self.ranking[0]
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    /// Ranking is a permutation and the chosen set is its prefix.
    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        let mut seen = vec![false; n];
        for &i in &self.ranking {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(OpsError::invalid("ranking is not a permutation"));
            }
        }
        if self.ranking.len() != n || self.chosen.as_slice() != self.top(self.chosen.len()) {
            return Err(OpsError::invalid("chosen set is not a ranking prefix"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_handles_ties_and_infinities() {
        let r = SelectionReport::descending("x", vec![1.0, f64::NEG_INFINITY, 3.0, 1.0]);
        assert_eq!(r.ranking, vec![2, 0, 3, 1]);
        let r = SelectionReport::ascending("x", vec![0.5, f64::NAN, 0.1, 0.1]);
        assert_eq!(r.ranking, vec![2, 3, 0, 1]);
        r.validate().unwrap();
        let back: SelectionReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.ranking, r.ranking);
        assert!(back.scores[1].is_nan());
    }
}

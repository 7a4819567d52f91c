use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Layout, StateId};
use super::model::PROB_TOL;
use crate::error::{OpsError, Result};

/// Non-stationary stochastic policy: one action distribution per state.
/// A row may be left undefined for states the policy never reaches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyFile", try_from = "PolicyFile")]
pub struct Policy {
    layout: Layout,
    probs: Vec<f64>,
    defined: Vec<bool>,
}

impl Policy {
    pub fn uniform(layout: &Layout) -> Self {
        let a = layout.num_actions();
        Self {
            layout: layout.clone(),
            probs: vec![1.0 / a as f64; layout.num_state_actions()],
            defined: vec![true; layout.num_states()],
        }
    }

    /// `actions[g]` is the action taken at global state `g`.
    pub fn deterministic(layout: &Layout, actions: &[usize]) -> Result<Self> {
        if actions.len() != layout.num_states() {
            return Err(OpsError::ShapeMismatch(format!(
                "{} actions for {} states",
                actions.len(),
                layout.num_states()
            )));
        }
        let na = layout.num_actions();
        let mut probs = vec![0.0; layout.num_state_actions()];
        for (g, &a) in actions.iter().enumerate() {
            if a >= na {
                return Err(OpsError::invalid(format!("action {a} out of range")));
            }
            probs[g * na + a] = 1.0;
        }
        Ok(Self {
            layout: layout.clone(),
            probs,
            defined: vec![true; layout.num_states()],
        })
    }

    /// Rows in global state order; `None` leaves the state undefined.
    pub fn from_rows(layout: &Layout, rows: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if rows.len() != layout.num_states() {
            return Err(OpsError::ShapeMismatch(format!(
                "{} rows for {} states",
                rows.len(),
                layout.num_states()
            )));
        }
        let mut p = Self {
            layout: layout.clone(),
            probs: vec![0.0; layout.num_state_actions()],
            defined: vec![false; layout.num_states()],
        };
        for (g, row) in rows.into_iter().enumerate() {
            if let Some(row) = row {
                p.set_row(layout.state_of(g), &row)?;
            }
        }
        Ok(p)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_actions(&self) -> usize {
        self.layout.num_actions()
    }

    pub fn set_row(&mut self, s: StateId, row: &[f64]) -> Result<()> {
        self.layout.check(s)?;
        let na = self.layout.num_actions();
        if row.len() != na {
            return Err(OpsError::ShapeMismatch(format!(
                "row at {s} has {} entries, expected {na}",
                row.len()
            )));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(OpsError::invalid(format!("negative or non-finite probability at {s}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(OpsError::NotNormalized { layer: s.layer, sum });
        }
        let g = self.layout.state_index(s);
        self.probs[g * na..(g + 1) * na].copy_from_slice(row);
        self.defined[g] = true;
        Ok(())
    }

    pub fn clear_row(&mut self, s: StateId) {
        let g = self.layout.state_index(s);
        let na = self.layout.num_actions();
        self.probs[g * na..(g + 1) * na].fill(0.0);
        self.defined[g] = false;
    }

    #[inline]
    pub fn is_defined(&self, s: StateId) -> bool {
        self.defined[self.layout.state_index(s)]
    }

    pub fn is_fully_defined(&self) -> bool {
        self.defined.iter().all(|&d| d)
    }

    #[inline]
    pub fn prob(&self, s: StateId, a: usize) -> f64 {
        self.probs[self.layout.sa_index(s, a)]
    }

    #[inline]
    pub fn row(&self, s: StateId) -> Option<&[f64]> {
        let g = self.layout.state_index(s);
        let na = self.layout.num_actions();
        self.defined[g].then(|| &self.probs[g * na..(g + 1) * na])
    }

    #[inline]
    pub(crate) fn row_at(&self, g: usize) -> &[f64] {
        let na = self.layout.num_actions();
        &self.probs[g * na..(g + 1) * na]
    }

    #[inline]
    pub(crate) fn defined_at(&self, g: usize) -> bool {
        self.defined[g]
    }

    /// Single action with probability one at `s`, if any.
    pub fn action(&self, s: StateId) -> Option<usize> {
        self.row(s)?.iter().position(|&p| p == 1.0)
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.layout.num_states())
            .filter(|&g| self.defined[g])
            .all(|g| self.row_at(g).contains(&1.0))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: StateId, rng: &mut R) -> Result<usize> {
        let row = self.row(s).ok_or(OpsError::UndefinedPolicy(s))?;
        Ok(sample_index(row, rng))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    num_actions: usize,
    layer_sizes: Vec<usize>,
    /// Indexed `[h][s]`; `null` marks an undefined state.
    rows: Vec<Vec<Option<Vec<f64>>>>,
}

impl From<Policy> for PolicyFile {
    fn from(p: Policy) -> Self {
        let l = &p.layout;
        let rows = (0..l.horizon())
            .map(|h| l.states(h).map(|s| p.row(s).map(<[f64]>::to_vec)).collect())
            .collect();
        PolicyFile {
            num_actions: l.num_actions(),
            layer_sizes: l.layer_sizes().to_vec(),
            rows,
        }
    }
}

impl TryFrom<PolicyFile> for Policy {
    type Error = OpsError;

    fn try_from(f: PolicyFile) -> Result<Self> {
        let layout = Layout::new(f.layer_sizes.clone(), f.num_actions)?;
        if f.rows.len() != layout.horizon() || f.rows.iter().zip(&f.layer_sizes).any(|(r, &n)| r.len() != n) {
            return Err(OpsError::ShapeMismatch("policy rows do not match layer sizes".into()));
        }
        Policy::from_rows(&layout, f.rows.into_iter().flatten().collect())
    }
}

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::layout::{Layout, StateId};
use super::policy::Policy;
use crate::approx::{FittedFunction, Input, SaPoint};
use crate::error::{OpsError, Result};

/// Tabular action-value function over a layered state-action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QTableFile", try_from = "QTableFile")]
pub struct QTable {
    layout: Layout,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            layout: layout.clone(),
            values: vec![0.0; layout.num_state_actions()],
        }
    }

    /// Values in global state-action order.
    pub fn from_values(layout: &Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_state_actions() {
            return Err(OpsError::ShapeMismatch(format!(
                "{} values for {} state-action pairs",
                values.len(),
                layout.num_state_actions()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OpsError::Numeric("q table contains non-finite values".into()));
        }
        Ok(Self {
            layout: layout.clone(),
            values,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    #[inline]
    pub fn get(&self, s: StateId, a: usize) -> f64 {
        self.values[self.layout.sa_index(s, a)]
    }

    #[inline]
    pub fn set(&mut self, s: StateId, a: usize, v: f64) {
        let i = self.layout.sa_index(s, a);
        self.values[i] = v;
    }

    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        let na = self.layout.num_actions();
        let g = self.layout.state_index(s);
        &self.values[g * na..(g + 1) * na]
    }

    #[inline]
    pub(crate) fn row_at(&self, g: usize) -> &[f64] {
        let na = self.layout.num_actions();
        &self.values[g * na..(g + 1) * na]
    }

    /// `v_q(s) = max_a q(s, a)`.
    #[inline]
    pub fn max_value(&self, s: StateId) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action with ties broken toward the lowest index.
    #[inline]
    pub fn greedy_action(&self, s: StateId) -> usize {
        argmax(self.row(s))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// First index of the maximum; NaN entries never win.
#[inline]
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] || xs[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Deterministic greedy policy of `q`, defined at every state.
pub fn greedy(q: &QTable) -> Policy {
    let l = q.layout();
    let actions: Vec<usize> = (0..l.num_states()).map(|g| argmax(q.row_at(g))).collect();
    Policy::deterministic(l, &actions).expect("greedy actions are in range")
}

/// Candidate action-value function in any supported representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QFunction {
    Tabular {
        table: QTable,
    },
    /// Parametric fit evaluated on `(s, a)` points, with per-state
    /// observations for observation-based features.
    Fitted {
        num_actions: usize,
        layer_sizes: Vec<usize>,
        observations: Option<Vec<Vec<f64>>>,
        function: FittedFunction,
    },
}

impl QFunction {
    pub fn layout(&self) -> Result<Layout> {
        match self {
            QFunction::Tabular { table } => Ok(table.layout().clone()),
            QFunction::Fitted {
                num_actions,
                layer_sizes,
                ..
            } => Layout::new(layer_sizes.clone(), *num_actions),
        }
    }

    pub fn value(&self, s: StateId, a: usize) -> f64 {
        match self {
            QFunction::Tabular { table } => table.get(s, a),
            QFunction::Fitted {
                layer_sizes,
                observations,
                function,
                ..
            } => {
                let offset: usize = layer_sizes[..s.layer].iter().sum();
                let obs = observations.as_ref().map(|o| o[offset + s.index].as_slice());
                function.predict(&Input::Sa(SaPoint {
                    s,
                    a,
                    obs,
                    horizon: layer_sizes.len(),
                }))
            }
        }
    }

    /// Materializes the function on every state-action pair.
    pub fn table(&self) -> Result<Cow<'_, QTable>> {
        match self {
            QFunction::Tabular { table } => Ok(Cow::Borrowed(table)),
            QFunction::Fitted { .. } => {
                let l = self.layout()?;
                let mut values = Vec::with_capacity(l.num_state_actions());
                for s in l.all_states() {
                    for a in 0..l.num_actions() {
                        values.push(self.value(s, a));
                    }
                }
                Ok(Cow::Owned(QTable::from_values(&l, values)?))
            }
        }
    }
}

impl From<QTable> for QFunction {
    fn from(table: QTable) -> Self {
        QFunction::Tabular { table }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QTableFile {
    num_actions: usize,
    layer_sizes: Vec<usize>,
    /// Indexed `[h][s][a]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl From<QTable> for QTableFile {
    fn from(q: QTable) -> Self {
        let l = &q.layout;
        QTableFile {
            num_actions: l.num_actions(),
            layer_sizes: l.layer_sizes().to_vec(),
            values: (0..l.horizon())
                .map(|h| l.states(h).map(|s| q.row(s).to_vec()).collect())
                .collect(),
        }
    }
}

impl TryFrom<QTableFile> for QTable {
    type Error = OpsError;

    fn try_from(f: QTableFile) -> Result<Self> {
        let layout = Layout::new(f.layer_sizes.clone(), f.num_actions)?;
        if f.values.len() != layout.horizon()
            || f.values.iter().zip(&f.layer_sizes).any(|(l, &n)| l.len() != n)
            || f.values.iter().flatten().any(|r| r.len() != f.num_actions)
        {
            return Err(OpsError::ShapeMismatch("q table does not match layer sizes".into()));
        }
        QTable::from_values(&layout, f.values.into_iter().flatten().flatten().collect())
    }
}

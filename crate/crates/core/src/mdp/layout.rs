use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};

/// A state of a layered MDP. States reachable at different time steps are
/// distinct by construction: the layer is part of the identity.
///
/// Serialized as a `[layer, index]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct StateId {
    pub layer: usize,
    pub index: usize,
}

impl StateId {
    pub const fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }

    /// Marker used as the successor of the last step of an episode.
    pub const fn terminal(horizon: usize) -> Self {
        Self {
            layer: horizon,
            index: 0,
        }
    }
}

impl From<(usize, usize)> for StateId {
    fn from((layer, index): (usize, usize)) -> Self {
        Self { layer, index }
    }
}

impl From<StateId> for (usize, usize) {
    fn from(s: StateId) -> Self {
        (s.layer, s.index)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.index)
    }
}

/// Shape of a layered state-action space: number of states in each of the
/// `H` layers and a shared action count. Provides the dense indexing used by
/// every table in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layer_sizes: Vec<usize>,
    num_actions: usize,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(layer_sizes: Vec<usize>, num_actions: usize) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(OpsError::InvalidModel("horizon must be at least 1".into()));
        }
        if let Some(h) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(OpsError::InvalidModel(format!("layer {h} has no states")));
        }
        if num_actions == 0 {
            return Err(OpsError::InvalidModel("need at least one action".into()));
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0;
        for &n in &layer_sizes {
            offsets.push(acc);
            acc += n;
        }
        offsets.push(acc);
        Ok(Self {
            layer_sizes,
            num_actions,
            offsets,
        })
    }

    pub fn horizon(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_size(&self, h: usize) -> usize {
        self.layer_sizes[h]
    }

    pub fn num_states(&self) -> usize {
        self.offsets[self.layer_sizes.len()]
    }

    pub fn num_state_actions(&self) -> usize {
        self.num_states() * self.num_actions
    }

    pub fn contains(&self, s: StateId) -> bool {
        s.layer < self.horizon() && s.index < self.layer_sizes[s.layer]
    }

    pub fn check(&self, s: StateId) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(OpsError::ShapeMismatch(format!("state {s} outside layout")))
        }
    }

    #[inline]
    pub fn state_index(&self, s: StateId) -> usize {
        debug_assert!(self.contains(s), "state {s} outside layout");
        self.offsets[s.layer] + s.index
    }

    #[inline]
    pub fn sa_index(&self, s: StateId, a: usize) -> usize {
        debug_assert!(a < self.num_actions);
        self.state_index(s) * self.num_actions + a
    }

    /// Global state indices of layer `h`.
    pub fn state_range(&self, h: usize) -> Range<usize> {
        self.offsets[h]..self.offsets[h + 1]
    }

    /// Global state-action indices of layer `h`.
    pub fn sa_range(&self, h: usize) -> Range<usize> {
        self.offsets[h] * self.num_actions..self.offsets[h + 1] * self.num_actions
    }

    pub fn state_of(&self, global: usize) -> StateId {
        let layer = self.offsets.partition_point(|&o| o <= global) - 1;
        StateId::new(layer, global - self.offsets[layer])
    }

    pub fn states(&self, h: usize) -> impl Iterator<Item = StateId> {
        (0..self.layer_sizes[h]).map(move |i| StateId::new(h, i))
    }

    pub fn all_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.horizon()).flat_map(move |h| self.states(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let l = Layout::new(vec![1, 3, 2], 2).unwrap();
        assert_eq!(l.num_states(), 6);
        assert_eq!(l.num_state_actions(), 12);
        for (g, s) in l.all_states().enumerate() {
            assert_eq!(l.state_index(s), g);
            assert_eq!(l.state_of(g), s);
        }
        assert_eq!(l.sa_index(StateId::new(2, 1), 1), 11);
        assert_eq!(l.sa_range(1), 2..8);
    }

    #[test]
    fn rejects_empty_layers() {
        assert!(Layout::new(vec![], 2).is_err());
        assert!(Layout::new(vec![1, 0], 2).is_err());
        assert!(Layout::new(vec![1], 0).is_err());
    }

    #[test]
    fn state_id_serializes_as_pair() {
        let s = StateId::new(2, 5);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[2,5]");
        let back: StateId = serde_json::from_str("[2,5]").unwrap();
        assert_eq!(back, s);
    }
}

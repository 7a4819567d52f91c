use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{Layout, StateId};
use crate::error::{OpsError, Result};

/// Tolerance for a probability vector to count as normalized.
pub const PROB_TOL: f64 = 1e-12;

/// One atom of the joint reward/next-state kernel of a state-action pair.
/// `next` indexes the following layer and is `None` exactly in the last layer.
///
/// Serialized as `[next, reward, prob]` with `null` for a terminal successor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(Option<usize>, f64, f64)", into = "(Option<usize>, f64, f64)")]
pub struct Outcome {
    pub next: Option<usize>,
    pub reward: f64,
    pub prob: f64,
}

impl From<(Option<usize>, f64, f64)> for Outcome {
    fn from((next, reward, prob): (Option<usize>, f64, f64)) -> Self {
        Self { next, reward, prob }
    }
}

impl From<Outcome> for (Option<usize>, f64, f64) {
    fn from(o: Outcome) -> Self {
        (o.next, o.reward, o.prob)
    }
}

/// Explicit finite-horizon MDP with a single initial state in layer 0.
///
/// Each state-action pair carries a finite joint distribution over
/// `(reward, next state)`. Rewards lie in `[0, r_max]`, so every return lies
/// in `[0, V_max]` with `V_max = H * r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MdpFile", try_from = "MdpFile")]
pub struct Mdp {
    layout: Layout,
    r_max: f64,
    initial: usize,
    outcomes: Vec<Vec<Outcome>>,
    mean_reward: Vec<f64>,
    observations: Option<Vec<Vec<f64>>>,
    metadata: BTreeMap<String, String>,
}

impl Mdp {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon()
    }

    pub fn num_actions(&self) -> usize {
        self.layout.num_actions()
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn v_max(&self) -> f64 {
        self.r_max * self.horizon() as f64
    }

    pub fn initial_state(&self) -> StateId {
        StateId::new(0, self.initial)
    }

    #[inline]
    pub fn outcomes(&self, s: StateId, a: usize) -> &[Outcome] {
        &self.outcomes[self.layout.sa_index(s, a)]
    }

    #[inline]
    pub fn outcomes_at(&self, sa: usize) -> &[Outcome] {
        &self.outcomes[sa]
    }

    #[inline]
    pub fn mean_reward(&self, s: StateId, a: usize) -> f64 {
        self.mean_reward[self.layout.sa_index(s, a)]
    }

    #[inline]
    pub fn mean_reward_at(&self, sa: usize) -> f64 {
        self.mean_reward[sa]
    }

    /// Marginal next-state distribution as `(index in layer h+1, prob)`;
    /// empty in the last layer.
    pub fn transition(&self, s: StateId, a: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for o in self.outcomes(s, a) {
            if let Some(n) = o.next {
                match out.iter_mut().find(|(m, _)| *m == n) {
                    Some(e) => e.1 += o.prob,
                    None => out.push((n, o.prob)),
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Marginal reward distribution as `(value, prob)`.
    pub fn reward_distribution(&self, s: StateId, a: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for o in self.outcomes(s, a) {
            match out.iter_mut().find(|(v, _)| *v == o.reward) {
                Some(e) => e.1 += o.prob,
                None => out.push((o.reward, o.prob)),
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        out
    }

    pub fn observation(&self, s: StateId) -> Option<&[f64]> {
        self.observations
            .as_ref()
            .map(|o| o[self.layout.state_index(s)].as_slice())
    }

    pub fn has_observations(&self) -> bool {
        self.observations.is_some()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// True when every state-action pair has a single outcome.
    pub fn is_deterministic(&self) -> bool {
        self.outcomes.iter().all(|o| o.len() == 1)
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, s: StateId, a: usize, rng: &mut R) -> Outcome {
        let outs = self.outcomes(s, a);
        if outs.len() == 1 {
            return outs[0];
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for o in outs {
            acc += o.prob;
            if u < acc {
                return *o;
            }
        }
        *outs.last().expect("validated non-empty")
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

/// Incremental constructor for [`Mdp`]; `build` validates every invariant.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    layout: Layout,
    r_max: f64,
    initial: usize,
    outcomes: Vec<Option<Vec<Outcome>>>,
    observations: Option<Vec<Vec<f64>>>,
    metadata: BTreeMap<String, String>,
}

impl MdpBuilder {
    pub fn new(layer_sizes: Vec<usize>, num_actions: usize, r_max: f64) -> Result<Self> {
        let layout = Layout::new(layer_sizes, num_actions)?;
        if !(r_max.is_finite() && r_max >= 0.0) {
            return Err(OpsError::InvalidModel(format!(
                "r_max must be finite and >= 0, got {r_max}"
            )));
        }
        Ok(Self {
            outcomes: vec![None; layout.num_state_actions()],
            layout,
            r_max,
            initial: 0,
            observations: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn initial(&mut self, index: usize) -> &mut Self {
        self.initial = index;
        self
    }

    pub fn set_outcomes(&mut self, s: StateId, a: usize, outcomes: Vec<Outcome>) -> &mut Self {
        let i = self.layout.sa_index(s, a);
        self.outcomes[i] = Some(outcomes);
        self
    }

    /// Reward and next state drawn independently.
    pub fn set_product(&mut self, s: StateId, a: usize, next: &[(usize, f64)], reward: &[(f64, f64)]) -> &mut Self {
        let mut outs = Vec::new();
        if s.layer + 1 == self.layout.horizon() {
            for &(r, pr) in reward {
                outs.push(Outcome {
                    next: None,
                    reward: r,
                    prob: pr,
                });
            }
        } else {
            for &(n, pn) in next {
                for &(r, pr) in reward {
                    outs.push(Outcome {
                        next: Some(n),
                        reward: r,
                        prob: pn * pr,
                    });
                }
            }
        }
        self.set_outcomes(s, a, outs)
    }

    pub fn set_deterministic(&mut self, s: StateId, a: usize, next: Option<usize>, reward: f64) -> &mut Self {
        self.set_outcomes(
            s,
            a,
            vec![Outcome {
                next,
                reward,
                prob: 1.0,
            }],
        )
    }

    /// One observation vector per state, in global state order.
    pub fn observations(&mut self, obs: Vec<Vec<f64>>) -> &mut Self {
        self.observations = Some(obs);
        self
    }

    pub fn metadata(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn build(self) -> Result<Mdp> {
        let layout = self.layout;
        let h_last = layout.horizon() - 1;
        if self.initial >= layout.layer_size(0) {
            return Err(OpsError::InvalidModel(format!(
                "initial state {} outside layer 0 (size {})",
                self.initial,
                layout.layer_size(0)
            )));
        }
        let mut outcomes = Vec::with_capacity(layout.num_state_actions());
        let mut mean_reward = Vec::with_capacity(layout.num_state_actions());
        for (sa, entry) in self.outcomes.into_iter().enumerate() {
            let s = layout.state_of(sa / layout.num_actions());
            let a = sa % layout.num_actions();
            let raw = entry.ok_or_else(|| OpsError::InvalidModel(format!("no outcomes for state {s}, action {a}")))?;
            let mut merged: Vec<Outcome> = Vec::with_capacity(raw.len());
            let mut total = 0.0;
            for o in raw {
                if !(o.prob.is_finite() && o.prob >= 0.0) {
                    return Err(OpsError::InvalidModel(format!(
                        "bad probability {} at {s}, action {a}",
                        o.prob
                    )));
                }
                if !(o.reward >= 0.0 && o.reward <= self.r_max) {
                    return Err(OpsError::InvalidModel(format!(
                        "reward {} at {s}, action {a} outside [0, {}]",
                        o.reward, self.r_max
                    )));
                }
                match (s.layer == h_last, o.next) {
                    (true, Some(_)) => {
                        return Err(OpsError::InvalidModel(format!("last-layer state {s} has a successor")))
                    }
                    (false, None) => {
                        return Err(OpsError::InvalidModel(format!(
                            "state {s}, action {a} lacks a successor"
                        )))
                    }
                    (false, Some(n)) if n >= layout.layer_size(s.layer + 1) => {
                        return Err(OpsError::InvalidModel(format!(
                            "successor {n} of {s} outside layer {}",
                            s.layer + 1
                        )))
                    }
                    _ => {}
                }
                total += o.prob;
                if o.prob == 0.0 {
                    continue;
                }
                match merged.iter_mut().find(|m| m.next == o.next && m.reward == o.reward) {
                    Some(m) => m.prob += o.prob,
                    None => merged.push(o),
                }
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(OpsError::InvalidModel(format!(
                    "outcomes of {s}, action {a} sum to {total}"
                )));
            }
            mean_reward.push(merged.iter().map(|o| o.prob * o.reward).sum());
            outcomes.push(merged);
        }
        if let Some(obs) = &self.observations {
            if obs.len() != layout.num_states() {
                return Err(OpsError::InvalidModel(format!(
                    "{} observations for {} states",
                    obs.len(),
                    layout.num_states()
                )));
            }
        }
        Ok(Mdp {
            layout,
            r_max: self.r_max,
            initial: self.initial,
            outcomes,
            mean_reward,
            observations: self.observations,
            metadata: self.metadata,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    horizon: usize,
    num_actions: usize,
    layer_sizes: Vec<usize>,
    r_max: f64,
    initial_state: StateId,
    /// Indexed `[h][s][a]`, each entry a list of `[next, reward, prob]`.
    outcomes: Vec<Vec<Vec<Vec<Outcome>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observations: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

impl From<Mdp> for MdpFile {
    fn from(m: Mdp) -> Self {
        let l = &m.layout;
        let outcomes = (0..l.horizon())
            .map(|h| {
                l.states(h)
                    .map(|s| (0..l.num_actions()).map(|a| m.outcomes(s, a).to_vec()).collect())
                    .collect()
            })
            .collect();
        let observations = m.observations.as_ref().map(|obs| {
            (0..l.horizon())
                .map(|h| l.state_range(h).map(|g| obs[g].clone()).collect())
                .collect()
        });
        MdpFile {
            horizon: l.horizon(),
            num_actions: l.num_actions(),
            layer_sizes: l.layer_sizes().to_vec(),
            r_max: m.r_max,
            initial_state: m.initial_state(),
            outcomes,
            observations,
            metadata: m.metadata.clone(),
        }
    }
}

impl TryFrom<MdpFile> for Mdp {
    type Error = OpsError;

    fn try_from(f: MdpFile) -> Result<Self> {
        if f.layer_sizes.len() != f.horizon {
            return Err(OpsError::InvalidModel(format!(
                "horizon {} but {} layer sizes",
                f.horizon,
                f.layer_sizes.len()
            )));
        }
        if f.initial_state.layer != 0 {
            return Err(OpsError::InvalidModel("initial state must be in layer 0".into()));
        }
        let mut b = MdpBuilder::new(f.layer_sizes.clone(), f.num_actions, f.r_max)?;
        b.initial(f.initial_state.index);
        if f.outcomes.len() != f.horizon {
            return Err(OpsError::InvalidModel("outcome tensor has wrong horizon".into()));
        }
        for (h, layer) in f.outcomes.into_iter().enumerate() {
            if layer.len() != f.layer_sizes[h] {
                return Err(OpsError::InvalidModel(format!(
                    "outcome tensor layer {h} has wrong size"
                )));
            }
            for (i, per_action) in layer.into_iter().enumerate() {
                if per_action.len() != f.num_actions {
                    return Err(OpsError::InvalidModel(format!(
                        "state ({h}, {i}) has wrong action count"
                    )));
                }
                for (a, outs) in per_action.into_iter().enumerate() {
                    b.set_outcomes(StateId::new(h, i), a, outs);
                }
            }
        }
        if let Some(obs) = f.observations {
            b.observations(obs.into_iter().flatten().collect());
        }
        b.metadata = f.metadata;
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> Mdp {
        let mut b = MdpBuilder::new(vec![1, 2], 2, 1.0).unwrap();
        let s0 = StateId::new(0, 0);
        b.set_product(s0, 0, &[(0, 0.3), (1, 0.7)], &[(0.0, 0.5), (1.0, 0.5)]);
        b.set_deterministic(s0, 1, Some(1), 0.25);
        for i in 0..2 {
            for a in 0..2 {
                b.set_product(StateId::new(1, i), a, &[], &[(1.0, 0.2), (0.0, 0.8)]);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn marginals_and_means() {
        let m = two_layer();
        let s0 = m.initial_state();
        assert_eq!(m.transition(s0, 0), vec![(0, 0.3), (1, 0.7)]);
        let rd = m.reward_distribution(s0, 0);
        assert!((rd[0].1 - 0.5).abs() < 1e-15 && (rd[1].1 - 0.5).abs() < 1e-15);
        assert!((m.mean_reward(s0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(m.mean_reward(s0, 1), 0.25);
        assert!((m.mean_reward(StateId::new(1, 1), 0) - 0.2).abs() < 1e-15);
        assert_eq!(m.v_max(), 2.0);
        assert!(!m.is_deterministic());
    }

    #[test]
    fn rejects_unnormalized_and_out_of_range() {
        let mut b = MdpBuilder::new(vec![1], 1, 1.0).unwrap();
        b.set_outcomes(
            StateId::new(0, 0),
            0,
            vec![Outcome {
                next: None,
                reward: 0.5,
                prob: 0.9,
            }],
        );
        assert!(b.build().is_err());

        let mut b = MdpBuilder::new(vec![1], 1, 1.0).unwrap();
        b.set_deterministic(StateId::new(0, 0), 0, None, 1.5);
        assert!(b.build().is_err());

        let mut b = MdpBuilder::new(vec![1, 1], 1, 1.0).unwrap();
        b.set_deterministic(StateId::new(0, 0), 0, None, 0.5);
        b.set_deterministic(StateId::new(1, 0), 0, None, 0.5);
        assert!(b.build().is_err(), "non-terminal layer without successor");
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let m = two_layer();
        let text = m.to_json().unwrap();
        let back = Mdp::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

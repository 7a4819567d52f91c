use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::{Mdp, MdpBuilder, Outcome, Policy, StateId};

/// Augmented state of a sticky-action MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StickyState {
    pub base: usize,
    pub last: Option<usize>,
    pub count: usize,
}

/// Explicit MDP over `(s, last executed action, consecutive forced repeats)`.
/// Only augmented states reachable from the initial state are materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct StickyMdp {
    pub mdp: Mdp,
    pub repeat_prob: f64,
    pub max_repeats: usize,
    /// `states[h][i]` describes augmented state `(h, i)`.
    pub states: Vec<Vec<StickyState>>,
}

/// With probability `repeat_prob` the previously executed action runs instead
/// of the chosen one, unless it was already forced `max_repeats` times in a
/// row. A chosen action that runs resets the repeat count.
pub fn sticky_wrap(base: &Mdp, repeat_prob: f64, max_repeats: usize) -> Result<StickyMdp> {
    if !(0.0..1.0).contains(&repeat_prob) {
        return Err(OpsError::invalid(format!(
            "repeat probability {repeat_prob} outside [0, 1)"
        )));
    }
    if max_repeats == 0 {
        return Err(OpsError::invalid("max_repeats must be at least 1"));
    }
    let bl = base.layout();
    let h_total = bl.horizon();
    let na = bl.num_actions();
    let track = repeat_prob > 0.0;
    let mut states: Vec<Vec<StickyState>> = vec![vec![StickyState {
        base: base.initial_state().index,
        last: None,
        count: 0,
    }]];
    let mut kernels: Vec<Vec<Vec<Vec<Outcome>>>> = Vec::with_capacity(h_total);
    for h in 0..h_total {
        let last_layer = h + 1 == h_total;
        let mut next_index: HashMap<StickyState, usize> = HashMap::new();
        let mut next_states: Vec<StickyState> = Vec::new();
        let mut layer_kernel = Vec::with_capacity(states[h].len());
        for st in &states[h] {
            let s = StateId::new(h, st.base);
            let mut per_action = Vec::with_capacity(na);
            for chosen in 0..na {
                let mut executed: Vec<(usize, f64, usize)> = Vec::with_capacity(2);
                match st.last {
                    Some(prev) if track && st.count < max_repeats => {
                        executed.push((prev, repeat_prob, st.count + 1));
                        executed.push((chosen, 1.0 - repeat_prob, 0));
                    }
                    _ => executed.push((chosen, 1.0, 0)),
                }
                let mut outs: Vec<Outcome> = Vec::new();
                for (e, pe, count) in executed {
                    for o in base.outcomes(s, e) {
                        let next = match o.next {
                            None => None,
                            Some(n) => {
                                let key = StickyState {
                                    base: n,
                                    last: track.then_some(e),
                                    count,
                                };
                                let idx = *next_index.entry(key).or_insert_with(|| {
                                    next_states.push(key);
                                    next_states.len() - 1
                                });
                                Some(idx)
                            }
                        };
                        let prob = pe * o.prob;
                        match outs.iter_mut().find(|x| x.next == next && x.reward == o.reward) {
                            Some(x) => x.prob += prob,
                            None => outs.push(Outcome {
                                next,
                                reward: o.reward,
                                prob,
                            }),
                        }
                    }
                }
                per_action.push(outs);
            }
            layer_kernel.push(per_action);
        }
        kernels.push(layer_kernel);
        if !last_layer {
            states.push(next_states);
        }
    }
    let sizes: Vec<usize> = states.iter().map(Vec::len).collect();
    let mut b = MdpBuilder::new(sizes, na, base.r_max())?;
    for (h, layer) in kernels.into_iter().enumerate() {
        for (i, per_action) in layer.into_iter().enumerate() {
            for (a, outs) in per_action.into_iter().enumerate() {
                b.set_outcomes(StateId::new(h, i), a, outs);
            }
        }
    }
    if base.has_observations() {
        let obs = states
            .iter()
            .enumerate()
            .flat_map(|(h, layer)| {
                layer.iter().map(move |st| {
                    base.observation(StateId::new(h, st.base))
                        .expect("observations")
                        .to_vec()
                })
            })
            .collect();
        b.observations(obs);
    }
    for (k, v) in base.metadata() {
        b.metadata(k.clone(), v.clone());
    }
    b.metadata(
        "sticky",
        format!("repeat_prob={repeat_prob}, max_repeats={max_repeats}"),
    );
    Ok(StickyMdp {
        mdp: b.build()?,
        repeat_prob,
        max_repeats,
        states,
    })
}

impl StickyMdp {
    pub fn base_state(&self, s: StateId) -> StateId {
        StateId::new(s.layer, self.states[s.layer][s.index].base)
    }

    /// Policy that chooses by base state only.
    pub fn lift_policy(&self, pi: &Policy) -> Result<Policy> {
        let l = self.mdp.layout();
        let rows = l
            .all_states()
            .map(|s| pi.row(self.base_state(s)).map(<[f64]>::to_vec))
            .collect();
        Policy::from_rows(l, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gridworld::{make_gridworld, GridSpec};
    use crate::mdp::exact_policy_value;

    #[test]
    fn zero_repeat_is_value_preserving() {
        let g = make_gridworld(&GridSpec::small(3, 3, 4, 0.1), 0).unwrap();
        let w = sticky_wrap(&g, 0.0, 4).unwrap();
        for a in 0..4 {
            let acts = vec![a; g.layout().num_states()];
            let pi = Policy::deterministic(g.layout(), &acts).unwrap();
            let v0 = exact_policy_value(&g, &pi).unwrap();
            let v1 = exact_policy_value(&w.mdp, &w.lift_policy(&pi).unwrap()).unwrap();
            assert!((v0 - v1).abs() <= 1e-12);
        }
    }

    #[test]
    fn repeat_counts_capped() {
        let g = make_gridworld(&GridSpec::small(3, 3, 6, 0.0), 0).unwrap();
        let w = sticky_wrap(&g, 0.25, 1).unwrap();
        assert!(w.states.iter().flatten().all(|s| s.count <= 1));
    }
}

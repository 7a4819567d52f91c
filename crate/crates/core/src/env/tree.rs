use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::{Layout, Mdp, MdpBuilder, Policy, StateId};

/// Index of the on-path state `s_h` in layers `h >= 1`.
pub const ON_PATH: usize = 0;
/// Index of the absorbing zero-reward state `o_h` in layers `h >= 1`.
pub const ABSORBING: usize = 1;

/// Pair of lower-bound MDPs that differ only in the reward at the end of the
/// on-path chain: Bernoulli(1/2) in the first, Bernoulli(1/2 - 2 eps) in the
/// second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHard {
    pub mdp1: Mdp,
    pub mdp2: Mdp,
    /// `a_h`, the action that stays on the path at layer `h`.
    pub path: Vec<usize>,
    pub eps: f64,
}

pub fn tree_layout(num_actions: usize, horizon: usize) -> Result<Layout> {
    let mut sizes = vec![2; horizon];
    if let Some(first) = sizes.first_mut() {
        *first = 1;
    }
    Layout::new(sizes, num_actions)
}

/// Builds the pair. `behavior` fixes the path via `a_h = argmin_a π_b(a|s_h)`
/// with ties toward the lowest action; `None` means uniform behavior.
pub fn make_tree_hard(num_actions: usize, horizon: usize, eps: f64, behavior: Option<&Policy>) -> Result<TreeHard> {
    if num_actions < 2 {
        return Err(OpsError::invalid("tree construction needs at least two actions"));
    }
    if horizon == 0 {
        return Err(OpsError::invalid("horizon must be at least 1"));
    }
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(OpsError::invalid(format!("eps must lie in (0, 1/4], got {eps}")));
    }
    let layout = tree_layout(num_actions, horizon)?;
    let path: Vec<usize> = (0..horizon)
        .map(|h| {
            let s = StateId::new(h, ON_PATH);
            match behavior {
                None => Ok(0),
                Some(b) => {
                    if b.layout() != &layout {
                        return Err(OpsError::ShapeMismatch("behavior layout differs from the tree".into()));
                    }
                    let row = b.row(s).ok_or(OpsError::UndefinedPolicy(s))?;
                    let mut best = 0;
                    for (a, &p) in row.iter().enumerate() {
                        if p < row[best] {
                            best = a;
                        }
                    }
                    Ok(best)
                }
            }
        })
        .collect::<Result<_>>()?;
    let build = |mean: f64| -> Result<Mdp> {
        let mut b = MdpBuilder::new(layout.layer_sizes().to_vec(), num_actions, 1.0)?;
        for (h, &on_action) in path.iter().enumerate().take(horizon) {
            let last = h + 1 == horizon;
            for s in layout.states(h) {
                for a in 0..num_actions {
                    let on = s.index == ON_PATH && a == on_action;
                    if last {
                        if on {
                            b.set_product(s, a, &[], &[(1.0, mean), (0.0, 1.0 - mean)]);
                        } else {
                            b.set_deterministic(s, a, None, 0.0);
                        }
                    } else {
                        let next = if on { ON_PATH } else { ABSORBING };
                        b.set_deterministic(s, a, Some(next), 0.0);
                    }
                }
            }
        }
        b.metadata("kind", "tree_hard");
        b.build()
    };
    Ok(TreeHard {
        mdp1: build(0.5)?,
        mdp2: build(0.5 - 2.0 * eps)?,
        path,
        eps,
    })
}

impl TreeHard {
    pub fn layout(&self) -> &Layout {
        self.mdp1.layout()
    }

    /// Follows `a_h` on the path and action 0 in absorbing states.
    pub fn on_path_policy(&self) -> Policy {
        let l = self.layout();
        let actions: Vec<usize> = l
            .all_states()
            .map(|s| if s.index == ON_PATH { self.path[s.layer] } else { 0 })
            .collect();
        Policy::deterministic(l, &actions).expect("valid tree actions")
    }

    /// Follows the path except at `layer`, where it takes another action.
    pub fn deviating_policy(&self, layer: usize) -> Result<Policy> {
        let l = self.layout();
        if layer >= l.horizon() {
            return Err(OpsError::invalid(format!("layer {layer} beyond horizon")));
        }
        let actions: Vec<usize> = l
            .all_states()
            .map(|s| match (s.index == ON_PATH, s.layer == layer) {
                (true, true) => (self.path[layer] + 1) % l.num_actions(),
                (true, false) => self.path[s.layer],
                _ => 0,
            })
            .collect();
        Policy::deterministic(l, &actions)
    }
}

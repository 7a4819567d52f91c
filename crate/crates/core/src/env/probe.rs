use crate::error::{OpsError, Result};
use crate::mdp::{Layout, Mdp, MdpBuilder, Outcome, Policy, StateId};

/// Action at the new root that collects the fixed reward `r`.
pub const TAKE_REWARD: usize = 0;
/// Action at the new root that enters the base MDP.
pub const ENTER_BASE: usize = 1;

/// `M_r`: a new root prepended to a base MDP. One action pays `r` and moves
/// to an absorbing zero-reward chain, the other enters the base MDP at its
/// initial state with reward 0. Horizon grows by one; each layer after the
/// root holds the base states plus one absorbing state at the last index.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardProbe {
    pub mdp: Mdp,
    pub r: f64,
    base_layout: Layout,
}

pub fn make_reward_probe(base: &Mdp, r: f64) -> Result<RewardProbe> {
    if !(r >= 0.0 && r <= base.v_max()) {
        return Err(OpsError::invalid(format!(
            "probe reward {r} outside [0, {}]",
            base.v_max()
        )));
    }
    let na = base.num_actions();
    if na < 2 {
        return Err(OpsError::invalid("reward probe needs at least two actions"));
    }
    let bl = base.layout();
    let h_base = bl.horizon();
    let mut sizes = vec![1];
    sizes.extend(bl.layer_sizes().iter().map(|n| n + 1));
    let mut b = MdpBuilder::new(sizes, na, base.r_max().max(r))?;
    let root = StateId::new(0, 0);
    for a in 0..na {
        match a {
            TAKE_REWARD => b.set_deterministic(root, a, Some(bl.layer_size(0)), r),
            ENTER_BASE => b.set_deterministic(root, a, Some(base.initial_state().index), 0.0),
            _ => b.set_deterministic(root, a, Some(bl.layer_size(0)), 0.0),
        };
    }
    for h in 0..h_base {
        let last = h + 1 == h_base;
        for s in bl.states(h) {
            for a in 0..na {
                b.set_outcomes(StateId::new(h + 1, s.index), a, base.outcomes(s, a).to_vec());
            }
        }
        let absorb = StateId::new(h + 1, bl.layer_size(h));
        let next = (!last).then(|| bl.layer_size(h + 1));
        for a in 0..na {
            b.set_outcomes(
                absorb,
                a,
                vec![Outcome {
                    next,
                    reward: 0.0,
                    prob: 1.0,
                }],
            );
        }
    }
    if base.has_observations() {
        let dim = base.observation(base.initial_state()).map_or(0, <[f64]>::len);
        let mut obs = vec![vec![0.0; dim]];
        for h in 0..h_base {
            for s in bl.states(h) {
                obs.push(base.observation(s).expect("base has observations").to_vec());
            }
            obs.push(vec![0.0; dim]);
        }
        b.observations(obs);
    }
    b.metadata("kind", "reward_probe");
    b.metadata("probe_reward", r.to_string());
    Ok(RewardProbe {
        mdp: b.build()?,
        r,
        base_layout: bl.clone(),
    })
}

impl RewardProbe {
    /// Position of a base state inside the probe MDP.
    pub fn lift_state(&self, s: StateId) -> StateId {
        StateId::new(s.layer + 1, s.index)
    }

    /// `π_1` takes the fixed reward; `π_2` enters the base MDP and follows
    /// `target` there. Rows the choice cannot affect are uniform.
    pub fn policies(&self, target: &Policy) -> Result<[Policy; 2]> {
        if target.layout() != &self.base_layout {
            return Err(OpsError::ShapeMismatch(
                "target layout differs from the base MDP".into(),
            ));
        }
        let l = self.mdp.layout();
        let na = l.num_actions();
        let uniform = vec![1.0 / na as f64; na];
        let mut p1 = Policy::uniform(l);
        let mut p2 = Policy::uniform(l);
        let mut onehot = vec![0.0; na];
        onehot[TAKE_REWARD] = 1.0;
        p1.set_row(StateId::new(0, 0), &onehot)?;
        onehot[TAKE_REWARD] = 0.0;
        onehot[ENTER_BASE] = 1.0;
        p2.set_row(StateId::new(0, 0), &onehot)?;
        for s in self.base_layout.all_states() {
            let row = target.row(s).unwrap_or(&uniform);
            p2.set_row(self.lift_state(s), row)?;
        }
        Ok([p1, p2])
    }
}

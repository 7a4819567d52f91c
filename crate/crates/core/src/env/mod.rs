//! Environment constructors: gridworlds, the lower-bound tree pair, the
//! reward-probe wrapper, sticky actions, random tabular models and
//! simulation-only control tasks.

pub mod control;
pub mod gridworld;
pub mod probe;
pub mod random;
pub mod sticky;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use control::{make_continuous_control, monte_carlo_sim, ControlKind, SimOnlyEnv, SimStep, StickySim};
pub use gridworld::{make_gridworld, GridSpec, RewardLayout};
pub use probe::{make_reward_probe, RewardProbe};
pub use random::{perturb_q, random_deterministic_policy, random_mdp, random_policy, random_q, RandomMdpSpec};
pub use sticky::{sticky_wrap, StickyMdp, StickyState};
pub use tree::{make_tree_hard, TreeHard};

use crate::error::{OpsError, Result};
use crate::mdp::{Mdp, Policy};

fn default_repeat_prob() -> f64 {
    0.25
}

fn default_max_repeats() -> usize {
    4
}

/// Declarative environment description, as read from a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Gridworld {
        width: usize,
        height: usize,
        horizon: usize,
        slip: f64,
        #[serde(default)]
        start: (usize, usize),
        rewards: RewardLayout,
        #[serde(default)]
        bernoulli: bool,
    },
    TreeHard {
        num_actions: usize,
        horizon: usize,
        eps: f64,
    },
    RewardProbe {
        base: Box<EnvSpec>,
        r: f64,
    },
    StickyWrapped {
        base: Box<EnvSpec>,
        #[serde(default = "default_repeat_prob")]
        repeat_prob: f64,
        #[serde(default = "default_max_repeats")]
        max_repeats: usize,
    },
    ContinuousControl {
        control: ControlKind,
        horizon: usize,
    },
    Random {
        layer_sizes: Vec<usize>,
        num_actions: usize,
        branching: usize,
        #[serde(default)]
        stochastic_rewards: bool,
    },
}

/// A constructed environment.
pub enum BuiltEnv {
    Tabular(Mdp),
    TreePair(TreeHard),
    Sticky(StickyMdp),
    Sim(Box<dyn SimOnlyEnv>),
}

impl std::fmt::Debug for BuiltEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuiltEnv::Tabular(m) => f.debug_tuple("Tabular").field(&m.layout()).finish(),
            BuiltEnv::TreePair(t) => f.debug_tuple("TreePair").field(&t.path).finish(),
            BuiltEnv::Sticky(s) => f.debug_tuple("Sticky").field(&s.mdp.layout()).finish(),
            BuiltEnv::Sim(e) => f.debug_tuple("Sim").field(&e.horizon()).finish(),
        }
    }
}

impl BuiltEnv {
    /// The explicit MDP, if any; for the tree pair this is the first MDP.
    pub fn mdp(&self) -> Option<&Mdp> {
        match self {
            BuiltEnv::Tabular(m) => Some(m),
            BuiltEnv::TreePair(t) => Some(&t.mdp1),
            BuiltEnv::Sticky(s) => Some(&s.mdp),
            BuiltEnv::Sim(_) => None,
        }
    }

    pub fn into_mdp(self) -> Result<Mdp> {
        match self {
            BuiltEnv::Tabular(m) => Ok(m),
            BuiltEnv::TreePair(t) => Ok(t.mdp1),
            BuiltEnv::Sticky(s) => Ok(s.mdp),
            BuiltEnv::Sim(_) => Err(OpsError::invalid("simulation-only environment has no explicit model")),
        }
    }
}

impl EnvSpec {
    /// Small slippery gridworld used by the sweep defaults.
    pub fn default_gridworld() -> Self {
        EnvSpec::Gridworld {
            width: 4,
            height: 4,
            horizon: 6,
            slip: 0.2,
            start: (0, 0),
            rewards: RewardLayout::Cells {
                cells: vec![(3, 3, 1.0), (3, 0, 0.6), (0, 3, 0.3)],
            },
            bernoulli: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Gridworld { .. } => "gridworld",
            EnvSpec::TreeHard { .. } => "tree_hard",
            EnvSpec::RewardProbe { .. } => "reward_probe",
            EnvSpec::StickyWrapped { .. } => "sticky_wrapped",
            EnvSpec::ContinuousControl { .. } => "continuous_control",
            EnvSpec::Random { .. } => "random",
        }
    }

    pub fn build(&self, seed: u64) -> Result<BuiltEnv> {
        Ok(match self {
            EnvSpec::Gridworld {
                width,
                height,
                horizon,
                slip,
                start,
                rewards,
                bernoulli,
            } => BuiltEnv::Tabular(make_gridworld(
                &GridSpec {
                    width: *width,
                    height: *height,
                    horizon: *horizon,
                    slip: *slip,
                    start: *start,
                    rewards: rewards.clone(),
                    bernoulli: *bernoulli,
                },
                seed,
            )?),
            EnvSpec::TreeHard {
                num_actions,
                horizon,
                eps,
            } => BuiltEnv::TreePair(make_tree_hard(*num_actions, *horizon, *eps, None)?),
            EnvSpec::RewardProbe { base, r } => {
                let m = base.build(seed)?.into_mdp()?;
                BuiltEnv::Tabular(make_reward_probe(&m, *r)?.mdp)
            }
            EnvSpec::StickyWrapped {
                base,
                repeat_prob,
                max_repeats,
            } => {
                let m = base.build(seed)?.into_mdp()?;
                BuiltEnv::Sticky(sticky_wrap(&m, *repeat_prob, *max_repeats)?)
            }
            EnvSpec::ContinuousControl { control, horizon } => {
                BuiltEnv::Sim(make_continuous_control(*control, *horizon, seed)?)
            }
            EnvSpec::Random {
                layer_sizes,
                num_actions,
                branching,
                stochastic_rewards,
            } => BuiltEnv::Tabular(random_mdp(
                &RandomMdpSpec {
                    layer_sizes: layer_sizes.clone(),
                    num_actions: *num_actions,
                    branching: *branching,
                    stochastic_rewards: *stochastic_rewards,
                },
                seed,
            )?),
        })
    }
}

/// Uniform policy over an MDP's actions, as a convenience for behavior data.
pub fn uniform_behavior(mdp: &Mdp) -> Policy {
    Policy::uniform(mdp.layout())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            kind = "sticky_wrapped"
            [base]
            kind = "gridworld"
            width = 3
            height = 3
            horizon = 4
            slip = 0.0
            rewards = { kind = "goal", x = 2, y = 2, value = 1.0 }
        "#;
        let spec: EnvSpec = toml::from_str(text).unwrap();
        match &spec {
            EnvSpec::StickyWrapped {
                repeat_prob,
                max_repeats,
                ..
            } => {
                assert_eq!(*repeat_prob, 0.25);
                assert_eq!(*max_repeats, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(spec.build(0).unwrap().mdp().is_some());
        let bad = "kind = \"tree_hard\"\nnum_actions = 2\nhorizon = 2\neps = 0.1\nextra = 1\n";
        assert!(toml::from_str::<EnvSpec>(bad).is_err());
    }
}

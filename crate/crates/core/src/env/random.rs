use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::{Layout, Mdp, MdpBuilder, Policy, QTable};
use crate::rng::rng_from_seed;

/// Shape of a seeded random tabular MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpSpec {
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    /// Maximum number of successor states per state-action pair.
    pub branching: usize,
    /// Bernoulli rewards when true, point masses otherwise.
    pub stochastic_rewards: bool,
}

impl RandomMdpSpec {
    pub fn uniform(states: usize, actions: usize, horizon: usize) -> Self {
        let mut layer_sizes = vec![states; horizon];
        layer_sizes[0] = 1;
        Self {
            layer_sizes,
            num_actions: actions,
            branching: states,
            stochastic_rewards: true,
        }
    }
}

/// Random MDP with rewards in `[0, 1]`. Each state-action pair reaches up to
/// `branching` successors with random weights.
pub fn random_mdp(spec: &RandomMdpSpec, seed: u64) -> Result<Mdp> {
    if spec.branching == 0 {
        return Err(OpsError::invalid("branching must be at least 1"));
    }
    let layout = Layout::new(spec.layer_sizes.clone(), spec.num_actions)?;
    let mut rng = rng_from_seed(seed);
    let mut b = MdpBuilder::new(spec.layer_sizes.clone(), spec.num_actions, 1.0)?;
    for h in 0..layout.horizon() {
        let last = h + 1 == layout.horizon();
        for s in layout.states(h) {
            for a in 0..spec.num_actions {
                let mean: f64 = rng.random();
                let reward: Vec<(f64, f64)> = if spec.stochastic_rewards {
                    vec![(1.0, mean), (0.0, 1.0 - mean)]
                } else {
                    vec![(mean, 1.0)]
                };
                if last {
                    b.set_product(s, a, &[], &reward);
                } else {
                    let n_next = layout.layer_size(h + 1);
                    let k = rng.random_range(1..=spec.branching.min(n_next));
                    let mut idx = sample(&mut rng, n_next, k).into_vec();
                    idx.sort_unstable();
                    let w: Vec<f64> = idx.iter().map(|_| 0.05 + rng.random::<f64>()).collect();
                    let z: f64 = w.iter().sum();
                    let next: Vec<(usize, f64)> = idx.into_iter().zip(w).map(|(i, x)| (i, x / z)).collect();
                    b.set_product(s, a, &next, &reward);
                }
            }
        }
    }
    b.metadata("kind", "random");
    b.build()
}

/// Random stochastic policy defined at every state.
pub fn random_policy(layout: &Layout, seed: u64) -> Policy {
    let mut rng = rng_from_seed(seed);
    let rows = layout
        .all_states()
        .map(|_| Some(random_simplex(layout.num_actions(), &mut rng)))
        .collect();
    Policy::from_rows(layout, rows).expect("normalized rows")
}

/// Random deterministic policy.
pub fn random_deterministic_policy(layout: &Layout, seed: u64) -> Policy {
    let mut rng = rng_from_seed(seed);
    let actions: Vec<usize> = (0..layout.num_states())
        .map(|_| rng.random_range(0..layout.num_actions()))
        .collect();
    Policy::deterministic(layout, &actions).expect("actions in range")
}

/// Random q table with entries uniform in `[0, scale]`.
pub fn random_q(layout: &Layout, scale: f64, seed: u64) -> QTable {
    let mut rng = rng_from_seed(seed);
    let values = (0..layout.num_state_actions())
        .map(|_| scale * rng.random::<f64>())
        .collect();
    QTable::from_values(layout, values).expect("finite values")
}

/// Probability vector whose entries sum to one up to rounding of the last.
pub(crate) fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let z: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / z).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = (1.0 - head).max(0.0);
    p
}

/// Adds `noise · U(-1, 1)` to every entry.
pub fn perturb_q(q: &QTable, noise: f64, seed: u64) -> QTable {
    let mut rng = rng_from_seed(seed);
    let values = q
        .values()
        .iter()
        .map(|v| v + noise * rng.random_range(-1.0..1.0))
        .collect();
    QTable::from_values(q.layout(), values).expect("finite values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = RandomMdpSpec::uniform(3, 2, 3);
        assert_eq!(random_mdp(&spec, 4).unwrap(), random_mdp(&spec, 4).unwrap());
        assert_ne!(random_mdp(&spec, 4).unwrap(), random_mdp(&spec, 5).unwrap());
        let p = random_policy(&Layout::new(vec![1, 3], 4).unwrap(), 2);
        assert!(p.is_fully_defined());
    }
}

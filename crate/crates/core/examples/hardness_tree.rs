//! The tree-shaped lower-bound pair: two MDPs that differ only in a reward
//! reached with probability A^-H under uniform behavior. Shows how many
//! episodes importance-sampling selection needs as the horizon grows.
//!
//! `cargo run --release --example hardness_tree -- [actions]`

use anyhow::Result;
use opslab::env::make_tree_hard;
use opslab::mdp::{exact_policy_value, occupancy, sample_trajectories, Policy, StateId};
use opslab::metrics::{empirical_soundness, TrueValues};
use opslab::ope::{ops_by_estimate, IsKind};
use opslab::rng::derive_seed;

fn main() -> Result<()> {
    let actions: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let eps = 0.25;
    println!("A = {actions}, eps = {eps}; success rate of IS selection on the first MDP over 200 datasets\n");
    println!("{:>3} {:>10} {:>8} success by n", "H", "P(signal)", "J(on)");
    for h in 2..=5 {
        let t = make_tree_hard(actions, h, eps, None)?;
        let on = t.on_path_policy();
        let candidates = [t.deviating_policy(0)?, on.clone()];
        let behavior = Policy::uniform(t.layout());
        let signal = occupancy(&t.mdp1, &behavior)?.get(StateId::new(h - 1, 0), t.path[h - 1]);
        let values = TrueValues::exact(&t.mdp1, &candidates)?;
        let mut row = String::new();
        for n in [8usize, 32, 128, 512] {
            let s = empirical_soundness(&values, eps, 0..200, |seed| {
                let data = sample_trajectories(&t.mdp1, &behavior, n, derive_seed(9, &[h as u64, n as u64, seed]))?;
                Ok(ops_by_estimate(&candidates, &data, &IsKind::Is)?.best())
            })?;
            row += &format!("  n={n}: {:.2}", s.success_rate);
        }
        println!("{h:>3} {signal:>10.4} {:>8.3}{row}", exact_policy_value(&t.mdp1, &on)?);
    }
    Ok(())
}

//! Sticky actions folded into the state space of a slippery gridworld, so
//! exact values stay available. Compares the base optimal policy, lifted to
//! the sticky MDP, with the sticky MDP's own optimum.
//!
//! `cargo run --release --example sticky_gridworld`

use anyhow::Result;
use opslab::env::{make_gridworld, sticky_wrap, GridSpec};
use opslab::mdp::{exact_policy_value, greedy, monte_carlo_value, optimal_q, optimal_value};

fn main() -> Result<()> {
    let base = make_gridworld(&GridSpec::small(4, 4, 6, 0.1), 0)?;
    let pi = greedy(&optimal_q(&base));
    println!(
        "base gridworld: {} states, optimal value {:.4}",
        base.layout().num_states(),
        optimal_value(&base)
    );
    println!(
        "\n{:>12} {:>8} {:>14} {:>14} {:>18}",
        "repeat prob", "states", "lifted base pi", "sticky optimum", "MC check"
    );
    for p in [0.0, 0.1, 0.25, 0.5] {
        let st = sticky_wrap(&base, p, 3)?;
        let lifted = st.lift_policy(&pi)?;
        let v = exact_policy_value(&st.mdp, &lifted)?;
        let mc = monte_carlo_value(&st.mdp, &lifted, 20_000, 1)?;
        println!(
            "{p:>12.2} {:>8} {v:>14.4} {:>14.4} {:>10.4} +- {:.4}",
            st.mdp.layout().num_states(),
            optimal_value(&st.mdp),
            mc.mean,
            mc.stderr
        );
    }
    Ok(())
}

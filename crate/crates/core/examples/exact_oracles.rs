//! Exact dynamic-programming oracles on a seeded random MDP: optimal value,
//! policy values against Monte Carlo, occupancy, Bellman error and the
//! concentration coefficient.
//!
//! `cargo run --release --example exact_oracles -- [seed]`

use anyhow::Result;
use opslab::env::{perturb_q, random_mdp, random_policy, RandomMdpSpec};
use opslab::mdp::{
    brute_force_best_value, concentration_coefficient, exact_bellman_error, exact_policy_value, greedy,
    monte_carlo_value, occupancy, optimal_q, optimal_value, Policy,
};

fn main() -> Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let m = random_mdp(&RandomMdpSpec::uniform(4, 3, 4), seed)?;
    println!(
        "random MDP: {} states, {} actions, horizon {}, V_max {}",
        m.layout().num_states(),
        m.num_actions(),
        m.horizon(),
        m.v_max()
    );

    let qstar = optimal_q(&m);
    println!("optimal value {:.6}", optimal_value(&m));
    let tiny = random_mdp(&RandomMdpSpec::uniform(2, 2, 3), seed)?;
    println!(
        "tiny MDP: optimal value {:.6}, exhaustive search {:.6}",
        optimal_value(&tiny),
        brute_force_best_value(&tiny)?
    );

    let pi = random_policy(m.layout(), seed + 1);
    let exact = exact_policy_value(&m, &pi)?;
    let mc = monte_carlo_value(&m, &pi, 100_000, seed + 2)?;
    println!(
        "random policy: exact {exact:.5}, Monte Carlo {:.5} +- {:.5} ({:.2} standard errors)",
        mc.mean,
        mc.stderr,
        (mc.mean - exact).abs() / mc.stderr
    );

    let behavior = Policy::uniform(m.layout());
    let mu = occupancy(&m, &behavior)?;
    println!("\nBellman error under the uniform policy's occupancy:");
    println!("{:>8} {:>12} {:>10} {:>12}", "noise", "E(q)", "regret", "bound");
    for noise in [0.0, 0.05, 0.2, 0.5, 1.0] {
        let q = perturb_q(&qstar, noise, seed + 3);
        let pq = greedy(&q);
        let c = concentration_coefficient(&m, &[greedy(&qstar), pq.clone()], &mu)?;
        let e = exact_bellman_error(&m, &q, &mu)?;
        let regret = optimal_value(&m) - exact_policy_value(&m, &pq)?;
        let bound = 2.0 * m.horizon() as f64 * (c.value() * e).sqrt();
        println!("{noise:>8.2} {e:>12.3e} {regret:>10.4} {bound:>12.4}");
    }
    Ok(())
}

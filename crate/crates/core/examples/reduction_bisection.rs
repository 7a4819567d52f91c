//! Policy evaluation through a pairwise selection oracle: bisection on a
//! probe reward. An exact oracle on the default gridworld, then importance
//! sampling on fresh uniform-behavior episodes of a short random MDP.
//!
//! `cargo run --release --example reduction_bisection -- [eps]`

use anyhow::Result;
use opslab::candidates::epsilon_greedy;
use opslab::env::{random_mdp, random_policy, uniform_behavior, EnvSpec, RandomMdpSpec};
use opslab::mdp::{exact_policy_value, greedy, optimal_q};
use opslab::ope::IsKind;
use opslab::reduction::{call_budget, ope_via_ops, ExactSelector, OpsOracle, Reduction, SampledSelector};

fn show(name: &str, r: &Reduction, truth: f64) {
    println!(
        "\n{name}: estimate {:.4}, error {:.4}, {} calls",
        r.estimate,
        (r.estimate - truth).abs(),
        r.calls
    );
    println!("{:>5} {:>8} {:>7} {:>8} {:>8}", "call", "r", "chosen", "lower", "upper");
    for row in &r.trace {
        println!(
            "{:>5} {:>8.4} {:>7} {:>8.4} {:>8.4}",
            row.call, row.r, row.chosen, row.lower, row.upper
        );
    }
}

fn main() -> Result<()> {
    let eps: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.05);
    let mdp = EnvSpec::default_gridworld().build(0)?.into_mdp()?;
    let target = epsilon_greedy(&greedy(&optimal_q(&mdp)), 0.3)?;
    let truth = exact_policy_value(&mdp, &target)?;
    println!(
        "target value {truth:.4}, eps {eps}, call budget {}",
        call_budget(mdp.v_max(), eps)
    );

    let exact = ope_via_ops(&mut OpsOracle::new(ExactSelector), &mdp, &target, eps)?;
    show("exact oracle", &exact, truth);

    let small = random_mdp(&RandomMdpSpec::uniform(3, 2, 3), 8)?;
    let target = random_policy(small.layout(), 9);
    let truth = exact_policy_value(&small, &target)?;
    println!(
        "\nrandom MDP with horizon 3: target value {truth:.4}, call budget {}",
        call_budget(small.v_max(), eps)
    );
    let sampled = SampledSelector::new(IsKind::Is, uniform_behavior, 20_000, 10);
    let is = ope_via_ops(&mut OpsOracle::new(sampled), &small, &target, eps)?;
    show("IS oracle, 20000 episodes per call", &is, truth);
    Ok(())
}

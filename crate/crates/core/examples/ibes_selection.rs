//! Bellman-error selection on the default gridworld: TDE, SBV, IBES and the
//! FQE-then-IBES two-stage method, followed by the scale blind spot shared
//! by every Bellman-error score.
//!
//! `cargo run --release --example ibes_selection`

use anyhow::Result;
use opslab::be::{minimax_be_score, tde_score, IbesConfig};
use opslab::candidates::{build_candidate_grid, make_ops_dataset, training_dataset, GridAxes, MixMode, Regime};
use opslab::env::{perturb_q, EnvSpec};
use opslab::mdp::{exact_bellman_error, exact_policy_value, greedy, occupancy, optimal_q, optimal_value};
use opslab::method::{Method, MethodContext};
use opslab::metrics::{random_baseline_regret, topk_regret, TrueValues};
use opslab::ope::ModelInfo;

fn main() -> Result<()> {
    let mdp = EnvSpec::default_gridworld().build(0)?.into_mdp()?;
    let info = ModelInfo::of(&mdp);
    let train = training_dataset(&mdp, 300, 1)?;
    let set = build_candidate_grid(&train, mdp.layout(), mdp.v_max(), &GridAxes::default(), 2)?;
    let policies = set.policies();
    let truth = TrueValues::exact(&mdp, &policies)?;
    let methods: Vec<Method> = ["tde", "sbv", "ibes", "fqe", "fqe+ibes"]
        .iter()
        .map(|m| m.parse())
        .collect::<opslab::Result<_>>()?;
    println!(
        "top-1 regret, {} candidates, random baseline {:.4}\n",
        set.len(),
        random_baseline_regret(&truth, 1, 2000, 4)?.mean
    );
    print!("{:>6}", "n");
    for m in &methods {
        print!(" {:>9}", m.to_string());
    }
    println!();
    for n in [200usize, 1000, 5000] {
        let data = make_ops_dataset(&mdp, &policies, Regime::WellCoveredPlusOptimal, MixMode::Episode, n, 3)?;
        let ctx = MethodContext::new(&set, &data, &info, IbesConfig::default(), 5)?;
        print!("{n:>6}");
        for m in &methods {
            print!(" {:>9.4}", topk_regret(&truth, &m.run(&ctx)?.ranking, 1)?);
        }
        println!();
    }

    let qstar = optimal_q(&mdp);
    let behavior = opslab::env::uniform_behavior(&mdp);
    let mu = occupancy(&mdp, &behavior)?;
    let data = opslab::mdp::sample_trajectories(&mdp, &behavior, 5000, 6)?;
    let cfg = IbesConfig::default();
    println!("\nscaled and perturbed q*: same data, uniform behavior");
    println!(
        "{:>14} {:>10} {:>10} {:>10} {:>10}",
        "candidate", "regret", "exact BE", "IBES", "TDE"
    );
    let mut rows = vec![];
    for c in [0.5, 1.0, 2.0] {
        rows.push((format!("{c} * q*"), qstar.scaled(c)));
    }
    rows.push(("q* + noise 0.3".into(), perturb_q(&qstar, 0.3, 7)));
    for (name, q) in rows {
        let regret = optimal_value(&mdp) - exact_policy_value(&mdp, &greedy(&q))?;
        println!(
            "{name:>14} {regret:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            exact_bellman_error(&mdp, &q, &mu)?,
            minimax_be_score(&data, &q, &info, &cfg, 8)?.score,
            tde_score(&data, &q)?
        );
    }
    Ok(())
}

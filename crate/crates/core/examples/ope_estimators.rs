//! Importance sampling, weighted IS, per-decision IS and fitted Q evaluation
//! against exact candidate values as the logged data grows.
//!
//! `cargo run --release --example ope_estimators`

use anyhow::Result;
use opslab::candidates::{build_candidate_grid, make_ops_dataset, training_dataset, GridAxes, MixMode, Regime};
use opslab::env::EnvSpec;
use opslab::metrics::{kendall_tau, topk_regret, TrueValues};
use opslab::ope::{ops_by_estimate, Fqe, FqeConfig, IsKind, ModelInfo, ValueEstimator};

fn main() -> Result<()> {
    let mdp = EnvSpec::default_gridworld().build(0)?.into_mdp()?;
    let train = training_dataset(&mdp, 300, 1)?;
    let set = build_candidate_grid(&train, mdp.layout(), mdp.v_max(), &GridAxes::default(), 2)?;
    let policies = set.policies();
    let truth = TrueValues::exact(&mdp, &policies)?;
    let estimators: Vec<Box<dyn ValueEstimator>> = vec![
        Box::new(IsKind::Is),
        Box::new(IsKind::Wis),
        Box::new(IsKind::Pdis),
        Box::new(Fqe {
            info: ModelInfo::of(&mdp),
            config: FqeConfig::default(),
        }),
    ];
    println!("{} candidates, well-covered behavior mixture\n", policies.len());
    println!(
        "{:>6} {:>18} {:>10} {:>10} {:>10}",
        "n", "estimator", "mean |err|", "tau", "regret"
    );
    for n in [100usize, 1000, 10000] {
        let data = make_ops_dataset(&mdp, &policies, Regime::WellCovered, MixMode::Episode, n, 3)?;
        for est in &estimators {
            let values: Vec<f64> = policies
                .iter()
                .map(|p| est.estimate(&data, p).map(|e| e.value))
                .collect::<opslab::Result<_>>()?;
            let err = values
                .iter()
                .zip(&truth.values)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / values.len() as f64;
            let tau = kendall_tau(&values, &truth.values)?;
            let report = ops_by_estimate(&policies, &data, est.as_ref())?;
            let regret = topk_regret(&truth, &report.ranking, 1)?;
            println!("{n:>6} {:>18} {err:>10.4} {tau:>10.3} {regret:>10.4}", est.name());
        }
    }
    Ok(())
}

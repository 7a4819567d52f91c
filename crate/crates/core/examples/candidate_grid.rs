//! Trains the 90-point conservative FQI grid on the default gridworld and
//! summarizes true candidate values by class size and conservatism.
//!
//! `cargo run --release --example candidate_grid -- [out.json]`

use anyhow::Result;
use opslab::candidates::{build_candidate_grid, training_dataset, GridAxes, TRAIN_EPISODES};
use opslab::env::EnvSpec;
use opslab::mdp::optimal_value;
use opslab::metrics::TrueValues;

fn main() -> Result<()> {
    let mdp = EnvSpec::default_gridworld().build(0)?.into_mdp()?;
    let data = training_dataset(&mdp, TRAIN_EPISODES, 1)?;
    let axes = GridAxes::default();
    let set = build_candidate_grid(&data, mdp.layout(), mdp.v_max(), &axes, 2)?;
    let values = TrueValues::exact(&mdp, &set.policies())?;
    println!(
        "{} candidates from {} transitions; optimal value {:.4}, best candidate {:.4}, worst {:.4}",
        set.len(),
        data.num_transitions(),
        optimal_value(&mdp),
        values.best(),
        values.worst()
    );
    println!("\nmean true value by class size (rows) and alpha (columns):");
    print!("{:>6}", "");
    for a in &axes.alphas {
        print!(" {a:>8}");
    }
    println!();
    for &size in &axes.class_sizes {
        print!("{size:>6}");
        for &alpha in &axes.alphas {
            let v: Vec<f64> = set
                .entries
                .iter()
                .zip(&values.values)
                .filter(|(e, _)| e.hyperparams["class_size"] == size as f64 && e.hyperparams["alpha"] == alpha)
                .map(|(_, v)| *v)
                .collect();
            print!(" {:>8.4}", v.iter().sum::<f64>() / v.len() as f64);
        }
        println!();
    }
    let diverged = set.entries.iter().filter(|e| e.diverged).count();
    println!("\ndiverged candidates: {diverged}");
    if let Some(path) = std::env::args().nth(1) {
        set.write_json(&path)?;
        println!("wrote {path}");
    }
    Ok(())
}

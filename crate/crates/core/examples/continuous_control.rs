//! Simulation-only cart-pole and acrobot: Monte-Carlo policy values with and
//! without sticky actions, then holdout selection among regression classes
//! fitted to returns-to-go.
//!
//! `cargo run --release --example continuous_control`

use anyhow::Result;
use opslab::approx::{holdout_validate, Features, FunctionClass, Input, MlpConfig};
use opslab::env::control::{collect_sim, CartPole, SimPolicy};
use opslab::env::{make_continuous_control, monte_carlo_sim, ControlKind, StickySim};
use opslab::rng::Rng;
use rand::Rng as _;

fn main() -> Result<()> {
    let horizon = 200;
    let random = |_: &[f64], _: usize, rng: &mut Rng| rng.random_range(0..2usize);
    let lean = |obs: &[f64], _: usize, _: &mut Rng| usize::from(obs[2] + 0.5 * obs[3] > 0.0);
    let policies: [(&str, &dyn SimPolicy); 2] = [("random", &random), ("lean-follow", &lean)];

    for (name, pi) in policies {
        let mut env = make_continuous_control(ControlKind::CartpoleLike, horizon, 1)?;
        let plain = monte_carlo_sim(env.as_mut(), pi, 500, 2);
        let mut sticky = StickySim::new(CartPole::new(horizon, 1), 0.25, 4, 3)?;
        let st = monte_carlo_sim(&mut sticky, pi, 500, 2);
        println!(
            "cart-pole {name:>12}: {:7.2} +- {:5.2}   sticky: {:7.2} +- {:5.2}",
            plain.mean, plain.stderr, st.mean, st.stderr
        );
    }
    let mut acro = make_continuous_control(ControlKind::AcrobotLike, horizon, 1)?;
    let three = |_: &[f64], _: usize, rng: &mut Rng| rng.random_range(0..3usize);
    let pump = |obs: &[f64], _: usize, _: &mut Rng| if obs[4] > 0.0 { 0 } else { 2 };
    let a = monte_carlo_sim(acro.as_mut(), &three, 200, 4);
    let b = monte_carlo_sim(acro.as_mut(), &pump, 200, 4);
    println!(
        "acrobot random: {:.2} +- {:.2}   energy-pump: {:.2} +- {:.2}\n",
        a.mean, a.stderr, b.mean, b.stderr
    );

    let mut env = make_continuous_control(ControlKind::CartpoleLike, horizon, 5)?;
    let episodes = collect_sim(env.as_mut(), &random, 1000, 6);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ep in &episodes {
        let mut to_go = 0.0;
        for tr in ep.iter().rev() {
            to_go += tr.r;
            let mut x = tr.obs.clone();
            x.push(tr.t as f64 / horizon as f64);
            xs.push(x);
            ys.push(to_go);
        }
    }
    let inputs: Vec<Input> = xs.iter().map(|x| Input::Raw(x)).collect();
    let cut = inputs.len() * 4 / 5;
    let classes = [
        FunctionClass::Linear {
            features: Features::Raw,
            ridge: 1e-6,
        },
        FunctionClass::Mlp {
            features: Features::Raw,
            config: MlpConfig {
                steps: 3000,
                ..MlpConfig::with_width(32)
            },
        },
    ];
    let h = holdout_validate(&classes, (&inputs[..cut], &ys[..cut]), (&inputs[cut..], &ys[cut..]))?;
    println!("return-to-go regression on {} transitions:", inputs.len());
    for (c, l) in classes.iter().zip(&h.val_losses) {
        println!("  {:>8}: validation mse {l:.2}", c.label());
    }
    println!("  selected {}", classes[h.best].label());
    Ok(())
}

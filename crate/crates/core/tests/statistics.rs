use opslab::approx::FunctionClass;
use opslab::be::{minimax_be_score, IbesConfig};
use opslab::candidates::{train_conservative_fqi, training_dataset, GridAxes, TrainConfig};
use opslab::env::{make_tree_hard, random_mdp, random_policy, random_q, RandomMdpSpec};
use opslab::mdp::{exact_bellman_error, exact_policy_value, occupancy, sample_trajectories, Policy};
use opslab::metrics::{empirical_soundness, MeanStderr, TrueValues};
use opslab::ope::{is_estimate, ops_by_estimate, pdis_estimate, IsKind, ModelInfo};
use opslab::rng::derive_seed;

#[test]
fn importance_sampling_is_unbiased() {
    for i in 0..4u64 {
        let m = random_mdp(&RandomMdpSpec::uniform(3, 2, 3), derive_seed(1, &[i])).unwrap();
        let b = random_policy(m.layout(), derive_seed(2, &[i]));
        let target = random_policy(m.layout(), derive_seed(3, &[i]));
        let truth = exact_policy_value(&m, &target).unwrap();
        let resamples = 400;
        let mut is = Vec::new();
        let mut pdis = Vec::new();
        for r in 0..resamples {
            let data = sample_trajectories(&m, &b, 100, derive_seed(4, &[i, r])).unwrap();
            is.push(is_estimate(&data, &target).unwrap().value);
            pdis.push(pdis_estimate(&data, &target).unwrap().value);
        }
        for xs in [is, pdis] {
            let s = MeanStderr::of(&xs);
            assert!(
                (s.mean - truth).abs() <= 3.0 * s.stderr,
                "instance {i}: {} vs {truth}",
                s.mean
            );
        }
    }
}

#[test]
fn ibes_gap_to_exact_error_halves_when_data_quadruple() {
    let m = random_mdp(&RandomMdpSpec::uniform(3, 2, 3), 11).unwrap();
    let b = Policy::uniform(m.layout());
    let mu = occupancy(&m, &b).unwrap();
    let q = random_q(m.layout(), m.v_max(), 12);
    let exact = exact_bellman_error(&m, &q, &mu).unwrap();
    let info = ModelInfo::of(&m);
    let cfg = IbesConfig::default();
    let gaps: Vec<f64> = [250usize, 1000, 4000, 16000]
        .iter()
        .map(|&n| {
            let reps = 40u64;
            (0..reps)
                .map(|r| {
                    let data = sample_trajectories(&m, &b, n, derive_seed(13, &[n as u64, r])).unwrap();
                    (minimax_be_score(&data, &q, &info, &cfg, r).unwrap().score - exact).abs()
                })
                .sum::<f64>()
                / reps as f64
        })
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.25..=0.75).contains(&ratio), "gaps {gaps:?}");
    }
}

#[test]
fn soundness_grows_with_data_on_tree_instances() {
    let t = make_tree_hard(2, 3, 0.25, None).unwrap();
    let candidates = [t.deviating_policy(0).unwrap(), t.on_path_policy()];
    let values = TrueValues::exact(&t.mdp1, &candidates).unwrap();
    let behavior = Policy::uniform(t.layout());
    let rates: Vec<(f64, f64)> = [4usize, 8, 16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let s = empirical_soundness(&values, t.eps, 0..300, |seed| {
                let data = sample_trajectories(&t.mdp1, &behavior, n, derive_seed(21, &[n as u64, seed]))?;
                Ok(ops_by_estimate(&candidates, &data, &IsKind::Is)?.best())
            })
            .unwrap();
            (s.success_rate, s.stderr)
        })
        .collect();
    let mut violations = 0;
    for w in rates.windows(2) {
        if w[1].0 < w[0].0 {
            violations += 1;
            assert!(w[0].0 - w[1].0 <= w[0].1.max(w[1].1), "rates {rates:?}");
        }
    }
    assert!(violations <= 1, "rates {rates:?}");
    assert!(rates.last().unwrap().0 > 0.95);
}

#[test]
fn larger_alpha_shrinks_the_conservative_gap() {
    let m = random_mdp(&RandomMdpSpec::uniform(4, 3, 3), 31).unwrap();
    let data = training_dataset(&m, 300, 32).unwrap();
    let mut alphas = GridAxes::default().alphas;
    alphas.sort_by(f64::total_cmp);
    for lr in [0.001, 0.0001] {
        let gaps: Vec<f64> = alphas
            .iter()
            .map(|&alpha| {
                let cfg = TrainConfig {
                    learning_rate: lr,
                    class: FunctionClass::tabular(),
                    alpha,
                    iterations: 100,
                    seed: 33,
                };
                let q = train_conservative_fqi(&data, m.layout(), m.v_max(), &cfg).unwrap().q;
                let total: f64 = data
                    .steps()
                    .map(|st| {
                        let row = q.row(st.s);
                        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() - q.get(st.s, st.a)
                    })
                    .sum();
                total / data.num_transitions() as f64
            })
            .collect();
        assert!(
            gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "lr {lr}: alphas {alphas:?} gaps {gaps:?}"
        );
    }
}

use opslab::approx::{select_class, FunctionClass, Input, SaPoint};
use opslab::be::{ibes_select, minimax_be_score, IbesConfig, TargetMode};
use opslab::candidates::{build_candidate_grid, training_dataset, CandidateSet, GridAxes};
use opslab::env::{
    make_reward_probe, make_tree_hard, perturb_q, random_mdp, random_policy, random_q, sticky_wrap, RandomMdpSpec,
};
use opslab::mdp::{
    concentration_coefficient, exact_bellman_error, exact_policy_value, greedy, occupancy, optimal_q, policy_q,
    sample_trajectories, Dataset, Mdp, Policy, QTable, StateId,
};
use opslab::metrics::{
    expected_random_regret_top1, kendall_tau, random_baseline_regret, topk_regret, Provenance, TrueValues,
};
use opslab::ope::{fqe, ops_by_estimate, wis_estimate, ExactOracle, FqeConfig, ModelInfo};
use opslab::reduction::{call_budget, ope_via_ops, ExactSelector, OpsOracle};
use opslab::selection::{rank_scores, Order, SelectionReport};
use proptest::prelude::*;

fn mdp_strategy() -> impl Strategy<Value = Mdp> {
    (2usize..=5, 2usize..=3, 1usize..=4, any::<u64>())
        .prop_map(|(s, a, h, seed)| random_mdp(&RandomMdpSpec::uniform(s, a, h), seed).unwrap())
}

fn deterministic_mdp_strategy() -> impl Strategy<Value = Mdp> {
    (2usize..=5, 2usize..=3, 1usize..=4, any::<u64>()).prop_map(|(s, a, h, seed)| {
        let spec = RandomMdpSpec {
            branching: 1,
            stochastic_rewards: false,
            ..RandomMdpSpec::uniform(s, a, h)
        };
        random_mdp(&spec, seed).unwrap()
    })
}

fn start_value(m: &Mdp, pi: &Policy, q: &QTable) -> f64 {
    let s0 = m.initial_state();
    (0..m.num_actions()).map(|a| pi.prob(s0, a) * q.get(s0, a)).sum()
}

fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap() as i64;
            let dy = y[i].partial_cmp(&y[j]).unwrap() as i64;
            tx += u64::from(dx == 0);
            ty += u64::from(dy == 0);
            match (dx * dy).signum() {
                1 => c += 1,
                -1 => d += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as u64;
    let denom = (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (c - d) as f64 / denom
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimal_policy_dominates_random_policies(m in mdp_strategy(), seed in any::<u64>()) {
        let best = exact_policy_value(&m, &greedy(&optimal_q(&m))).unwrap();
        for i in 0..20 {
            let pi = random_policy(m.layout(), seed.wrapping_add(i));
            prop_assert!(exact_policy_value(&m, &pi).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn bellman_error_is_nonnegative_and_zero_at_optimum(m in mdp_strategy(), seed in any::<u64>()) {
        let mu = occupancy(&m, &random_policy(m.layout(), seed)).unwrap();
        prop_assert!(exact_bellman_error(&m, &optimal_q(&m), &mu).unwrap() <= 1e-10);
        let q = random_q(m.layout(), m.v_max(), seed ^ 1);
        prop_assert!(exact_bellman_error(&m, &q, &mu).unwrap() >= 0.0);
    }

    #[test]
    fn regret_bounded_by_bellman_error(m in mdp_strategy(), seed in any::<u64>(), noise in 0.0f64..2.0) {
        let qstar = optimal_q(&m);
        let q = perturb_q(&qstar, noise, seed);
        let (ps, pq) = (greedy(&qstar), greedy(&q));
        let mu = occupancy(&m, &Policy::uniform(m.layout())).unwrap();
        let c = concentration_coefficient(&m, &[ps.clone(), pq.clone()], &mu).unwrap().value();
        let e = exact_bellman_error(&m, &q, &mu).unwrap();
        let gap = exact_policy_value(&m, &ps).unwrap() - exact_policy_value(&m, &pq).unwrap();
        prop_assert!(gap <= 2.0 * m.horizon() as f64 * (c * e).sqrt() + 1e-12);
    }

    #[test]
    fn occupancy_weighted_rewards_give_value(m in mdp_strategy(), seed in any::<u64>()) {
        let pi = random_policy(m.layout(), seed);
        let d = occupancy(&m, &pi).unwrap();
        let l = m.layout();
        let mut total = 0.0;
        for h in 0..l.horizon() {
            prop_assert!((d.layer_sum(h) - 1.0).abs() <= 1e-12);
            for s in l.states(h) {
                for a in 0..l.num_actions() {
                    total += d.get(s, a) * m.mean_reward(s, a);
                }
            }
        }
        prop_assert!((total - exact_policy_value(&m, &pi).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn tree_path_end_is_reached_with_probability_a_to_minus_h(a in 2usize..=4, h in 1usize..=5) {
        let t = make_tree_hard(a, h, 0.1, None).unwrap();
        let d = occupancy(&t.mdp1, &Policy::uniform(t.layout())).unwrap();
        let p = d.get(StateId::new(h - 1, 0), t.path[h - 1]);
        prop_assert!((p - (a as f64).powi(-(h as i32))).abs() <= 1e-15);
    }

    #[test]
    fn reward_probe_identities(m in mdp_strategy(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let pi = random_policy(m.layout(), seed);
        let r = frac * m.v_max();
        let probe = make_reward_probe(&m, r).unwrap();
        let [p1, p2] = probe.policies(&pi).unwrap();
        prop_assert!((exact_policy_value(&probe.mdp, &p1).unwrap() - r).abs() <= 1e-12);
        let j = exact_policy_value(&m, &pi).unwrap();
        prop_assert!((exact_policy_value(&probe.mdp, &p2).unwrap() - j).abs() <= 1e-12);
    }

    #[test]
    fn sticky_without_repeats_preserves_values(m in mdp_strategy(), seed in any::<u64>()) {
        let st = sticky_wrap(&m, 0.0, 2).unwrap();
        let pi = random_policy(m.layout(), seed);
        let lifted = st.lift_policy(&pi).unwrap();
        let a = exact_policy_value(&m, &pi).unwrap();
        let b = exact_policy_value(&st.mdp, &lifted).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn selected_class_has_lowest_validation_loss(n in 20usize..200, seed in any::<u64>()) {
        let m = random_mdp(&RandomMdpSpec::uniform(4, 2, 3), seed).unwrap();
        let data = sample_trajectories(&m, &Policy::uniform(m.layout()), n, seed ^ 7).unwrap();
        let steps: Vec<_> = data.steps().copied().collect();
        let inputs: Vec<Input> = steps
            .iter()
            .map(|st| Input::Sa(SaPoint { s: st.s, a: st.a, obs: None, horizon: m.horizon() }))
            .collect();
        let y: Vec<f64> = steps.iter().map(|st| st.r).collect();
        let classes = [FunctionClass::tabular(), FunctionClass::aggregated(2), FunctionClass::aggregated(4)];
        let encoded: Vec<_> = classes.iter().map(|c| c.encode(&inputs).unwrap()).collect();
        let cut = steps.len() * 4 / 5;
        let train: Vec<usize> = (0..cut).collect();
        let val: Vec<usize> = (cut..steps.len()).collect();
        prop_assume!(!val.is_empty());
        let h = select_class(&classes, &encoded, &train, &val, &y).unwrap();
        for l in &h.val_losses {
            prop_assert!(h.val_losses[h.best] <= *l);
        }
    }

    #[test]
    fn wis_stays_within_value_range(m in mdp_strategy(), seed in any::<u64>(), n in 1usize..60) {
        let b = random_policy(m.layout(), seed);
        let target = random_policy(m.layout(), seed ^ 3);
        let data = sample_trajectories(&m, &b, n, seed ^ 5).unwrap();
        let e = wis_estimate(&data, &target).unwrap();
        prop_assert!(e.diagnostics.diverged || (0.0..=m.v_max() + 1e-12).contains(&e.value));
    }

    #[test]
    fn tabular_fqe_is_exact_on_covered_deterministic_data(m in deterministic_mdp_strategy(), seed in any::<u64>()) {
        let target = random_policy(m.layout(), seed);
        let data = sample_trajectories(&m, &Policy::uniform(m.layout()), 2000, seed ^ 9).unwrap();
        let covered = opslab::mdp::empirical_distribution(&data, m.layout()).unwrap();
        let d = occupancy(&m, &target).unwrap();
        prop_assume!(d.values().iter().zip(covered.values()).all(|(x, c)| *x == 0.0 || *c > 0.0));
        let est = fqe(&data, &target, &ModelInfo::of(&m), &FqeConfig::default()).unwrap();
        let truth = start_value(&m, &target, &policy_q(&m, &target).unwrap());
        prop_assert!((est.value - truth).abs() <= 1e-8);
    }

    #[test]
    fn exact_oracle_selection_has_zero_regret(m in mdp_strategy(), seed in any::<u64>(), k in 2usize..8) {
        let policies: Vec<Policy> = (0..k).map(|i| random_policy(m.layout(), seed.wrapping_add(i as u64))).collect();
        let data = sample_trajectories(&m, &policies[0], 1, seed).unwrap();
        let report = ops_by_estimate(&policies, &data, &ExactOracle { mdp: &m }).unwrap();
        let values = TrueValues::exact(&m, &policies).unwrap();
        prop_assert_eq!(topk_regret(&values, &report.ranking, 1).unwrap(), 0.0);
    }

    #[test]
    fn scaled_optimum_has_quadratic_bellman_error(m in mdp_strategy(), seed in any::<u64>(), c in 1.0f64..50.0) {
        let mu = occupancy(&m, &random_policy(m.layout(), seed)).unwrap();
        let qstar = optimal_q(&m);
        let zero = QTable::zeros(m.layout());
        let e = exact_bellman_error(&m, &qstar.scaled(c), &mu).unwrap();
        let e0 = exact_bellman_error(&m, &zero, &mu).unwrap();
        prop_assert!((e - (c - 1.0).powi(2) * e0).abs() <= 1e-9 * (1.0 + e));
        if c > 1.0 + 1e-6 && e0 > 1e-12 {
            prop_assert!(e > exact_bellman_error(&m, &qstar, &mu).unwrap());
        }
    }

    #[test]
    fn be_and_tq_scores_agree_for_tabular_class(m in mdp_strategy(), seed in any::<u64>(), n in 5usize..100) {
        let data = sample_trajectories(&m, &Policy::uniform(m.layout()), n, seed).unwrap();
        let q = random_q(m.layout(), m.v_max(), seed ^ 11);
        let info = ModelInfo::of(&m);
        let be = IbesConfig::default();
        let tq = IbesConfig { target: TargetMode::Tq, ..IbesConfig::default() };
        let a = minimax_be_score(&data, &q, &info, &be, seed).unwrap().score;
        let b = minimax_be_score(&data, &q, &info, &tq, seed).unwrap().score;
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn selection_is_deterministic_and_well_formed(m in mdp_strategy(), seed in any::<u64>(), k in 1usize..6) {
        let data = sample_trajectories(&m, &Policy::uniform(m.layout()), 30, seed).unwrap();
        let qs: Vec<QTable> = (0..k).map(|i| random_q(m.layout(), m.v_max(), seed.wrapping_add(i as u64))).collect();
        let info = ModelInfo::of(&m);
        let cfg = IbesConfig::default();
        let a = ibes_select(&qs, &data, &info, &cfg, seed).unwrap();
        let b = ibes_select(&qs, &data, &info, &cfg, seed).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        prop_assert!(a.validate().is_ok());
        prop_assert!(a.scores.iter().all(|s| s.is_finite()));
        prop_assert_eq!(&a.chosen[..], &a.ranking[..a.chosen.len()]);
    }

    #[test]
    fn reduction_keeps_value_inside_interval(m in mdp_strategy(), seed in any::<u64>(), frac in 0.01f64..0.25) {
        let target = random_policy(m.layout(), seed);
        let truth = exact_policy_value(&m, &target).unwrap();
        let eps = frac * m.v_max();
        let ep = 2.0 * eps / 3.0;
        let mut oracle = OpsOracle::new(ExactSelector);
        let out = ope_via_ops(&mut oracle, &m, &target, eps).unwrap();
        prop_assert!((out.estimate - truth).abs() <= eps);
        prop_assert!(out.calls <= call_budget(m.v_max(), eps));
        prop_assert!(out.calls <= (m.v_max() / ep).log2().ceil() as usize);
        prop_assert_eq!(oracle.calls(), out.calls);
        for row in &out.trace {
            prop_assert!(row.lower - ep <= truth && truth <= row.upper + ep);
            let probe = make_reward_probe(&m, row.r).unwrap();
            let [p1, p2] = probe.policies(&target).unwrap();
            prop_assert!((exact_policy_value(&probe.mdp, &p1).unwrap() - row.r).abs() <= 1e-12);
            prop_assert!((exact_policy_value(&probe.mdp, &p2).unwrap() - truth).abs() <= 1e-12);
        }
    }

    #[test]
    fn topk_regret_is_monotone_in_k(values in prop::collection::vec(-10.0f64..10.0, 2..20), seed in any::<u64>()) {
        let tv = TrueValues::new(values.clone(), Provenance::ExactDp).unwrap();
        let scores = random_q(&opslab::mdp::Layout::new(vec![1], values.len()).unwrap(), 1.0, seed);
        let ranking = rank_scores(scores.values(), Order::Descending);
        let regrets: Vec<f64> = (1..=values.len()).map(|k| topk_regret(&tv, &ranking, k).unwrap()).collect();
        prop_assert!(regrets.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(regrets.iter().all(|r| (0.0..=1.0).contains(r)));
        prop_assert_eq!(*regrets.last().unwrap(), 0.0);
    }

    #[test]
    fn random_baseline_matches_closed_form(values in prop::collection::vec(0.0f64..1.0, 2..10), seed in any::<u64>()) {
        let tv = TrueValues::new(values, Provenance::ExactDp).unwrap();
        let b = random_baseline_regret(&tv, 1, 4000, seed).unwrap();
        let exact = expected_random_regret_top1(&tv);
        prop_assert!((b.mean - exact).abs() <= 4.0 * b.stderr + 1e-12);
    }

    #[test]
    fn kendall_tau_matches_pair_counting(
        pairs in prop::collection::vec((0i32..6, 0i32..6), 2..50)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let t = kendall_tau(&x, &y).unwrap();
        prop_assert_eq!(t, brute_tau(&x, &y));
        prop_assert_eq!(t, kendall_tau(&y, &x).unwrap());
        prop_assert!((-1.0..=1.0).contains(&t));
    }

    #[test]
    fn ranking_is_a_stable_permutation(scores in prop::collection::vec(prop_oneof![
        -5.0f64..5.0,
        Just(f64::NEG_INFINITY),
        Just(f64::NAN),
        Just(1.0),
    ], 1..30)) {
        for order in [Order::Ascending, Order::Descending] {
            let r = rank_scores(&scores, order);
            let mut seen = r.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
            let nan_start = r.iter().position(|&i| scores[i].is_nan()).unwrap_or(r.len());
            prop_assert!(r[nan_start..].iter().all(|&i| scores[i].is_nan()));
            for w in r[..nan_start].windows(2) {
                let (a, b) = (scores[w[0]], scores[w[1]]);
                match order {
                    Order::Descending => prop_assert!(a > b || (a == b && w[0] < w[1])),
                    Order::Ascending => prop_assert!(a < b || (a == b && w[0] < w[1])),
                }
            }
        }
    }

    #[test]
    fn files_round_trip_byte_for_byte(m in mdp_strategy(), seed in any::<u64>(), n in 1usize..20) {
        let json = m.to_json().unwrap();
        prop_assert_eq!(Mdp::from_json(&json).unwrap().to_json().unwrap(), json);
        let pi = random_policy(m.layout(), seed);
        let pj = pi.to_json().unwrap();
        prop_assert_eq!(Policy::from_json(&pj).unwrap().to_json().unwrap(), pj);
        let data = sample_trajectories(&m, &pi, n, seed).unwrap();
        let dj = data.to_jsonl().unwrap();
        prop_assert_eq!(Dataset::from_jsonl(&dj).unwrap().to_jsonl().unwrap(), dj);
        let qs = vec![random_q(m.layout(), 1.0, seed), optimal_q(&m)];
        let set = CandidateSet::from_q_tables(qs.clone(), "test").unwrap();
        let cj = set.to_json().unwrap();
        prop_assert_eq!(CandidateSet::from_json(&cj).unwrap().to_json().unwrap(), cj);
        let report = ops_by_estimate(&set.policies(), &data, &ExactOracle { mdp: &m }).unwrap();
        let rj = report.to_json().unwrap();
        prop_assert_eq!(SelectionReport::from_json(&rj).unwrap().to_json().unwrap(), rj);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trained_candidates_are_greedy_in_their_q(seed in any::<u64>()) {
        let m = random_mdp(&RandomMdpSpec::uniform(4, 3, 3), seed).unwrap();
        let train = training_dataset(&m, 100, seed ^ 1).unwrap();
        let axes = GridAxes {
            learning_rates: vec![0.001, 0.01],
            class_sizes: vec![128, 512],
            alphas: vec![0.0, 1.0],
            iterations: vec![5],
        };
        let set = build_candidate_grid(&train, m.layout(), m.v_max(), &axes, seed).unwrap();
        prop_assert_eq!(set.len(), 8);
        prop_assert!(set.validate().is_ok());
        for e in &set.entries {
            let q = e.q.table().unwrap();
            prop_assert_eq!(&greedy(&q), &e.policy);
        }
    }
}

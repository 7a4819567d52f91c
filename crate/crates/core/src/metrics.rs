//! Regret, rank correlation, the random-selection baseline and empirical
//! soundness.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::mdp::{exact_policy_value, monte_carlo_value, McEstimate, Mdp, Policy};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ExactDp,
    MonteCarlo { episodes: usize, stderr: Vec<f64> },
}

/// True candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueValues {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl TrueValues {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(OpsError::invalid("true values must be finite and non-empty"));
        }
        Ok(Self { values, provenance })
    }

    pub fn exact(mdp: &Mdp, policies: &[Policy]) -> Result<Self> {
        let values = policies
            .iter()
            .map(|p| exact_policy_value(mdp, p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, Provenance::ExactDp)
    }

    pub fn monte_carlo(mdp: &Mdp, policies: &[Policy], episodes: usize, seed: u64) -> Result<Self> {
        let est = policies
            .iter()
            .enumerate()
            .map(|(i, p)| monte_carlo_value(mdp, p, episodes, crate::rng::derive_seed(seed, &[i as u64])))
            .collect::<Result<Vec<McEstimate>>>()?;
        Self::new(
            est.iter().map(|e| e.mean).collect(),
            Provenance::MonteCarlo {
                episodes,
                stderr: est.iter().map(|e| e.stderr).collect(),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn best(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn normalized_gap(&self, v: f64) -> f64 {
        let spread = self.best() - self.worst();
        if spread <= 0.0 {
            0.0
        } else {
            (self.best() - v) / spread
        }
    }
}

fn check_permutation(ranking: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if ranking.len() != n {
        return Err(OpsError::invalid(format!(
            "ranking has {} entries for {n} candidates",
            ranking.len()
        )));
    }
    for &i in ranking {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(OpsError::invalid("ranking is not a permutation"));
        }
    }
    Ok(())
}

/// `(J_best − max_{i in top k} J_i) / (J_best − J_worst)`, 0 when every value
/// is equal.
pub fn topk_regret(values: &TrueValues, ranking: &[usize], k: usize) -> Result<f64> {
    check_permutation(ranking, values.len())?;
    if k == 0 || k > values.len() {
        return Err(OpsError::invalid(format!("k = {k} outside 1..={}", values.len())));
    }
    let top = ranking[..k]
        .iter()
        .map(|&i| values.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(values.normalized_gap(top))
}

/// Regret of an arbitrary chosen set, as for `topk_regret`.
pub fn chosen_regret(values: &TrueValues, chosen: &[usize]) -> Result<f64> {
    if chosen.is_empty() || chosen.iter().any(|&i| i >= values.len()) {
        return Err(OpsError::invalid("chosen indices out of range"));
    }
    let top = chosen
        .iter()
        .map(|&i| values.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(values.normalized_gap(top))
}

/// Kendall τ-b in `O(n log n)`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(OpsError::ShapeMismatch(format!("lengths {} and {}", n, y.len())));
    }
    if n < 2 {
        return Err(OpsError::invalid("need at least two observations"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(OpsError::invalid("NaN in rank correlation input"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(y[i].total_cmp(&y[j])));
    let pairs = |n: u64| n * n.saturating_sub(1) / 2;
    let (mut tx, mut txy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in 1..n {
        let (a, b) = (idx[w - 1], idx[w]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                txy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tx += pairs(run_x);
            txy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tx += pairs(run_x);
    txy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys);
    let mut ty = 0u64;
    let mut run = 1u64;
    for w in 1..n {
        if ys[w] == ys[w - 1] {
            run += 1;
        } else {
            ty += pairs(run);
            run = 1;
        }
    }
    ty += pairs(run);

    let n0 = pairs(n as u64);
    let concordant_minus_discordant = n0 as i128 - tx as i128 - ty as i128 + txy as i128 - 2 * swaps as i128;
    let denom = (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(concordant_minus_discordant as f64 / denom)
}

/// Sorts ascending and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut out = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            out.push(v[j]);
            j += 1;
        } else {
            out.push(v[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&v[i..mid]);
    out.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&out);
    swaps
}

/// Mean and standard error of a sampled statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl MeanStderr {
    pub fn of(xs: &[f64]) -> Self {
        let e = McEstimate::from_returns(xs.iter().copied());
        Self {
            mean: e.mean,
            stderr: e.stderr,
            count: e.episodes,
        }
    }
}

/// Average regret of uniformly random `k`-subsets.
pub fn random_baseline_regret(values: &TrueValues, k: usize, repeats: usize, seed: u64) -> Result<MeanStderr> {
    if repeats == 0 {
        return Err(OpsError::invalid("repeats must be at least 1"));
    }
    if k == 0 || k > values.len() {
        return Err(OpsError::invalid(format!("k = {k} outside 1..={}", values.len())));
    }
    let mut rng = rng_from_seed(seed);
    let xs: Vec<f64> = (0..repeats)
        .map(|_| {
            let pick = sample(&mut rng, values.len(), k);
            let top = pick.iter().map(|i| values.values[i]).fold(f64::NEG_INFINITY, f64::max);
            values.normalized_gap(top)
        })
        .collect();
    Ok(MeanStderr::of(&xs))
}

/// Closed-form expected top-1 regret of a uniformly random pick.
pub fn expected_random_regret_top1(values: &TrueValues) -> f64 {
    values.values.iter().map(|&v| values.normalized_gap(v)).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Soundness {
    pub success_rate: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Fraction of seeds where the selected candidate is within `eps` of the
/// best one. `select(seed)` runs the method on a fresh dataset.
pub fn empirical_soundness(
    values: &TrueValues,
    eps: f64,
    seeds: impl IntoIterator<Item = u64>,
    mut select: impl FnMut(u64) -> Result<usize>,
) -> Result<Soundness> {
    let best = values.best();
    let mut hits = 0usize;
    let mut trials = 0usize;
    for seed in seeds {
        let i = select(seed)?;
        if i >= values.len() {
            return Err(OpsError::invalid(format!("selected index {i} out of range")));
        }
        trials += 1;
        if values.values[i] >= best - eps {
            hits += 1;
        }
    }
    if trials == 0 {
        return Err(OpsError::invalid("need at least one seed"));
    }
    let p = hits as f64 / trials as f64;
    Ok(Soundness {
        success_rate: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(v: &[f64]) -> TrueValues {
        TrueValues::new(v.to_vec(), Provenance::ExactDp).unwrap()
    }

    #[test]
    fn hand_regret_cases() {
        let v = tv(&[10.0, 7.0, 4.0]);
        assert_eq!(topk_regret(&v, &[1, 2, 0], 2).unwrap(), 0.5);
        assert_eq!(topk_regret(&v, &[0, 1, 2], 1).unwrap(), 0.0);
        assert_eq!(topk_regret(&v, &[2, 1, 0], 1).unwrap(), 1.0);
        assert!(topk_regret(&v, &[0, 0, 1], 1).is_err());
        assert_eq!(topk_regret(&tv(&[3.0, 3.0]), &[1, 0], 1).unwrap(), 0.0);
        assert!((expected_random_regret_top1(&v) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tau_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &r).unwrap(), -1.0);
        assert!(kendall_tau(&x, &r[..3]).is_err());
    }
}

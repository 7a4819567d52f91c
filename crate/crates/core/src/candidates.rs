//! Candidate generation: conservative fitted Q-iteration over a
//! hyperparameter grid, behavior-policy constructors and selection datasets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::FunctionClass;
use crate::error::{OpsError, Result};
use crate::mdp::{argmax, greedy, optimal_q, sample_mixture, Dataset, Layout, Mdp, Policy, QFunction, QTable, StateId};
use crate::rng::derive_seed;

/// Gradient steps on the penalized objective per iteration.
const INNER_STEPS: usize = 10;
/// Step size per unit of learning rate.
const LR_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub class: FunctionClass,
    pub alpha: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(OpsError::invalid("iterations must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(OpsError::invalid("conservative alpha must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OpsError::invalid("learning rate must be positive"));
        }
        match self.class {
            FunctionClass::Tabular { bin } if bin >= 1 => Ok(()),
            _ => Err(OpsError::invalid("candidate training supports indicator classes only")),
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub policy: Policy,
    pub q: QTable,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

/// Fitted Q-iteration with a conservative penalty on indicator features.
///
/// Each iteration recomputes targets `r + max_a' q(s', a')` from the current
/// q, sets every cell with data to its target mean, then takes gradient steps
/// on the per-state objective
/// `mean (q(s,a) - y)^2 + alpha * mean (logsumexp q(s,.) - q(s,a))`.
/// Cells without data move only through the penalty. With `alpha = 0` this
/// is plain fitted Q-iteration.
pub fn train_conservative_fqi(data: &Dataset, layout: &Layout, v_max: f64, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(OpsError::EmptyData("no training episodes".into()));
    }
    data.check_layout(layout)?;
    let FunctionClass::Tabular { bin } = cfg.class else {
        unreachable!("validated above")
    };
    let na = layout.num_actions();
    let h_total = layout.horizon();
    let cells_in = |h: usize| layout.layer_size(h).div_ceil(bin);
    let mut cell_offset = Vec::with_capacity(h_total + 1);
    let mut acc = 0;
    for h in 0..h_total {
        cell_offset.push(acc);
        acc += cells_in(h);
    }
    cell_offset.push(acc);
    let cell_of = |s: StateId| cell_offset[s.layer] + s.index / bin;
    let n_cells = acc;
    let mut theta = vec![0.0; n_cells * na];

    let steps: Vec<_> = data.steps().copied().collect();
    let mut count = vec![0usize; n_cells * na];
    let mut state_count = vec![0usize; n_cells];
    let mut distinct: BTreeMap<StateId, usize> = BTreeMap::new();
    for st in &steps {
        let c = cell_of(st.s);
        count[c * na + st.a] += 1;
        state_count[c] += 1;
        *distinct.entry(st.s).or_default() += 1;
    }
    let distinct: Vec<(StateId, usize)> = distinct.into_iter().collect();
    let mut warnings = Vec::new();
    let missing: Vec<usize> = (0..h_total)
        .filter(|&h| (cell_offset[h]..cell_offset[h + 1]).all(|c| state_count[c] == 0))
        .collect();
    if !missing.is_empty() {
        warnings.push(format!("no data for layers {missing:?}"));
    }

    let eta = cfg.learning_rate * LR_SCALE;
    let mut sum_y = vec![0.0; n_cells * na];
    let mut soft = vec![0.0; n_cells * na];
    let mut row = vec![0.0; na];
    for _ in 0..cfg.iterations {
        sum_y.iter_mut().for_each(|v| *v = 0.0);
        for st in &steps {
            let next = if st.h + 1 < h_total {
                let c = cell_of(st.sp);
                theta[c * na..(c + 1) * na]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                0.0
            };
            sum_y[cell_of(st.s) * na + st.a] += st.r + next;
        }
        for k in 0..n_cells * na {
            if count[k] > 0 {
                theta[k] = sum_y[k] / count[k] as f64;
            }
        }
        if cfg.alpha == 0.0 {
            continue;
        }
        for _ in 0..INNER_STEPS {
            soft.iter_mut().for_each(|v| *v = 0.0);
            for &(s, n) in &distinct {
                let c = cell_of(s);
                row.copy_from_slice(&theta[c * na..(c + 1) * na]);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                for a in 0..na {
                    soft[c * na + a] += n as f64 * (row[a] - m).exp() / z;
                }
            }
            for (c, &total) in state_count.iter().enumerate().take(n_cells) {
                if total == 0 {
                    continue;
                }
                let inv = 1.0 / total as f64;
                for a in 0..na {
                    let k = c * na + a;
                    let td = if count[k] > 0 {
                        2.0 * count[k] as f64 * inv * (theta[k] - sum_y[k] / count[k] as f64)
                    } else {
                        0.0
                    };
                    let pen = cfg.alpha * (soft[k] - count[k] as f64) * inv;
                    theta[k] -= eta * (td + pen);
                }
            }
        }
    }

    let mut values = Vec::with_capacity(layout.num_state_actions());
    for s in layout.all_states() {
        let c = cell_of(s);
        values.extend_from_slice(&theta[c * na..(c + 1) * na]);
    }
    let limit = 10.0 * v_max;
    let diverged = values.iter().any(|v| !v.is_finite() || v.abs() > limit);
    if diverged {
        warnings.push(format!("q exceeds 10 * V_max = {limit}"));
        values.iter_mut().for_each(|v| {
            if !v.is_finite() {
                *v = -limit;
            }
        });
    }
    let q = QTable::from_values(layout, values)?;
    Ok(Trained {
        policy: greedy(&q),
        q,
        diverged,
        warnings,
    })
}

/// Indicator class for a nominal network size: 512 is fully tabular, 256
/// aggregates pairs of states and 128 aggregates groups of four.
pub fn class_for_size(size: usize) -> Result<FunctionClass> {
    match size {
        512 => Ok(FunctionClass::aggregated(1)),
        256 => Ok(FunctionClass::aggregated(2)),
        128 => Ok(FunctionClass::aggregated(4)),
        _ => Err(OpsError::invalid(format!(
            "no class mapping for size {size}; use 128, 256 or 512"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub learning_rates: Vec<f64>,
    pub class_sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.001, 0.0003, 0.0001],
            class_sizes: vec![128, 256, 512],
            alphas: vec![1.0, 0.1, 0.01, 0.001, 0.0],
            iterations: vec![100, 200],
        }
    }
}

impl GridAxes {
    pub fn single(learning_rate: f64, class_size: usize, alpha: f64, iterations: usize) -> Self {
        Self {
            learning_rates: vec![learning_rate],
            class_sizes: vec![class_size],
            alphas: vec![alpha],
            iterations: vec![iterations],
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.class_sizes.len() * self.alphas.len() * self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEntry {
    pub policy: Policy,
    pub q: QFunction,
    pub hyperparams: BTreeMap<String, f64>,
    pub class: String,
    pub train_seed: u64,
    #[serde(default)]
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
    pub provenance: String,
}

impl CandidateSet {
    /// Wraps bare q tables, pairing each with its greedy policy.
    pub fn from_q_tables(qs: Vec<QTable>, provenance: impl Into<String>) -> Result<Self> {
        if qs.is_empty() {
            return Err(OpsError::EmptyData("candidate set must be non-empty".into()));
        }
        let entries = qs
            .into_iter()
            .map(|q| CandidateEntry {
                policy: greedy(&q),
                q: q.into(),
                hyperparams: BTreeMap::new(),
                class: "given".into(),
                train_seed: 0,
                diverged: false,
                warnings: Vec::new(),
            })
            .collect();
        Ok(Self {
            entries,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn policies(&self) -> Vec<Policy> {
        self.entries.iter().map(|e| e.policy.clone()).collect()
    }

    pub fn q_tables(&self) -> Result<Vec<QTable>> {
        self.entries
            .iter()
            .map(|e| e.q.table().map(|t| t.into_owned()))
            .collect()
    }

    /// Checks non-emptiness and that each policy is greedy for its q.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(OpsError::EmptyData("candidate set must be non-empty".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let q = e.q.table()?;
            let l = q.layout();
            if e.policy.layout() != l {
                return Err(OpsError::ShapeMismatch(format!(
                    "candidate {i}: policy and q layouts differ"
                )));
            }
            for s in l.all_states() {
                if e.policy.action(s) != Some(argmax(q.row(s))) {
                    return Err(OpsError::invalid(format!("candidate {i}: policy is not greedy at {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains one candidate per grid point. Entry `i` uses seed
/// `derive_seed(master_seed, [i])`; divergent entries are kept and flagged.
pub fn build_candidate_grid(
    data: &Dataset,
    layout: &Layout,
    v_max: f64,
    axes: &GridAxes,
    master_seed: u64,
) -> Result<CandidateSet> {
    if axes.is_empty() {
        return Err(OpsError::invalid("every grid axis needs at least one value"));
    }
    let mut entries = Vec::with_capacity(axes.len());
    for &lr in &axes.learning_rates {
        for &size in &axes.class_sizes {
            let class = class_for_size(size)?;
            for &alpha in &axes.alphas {
                for &iterations in &axes.iterations {
                    let seed = derive_seed(master_seed, &[entries.len() as u64]);
                    let cfg = TrainConfig {
                        learning_rate: lr,
                        class: class.clone(),
                        alpha,
                        iterations,
                        seed,
                    };
                    let t = train_conservative_fqi(data, layout, v_max, &cfg)?;
                    let hyperparams = BTreeMap::from([
                        ("learning_rate".to_string(), lr),
                        ("class_size".to_string(), size as f64),
                        ("alpha".to_string(), alpha),
                        ("iterations".to_string(), iterations as f64),
                    ]);
                    entries.push(CandidateEntry {
                        policy: t.policy,
                        q: t.q.into(),
                        hyperparams,
                        class: class.label(),
                        train_seed: seed,
                        diverged: t.diverged,
                        warnings: t.warnings,
                    });
                }
            }
        }
    }
    Ok(CandidateSet {
        entries,
        provenance: format!("{} training episodes", data.len()),
    })
}

/// `(1 - eps) · base + eps · uniform`; undefined rows stay undefined.
pub fn epsilon_greedy(base: &Policy, eps: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(OpsError::invalid(format!("eps {eps} outside [0, 1]")));
    }
    let l = base.layout();
    let u = eps / l.num_actions() as f64;
    let rows = l
        .all_states()
        .map(|s| base.row(s).map(|r| r.iter().map(|p| (1.0 - eps) * p + u).collect()))
        .collect();
    Policy::from_rows(l, rows)
}

/// Per-state convex combination of action distributions.
pub fn mixture_policy(policies: &[Policy], weights: &[f64]) -> Result<Policy> {
    let first = policies
        .first()
        .ok_or_else(|| OpsError::EmptyData("no policies to mix".into()))?;
    if policies.len() != weights.len() {
        return Err(OpsError::invalid("one weight per policy required"));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(OpsError::invalid("mixture weights must be non-negative and sum to 1"));
    }
    let l = first.layout();
    let na = l.num_actions();
    let mut rows = Vec::with_capacity(l.num_states());
    for s in l.all_states() {
        let mut row = vec![0.0; na];
        let mut mass = 0.0;
        for (p, &w) in policies.iter().zip(weights) {
            if p.layout() != l {
                return Err(OpsError::ShapeMismatch("policies over different layouts".into()));
            }
            if let Some(r) = p.row(s) {
                mass += w;
                for (x, y) in row.iter_mut().zip(r) {
                    *x += w * y;
                }
            }
        }
        rows.push((mass > 0.0).then(|| row.iter().map(|x| x / mass).collect()));
    }
    Policy::from_rows(l, rows)
}

pub fn equal_weights(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Mixture of the candidate policies.
    WellCovered,
    /// Mixture of the candidates and an eps-greedy optimal policy.
    WellCoveredPlusOptimal,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::WellCovered => "well_covered",
            Regime::WellCoveredPlusOptimal => "well_covered_plus_optimal",
        }
    }
}

/// How a behavior mixture draws actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// One component per episode.
    #[default]
    Episode,
    /// A fresh component at every step.
    State,
}

pub const OPTIMAL_EPS: f64 = 0.4;

/// Behavior components and weights for a regime.
pub fn regime_behavior(mdp: &Mdp, candidates: &[Policy], regime: Regime) -> Result<(Vec<Policy>, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(OpsError::EmptyData("no candidate policies".into()));
    }
    let mut parts = candidates.to_vec();
    if regime == Regime::WellCoveredPlusOptimal {
        parts.push(epsilon_greedy(&greedy(&optimal_q(mdp)), OPTIMAL_EPS)?);
    }
    let w = equal_weights(parts.len());
    Ok((parts, w))
}

/// Offline selection data: `n` episodes from the regime's behavior mixture.
pub fn make_ops_dataset(
    mdp: &Mdp,
    candidates: &[Policy],
    regime: Regime,
    mode: MixMode,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let (parts, w) = regime_behavior(mdp, candidates, regime)?;
    match mode {
        MixMode::Episode => sample_mixture(mdp, &parts, &w, n, seed),
        MixMode::State => {
            let mix = mixture_policy(&parts, &w)?;
            sample_mixture(mdp, std::slice::from_ref(&mix), &[1.0], n, seed)
        }
    }
}

/// Default training data: episodes of eps-greedy(greedy(q*), 0.4).
pub const TRAIN_EPISODES: usize = 300;

pub fn training_dataset(mdp: &Mdp, episodes: usize, seed: u64) -> Result<Dataset> {
    let behavior = epsilon_greedy(&greedy(&optimal_q(mdp)), OPTIMAL_EPS)?;
    sample_mixture(mdp, std::slice::from_ref(&behavior), &[1.0], episodes, seed)
}

//! Exact dynamic-programming oracles.

use serde::{Deserialize, Serialize};

use super::layout::{Layout, StateId};
use super::model::Mdp;
use super::policy::Policy;
use super::qfunc::{argmax, QTable};
use crate::error::{OpsError, Result};

/// Tolerance for a per-layer weighting to count as normalized.
pub const DIST_TOL: f64 = 1e-9;

/// Per-layer distribution over state-action pairs, e.g. an occupancy
/// `d^π_h` or a data distribution `μ_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaDistribution {
    layout: Layout,
    mass: Vec<f64>,
}

impl SaDistribution {
    pub fn from_values(layout: &Layout, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != layout.num_state_actions() {
            return Err(OpsError::ShapeMismatch(format!(
                "{} masses for {} state-action pairs",
                mass.len(),
                layout.num_state_actions()
            )));
        }
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(OpsError::invalid("masses must be finite and non-negative"));
        }
        Ok(Self {
            layout: layout.clone(),
            mass,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    #[inline]
    pub fn get(&self, s: StateId, a: usize) -> f64 {
        self.mass[self.layout.sa_index(s, a)]
    }

    pub fn values(&self) -> &[f64] {
        &self.mass
    }

    pub fn layer_sum(&self, h: usize) -> f64 {
        self.mass[self.layout.sa_range(h)].iter().sum()
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for h in 0..self.layout.horizon() {
            let sum = self.layer_sum(h);
            if (sum - 1.0).abs() > tol {
                return Err(OpsError::NotNormalized { layer: h, sum });
            }
        }
        Ok(())
    }

    /// Convex combination `Σ_k w_k d_k`.
    pub fn mixture(parts: &[SaDistribution], weights: &[f64]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| OpsError::EmptyData("no distributions to mix".into()))?;
        if parts.len() != weights.len() {
            return Err(OpsError::ShapeMismatch("one weight per distribution required".into()));
        }
        let mut mass = vec![0.0; first.mass.len()];
        for (d, &w) in parts.iter().zip(weights) {
            if d.layout != first.layout {
                return Err(OpsError::ShapeMismatch("distributions over different layouts".into()));
            }
            for (m, x) in mass.iter_mut().zip(&d.mass) {
                *m += w * x;
            }
        }
        Self::from_values(&first.layout, mass)
    }
}

/// Expected reward plus expected successor value, `r(s,a) + E[v(s')]`.
#[inline]
fn backup(mdp: &Mdp, sa: usize, next_values: &[f64]) -> f64 {
    let mut acc = mdp.mean_reward_at(sa);
    for o in mdp.outcomes_at(sa) {
        if let Some(n) = o.next {
            acc += o.prob * next_values[n];
        }
    }
    acc
}

fn check_layouts(mdp: &Mdp, other: &Layout, what: &str) -> Result<()> {
    if mdp.layout() != other {
        return Err(OpsError::ShapeMismatch(format!("{what} layout differs from the MDP")));
    }
    Ok(())
}

/// States reachable from the initial state under `pi`, erroring on the first
/// reachable state where `pi` is undefined.
fn reachable(mdp: &Mdp, pi: &Policy) -> Result<Vec<bool>> {
    let l = mdp.layout();
    let na = l.num_actions();
    let mut reach = vec![false; l.num_states()];
    reach[l.state_index(mdp.initial_state())] = true;
    for h in 0..l.horizon() {
        for g in l.state_range(h) {
            if !reach[g] {
                continue;
            }
            if !pi.defined_at(g) {
                return Err(OpsError::UndefinedPolicy(l.state_of(g)));
            }
            if h + 1 == l.horizon() {
                continue;
            }
            let base = l.state_range(h + 1).start;
            for (a, &p) in pi.row_at(g).iter().enumerate() {
                if p > 0.0 {
                    for o in mdp.outcomes_at(g * na + a) {
                        if let Some(n) = o.next {
                            reach[base + n] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(reach)
}

/// Per-state values `v^π` via backward induction; unreachable states with an
/// undefined policy row get value 0.
fn policy_state_values(mdp: &Mdp, pi: &Policy, reach: Option<&[bool]>) -> Vec<f64> {
    let l = mdp.layout();
    let na = l.num_actions();
    let mut v = vec![0.0; l.num_states()];
    for h in (0..l.horizon()).rev() {
        let next_start = if h + 1 < l.horizon() {
            l.state_range(h + 1).start
        } else {
            0
        };
        for g in l.state_range(h) {
            if !pi.defined_at(g) || reach.is_some_and(|r| !r[g]) {
                continue;
            }
            let mut acc = 0.0;
            for (a, &p) in pi.row_at(g).iter().enumerate() {
                if p > 0.0 {
                    acc += p * backup(mdp, g * na + a, &v[next_start..]);
                }
            }
            v[g] = acc;
        }
    }
    v
}

/// `J(π) = v^π_0(s_0)`.
pub fn exact_policy_value(mdp: &Mdp, pi: &Policy) -> Result<f64> {
    check_layouts(mdp, pi.layout(), "policy")?;
    let reach = reachable(mdp, pi)?;
    let v = policy_state_values(mdp, pi, Some(&reach));
    Ok(v[mdp.layout().state_index(mdp.initial_state())])
}

/// `q^π` on every state-action pair; `pi` must be defined everywhere.
pub fn policy_q(mdp: &Mdp, pi: &Policy) -> Result<QTable> {
    check_layouts(mdp, pi.layout(), "policy")?;
    let l = mdp.layout();
    if let Some(g) = (0..l.num_states()).find(|&g| !pi.defined_at(g)) {
        return Err(OpsError::UndefinedPolicy(l.state_of(g)));
    }
    let v = policy_state_values(mdp, pi, None);
    let mut q = vec![0.0; l.num_state_actions()];
    for h in 0..l.horizon() {
        let next = if h + 1 < l.horizon() {
            &v[l.state_range(h + 1)]
        } else {
            &v[0..0]
        };
        for sa in l.sa_range(h) {
            q[sa] = backup(mdp, sa, next);
        }
    }
    QTable::from_values(l, q)
}

/// `q*` by backward value iteration; satisfies `q* = T q*` exactly.
pub fn optimal_q(mdp: &Mdp) -> QTable {
    let l = mdp.layout();
    let na = l.num_actions();
    let mut q = vec![0.0; l.num_state_actions()];
    let mut v = vec![0.0; l.num_states()];
    for h in (0..l.horizon()).rev() {
        let next_start = if h + 1 < l.horizon() {
            l.state_range(h + 1).start
        } else {
            0
        };
        for g in l.state_range(h) {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let x = backup(mdp, g * na + a, &v[next_start..]);
                q[g * na + a] = x;
                best = best.max(x);
            }
            v[g] = best;
        }
    }
    QTable::from_values(l, q).expect("finite model gives finite values")
}

/// Optimal value `v*_0(s_0)`.
pub fn optimal_value(mdp: &Mdp) -> f64 {
    let q = optimal_q(mdp);
    q.max_value(mdp.initial_state())
}

/// `T q` under the optimality operator; the last layer backs up to `r`.
pub fn bellman_backup(mdp: &Mdp, q: &QTable) -> Result<QTable> {
    check_layouts(mdp, q.layout(), "q")?;
    let l = mdp.layout();
    let v: Vec<f64> = (0..l.num_states())
        .map(|g| q.row_at(g).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut out = vec![0.0; l.num_state_actions()];
    for h in 0..l.horizon() {
        let next = if h + 1 < l.horizon() {
            &v[l.state_range(h + 1)]
        } else {
            &v[0..0]
        };
        for sa in l.sa_range(h) {
            out[sa] = backup(mdp, sa, next);
        }
    }
    QTable::from_values(l, out)
}

/// `E(q) = (1/H) Σ_h ‖q − T q‖²_{μ_h}`.
pub fn exact_bellman_error(mdp: &Mdp, q: &QTable, mu: &SaDistribution) -> Result<f64> {
    check_layouts(mdp, mu.layout(), "weighting")?;
    mu.check_normalized(DIST_TOL)?;
    let tq = bellman_backup(mdp, q)?;
    let total: f64 = q
        .values()
        .iter()
        .zip(tq.values())
        .zip(mu.values())
        .map(|((x, t), m)| m * (x - t) * (x - t))
        .sum();
    Ok(total / mdp.horizon() as f64)
}

/// `d^π_h(s, a) = P^π(S_h = s, A_h = a)` by forward propagation.
pub fn occupancy(mdp: &Mdp, pi: &Policy) -> Result<SaDistribution> {
    check_layouts(mdp, pi.layout(), "policy")?;
    let l = mdp.layout();
    let na = l.num_actions();
    let mut ds = vec![0.0; l.num_states()];
    let mut dsa = vec![0.0; l.num_state_actions()];
    ds[l.state_index(mdp.initial_state())] = 1.0;
    for h in 0..l.horizon() {
        for g in l.state_range(h) {
            if ds[g] == 0.0 {
                continue;
            }
            if !pi.defined_at(g) {
                return Err(OpsError::UndefinedPolicy(l.state_of(g)));
            }
            for (a, &p) in pi.row_at(g).iter().enumerate() {
                let m = ds[g] * p;
                if m == 0.0 {
                    continue;
                }
                dsa[g * na + a] = m;
                if h + 1 < l.horizon() {
                    let base = l.state_range(h + 1).start;
                    for o in mdp.outcomes_at(g * na + a) {
                        if let Some(n) = o.next {
                            ds[base + n] += m * o.prob;
                        }
                    }
                }
            }
        }
    }
    SaDistribution::from_values(l, dsa)
}

/// Worst-case occupancy ratio `max_{π,h,s,a} d^π_h(s,a) / μ_h(s,a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Concentration {
    Finite {
        value: f64,
    },
    /// Some policy visits a pair the weighting never covers.
    Infinite {
        policy: usize,
        state: StateId,
        action: usize,
    },
}

impl Concentration {
    pub fn value(&self) -> f64 {
        match self {
            Concentration::Finite { value } => *value,
            Concentration::Infinite { .. } => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Concentration::Finite { .. })
    }
}

pub fn concentration_coefficient(mdp: &Mdp, policies: &[Policy], mu: &SaDistribution) -> Result<Concentration> {
    check_layouts(mdp, mu.layout(), "weighting")?;
    if policies.is_empty() {
        return Err(OpsError::EmptyData("no policies".into()));
    }
    let l = mdp.layout();
    let mut worst = 0.0f64;
    for (k, pi) in policies.iter().enumerate() {
        let d = occupancy(mdp, pi)?;
        for (sa, (&x, &m)) in d.values().iter().zip(mu.values()).enumerate() {
            if x <= 0.0 {
                continue;
            }
            if m <= 0.0 {
                return Ok(Concentration::Infinite {
                    policy: k,
                    state: l.state_of(sa / l.num_actions()),
                    action: sa % l.num_actions(),
                });
            }
            worst = worst.max(x / m);
        }
    }
    Ok(Concentration::Finite { value: worst })
}

/// Value of every deterministic policy, enumerated exhaustively. Intended
/// for small test instances only.
pub fn brute_force_best_value(mdp: &Mdp) -> Result<f64> {
    let l = mdp.layout();
    let n = l.num_states();
    let na = l.num_actions();
    let total = (na as f64).powi(n as i32);
    if total > 1e6 {
        return Err(OpsError::invalid("too many deterministic policies to enumerate"));
    }
    let mut actions = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        let pi = Policy::deterministic(l, &actions)?;
        best = best.max(exact_policy_value(mdp, &pi)?);
        let mut i = 0;
        loop {
            if i == n {
                return Ok(best);
            }
            actions[i] += 1;
            if actions[i] < na {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
    }
}

/// Greedy action of `q` at every state, lowest index on ties.
pub fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.layout().num_states()).map(|g| argmax(q.row_at(g))).collect()
}

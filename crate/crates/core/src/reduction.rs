//! Value estimation through repeated two-candidate selection on reward-probe
//! MDPs, by bisection over the probe reward.

use serde::{Deserialize, Serialize};

use crate::env::make_reward_probe;
use crate::error::{OpsError, Result};
use crate::mdp::{exact_policy_value, sample_trajectories, Mdp, Policy};
use crate::ope::{ops_by_estimate, ValueEstimator};
use crate::rng::derive_seed;

/// Picks one of two candidate policies on a probe MDP.
pub trait OpsSelector {
    fn select(&mut self, mdp: &Mdp, candidates: &[Policy; 2]) -> Result<usize>;

    /// Episodes consumed by the most recent call, if any.
    fn last_sample_size(&self) -> Option<usize> {
        None
    }
}

impl<F: FnMut(&Mdp, &[Policy; 2]) -> Result<usize>> OpsSelector for F {
    fn select(&mut self, mdp: &Mdp, candidates: &[Policy; 2]) -> Result<usize> {
        self(mdp, candidates)
    }
}

/// Exact selection by dynamic programming; ties go to the first candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSelector;

impl OpsSelector for ExactSelector {
    fn select(&mut self, mdp: &Mdp, candidates: &[Policy; 2]) -> Result<usize> {
        let a = exact_policy_value(mdp, &candidates[0])?;
        let b = exact_policy_value(mdp, &candidates[1])?;
        Ok(usize::from(b > a))
    }
}

/// Selection from fresh episodes of a behavior policy on each probe MDP.
pub struct SampledSelector<E, B> {
    pub estimator: E,
    /// Builds the behavior policy for a probe MDP.
    pub behavior: B,
    pub episodes: usize,
    pub seed: u64,
    calls: u64,
}

impl<E, B> SampledSelector<E, B> {
    pub fn new(estimator: E, behavior: B, episodes: usize, seed: u64) -> Self {
        Self {
            estimator,
            behavior,
            episodes,
            seed,
            calls: 0,
        }
    }
}

impl<E: ValueEstimator, B: Fn(&Mdp) -> Policy> OpsSelector for SampledSelector<E, B> {
    fn select(&mut self, mdp: &Mdp, candidates: &[Policy; 2]) -> Result<usize> {
        let pb = (self.behavior)(mdp);
        let data = sample_trajectories(mdp, &pb, self.episodes, derive_seed(self.seed, &[self.calls]))?;
        self.calls += 1;
        Ok(ops_by_estimate(candidates, &data, &self.estimator)?.best())
    }

    fn last_sample_size(&self) -> Option<usize> {
        Some(self.episodes)
    }
}

/// A selector with a query counter.
pub struct OpsOracle<S> {
    selector: S,
    calls: usize,
}

impl<S: OpsSelector> OpsOracle<S> {
    pub fn new(selector: S) -> Self {
        Self { selector, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn query(&mut self, mdp: &Mdp, candidates: &[Policy; 2]) -> Result<usize> {
        self.calls += 1;
        let i = self.selector.select(mdp, candidates)?;
        if i > 1 {
            return Err(OpsError::OracleIndex(i));
        }
        Ok(i)
    }

    pub fn selector(&self) -> &S {
        &self.selector
    }
}

/// One bisection step: the probe reward, the oracle's answer and the
/// interval after the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub call: usize,
    pub r: f64,
    pub chosen: usize,
    pub lower: f64,
    pub upper: f64,
    pub episodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub estimate: f64,
    pub calls: usize,
    pub eps: f64,
    pub trace: Vec<TraceRow>,
}

/// Halving steps needed to shrink `[0, V_max]` below `2 eps / 3`.
pub fn call_budget(v_max: f64, eps: f64) -> usize {
    let ratio = v_max / (2.0 * eps / 3.0);
    if ratio <= 1.0 {
        0
    } else {
        ratio.log2().ceil() as usize
    }
}

/// Bisection on `r`: the first candidate (take `r`) winning means
/// `J(π) ≤ r`, so the upper end moves to `r`; otherwise the lower end does.
pub fn ope_via_ops<S: OpsSelector>(
    oracle: &mut OpsOracle<S>,
    mdp: &Mdp,
    target: &Policy,
    eps: f64,
) -> Result<Reduction> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(OpsError::invalid(format!("eps must be positive, got {eps}")));
    }
    if target.layout() != mdp.layout() {
        return Err(OpsError::ShapeMismatch("target layout differs from the MDP".into()));
    }
    let eps_prime = 2.0 * eps / 3.0;
    let (mut lower, mut upper) = (0.0, mdp.v_max());
    let start = oracle.calls();
    let mut trace = Vec::new();
    while upper - lower > eps_prime {
        let r = 0.5 * (lower + upper);
        let probe = make_reward_probe(mdp, r)?;
        let candidates = probe.policies(target)?;
        let chosen = oracle.query(&probe.mdp, &candidates)?;
        if chosen == 0 {
            upper = r;
        } else {
            lower = r;
        }
        trace.push(TraceRow {
            call: trace.len() + 1,
            r,
            chosen,
            lower,
            upper,
            episodes: oracle.selector.last_sample_size(),
        });
    }
    Ok(Reduction {
        estimate: 0.5 * (lower + upper),
        calls: oracle.calls() - start,
        eps,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_gridworld, GridSpec};
    use crate::mdp::{greedy, optimal_q};

    #[test]
    fn exact_oracle_meets_tolerance_and_budget() {
        let m = make_gridworld(&GridSpec::small(3, 3, 4, 0.1), 0).unwrap();
        let pi = greedy(&optimal_q(&m));
        let truth = exact_policy_value(&m, &pi).unwrap();
        let eps = 0.05 * m.v_max();
        let mut oracle = OpsOracle::new(ExactSelector);
        let out = ope_via_ops(&mut oracle, &m, &pi, eps).unwrap();
        assert!((out.estimate - truth).abs() <= eps);
        assert!(out.calls <= call_budget(m.v_max(), eps));
        let ep = 2.0 * eps / 3.0;
        for row in &out.trace {
            assert!(row.lower - ep <= truth && truth <= row.upper + ep);
        }
    }

    #[test]
    fn bad_index_is_an_error() {
        let m = make_gridworld(&GridSpec::small(2, 2, 2, 0.0), 0).unwrap();
        let pi = Policy::uniform(m.layout());
        let mut oracle = OpsOracle::new(|_: &Mdp, _: &[Policy; 2]| Ok(5));
        assert!(matches!(
            ope_via_ops(&mut oracle, &m, &pi, 0.1),
            Err(OpsError::OracleIndex(5))
        ));
    }
}

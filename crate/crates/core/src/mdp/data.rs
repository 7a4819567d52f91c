use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dp::SaDistribution;
use super::layout::{Layout, StateId};
use super::model::Mdp;
use super::policy::{sample_index, Policy};
use crate::error::{OpsError, Result};
use crate::rng::rng_from_seed;

/// One logged transition with the behavior probability of the taken action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub h: usize,
    pub s: StateId,
    pub a: usize,
    pub r: f64,
    pub sp: StateId,
    pub pb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn ret(&self) -> f64 {
        self.steps.iter().map(|s| s.r).sum()
    }
}

/// Episodes of length `H` collected by some behavior; the only input an
/// offline selection method is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    horizon: usize,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(horizon: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        if horizon == 0 {
            return Err(OpsError::InvalidDataset("horizon must be at least 1".into()));
        }
        for t in &trajectories {
            validate_trajectory(horizon, t)?;
        }
        Ok(Self { horizon, trajectories })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.len() * self.horizon
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> + '_ {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    /// First `n` episodes.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            horizon: self.horizon,
            trajectories: self.trajectories[..n.min(self.len())].to_vec(),
        }
    }

    pub fn mean_return(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::ret).sum::<f64>() / self.len() as f64
    }

    /// Checks every recorded state and action against `layout`.
    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if layout.horizon() != self.horizon {
            return Err(OpsError::InvalidDataset(format!(
                "dataset horizon {} but model horizon {}",
                self.horizon,
                layout.horizon()
            )));
        }
        for st in self.steps() {
            if !layout.contains(st.s) || st.a >= layout.num_actions() {
                return Err(OpsError::InvalidDataset(format!(
                    "step ({}, action {}) outside the model",
                    st.s, st.a
                )));
            }
            if st.h + 1 < self.horizon && !layout.contains(st.sp) {
                return Err(OpsError::InvalidDataset(format!(
                    "successor {} outside the model",
                    st.sp
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.trajectories {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// One trajectory per line; the horizon is taken from the first line.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = Result<String>>) -> Result<Self> {
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory =
                serde_json::from_str(&line).map_err(|e| OpsError::InvalidDataset(format!("line {}: {e}", i + 1)))?;
            trajectories.push(t);
        }
        let horizon = trajectories
            .first()
            .map(|t| t.steps.len())
            .ok_or_else(|| OpsError::EmptyData("dataset file has no trajectories".into()))?;
        Self::new(horizon, trajectories)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        Self::from_lines(f.lines().map(|l| l.map_err(OpsError::from)))
    }
}

fn validate_trajectory(horizon: usize, t: &Trajectory) -> Result<()> {
    let bad = |msg: String| Err(OpsError::InvalidDataset(format!("episode {}: {msg}", t.episode)));
    if t.steps.len() != horizon {
        return bad(format!("{} steps, expected {horizon}", t.steps.len()));
    }
    for (i, st) in t.steps.iter().enumerate() {
        if st.h != i || st.s.layer != i {
            return bad(format!("step {i} has horizon index {} at state {}", st.h, st.s));
        }
        if !(st.pb > 0.0 && st.pb <= 1.0 + 1e-12) {
            return bad(format!("step {i} has behavior probability {}", st.pb));
        }
        if !st.r.is_finite() {
            return bad(format!("step {i} has non-finite reward"));
        }
        if i + 1 < horizon {
            if st.sp != t.steps[i + 1].s {
                return bad(format!("step {i} successor {} does not match next state", st.sp));
            }
        } else if st.sp != StateId::terminal(horizon) {
            return bad(format!("last step successor must be {}", StateId::terminal(horizon)));
        }
    }
    Ok(())
}

/// Rolls out `n` episodes of `pi`, recording `pb = π(a|s)`.
pub fn sample_trajectories(mdp: &Mdp, pi: &Policy, n: usize, seed: u64) -> Result<Dataset> {
    sample_mixture(mdp, std::slice::from_ref(pi), &[1.0], n, seed)
}

/// Rolls out `n` episodes, each following one policy drawn from `weights`.
///
/// The recorded probability is the action's likelihood given the episode
/// history, `Σ_k w̃_k π_k(a|s)` with `w̃` the posterior over the drawn
/// component, so products of recorded probabilities equal the marginal
/// likelihood of the logged action sequence.
pub fn sample_mixture(mdp: &Mdp, policies: &[Policy], weights: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(OpsError::invalid("need at least one episode"));
    }
    if policies.is_empty() || policies.len() != weights.len() {
        return Err(OpsError::invalid("one weight per behavior policy required"));
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (wsum - 1.0).abs() > 1e-9 {
        return Err(OpsError::invalid("mixture weights must be non-negative and sum to 1"));
    }
    for p in policies {
        if p.layout() != mdp.layout() {
            return Err(OpsError::ShapeMismatch(
                "behavior policy layout differs from the MDP".into(),
            ));
        }
    }
    let h_total = mdp.horizon();
    let mut rng = rng_from_seed(seed);
    let mut trajectories = Vec::with_capacity(n);
    let mut post = vec![0.0; policies.len()];
    for ep in 0..n {
        let k = sample_index(weights, &mut rng);
        post.copy_from_slice(weights);
        let mut s = mdp.initial_state();
        let mut steps = Vec::with_capacity(h_total);
        for h in 0..h_total {
            let a = policies[k].sample_action(s, &mut rng)?;
            let mut pb = 0.0;
            for (w, p) in post.iter().zip(policies) {
                if *w > 0.0 {
                    pb += w * p.row(s).ok_or(OpsError::UndefinedPolicy(s))?[a];
                }
            }
            if policies.len() > 1 {
                let mut z = 0.0;
                for (w, p) in post.iter_mut().zip(policies) {
                    if *w > 0.0 {
                        *w *= p.prob(s, a) / pb;
                        z += *w;
                    }
                }
                post.iter_mut().for_each(|w| *w /= z);
            }
            let o = mdp.sample_outcome(s, a, &mut rng);
            let sp = match o.next {
                Some(i) => StateId::new(h + 1, i),
                None => StateId::terminal(h_total),
            };
            steps.push(Step {
                h,
                s,
                a,
                r: o.reward,
                sp,
                pb,
            });
            s = sp;
        }
        trajectories.push(Trajectory {
            episode: ep as u64,
            steps,
        });
    }
    Ok(Dataset {
        horizon: h_total,
        trajectories,
    })
}

/// Monte-Carlo mean return with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
}

impl McEstimate {
    pub fn from_returns(returns: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in returns {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        McEstimate {
            mean,
            stderr: (var / n.max(1) as f64).sqrt(),
            episodes: n,
        }
    }
}

/// Streams `episodes` rollouts of `pi` without storing them.
pub fn monte_carlo_value(mdp: &Mdp, pi: &Policy, episodes: usize, seed: u64) -> Result<McEstimate> {
    let mut rng = rng_from_seed(seed);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = mdp.initial_state();
        let mut g = 0.0;
        for h in 0..mdp.horizon() {
            let a = pi.sample_action(s, &mut rng)?;
            let o = mdp.sample_outcome(s, a, &mut rng);
            g += o.reward;
            if let Some(i) = o.next {
                s = StateId::new(h + 1, i);
            }
        }
        returns.push(g);
    }
    Ok(McEstimate::from_returns(returns))
}

/// Per-layer empirical state-action frequencies of a dataset.
pub fn empirical_distribution(data: &Dataset, layout: &Layout) -> Result<SaDistribution> {
    data.check_layout(layout)?;
    if data.is_empty() {
        return Err(OpsError::MissingLayers((0..layout.horizon()).collect()));
    }
    let mut mass = vec![0.0; layout.num_state_actions()];
    for st in data.steps() {
        mass[layout.sa_index(st.s, st.a)] += 1.0;
    }
    let inv = 1.0 / data.len() as f64;
    mass.iter_mut().for_each(|m| *m *= inv);
    SaDistribution::from_values(layout, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpBuilder;

    fn coin() -> Mdp {
        let mut b = MdpBuilder::new(vec![1, 2], 2, 1.0).unwrap();
        let s0 = StateId::new(0, 0);
        b.set_product(s0, 0, &[(0, 0.5), (1, 0.5)], &[(0.0, 1.0)]);
        b.set_product(s0, 1, &[(1, 1.0)], &[(1.0, 0.5), (0.0, 0.5)]);
        for i in 0..2 {
            for a in 0..2 {
                b.set_deterministic(StateId::new(1, i), a, None, i as f64);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn sampling_is_seeded_and_valid() {
        let m = coin();
        let pi = Policy::uniform(m.layout());
        let a = sample_trajectories(&m, &pi, 50, 9).unwrap();
        let b = sample_trajectories(&m, &pi, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_transitions(), 100);
        a.check_layout(m.layout()).unwrap();
        let back = Dataset::from_jsonl(&a.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_jsonl().unwrap(), a.to_jsonl().unwrap());
    }

    #[test]
    fn broken_chain_rejected() {
        let m = coin();
        let pi = Policy::uniform(m.layout());
        let mut d = sample_trajectories(&m, &pi, 1, 1).unwrap();
        d.trajectories[0].steps[0].sp = StateId::new(1, 1 - d.trajectories[0].steps[1].s.index);
        assert!(Dataset::new(2, d.trajectories).is_err());
    }

    #[test]
    fn mixture_probabilities_are_history_conditional() {
        let m = coin();
        let l = m.layout();
        let p0 = Policy::deterministic(l, &[0, 0, 0]).unwrap();
        let p1 = Policy::deterministic(l, &[1, 1, 1]).unwrap();
        let d = sample_mixture(&m, &[p0, p1], &[0.5, 0.5], 20, 4).unwrap();
        for t in d.trajectories() {
            assert_eq!(t.steps[0].pb, 0.5);
            assert_eq!(t.steps[1].pb, 1.0);
        }
    }
}

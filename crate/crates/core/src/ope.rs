//! Off-policy value estimators and selection by highest estimate.

use serde::{Deserialize, Serialize};

use crate::approx::{FunctionClass, Input, SaPoint};
use crate::error::{OpsError, Result};
use crate::mdp::{exact_policy_value, Dataset, Layout, Mdp, Policy, StateId, Step};
use crate::selection::SelectionReport;

/// What an offline method may know about the model besides the data:
/// shapes, the value range and per-state observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub layout: Layout,
    pub v_max: f64,
    pub initial: StateId,
    pub observations: Option<Vec<Vec<f64>>>,
}

impl ModelInfo {
    pub fn of(mdp: &Mdp) -> Self {
        let observations = mdp.has_observations().then(|| {
            mdp.layout()
                .all_states()
                .map(|s| mdp.observation(s).expect("observations present").to_vec())
                .collect()
        });
        Self {
            layout: mdp.layout().clone(),
            v_max: mdp.v_max(),
            initial: mdp.initial_state(),
            observations,
        }
    }

    pub fn observation(&self, s: StateId) -> Option<&[f64]> {
        self.observations
            .as_ref()
            .map(|o| o[self.layout.state_index(s)].as_slice())
    }

    pub(crate) fn input(&self, s: StateId, a: usize) -> Input<'_> {
        Input::Sa(SaPoint {
            s,
            a,
            obs: self.observation(s),
            horizon: self.layout.horizon(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_weight: Option<f64>,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A value estimate; `-inf` when the estimator diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeEstimate {
    #[serde(with = "crate::serde_util::float")]
    pub value: f64,
    pub diagnostics: Diagnostics,
}

impl OpeEstimate {
    fn diverged(note: impl Into<String>) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            diagnostics: Diagnostics {
                diverged: true,
                note: Some(note.into()),
                ..Default::default()
            },
        }
    }
}

fn ratio(target: &Policy, st: &Step) -> Result<f64> {
    let row = target.row(st.s).ok_or(OpsError::UndefinedPolicy(st.s))?;
    let p = *row
        .get(st.a)
        .ok_or_else(|| OpsError::ShapeMismatch(format!("action {} outside the target policy", st.a)))?;
    if p == 0.0 {
        return Ok(0.0);
    }
    if st.pb <= 0.0 {
        return Err(OpsError::SupportViolation {
            state: st.s,
            action: st.a,
        });
    }
    Ok(p / st.pb)
}

fn check_inputs(data: &Dataset, target: &Policy) -> Result<()> {
    if data.is_empty() {
        return Err(OpsError::EmptyData("no episodes".into()));
    }
    data.check_layout(target.layout())
}

/// Trajectory weights `Π_h π(a_h|s_h) / π_b(a_h|s_h)` and returns.
fn weights(data: &Dataset, target: &Policy) -> Result<Vec<(f64, f64)>> {
    check_inputs(data, target)?;
    data.trajectories()
        .iter()
        .map(|t| {
            let mut w = 1.0;
            for st in &t.steps {
                w *= ratio(target, st)?;
                if w == 0.0 {
                    break;
                }
            }
            Ok((w, t.ret()))
        })
        .collect()
}

fn weight_diagnostics(ws: &[(f64, f64)]) -> Diagnostics {
    let s: f64 = ws.iter().map(|w| w.0).sum();
    let s2: f64 = ws.iter().map(|w| w.0 * w.0).sum();
    Diagnostics {
        effective_sample_size: Some(if s2 > 0.0 { s * s / s2 } else { 0.0 }),
        max_weight: Some(ws.iter().map(|w| w.0).fold(0.0, f64::max)),
        ..Default::default()
    }
}

/// Trajectory-wise importance sampling.
pub fn is_estimate(data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
    let ws = weights(data, target)?;
    let value = ws.iter().map(|(w, g)| w * g).sum::<f64>() / ws.len() as f64;
    Ok(OpeEstimate {
        value,
        diagnostics: weight_diagnostics(&ws),
    })
}

/// Self-normalized importance sampling; diverged when every weight is 0.
pub fn wis_estimate(data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
    let ws = weights(data, target)?;
    let z: f64 = ws.iter().map(|w| w.0).sum();
    if z <= 0.0 {
        return Ok(OpeEstimate::diverged("all importance weights are zero"));
    }
    let value = ws.iter().map(|(w, g)| w * g).sum::<f64>() / z;
    Ok(OpeEstimate {
        value,
        diagnostics: weight_diagnostics(&ws),
    })
}

/// Per-decision importance sampling: each reward weighted by its prefix ratio.
pub fn pdis_estimate(data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
    check_inputs(data, target)?;
    let mut total = 0.0;
    let mut max_weight: f64 = 0.0;
    for t in data.trajectories() {
        let mut w = 1.0;
        for st in &t.steps {
            w *= ratio(target, st)?;
            if w == 0.0 {
                break;
            }
            total += w * st.r;
        }
        max_weight = max_weight.max(w);
    }
    Ok(OpeEstimate {
        value: total / data.len() as f64,
        diagnostics: Diagnostics {
            max_weight: Some(max_weight),
            ..Default::default()
        },
    })
}

/// Fitted Q evaluation settings. `upper = None` means `V_max + 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqeConfig {
    pub class: FunctionClass,
    pub upper: Option<f64>,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            class: FunctionClass::tabular(),
            upper: None,
        }
    }
}

pub const FQE_MARGIN: f64 = 100.0;

/// Backward regression of `q_h` on `r + Σ_a' π(a'|s') q_{h+1}(s', a')`, with
/// the last layer regressed on `r`. Returns `-inf` flagged as diverged when
/// the estimate exceeds the threshold or any fitted value is non-finite.
pub fn fqe(data: &Dataset, target: &Policy, info: &ModelInfo, cfg: &FqeConfig) -> Result<OpeEstimate> {
    check_inputs(data, target)?;
    if target.layout() != &info.layout {
        return Err(OpsError::ShapeMismatch(
            "target policy layout differs from the model".into(),
        ));
    }
    let h_total = info.layout.horizon();
    let na = info.layout.num_actions();
    let mut by_layer: Vec<Vec<&Step>> = vec![Vec::new(); h_total];
    for st in data.steps() {
        by_layer[st.h].push(st);
    }
    let missing: Vec<usize> = (0..h_total).filter(|&h| by_layer[h].is_empty()).collect();
    if !missing.is_empty() {
        return Err(OpsError::MissingLayers(missing));
    }
    let upper = cfg.upper.unwrap_or(info.v_max + FQE_MARGIN);
    let mut next: Option<crate::approx::FittedFunction> = None;
    let mut cache: std::collections::HashMap<StateId, f64> = std::collections::HashMap::new();
    for h in (0..h_total).rev() {
        cache.clear();
        let rows = &by_layer[h];
        let mut y = Vec::with_capacity(rows.len());
        for st in rows {
            let cont = match &next {
                None => 0.0,
                Some(f) => match cache.get(&st.sp) {
                    Some(v) => *v,
                    None => {
                        let row = target.row(st.sp).ok_or(OpsError::UndefinedPolicy(st.sp))?;
                        let mut v = 0.0;
                        for (a, p) in row.iter().enumerate().take(na) {
                            if *p > 0.0 {
                                v += p * f.predict(&info.input(st.sp, a));
                            }
                        }
                        cache.insert(st.sp, v);
                        v
                    }
                },
            };
            y.push(st.r + cont);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Ok(OpeEstimate::diverged(format!("non-finite targets at layer {h}")));
        }
        let inputs: Vec<Input> = rows.iter().map(|st| info.input(st.s, st.a)).collect();
        let enc = cfg.class.encode(&inputs)?;
        let idx: Vec<usize> = (0..rows.len()).collect();
        match cfg.class.fit(&enc, &idx, &y) {
            Ok(f) => next = Some(f),
            Err(OpsError::Numeric(msg)) => return Ok(OpeEstimate::diverged(msg)),
            Err(e) => return Err(e),
        }
    }
    let f = next.expect("at least one layer");
    let s0 = info.initial;
    let row = target.row(s0).ok_or(OpsError::UndefinedPolicy(s0))?;
    let value: f64 = row
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(a, p)| p * f.predict(&info.input(s0, a)))
        .sum();
    if !value.is_finite() || value > upper {
        return Ok(OpeEstimate::diverged(format!(
            "estimate {value} exceeds threshold {upper}"
        )));
    }
    Ok(OpeEstimate {
        value,
        diagnostics: Diagnostics {
            iterations: Some(h_total),
            ..Default::default()
        },
    })
}

/// Anything that maps a dataset and a target policy to a value estimate.
pub trait ValueEstimator {
    fn name(&self) -> String;
    fn estimate(&self, data: &Dataset, target: &Policy) -> Result<OpeEstimate>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsKind {
    Is,
    Wis,
    Pdis,
}

impl ValueEstimator for IsKind {
    fn name(&self) -> String {
        match self {
            IsKind::Is => "is",
            IsKind::Wis => "wis",
            IsKind::Pdis => "pdis",
        }
        .into()
    }

    fn estimate(&self, data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
        match self {
            IsKind::Is => is_estimate(data, target),
            IsKind::Wis => wis_estimate(data, target),
            IsKind::Pdis => pdis_estimate(data, target),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fqe {
    pub info: ModelInfo,
    pub config: FqeConfig,
}

impl ValueEstimator for Fqe {
    fn name(&self) -> String {
        format!("fqe(class={})", self.config.class.label())
    }

    fn estimate(&self, data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
        fqe(data, target, &self.info, &self.config)
    }
}

/// Ignores the data and returns the exact value.
#[derive(Debug, Clone)]
pub struct ExactOracle<'a> {
    pub mdp: &'a Mdp,
}

impl ValueEstimator for ExactOracle<'_> {
    fn name(&self) -> String {
        "exact".into()
    }

    fn estimate(&self, _data: &Dataset, target: &Policy) -> Result<OpeEstimate> {
        Ok(OpeEstimate {
            value: exact_policy_value(self.mdp, target)?,
            diagnostics: Diagnostics::default(),
        })
    }
}

/// Ranks candidates by descending estimate; diverged candidates go last and
/// ties keep the lower index first.
pub fn ops_by_estimate(
    candidates: &[Policy],
    data: &Dataset,
    estimator: &dyn ValueEstimator,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(OpsError::EmptyData("no candidates".into()));
    }
    let estimates = candidates
        .iter()
        .map(|p| estimator.estimate(data, p))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    Ok(SelectionReport::descending(estimator.name(), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_tree_hard, random_mdp, random_policy, RandomMdpSpec};
    use crate::mdp::sample_trajectories;

    #[test]
    fn on_policy_weights_are_one() {
        let m = random_mdp(&RandomMdpSpec::uniform(3, 2, 3), 1).unwrap();
        let pi = random_policy(m.layout(), 2);
        let d = sample_trajectories(&m, &pi, 200, 3).unwrap();
        let mean = d.mean_return();
        for e in [is_estimate(&d, &pi), wis_estimate(&d, &pi), pdis_estimate(&d, &pi)] {
            assert!((e.unwrap().value - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_support_target_gives_zero() {
        let t = make_tree_hard(2, 3, 0.25, None).unwrap();
        let behavior = t.on_path_policy();
        let d = sample_trajectories(&t.mdp1, &behavior, 50, 0).unwrap();
        let dev = t.deviating_policy(0).unwrap();
        assert_eq!(is_estimate(&d, &dev).unwrap().value, 0.0);
        assert!(wis_estimate(&d, &dev).unwrap().diagnostics.diverged);
    }

    #[test]
    fn fqe_tabular_single_layer_is_sample_mean() {
        let m = random_mdp(&RandomMdpSpec::uniform(1, 2, 1), 5).unwrap();
        let pi = Policy::deterministic(m.layout(), &[1]).unwrap();
        let d = sample_trajectories(&m, &Policy::uniform(m.layout()), 400, 1).unwrap();
        let rs: Vec<f64> = d.steps().filter(|s| s.a == 1).map(|s| s.r).collect();
        let mean = rs.iter().sum::<f64>() / rs.len() as f64;
        let e = fqe(&d, &pi, &ModelInfo::of(&m), &FqeConfig::default()).unwrap();
        assert!((e.value - mean).abs() < 1e-12);
    }
}

//! Bellman-error scores and the selection rules built on them.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::approx::{select_class, Encoded, FunctionClass, Input};
use crate::candidates::CandidateSet;
use crate::error::{OpsError, Result};
use crate::mdp::{Dataset, QTable, Step};
use crate::ope::{ops_by_estimate, Fqe, FqeConfig, ModelInfo};
use crate::rng::rng_from_seed;
use crate::selection::{Order, ScoreDetail, SelectionReport};

/// Regression target of the auxiliary fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Fit `h ≈ δ = r + v_q(s') - q(s,a)`, score `mean(2hδ - h²)`.
    #[default]
    Be,
    /// Fit `g ≈ r + v_q(s')`, score `mean((q - y)² - (g - y)²)`.
    Tq,
}

/// Which split the final score is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbesConfig {
    pub classes: Vec<FunctionClass>,
    pub split_ratio: f64,
    #[serde(default)]
    pub target: TargetMode,
    #[serde(default)]
    pub evaluate_on: EvalSplit,
}

impl Default for IbesConfig {
    fn default() -> Self {
        Self {
            classes: vec![FunctionClass::tabular()],
            split_ratio: 0.8,
            target: TargetMode::Be,
            evaluate_on: EvalSplit::Train,
        }
    }
}

impl IbesConfig {
    pub fn with_classes(classes: Vec<FunctionClass>) -> Self {
        Self {
            classes,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeScore {
    pub score: f64,
    pub class_index: usize,
    pub train_loss: f64,
    pub val_losses: Vec<f64>,
}

impl BeScore {
    fn detail(&self) -> ScoreDetail {
        ScoreDetail {
            class_index: self.class_index,
            train_loss: self.train_loss,
            val_losses: self.val_losses.clone(),
        }
    }
}

/// Transitions split into fit, validation and scoring rows, with inputs
/// encoded once per auxiliary class and shared across candidates.
pub struct BeScorer<'a> {
    info: &'a ModelInfo,
    steps: Vec<Step>,
    classes: Vec<FunctionClass>,
    encoded: Vec<Encoded>,
    train: Vec<usize>,
    val: Vec<usize>,
    score_rows: Vec<usize>,
}

impl<'a> BeScorer<'a> {
    pub fn new(
        info: &'a ModelInfo,
        steps: Vec<Step>,
        classes: Vec<FunctionClass>,
        train: Vec<usize>,
        val: Vec<usize>,
        score_rows: Vec<usize>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(OpsError::invalid("need at least one auxiliary class"));
        }
        if train.is_empty() || score_rows.is_empty() {
            return Err(OpsError::EmptyData("fit and score rows must be non-empty".into()));
        }
        if classes.len() > 1 && val.is_empty() {
            return Err(OpsError::EmptyData("class selection needs validation rows".into()));
        }
        for st in &steps {
            if !info.layout.contains(st.s) || st.a >= info.layout.num_actions() {
                return Err(OpsError::InvalidDataset(format!("step at {} outside the model", st.s)));
            }
        }
        let inputs: Vec<Input> = steps.iter().map(|st| info.input(st.s, st.a)).collect();
        let encoded = classes.iter().map(|c| c.encode(&inputs)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            info,
            steps,
            classes,
            encoded,
            train,
            val,
            score_rows,
        })
    }

    /// Seeded transition-level split with `split_ratio` of rows for fitting.
    pub fn split(data: &Dataset, info: &'a ModelInfo, cfg: &IbesConfig, seed: u64) -> Result<Self> {
        if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
            return Err(OpsError::invalid("split ratio must lie in (0, 1)"));
        }
        data.check_layout(&info.layout)?;
        let steps: Vec<Step> = data.steps().copied().collect();
        let n = steps.len();
        let n_train = ((n as f64) * cfg.split_ratio).round() as usize;
        if n_train == 0 || n_train >= n {
            return Err(OpsError::EmptyData(format!("{n} transitions are too few to split")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let val = idx.split_off(n_train);
        let mut train = idx;
        train.sort_unstable();
        let mut val = val;
        val.sort_unstable();
        let score_rows = match cfg.evaluate_on {
            EvalSplit::Train => train.clone(),
            EvalSplit::Validation => val.clone(),
        };
        Self::new(info, steps, cfg.classes.clone(), train, val, score_rows)
    }

    /// Uses every transition for fitting and scoring; single class only.
    pub fn full(data: &Dataset, info: &'a ModelInfo, class: FunctionClass) -> Result<Self> {
        data.check_layout(&info.layout)?;
        let steps: Vec<Step> = data.steps().copied().collect();
        let all: Vec<usize> = (0..steps.len()).collect();
        Self::new(info, steps, vec![class], all.clone(), Vec::new(), all)
    }

    pub fn num_rows(&self) -> usize {
        self.steps.len()
    }

    fn check(&self, q: &QTable) -> Result<()> {
        if q.layout() != &self.info.layout {
            return Err(OpsError::ShapeMismatch("q layout differs from the model".into()));
        }
        Ok(())
    }

    /// `r + v_q(s')` with `v_q ≡ 0` after the last layer.
    fn target(&self, q: &QTable, st: &Step) -> f64 {
        let next = if st.h + 1 < self.info.layout.horizon() {
            q.max_value(st.sp)
        } else {
            0.0
        };
        st.r + next
    }

    /// Mean squared TD error over the scoring rows.
    pub fn tde(&self, q: &QTable) -> Result<f64> {
        self.check(q)?;
        let sum: f64 = self
            .score_rows
            .iter()
            .map(|&i| {
                let st = &self.steps[i];
                (q.get(st.s, st.a) - self.target(q, st)).powi(2)
            })
            .sum();
        Ok(sum / self.score_rows.len() as f64)
    }

    fn fit(&self, y: &[f64]) -> Result<(Vec<f64>, usize, f64, Vec<f64>)> {
        if self.classes.len() == 1 {
            let f = self.classes[0].fit(&self.encoded[0], &self.train, y)?;
            let pred = f.predict_encoded(&self.encoded[0])?;
            let val_losses = if self.val.is_empty() {
                Vec::new()
            } else {
                vec![self.val.iter().map(|&i| (pred[i] - y[i]).powi(2)).sum::<f64>() / self.val.len() as f64]
            };
            return Ok((pred, 0, f.train_loss, val_losses));
        }
        let h = select_class(&self.classes, &self.encoded, &self.train, &self.val, y)?;
        let pred = h.fitted.predict_encoded(&self.encoded[h.best])?;
        Ok((pred, h.best, h.fitted.train_loss, h.val_losses))
    }

    /// The minimax Bellman-error estimate with an auxiliary fit.
    pub fn minimax(&self, q: &QTable, mode: TargetMode) -> Result<BeScore> {
        self.check(q)?;
        let qs: Vec<f64> = self.steps.iter().map(|st| q.get(st.s, st.a)).collect();
        let ys: Vec<f64> = self.steps.iter().map(|st| self.target(q, st)).collect();
        let fit_y: Vec<f64> = match mode {
            TargetMode::Be => ys.iter().zip(&qs).map(|(y, q)| y - q).collect(),
            TargetMode::Tq => ys.clone(),
        };
        let (pred, class_index, train_loss, val_losses) = self.fit(&fit_y)?;
        let sum: f64 = self
            .score_rows
            .iter()
            .map(|&i| match mode {
                TargetMode::Be => {
                    let (h, d) = (pred[i], fit_y[i]);
                    2.0 * h * d - h * h
                }
                TargetMode::Tq => (qs[i] - ys[i]).powi(2) - (pred[i] - ys[i]).powi(2),
            })
            .sum();
        Ok(BeScore {
            score: sum / self.score_rows.len() as f64,
            class_index,
            train_loss,
            val_losses,
        })
    }

    /// Squared distance between `q` and a fit of its Bellman targets.
    pub fn sbv(&self, q: &QTable) -> Result<BeScore> {
        self.check(q)?;
        let ys: Vec<f64> = self.steps.iter().map(|st| self.target(q, st)).collect();
        let (pred, class_index, train_loss, val_losses) = self.fit(&ys)?;
        let sum: f64 = self
            .score_rows
            .iter()
            .map(|&i| {
                let st = &self.steps[i];
                (q.get(st.s, st.a) - pred[i]).powi(2)
            })
            .sum();
        Ok(BeScore {
            score: sum / self.score_rows.len() as f64,
            class_index,
            train_loss,
            val_losses,
        })
    }
}

/// Mean squared TD error over every transition.
pub fn tde_score(data: &Dataset, q: &QTable) -> Result<f64> {
    if data.is_empty() {
        return Err(OpsError::EmptyData("no episodes".into()));
    }
    data.check_layout(q.layout())?;
    let h_total = data.horizon();
    let mut sum = 0.0;
    let mut n = 0usize;
    for st in data.steps() {
        let next = if st.h + 1 < h_total { q.max_value(st.sp) } else { 0.0 };
        sum += (q.get(st.s, st.a) - st.r - next).powi(2);
        n += 1;
    }
    Ok(sum / n as f64)
}

pub fn minimax_be_score(data: &Dataset, q: &QTable, info: &ModelInfo, cfg: &IbesConfig, seed: u64) -> Result<BeScore> {
    BeScorer::split(data, info, cfg, seed)?.minimax(q, cfg.target)
}

pub fn sbv_score(data: &Dataset, q: &QTable, info: &ModelInfo, cfg: &IbesConfig, seed: u64) -> Result<BeScore> {
    BeScorer::split(data, info, cfg, seed)?.sbv(q)
}

fn be_report(name: String, scores: Vec<BeScore>, cfg: &IbesConfig, seed: u64) -> Result<SelectionReport> {
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let mut r = SelectionReport::ascending(name, values);
    r.details = scores.iter().map(BeScore::detail).collect();
    r.config = serde_json::to_value(cfg)?;
    r.seed = seed;
    Ok(r)
}

fn check_candidates(candidates: &[QTable]) -> Result<()> {
    if candidates.is_empty() {
        return Err(OpsError::EmptyData("no candidates".into()));
    }
    Ok(())
}

/// Identifiable BE selection: the candidate with the lowest minimax score.
pub fn ibes_select(
    candidates: &[QTable],
    data: &Dataset,
    info: &ModelInfo,
    cfg: &IbesConfig,
    seed: u64,
) -> Result<SelectionReport> {
    check_candidates(candidates)?;
    let scorer = BeScorer::split(data, info, cfg, seed)?;
    let scores = candidates
        .iter()
        .map(|q| scorer.minimax(q, cfg.target))
        .collect::<Result<Vec<_>>>()?;
    let name = match cfg.target {
        TargetMode::Be => "ibes(target=be)",
        TargetMode::Tq => "ibes(target=tq)",
    };
    be_report(name.into(), scores, cfg, seed)
}

pub fn sbv_select(
    candidates: &[QTable],
    data: &Dataset,
    info: &ModelInfo,
    cfg: &IbesConfig,
    seed: u64,
) -> Result<SelectionReport> {
    check_candidates(candidates)?;
    let scorer = BeScorer::split(data, info, cfg, seed)?;
    let scores = candidates.iter().map(|q| scorer.sbv(q)).collect::<Result<Vec<_>>>()?;
    be_report("sbv".into(), scores, cfg, seed)
}

pub fn tde_select(candidates: &[QTable], data: &Dataset) -> Result<SelectionReport> {
    check_candidates(candidates)?;
    let scores = candidates
        .iter()
        .map(|q| tde_score(data, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionReport::ascending("tde", scores))
}

/// FQE keeps its top `k1`, IBES re-ranks them and the first `k2` are chosen.
/// Candidates outside the FQE prefix follow in FQE order.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_select(
    candidates: &CandidateSet,
    data: &Dataset,
    info: &ModelInfo,
    k1: usize,
    k2: usize,
    fqe_cfg: &FqeConfig,
    ibes_cfg: &IbesConfig,
    seed: u64,
) -> Result<SelectionReport> {
    let n = candidates.len();
    if !(1 <= k2 && k2 <= k1 && k1 <= n) {
        return Err(OpsError::invalid(format!(
            "need 1 <= k2 <= k1 <= {n}, got k1={k1}, k2={k2}"
        )));
    }
    let fqe = Fqe {
        info: info.clone(),
        config: fqe_cfg.clone(),
    };
    let first = ops_by_estimate(&candidates.policies(), data, &fqe)?;
    let prefix = &first.ranking[..k1];
    let qs = candidates.q_tables()?;
    let subset: Vec<QTable> = prefix.iter().map(|&i| qs[i].clone()).collect();
    let second = ibes_select(&subset, data, info, ibes_cfg, seed)?;
    let mut ranking: Vec<usize> = second.ranking.iter().map(|&j| prefix[j]).collect();
    ranking.extend_from_slice(&first.ranking[k1..]);
    let mut scores = vec![f64::INFINITY; n];
    for (j, &i) in prefix.iter().enumerate() {
        scores[i] = second.scores[j];
    }
    let chosen = ranking[..k2].to_vec();
    Ok(SelectionReport {
        method: format!("fqe+ibes(k1={k1})"),
        order: Order::Ascending,
        scores,
        ranking,
        chosen,
        details: Vec::new(),
        config: serde_json::json!({ "k1": k1, "k2": k2, "fqe": fqe_cfg, "ibes": ibes_cfg }),
        seed,
    })
}

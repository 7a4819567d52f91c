//! Function classes, squared-loss regression and holdout class selection.

mod linear;
mod mlp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use mlp::{Mlp, MlpConfig};

use crate::error::{OpsError, Result};
use crate::mdp::StateId;

/// A state-action regression input with the state's observation, if any.
#[derive(Debug, Clone, Copy)]
pub struct SaPoint<'a> {
    pub s: StateId,
    pub a: usize,
    pub obs: Option<&'a [f64]>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Sa(SaPoint<'a>),
    Raw(&'a [f64]),
}

/// How a dense class turns an input into a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Features {
    /// `onehot(a) ⊗ [1, obs(s), h/H]`.
    Observation { num_actions: usize },
    /// The raw input vector with a trailing bias entry.
    Raw,
}

impl Features {
    fn encode(&self, input: &Input, out: &mut Vec<f64>) -> Result<()> {
        match (self, input) {
            (Features::Observation { num_actions }, Input::Sa(p)) => {
                let obs = p
                    .obs
                    .ok_or_else(|| OpsError::invalid("observation features need per-state observations"))?;
                if p.a >= *num_actions {
                    return Err(OpsError::invalid(format!("action {} out of range", p.a)));
                }
                let block = obs.len() + 2;
                let start = out.len();
                out.resize(start + num_actions * block, 0.0);
                let b = &mut out[start + p.a * block..start + (p.a + 1) * block];
                b[0] = 1.0;
                b[1..=obs.len()].copy_from_slice(obs);
                b[obs.len() + 1] = p.s.layer as f64 / p.horizon.max(1) as f64;
                Ok(())
            }
            (Features::Raw, Input::Raw(x)) => {
                out.extend_from_slice(x);
                out.push(1.0);
                Ok(())
            }
            _ => Err(OpsError::invalid("input kind does not match the feature map")),
        }
    }
}

/// An enumerable regression class `G_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionClass {
    /// Indicator features over cells `(h, ⌊s/bin⌋, a)`; `bin = 1` is fully tabular.
    Tabular { bin: usize },
    /// Least squares over a feature map, with optional ridge penalty.
    Linear { features: Features, ridge: f64 },
    /// One hidden ReLU layer trained by mini-batch gradient descent.
    Mlp { features: Features, config: MlpConfig },
}

impl FunctionClass {
    pub fn tabular() -> Self {
        FunctionClass::Tabular { bin: 1 }
    }

    pub fn aggregated(bin: usize) -> Self {
        FunctionClass::Tabular { bin }
    }

    pub fn label(&self) -> String {
        match self {
            FunctionClass::Tabular { bin: 1 } => "tabular".into(),
            FunctionClass::Tabular { bin } => format!("agg{bin}"),
            FunctionClass::Linear { .. } => "linear".into(),
            FunctionClass::Mlp { config, .. } => format!("mlp{}", config.width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FunctionClass::Tabular { bin } if *bin == 0 => Err(OpsError::invalid("bin must be >= 1")),
            FunctionClass::Linear { ridge, .. } if !(*ridge >= 0.0) => Err(OpsError::invalid("ridge must be >= 0")),
            FunctionClass::Mlp { config, .. } => config.validate(),
            _ => Ok(()),
        }
    }

    /// Encodes a batch of inputs once so several fits can share it.
    pub fn encode(&self, inputs: &[Input]) -> Result<Encoded> {
        self.validate()?;
        match self {
            FunctionClass::Tabular { bin } => {
                let mut raw = Vec::with_capacity(inputs.len());
                for input in inputs {
                    let Input::Sa(p) = input else {
                        return Err(OpsError::invalid("tabular classes need state-action inputs"));
                    };
                    raw.push(CellKey::new(p.s, p.a, *bin));
                }
                let mut rank: BTreeMap<CellKey, usize> = raw.iter().map(|k| (*k, 0)).collect();
                for (i, v) in rank.values_mut().enumerate() {
                    *v = i;
                }
                let keys = rank.keys().copied().collect();
                let group = raw.iter().map(|k| rank[k]).collect();
                Ok(Encoded::Cells { keys, group })
            }
            FunctionClass::Linear { features, .. } | FunctionClass::Mlp { features, .. } => {
                let mut x = Vec::new();
                let mut dim = 0;
                for (i, input) in inputs.iter().enumerate() {
                    let before = x.len();
                    features.encode(input, &mut x)?;
                    let d = x.len() - before;
                    if i == 0 {
                        dim = d;
                    } else if d != dim {
                        return Err(OpsError::ShapeMismatch("inputs have different feature sizes".into()));
                    }
                }
                Ok(Encoded::Dense { x, dim })
            }
        }
    }

    /// Squared-loss fit on the `rows` of `enc`; `y` is aligned with `enc`.
    pub fn fit(&self, enc: &Encoded, rows: &[usize], y: &[f64]) -> Result<FittedFunction> {
        if rows.is_empty() {
            return Err(OpsError::EmptyData("regression needs at least one sample".into()));
        }
        if y.len() != enc.len() {
            return Err(OpsError::ShapeMismatch("one target per encoded input required".into()));
        }
        if rows.iter().any(|&i| !y[i].is_finite()) {
            return Err(OpsError::Numeric("non-finite regression target".into()));
        }
        let model = match (self, enc) {
            (FunctionClass::Tabular { bin }, Encoded::Cells { keys, group }) => {
                let mut sum = vec![0.0; keys.len()];
                let mut count = vec![0usize; keys.len()];
                for &i in rows {
                    sum[group[i]] += y[i];
                    count[group[i]] += 1;
                }
                let mut k = Vec::new();
                let mut v = Vec::new();
                for (j, key) in keys.iter().enumerate() {
                    if count[j] > 0 {
                        k.push(*key);
                        v.push(sum[j] / count[j] as f64);
                    }
                }
                Model::Table {
                    bin: *bin,
                    keys: k,
                    values: v,
                }
            }
            (FunctionClass::Linear { features, ridge }, Encoded::Dense { x, dim }) => Model::Linear {
                features: features.clone(),
                weights: linear::least_squares(x, *dim, rows, y, *ridge)?,
            },
            (FunctionClass::Mlp { features, config }, Encoded::Dense { x, dim }) => {
                let (net, trace) = mlp::train(x, *dim, rows, y, config)?;
                return FittedFunction::finish(
                    Model::Mlp {
                        features: features.clone(),
                        net,
                    },
                    enc,
                    rows,
                    y,
                    trace,
                );
            }
            _ => return Err(OpsError::invalid("encoding does not belong to this class")),
        };
        FittedFunction::finish(model, enc, rows, y, Vec::new())
    }
}

/// Cell identity for indicator classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize)", into = "(usize, usize, usize)")]
pub struct CellKey {
    pub h: usize,
    pub cell: usize,
    pub a: usize,
}

impl CellKey {
    fn new(s: StateId, a: usize, bin: usize) -> Self {
        Self {
            h: s.layer,
            cell: s.index / bin,
            a,
        }
    }
}

impl From<(usize, usize, usize)> for CellKey {
    fn from((h, cell, a): (usize, usize, usize)) -> Self {
        Self { h, cell, a }
    }
}

impl From<CellKey> for (usize, usize, usize) {
    fn from(k: CellKey) -> Self {
        (k.h, k.cell, k.a)
    }
}

/// A batch of inputs in a class's internal representation.
#[derive(Debug, Clone)]
pub enum Encoded {
    Cells { keys: Vec<CellKey>, group: Vec<usize> },
    Dense { x: Vec<f64>, dim: usize },
}

impl Encoded {
    pub fn len(&self) -> usize {
        match self {
            Encoded::Cells { group, .. } => group.len(),
            Encoded::Dense { x, dim } => x.len().checked_div(*dim).unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Cell means; cells without training data predict 0.
    Table {
        bin: usize,
        keys: Vec<CellKey>,
        values: Vec<f64>,
    },
    Linear {
        features: Features,
        weights: Vec<f64>,
    },
    Mlp {
        features: Features,
        net: Mlp,
    },
}

/// A fitted regressor `ĝ` with its training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFunction {
    pub model: Model,
    pub train_loss: f64,
    pub loss_trace: Vec<f64>,
}

impl FittedFunction {
    fn finish(model: Model, enc: &Encoded, rows: &[usize], y: &[f64], loss_trace: Vec<f64>) -> Result<Self> {
        let mut f = FittedFunction {
            model,
            train_loss: 0.0,
            loss_trace,
        };
        let pred = f.predict_encoded(enc)?;
        f.train_loss = rows.iter().map(|&i| (pred[i] - y[i]).powi(2)).sum::<f64>() / rows.len() as f64;
        if !f.train_loss.is_finite() {
            return Err(OpsError::Numeric("regression produced non-finite predictions".into()));
        }
        Ok(f)
    }

    pub fn predict(&self, input: &Input) -> f64 {
        match &self.model {
            Model::Table { bin, keys, values } => match input {
                Input::Sa(p) => keys
                    .binary_search(&CellKey::new(p.s, p.a, *bin))
                    .map_or(0.0, |j| values[j]),
                Input::Raw(_) => f64::NAN,
            },
            Model::Linear { features, weights } => {
                let mut x = Vec::with_capacity(weights.len());
                match features.encode(input, &mut x) {
                    Ok(()) if x.len() == weights.len() => x.iter().zip(weights).map(|(a, b)| a * b).sum(),
                    _ => f64::NAN,
                }
            }
            Model::Mlp { features, net } => {
                let mut x = Vec::with_capacity(net.dim());
                match features.encode(input, &mut x) {
                    Ok(()) if x.len() == net.dim() => net.forward(&x),
                    _ => f64::NAN,
                }
            }
        }
    }

    /// Predictions for every row of an encoding produced by the same class.
    pub fn predict_encoded(&self, enc: &Encoded) -> Result<Vec<f64>> {
        match (&self.model, enc) {
            (Model::Table { keys, values, .. }, Encoded::Cells { keys: ek, group }) => {
                let per_group: Vec<f64> = ek
                    .iter()
                    .map(|k| keys.binary_search(k).map_or(0.0, |j| values[j]))
                    .collect();
                Ok(group.iter().map(|&g| per_group[g]).collect())
            }
            (Model::Linear { weights, .. }, Encoded::Dense { x, dim }) if *dim == weights.len() => Ok(x
                .chunks_exact(*dim)
                .map(|r| r.iter().zip(weights).map(|(a, b)| a * b).sum())
                .collect()),
            (Model::Mlp { net, .. }, Encoded::Dense { x, dim }) if *dim == net.dim() => {
                Ok(x.chunks_exact(*dim).map(|r| net.forward(r)).collect())
            }
            _ => Err(OpsError::invalid("encoding does not match the fitted model")),
        }
    }
}

/// Standalone fit on a list of `(input, target)` pairs.
pub fn fit_regression(class: &FunctionClass, inputs: &[Input], targets: &[f64]) -> Result<FittedFunction> {
    if inputs.len() != targets.len() {
        return Err(OpsError::ShapeMismatch("one target per input required".into()));
    }
    let enc = class.encode(inputs)?;
    let rows: Vec<usize> = (0..inputs.len()).collect();
    class.fit(&enc, &rows, targets)
}

/// Outcome of holdout class selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Holdout {
    pub best: usize,
    pub fitted: FittedFunction,
    pub val_losses: Vec<f64>,
}

/// Fits every class on `train`, returns the one with the lowest validation
/// loss. Ties go to the lowest class index.
pub fn holdout_validate(
    classes: &[FunctionClass],
    train: (&[Input], &[f64]),
    val: (&[Input], &[f64]),
) -> Result<Holdout> {
    if train.0.is_empty() || val.0.is_empty() {
        return Err(OpsError::EmptyData(
            "holdout needs non-empty train and validation splits".into(),
        ));
    }
    if train.0.len() != train.1.len() || val.0.len() != val.1.len() {
        return Err(OpsError::ShapeMismatch("one target per input required".into()));
    }
    let inputs: Vec<Input> = train.0.iter().chain(val.0).copied().collect();
    let y: Vec<f64> = train.1.iter().chain(val.1).copied().collect();
    let n_train = train.0.len();
    let train_rows: Vec<usize> = (0..n_train).collect();
    let val_rows: Vec<usize> = (n_train..inputs.len()).collect();
    let encoded = classes.iter().map(|c| c.encode(&inputs)).collect::<Result<Vec<_>>>()?;
    select_class(classes, &encoded, &train_rows, &val_rows, &y)
}

/// Holdout selection over pre-encoded inputs shared by several fits.
pub fn select_class(
    classes: &[FunctionClass],
    encoded: &[Encoded],
    train_rows: &[usize],
    val_rows: &[usize],
    y: &[f64],
) -> Result<Holdout> {
    if classes.is_empty() {
        return Err(OpsError::invalid("need at least one function class"));
    }
    if val_rows.is_empty() {
        return Err(OpsError::EmptyData("validation split is empty".into()));
    }
    let mut best: Option<(usize, FittedFunction)> = None;
    let mut val_losses = Vec::with_capacity(classes.len());
    for (m, (class, enc)) in classes.iter().zip(encoded).enumerate() {
        let f = class.fit(enc, train_rows, y)?;
        let pred = f.predict_encoded(enc)?;
        let loss = val_rows.iter().map(|&i| (pred[i] - y[i]).powi(2)).sum::<f64>() / val_rows.len() as f64;
        val_losses.push(loss);
        let better = match &best {
            None => true,
            Some((b, _)) => loss < val_losses[*b],
        };
        if better {
            best = Some((m, f));
        }
    }
    let (best, fitted) = best.expect("at least one class");
    Ok(Holdout {
        best,
        fitted,
        val_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(n: usize) -> Vec<SaPoint<'static>> {
        (0..n)
            .map(|i| SaPoint {
                s: StateId::new(i % 2, i % 5),
                a: i % 3,
                obs: None,
                horizon: 2,
            })
            .collect()
    }

    #[test]
    fn tabular_fit_is_cell_mean() {
        let p = pts(60);
        let inputs: Vec<Input> = p.iter().map(|x| Input::Sa(*x)).collect();
        let y: Vec<f64> = (0..60).map(|i| (i % 7) as f64).collect();
        let f = fit_regression(&FunctionClass::tabular(), &inputs, &y).unwrap();
        let mut sums: BTreeMap<(usize, usize, usize), (f64, f64)> = BTreeMap::new();
        for (x, t) in p.iter().zip(&y) {
            let e = sums.entry((x.s.layer, x.s.index, x.a)).or_default();
            e.0 += t;
            e.1 += 1.0;
        }
        for (x, _) in p.iter().zip(&y) {
            let (s, c) = sums[&(x.s.layer, x.s.index, x.a)];
            assert_eq!(f.predict(&Input::Sa(*x)), s / c);
        }
    }

    #[test]
    fn constant_cells_give_zero_loss() {
        let p = pts(30);
        let inputs: Vec<Input> = p.iter().map(|x| Input::Sa(*x)).collect();
        let y: Vec<f64> = p.iter().map(|x| (x.s.index * 10 + x.a) as f64).collect();
        let f = fit_regression(&FunctionClass::tabular(), &inputs, &y).unwrap();
        assert_eq!(f.train_loss, 0.0);
    }

    #[test]
    fn duplicate_classes_pick_lowest() {
        let p = pts(40);
        let inputs: Vec<Input> = p.iter().map(|x| Input::Sa(*x)).collect();
        let y: Vec<f64> = (0..40).map(|i| (i % 4) as f64).collect();
        let classes = vec![FunctionClass::tabular(), FunctionClass::tabular()];
        let h = holdout_validate(&classes, (&inputs[..30], &y[..30]), (&inputs[30..], &y[30..])).unwrap();
        assert_eq!(h.best, 0);
        assert!(holdout_validate(&classes, (&inputs[..0], &y[..0]), (&inputs[30..], &y[30..])).is_err());
    }
}

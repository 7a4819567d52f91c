//! Selection methods named by strings such as `ibes(target=tq)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::approx::{Features, FunctionClass, MlpConfig};
use crate::be::{ibes_select, sbv_select, tde_select, two_stage_select, IbesConfig, TargetMode};
use crate::candidates::CandidateSet;
use crate::error::{OpsError, Result};
use crate::mdp::{Dataset, QTable};
use crate::ope::{ops_by_estimate, Fqe, FqeConfig, IsKind, ModelInfo};
use crate::selection::SelectionReport;

pub const VALID_METHODS: &str = "is, wis, pdis, fqe, fqe(class=<class>,U=<auto|number>), tde, ibes, \
ibes(target=be|tq), sbv, fqe+ibes, fqe+ibes(k1=<n>,k2=<n>)";

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Importance(IsKind),
    Fqe { class: String, upper: Option<f64> },
    Tde,
    Ibes { target: TargetMode },
    Sbv,
    TwoStage { k1: usize, k2: usize },
}

fn unknown(name: &str) -> OpsError {
    OpsError::UnknownMethod {
        name: name.to_string(),
        valid: VALID_METHODS.to_string(),
    }
}

fn split_call(text: &str) -> Result<(&str, BTreeMap<String, String>)> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        return Ok((text, BTreeMap::new()));
    };
    let inner = text[open + 1..].strip_suffix(')').ok_or_else(|| unknown(text))?;
    let mut params = BTreeMap::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| unknown(text))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((text[..open].trim(), params))
}

impl FromStr for Method {
    type Err = OpsError;

    fn from_str(text: &str) -> Result<Self> {
        let (name, mut p) = split_call(text)?;
        let mut take = |key: &str| p.remove(key);
        let parse_usize = |v: Option<String>, default: usize| -> Result<usize> {
            v.map_or(Ok(default), |s| s.parse().map_err(|_| unknown(text)))
        };
        let method = match name {
            "is" => Method::Importance(IsKind::Is),
            "wis" => Method::Importance(IsKind::Wis),
            "pdis" => Method::Importance(IsKind::Pdis),
            "fqe" => {
                let class = take("class").unwrap_or_else(|| "tabular".into());
                let upper = match take("U").as_deref() {
                    None | Some("auto") => None,
                    Some(v) => Some(v.parse().map_err(|_| unknown(text))?),
                };
                Method::Fqe { class, upper }
            }
            "tde" => Method::Tde,
            "ibes" => Method::Ibes {
                target: match take("target").as_deref() {
                    None | Some("be") => TargetMode::Be,
                    Some("tq") => TargetMode::Tq,
                    Some(_) => return Err(unknown(text)),
                },
            },
            "sbv" => Method::Sbv,
            "fqe+ibes" => {
                let k1 = parse_usize(take("k1"), 10)?;
                let k2 = parse_usize(take("k2"), 1)?;
                Method::TwoStage { k1, k2 }
            }
            _ => return Err(unknown(text)),
        };
        if !p.is_empty() {
            return Err(unknown(text));
        }
        Ok(method)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Importance(k) => write!(f, "{}", crate::ope::ValueEstimator::name(k)),
            Method::Fqe { class, upper } => match (class.as_str(), upper) {
                ("tabular", None) => write!(f, "fqe"),
                (c, None) => write!(f, "fqe(class={c})"),
                (c, Some(u)) => write!(f, "fqe(class={c},U={u})"),
            },
            Method::Tde => write!(f, "tde"),
            Method::Ibes { target: TargetMode::Be } => write!(f, "ibes"),
            Method::Ibes { target: TargetMode::Tq } => write!(f, "ibes(target=tq)"),
            Method::Sbv => write!(f, "sbv"),
            Method::TwoStage { k1: 10, k2: 1 } => write!(f, "fqe+ibes"),
            Method::TwoStage { k1, k2 } => write!(f, "fqe+ibes(k1={k1},k2={k2})"),
        }
    }
}

/// Parses `tabular`, `aggN`, `linear` or `mlpW` into a function class.
pub fn parse_class(name: &str, num_actions: usize) -> Result<FunctionClass> {
    let features = Features::Observation { num_actions };
    let bad = || {
        OpsError::invalid(format!(
            "unknown function class `{name}`; use tabular, aggN, linear or mlpW"
        ))
    };
    match name {
        "tabular" => Ok(FunctionClass::tabular()),
        "linear" => Ok(FunctionClass::Linear { features, ridge: 1e-6 }),
        _ => {
            if let Some(bin) = name.strip_prefix("agg") {
                let bin: usize = bin.parse().map_err(|_| bad())?;
                let c = FunctionClass::aggregated(bin);
                c.validate()?;
                Ok(c)
            } else if let Some(w) = name.strip_prefix("mlp") {
                let width: usize = w.parse().map_err(|_| bad())?;
                Ok(FunctionClass::Mlp {
                    features,
                    config: MlpConfig::with_width(width),
                })
            } else {
                Err(bad())
            }
        }
    }
}

/// Everything a method may use: candidates, OPS data and model shapes.
pub struct MethodContext<'a> {
    pub candidates: &'a CandidateSet,
    pub q_tables: Vec<QTable>,
    pub data: &'a Dataset,
    pub info: &'a ModelInfo,
    pub ibes: IbesConfig,
    pub seed: u64,
}

impl<'a> MethodContext<'a> {
    pub fn new(
        candidates: &'a CandidateSet,
        data: &'a Dataset,
        info: &'a ModelInfo,
        ibes: IbesConfig,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            candidates,
            q_tables: candidates.q_tables()?,
            data,
            info,
            ibes,
            seed,
        })
    }
}

impl Method {
    pub fn run(&self, ctx: &MethodContext) -> Result<SelectionReport> {
        let mut report = match self {
            Method::Importance(kind) => ops_by_estimate(&ctx.candidates.policies(), ctx.data, kind)?,
            Method::Fqe { class, upper } => {
                let est = Fqe {
                    info: ctx.info.clone(),
                    config: FqeConfig {
                        class: parse_class(class, ctx.info.layout.num_actions())?,
                        upper: *upper,
                    },
                };
                ops_by_estimate(&ctx.candidates.policies(), ctx.data, &est)?
            }
            Method::Tde => tde_select(&ctx.q_tables, ctx.data)?,
            Method::Ibes { target } => {
                let cfg = IbesConfig {
                    target: *target,
                    ..ctx.ibes.clone()
                };
                ibes_select(&ctx.q_tables, ctx.data, ctx.info, &cfg, ctx.seed)?
            }
            Method::Sbv => sbv_select(&ctx.q_tables, ctx.data, ctx.info, &ctx.ibes, ctx.seed)?,
            Method::TwoStage { k1, k2 } => {
                let k1 = (*k1).min(ctx.candidates.len());
                two_stage_select(
                    ctx.candidates,
                    ctx.data,
                    ctx.info,
                    k1,
                    (*k2).min(k1),
                    &FqeConfig::default(),
                    &ctx.ibes,
                    ctx.seed,
                )?
            }
        };
        report.method = self.to_string();
        report.seed = ctx.seed;
        Ok(report)
    }
}

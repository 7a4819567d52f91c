//! Run configuration read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::be::IbesConfig;
use crate::candidates::{GridAxes, MixMode, Regime, TRAIN_EPISODES};
use crate::env::EnvSpec;
use crate::error::{OpsError, Result};
use crate::method::{parse_class, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub regime: Regime,
    pub mix: MixMode,
    pub train_episodes: usize,
    /// Master seed; when absent the caller supplies one.
    pub seed: Option<u64>,
    /// Seed for randomized environment construction.
    pub env_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            regime: Regime::WellCovered,
            mix: MixMode::Episode,
            train_episodes: TRAIN_EPISODES,
            seed: None,
            env_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidatesConfig {
    pub grid: GridAxes,
    /// Load a candidate file instead of training the grid.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodsConfig {
    pub list: Vec<String>,
    /// Auxiliary classes for IBES and SBV, chosen by holdout.
    pub aux_classes: Vec<String>,
    pub split_ratio: f64,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        Self {
            list: ["tde", "sbv", "ibes", "fqe", "is", "fqe+ibes"]
                .map(String::from)
                .to_vec(),
            aux_classes: ["tabular", "agg2", "agg4"].map(String::from).to_vec(),
            split_ratio: 0.8,
        }
    }
}

impl MethodsConfig {
    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.list.is_empty() {
            return Err(OpsError::Config("no methods listed".into()));
        }
        self.list.iter().map(|m| m.parse()).collect()
    }

    pub fn ibes(&self, num_actions: usize) -> Result<IbesConfig> {
        let classes = self
            .aux_classes
            .iter()
            .map(|c| parse_class(c, num_actions))
            .collect::<Result<Vec<_>>>()?;
        if classes.is_empty() {
            return Err(OpsError::Config("aux_classes must not be empty".into()));
        }
        Ok(IbesConfig {
            classes,
            split_ratio: self.split_ratio,
            ..IbesConfig::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// OPS dataset sizes, in episodes.
    pub n: Vec<usize>,
    pub seeds: usize,
    pub k: Vec<usize>,
    pub random_repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: vec![100, 316, 1000, 3162, 10000],
            seeds: 10,
            k: vec![1],
            random_repeats: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Record per-method wall time; zeros keep reruns byte-identical.
    pub walltime: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            walltime: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub candidates: CandidatesConfig,
    #[serde(default)]
    pub methods: MethodsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Default gridworld sweep over the 90-point candidate grid.
    pub fn default_gridworld() -> Self {
        Self {
            env: EnvSpec::default_gridworld(),
            data: DataConfig::default(),
            candidates: CandidatesConfig::default(),
            methods: MethodsConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| OpsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OpsError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| OpsError::Config(e.to_string()))
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.methods.methods()?;
        for c in &self.methods.aux_classes {
            parse_class(c, 2)?;
        }
        if !(self.methods.split_ratio > 0.0 && self.methods.split_ratio < 1.0) {
            return Err(OpsError::Config("split_ratio must lie in (0, 1)".into()));
        }
        if self.sweep.n.is_empty() || self.sweep.n.contains(&0) {
            return Err(OpsError::Config("sweep.n must list positive episode counts".into()));
        }
        if self.sweep.seeds == 0 || self.sweep.random_repeats == 0 {
            return Err(OpsError::Config("seeds and random_repeats must be positive".into()));
        }
        if self.sweep.k.is_empty() || self.sweep.k.contains(&0) {
            return Err(OpsError::Config("sweep.k must list positive values".into()));
        }
        if self.candidates.path.is_none() && self.candidates.grid.is_empty() {
            return Err(OpsError::Config("candidate grid has an empty axis".into()));
        }
        if self.data.train_episodes == 0 {
            return Err(OpsError::Config("train_episodes must be positive".into()));
        }
        Ok(())
    }

    /// Stable 64-bit identifier of the configuration contents and seed.
    pub fn id(&self, seed: u64) -> Result<String> {
        let text = format!("{}#{seed}", serde_json::to_string(self)?);
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Ok(format!("{h:016x}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let text = r#"
            [env]
            kind = "tree_hard"
            num_actions = 2
            horizon = 3
            eps = 0.25

            [sweep]
            n = [10]
            seeds = 1
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.methods.list.len(), 6);
        assert_eq!(cfg.sweep.k, vec![1]);
        assert_eq!(cfg.candidates.grid.len(), 90);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.id(1).unwrap(), cfg.id(1).unwrap());
        assert_ne!(cfg.id(1).unwrap(), cfg.id(2).unwrap());
    }

    #[test]
    fn unknown_keys_and_methods_rejected() {
        let base = "[env]\nkind = \"tree_hard\"\nnum_actions = 2\nhorizon = 3\neps = 0.25\n";
        assert!(RunConfig::from_toml(&format!("{base}[sweep]\nbogus = 1\n")).is_err());
        let err = RunConfig::from_toml(&format!("{base}[methods]\nlist = [\"magic\"]\n")).unwrap_err();
        assert!(matches!(err, OpsError::UnknownMethod { .. }));
    }
}

//! Seeded regret sweeps with an append-only, resumable results CSV.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidates::{build_candidate_grid, make_ops_dataset, training_dataset, CandidateSet};
use crate::config::RunConfig;
use crate::error::{OpsError, Result};
use crate::mdp::Mdp;
use crate::method::{Method, MethodContext};
use crate::metrics::{random_baseline_regret, topk_regret, TrueValues};
use crate::ope::ModelInfo;
use crate::rng::derive_seed;

pub const RESULTS_FILE: &str = "results.csv";
pub const RANDOM_METHOD: &str = "random";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: String,
    pub env: String,
    pub regime: String,
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub regret: f64,
    pub chosen: Option<usize>,
    pub walltime_ms: u64,
}

impl SweepRow {
    fn key(&self) -> (String, usize, u64, usize) {
        (self.method.clone(), self.n, self.seed, self.k)
    }
}

/// The fixed part of a sweep: environment, candidates and their true values.
pub struct Instance {
    pub mdp: Mdp,
    pub info: ModelInfo,
    pub candidates: CandidateSet,
    pub values: TrueValues,
}

/// Builds the environment and trains (or loads) the candidate set once.
pub fn prepare_instance(cfg: &RunConfig, seed: u64) -> Result<Instance> {
    let mdp = cfg.env.build(cfg.data.env_seed)?.into_mdp()?;
    let info = ModelInfo::of(&mdp);
    let candidates = match &cfg.candidates.path {
        Some(p) => CandidateSet::read_json(p)?,
        None => {
            let train = training_dataset(&mdp, cfg.data.train_episodes, derive_seed(seed, &[1]))?;
            build_candidate_grid(
                &train,
                mdp.layout(),
                mdp.v_max(),
                &cfg.candidates.grid,
                derive_seed(seed, &[2]),
            )?
        }
    };
    let policies = candidates.policies();
    if policies[0].layout() != mdp.layout() {
        return Err(OpsError::ShapeMismatch(
            "candidate layout differs from the environment".into(),
        ));
    }
    let values = TrueValues::exact(&mdp, &policies)?;
    Ok(Instance {
        mdp,
        info,
        candidates,
        values,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub csv: PathBuf,
    pub rows: Vec<SweepRow>,
    pub computed_cells: usize,
}

/// Drops a trailing partial line left by an interrupted write.
fn trim_partial_line(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    std::fs::write(path, &bytes[..keep])?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(OpsError::from)).collect()
}

/// Runs every `(n, seed)` cell missing from `<out_dir>/results.csv`.
/// Candidates are fixed once; each cell draws fresh selection data.
pub fn run_sweep(cfg: &RunConfig, seed: u64, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    let methods = cfg.methods.methods()?;
    let config_id = cfg.id(seed)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let csv_path = opts.out_dir.join(RESULTS_FILE);

    let mut done: BTreeSet<(String, usize, u64, usize)> = BTreeSet::new();
    if csv_path.exists() {
        trim_partial_line(&csv_path)?;
        for row in read_rows(&csv_path)? {
            if row.config_id != config_id {
                return Err(OpsError::Config(format!(
                    "{} holds results of config {}, not {config_id}",
                    csv_path.display(),
                    row.config_id
                )));
            }
            done.insert(row.key());
        }
    }

    let mut names: Vec<String> = methods.iter().map(Method::to_string).collect();
    names.push(RANDOM_METHOD.into());
    let cells: Vec<(usize, u64)> = cfg
        .sweep
        .n
        .iter()
        .flat_map(|&n| (0..cfg.sweep.seeds as u64).map(move |s| (n, s)))
        .filter(|&(n, s)| {
            names
                .iter()
                .any(|m| cfg.sweep.k.iter().any(|&k| !done.contains(&(m.clone(), n, s, k))))
        })
        .collect();

    let inst = if cells.is_empty() {
        None
    } else {
        Some(prepare_instance(cfg, seed)?)
    };
    for &k in &cfg.sweep.k {
        if let Some(inst) = &inst {
            if k > inst.candidates.len() {
                return Err(OpsError::Config(format!(
                    "k = {k} exceeds {} candidates",
                    inst.candidates.len()
                )));
            }
        }
    }

    let header_needed = !csv_path.exists() || std::fs::metadata(&csv_path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(&csv_path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(header_needed).from_writer(file);

    let jobs = opts.jobs.max(1);
    if let Some(inst) = &inst {
        let ctx = CellContext {
            cfg,
            inst,
            methods: &methods,
            seed,
            config_id: &config_id,
        };
        for chunk in cells.chunks(jobs) {
            let results: Vec<Result<Vec<SweepRow>>> = if jobs == 1 {
                chunk.iter().map(|&(n, s)| ctx.run_cell(n, s)).collect()
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|&(n, s)| {
                            let ctx = &ctx;
                            scope.spawn(move || ctx.run_cell(n, s))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| {
                            h.join()
                                .unwrap_or_else(|_| Err(OpsError::Numeric("worker panicked".into())))
                        })
                        .collect()
                })
            };
            for rows in results {
                for row in rows? {
                    if done.insert(row.key()) {
                        writer.serialize(&row)?;
                    }
                }
                writer.flush()?;
            }
        }
    }
    writer.flush()?;
    drop(writer);
    Ok(SweepOutcome {
        rows: read_rows(&csv_path)?,
        csv: csv_path,
        computed_cells: cells.len(),
    })
}

struct CellContext<'a> {
    cfg: &'a RunConfig,
    inst: &'a Instance,
    methods: &'a [Method],
    seed: u64,
    config_id: &'a str,
}

impl CellContext<'_> {
    fn run_cell(&self, n: usize, s: u64) -> Result<Vec<SweepRow>> {
        let cfg = self.cfg;
        let inst = self.inst;
        let data = make_ops_dataset(
            &inst.mdp,
            &inst.candidates.policies(),
            cfg.data.regime,
            cfg.data.mix,
            n,
            derive_seed(self.seed, &[3, n as u64, s]),
        )?;
        let ibes = cfg.methods.ibes(inst.info.layout.num_actions())?;
        let ctx = MethodContext::new(
            &inst.candidates,
            &data,
            &inst.info,
            ibes,
            derive_seed(self.seed, &[4, n as u64, s]),
        )?;
        let row = |method: String, k: usize, regret: f64, chosen: Option<usize>, ms: u64| SweepRow {
            config_id: self.config_id.to_string(),
            env: cfg.env.name().into(),
            regime: cfg.data.regime.name().into(),
            method,
            n,
            seed: s,
            k,
            regret,
            chosen,
            walltime_ms: if cfg.output.walltime { ms } else { 0 },
        };
        let mut rows = Vec::new();
        for m in self.methods {
            let start = Instant::now();
            let report = m.run(&ctx)?;
            let ms = start.elapsed().as_millis() as u64;
            for &k in &cfg.sweep.k {
                let regret = topk_regret(&inst.values, &report.ranking, k)?;
                if !regret.is_finite() {
                    return Err(OpsError::Numeric(format!("{m} produced a non-finite regret")));
                }
                rows.push(row(m.to_string(), k, regret, Some(report.best()), ms));
            }
        }
        for &k in &cfg.sweep.k {
            let start = Instant::now();
            let b = random_baseline_regret(
                &inst.values,
                k,
                cfg.sweep.random_repeats,
                derive_seed(self.seed, &[5, k as u64, n as u64, s]),
            )?;
            rows.push(row(
                RANDOM_METHOD.into(),
                k,
                b.mean,
                None,
                start.elapsed().as_millis() as u64,
            ));
        }
        Ok(rows)
    }
}

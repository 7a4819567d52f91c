use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use opslab::candidates::{
    build_candidate_grid, epsilon_greedy, make_ops_dataset, training_dataset, CandidateSet, GridAxes, MixMode, Regime,
    OPTIMAL_EPS, TRAIN_EPISODES,
};
use opslab::config::RunConfig;
use opslab::env::{BuiltEnv, EnvSpec, RewardLayout};
use opslab::mdp::{exact_policy_value, greedy, optimal_q, sample_trajectories, Dataset, Mdp, Policy};
use opslab::method::{parse_class, Method, MethodContext};
use opslab::metrics::{topk_regret, TrueValues};
use opslab::ope::{IsKind, ModelInfo};
use opslab::reduction::{call_budget, ope_via_ops, ExactSelector, OpsOracle, SampledSelector};
use opslab::report::write_report;
use opslab::rng::derive_seed;
use opslab::sweep::{run_sweep, SweepOptions};
use opslab::OpsError;

#[derive(Parser)]
#[command(
    name = "opslab",
    version,
    about = "Offline policy selection experiments on tabular MDPs"
)]
struct Cli {
    /// Master seed; falls back to the config file, then OPSLAB_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Gridworld,
    TreeHard,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataRegime {
    WellCovered,
    WellCoveredPlusOptimal,
    /// eps-greedy optimal policy, as used for candidate training.
    Training,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Exact,
    Is,
}

#[derive(Subcommand)]
enum Command {
    /// Build an environment and write its model as JSON.
    GenEnv {
        #[arg(long, conflicts_with = "kind")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<EnvKind>,
        #[arg(long = "A", default_value_t = 2)]
        actions: usize,
        #[arg(long = "H", default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        height: usize,
        #[arg(long, default_value_t = 0.2)]
        slip: f64,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Sample a dataset of episodes as JSON lines.
    GenData {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, value_enum, default_value = "well-covered")]
        regime: DataRegime,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, default_value = "episode")]
        mix: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train candidate q-functions over a hyperparameter grid.
    TrainCandidates {
        #[arg(long)]
        mdp: PathBuf,
        /// Training episodes; sampled from an eps-greedy optimal policy when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `default` for the 90-point grid, or `single`.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 512)]
        class_size: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one selection method and write its report.
    Select {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "tabular,agg2,agg4")]
        aux_classes: Vec<String>,
        #[arg(long, default_value_t = 0.8)]
        split_ratio: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a regret sweep described by a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Estimate a policy value by bisection over reward-probe selections.
    ReductionDemo {
        #[arg(long)]
        mdp: PathBuf,
        /// Target policy; the optimal policy when absent.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_enum, default_value = "exact")]
        oracle: OracleKind,
        /// Episodes per selection call for sampled oracles.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a sweep results file and draw regret curves.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<OpsError>())
                .map_or(3, OpsError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn read_mdp(path: &Path) -> Result<Mdp> {
    Mdp::read_json(path).with_context(|| format!("reading model {}", path.display()))
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var("OPSLAB_SEED") {
        Ok(v) => Ok(v
            .trim()
            .parse()
            .map_err(|_| OpsError::Config(format!("OPSLAB_SEED must be an unsigned integer, got `{v}`")))?),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> Result<()> {
    let flag = cli.seed;
    let seed = resolve_seed(flag, None)?;
    match cli.command {
        Command::GenEnv {
            config,
            kind,
            actions,
            horizon,
            eps,
            width,
            height,
            slip,
            states,
            out,
        } => {
            let (spec, env_seed) = match (config, kind) {
                (Some(p), _) => {
                    let cfg = RunConfig::read(&p)?;
                    (cfg.env, cfg.data.env_seed)
                }
                (None, Some(EnvKind::TreeHard)) => (
                    EnvSpec::TreeHard {
                        num_actions: actions,
                        horizon,
                        eps,
                    },
                    seed,
                ),
                (None, Some(EnvKind::Gridworld)) => (
                    EnvSpec::Gridworld {
                        width,
                        height,
                        horizon,
                        slip,
                        start: (0, 0),
                        rewards: RewardLayout::Goal {
                            x: width - 1,
                            y: height - 1,
                            value: 1.0,
                        },
                        bernoulli: false,
                    },
                    seed,
                ),
                (None, Some(EnvKind::Random)) => {
                    let mut layer_sizes = vec![states; horizon];
                    layer_sizes[0] = 1;
                    (
                        EnvSpec::Random {
                            layer_sizes,
                            num_actions: actions,
                            branching: states,
                            stochastic_rewards: true,
                        },
                        seed,
                    )
                }
                (None, None) => return Err(OpsError::Config("pass --kind or --config".into()).into()),
            };
            std::fs::create_dir_all(&out)?;
            match spec.build(env_seed)? {
                BuiltEnv::TreePair(t) => {
                    t.mdp1.write_json(out.join("mdp1.json"))?;
                    t.mdp2.write_json(out.join("mdp2.json"))?;
                    println!(
                        "wrote {0}/mdp1.json and {0}/mdp2.json (path {1:?})",
                        out.display(),
                        t.path
                    );
                }
                BuiltEnv::Sim(_) => bail!(OpsError::Config(
                    "simulation-only environments have no model file".into()
                )),
                built => {
                    let m = built.into_mdp()?;
                    m.write_json(out.join("mdp.json"))?;
                    println!(
                        "wrote {}/mdp.json: {} states, {} actions, horizon {}, optimal value {:.6}",
                        out.display(),
                        m.layout().num_states(),
                        m.num_actions(),
                        m.horizon(),
                        exact_policy_value(&m, &greedy(&optimal_q(&m)))?
                    );
                }
            }
        }
        Command::GenData {
            mdp,
            regime,
            candidates,
            mix,
            n,
            out,
        } => {
            let m = read_mdp(&mdp)?;
            let mix = match mix.as_str() {
                "episode" => MixMode::Episode,
                "state" => MixMode::State,
                other => bail!(OpsError::Config(format!(
                    "unknown mix mode `{other}`; use episode or state"
                ))),
            };
            let data_seed = derive_seed(seed, &[3]);
            let data = match regime {
                DataRegime::Training => {
                    let b = epsilon_greedy(&greedy(&optimal_q(&m)), OPTIMAL_EPS)?;
                    sample_trajectories(&m, &b, n, data_seed)?
                }
                DataRegime::Uniform => sample_trajectories(&m, &Policy::uniform(m.layout()), n, data_seed)?,
                DataRegime::WellCovered | DataRegime::WellCoveredPlusOptimal => {
                    let path = candidates.ok_or_else(|| OpsError::Config("this regime needs --candidates".into()))?;
                    let set = CandidateSet::read_json(&path)?;
                    let r = match regime {
                        DataRegime::WellCovered => Regime::WellCovered,
                        _ => Regime::WellCoveredPlusOptimal,
                    };
                    make_ops_dataset(&m, &set.policies(), r, mix, n, data_seed)?
                }
            };
            data.write_jsonl(&out)?;
            println!(
                "wrote {} episodes to {} (mean return {:.4})",
                data.len(),
                out.display(),
                data.mean_return()
            );
        }
        Command::TrainCandidates {
            mdp,
            data,
            grid,
            lr,
            class_size,
            alpha,
            iterations,
            out,
        } => {
            let m = read_mdp(&mdp)?;
            let train = match data {
                Some(p) => Dataset::read_jsonl(&p)?,
                None => training_dataset(&m, TRAIN_EPISODES, derive_seed(seed, &[1]))?,
            };
            let axes = match grid.as_str() {
                "default" => GridAxes::default(),
                "single" => GridAxes::single(lr, class_size, alpha, iterations),
                other => bail!(OpsError::Config(format!(
                    "unknown grid `{other}`; use default or single"
                ))),
            };
            let set = build_candidate_grid(&train, m.layout(), m.v_max(), &axes, derive_seed(seed, &[2]))?;
            set.write_json(&out)?;
            let diverged = set.entries.iter().filter(|e| e.diverged).count();
            println!(
                "wrote {} candidates to {} ({diverged} flagged divergent)",
                set.len(),
                out.display()
            );
        }
        Command::Select {
            mdp,
            candidates,
            data,
            method,
            k,
            aux_classes,
            split_ratio,
            out,
        } => {
            let method: Method = method.parse()?;
            let m = read_mdp(&mdp)?;
            let set = CandidateSet::read_json(&candidates)?;
            let data = Dataset::read_jsonl(&data)?;
            let info = ModelInfo::of(&m);
            let classes = aux_classes
                .iter()
                .map(|c| parse_class(c, m.num_actions()))
                .collect::<opslab::Result<Vec<_>>>()?;
            let ibes = opslab::be::IbesConfig {
                classes,
                split_ratio,
                ..Default::default()
            };
            let ctx = MethodContext::new(&set, &data, &info, ibes, seed)?;
            let report = method.run(&ctx)?.with_top(k.min(set.len()));
            let values = TrueValues::exact(&m, &set.policies())?;
            let regret = topk_regret(&values, &report.ranking, k.min(set.len()))?;
            println!(
                "{}: chosen {:?}, top-{k} regret {regret:.4}",
                report.method, report.chosen
            );
            if let Some(p) = out {
                report.write_json(&p)?;
            }
        }
        Command::Sweep { config, out, jobs } => {
            let cfg = RunConfig::read(&config)?;
            let seed = resolve_seed(flag, cfg.data.seed)?;
            let out_dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let outcome = run_sweep(&cfg, seed, &SweepOptions { out_dir, jobs })?;
            println!(
                "{}: {} rows ({} cells computed)",
                outcome.csv.display(),
                outcome.rows.len(),
                outcome.computed_cells
            );
        }
        Command::ReductionDemo {
            mdp,
            policy,
            eps,
            oracle,
            n,
            out,
        } => {
            let m = read_mdp(&mdp)?;
            let target = match policy {
                Some(p) => Policy::from_json(&std::fs::read_to_string(&p)?)?,
                None => greedy(&optimal_q(&m)),
            };
            let result = match oracle {
                OracleKind::Exact => ope_via_ops(&mut OpsOracle::new(ExactSelector), &m, &target, eps)?,
                OracleKind::Is => {
                    let sel = SampledSelector::new(IsKind::Is, |p: &Mdp| Policy::uniform(p.layout()), n, seed);
                    ope_via_ops(&mut OpsOracle::new(sel), &m, &target, eps)?
                }
            };
            let truth = exact_policy_value(&m, &target)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["call", "r", "chosen", "lower", "upper"])?;
            for row in &result.trace {
                w.write_record([
                    row.call.to_string(),
                    row.r.to_string(),
                    row.chosen.to_string(),
                    row.lower.to_string(),
                    row.upper.to_string(),
                ])?;
            }
            w.flush()?;
            println!(
                "estimate {:.6}, true value {truth:.6}, error {:.6}, calls {} (budget {})",
                result.estimate,
                (result.estimate - truth).abs(),
                result.calls,
                call_budget(m.v_max(), eps)
            );
        }
        Command::Report { csv, out } => {
            for p in write_report(&csv, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

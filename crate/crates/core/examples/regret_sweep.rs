//! Regret-versus-sample-size sweep on the default gridworld with the
//! 90-point candidate grid, followed by an SVG report.
//!
//! `cargo run --release --example regret_sweep -- [out_dir] [seeds]`

use anyhow::Result;
use opslab::config::RunConfig;
use opslab::report::{final_mean, summarize, write_report};
use opslab::sweep::{run_sweep, SweepOptions};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "sweep_out".into());
    let seeds: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let mut cfg = RunConfig::default_gridworld();
    cfg.sweep.seeds = seeds;
    cfg.output.walltime = false;
    let start = std::time::Instant::now();
    let outcome = run_sweep(
        &cfg,
        0,
        &SweepOptions {
            out_dir: out.clone().into(),
            jobs: 1,
        },
    )?;
    println!("{} rows in {:.1}s", outcome.rows.len(), start.elapsed().as_secs_f64());
    let summary = summarize(&outcome.rows);
    for m in cfg.methods.list.iter().map(String::as_str).chain(["random"]) {
        let m = m
            .parse::<opslab::method::Method>()
            .map(|x| x.to_string())
            .unwrap_or(m.to_string());
        if let Some(v) = final_mean(&summary, &m, 1) {
            println!("{m:>10}: mean top-1 regret at largest n = {v:.3}");
        }
    }
    for p in write_report(&outcome.csv, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

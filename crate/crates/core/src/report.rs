//! Summaries and SVG regret curves from a sweep results file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::metrics::MeanStderr;
use crate::sweep::{read_rows, SweepRow, RANDOM_METHOD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub regime: String,
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Mean regret with its standard error per `(env, regime, method, n, k)`,
/// keeping first-seen method order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(String, String, usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let m = match order.iter().position(|x| *x == r.method) {
            Some(i) => i,
            None => {
                order.push(r.method.clone());
                order.len() - 1
            }
        };
        groups
            .entry((r.env.clone(), r.regime.clone(), m, r.n, r.k))
            .or_default()
            .push(r.regret);
    }
    groups
        .into_iter()
        .map(|((env, regime, m, n, k), xs)| {
            let s = MeanStderr::of(&xs);
            SummaryRow {
                env,
                regime,
                method: order[m].clone(),
                n,
                k,
                mean: s.mean,
                stderr: s.stderr,
                count: s.count,
            }
        })
        .collect()
}

/// Mean regret of `method` at the largest `n` present for `k`.
pub fn final_mean(summary: &[SummaryRow], method: &str, k: usize) -> Option<f64> {
    summary
        .iter()
        .filter(|r| r.method == method && r.k == k)
        .max_by_key(|r| r.n)
        .map(|r| r.mean)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Regret against `log10 n`, one line per method with a one-standard-error
/// band; the random baseline is dashed.
pub fn render_svg(summary: &[SummaryRow], title: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let ns: Vec<f64> = summary.iter().map(|r| (r.n as f64).log10()).collect();
    let xmin = ns.iter().copied().fold(f64::INFINITY, f64::min);
    let mut xmax = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    let ymax = summary.iter().map(|r| r.mean + r.stderr).fold(0.0, f64::max).max(1e-9) * 1.1;
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| top + ph - (y / ymax).clamp(0.0, 1.0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let mut e = xmin.floor() as i32;
    while f64::from(e) <= xmax + 1e-9 {
        let x = f64::from(e);
        if x >= xmin - 1e-9 {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">1e{e}</text>"#,
                sx(x),
                top + ph + 18.0
            );
        }
        e += 1;
    }
    for i in 0..=4 {
        let y = ymax * f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">episodes (log scale)</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">top-k regret</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    let mut methods: Vec<&str> = Vec::new();
    for r in summary {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for (i, m) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&SummaryRow> = summary.iter().filter(|r| r.method == *m).collect();
        pts.sort_by_key(|r| r.n);
        let upper: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", sx((r.n as f64).log10()), sy(r.mean + r.stderr)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|r| {
                format!(
                    "{:.1},{:.1}",
                    sx((r.n as f64).log10()),
                    sy((r.mean - r.stderr).max(0.0))
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", sx((r.n as f64).log10()), sy(r.mean)))
            .collect();
        let dash = if *m == RANDOM_METHOD {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            line.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub groups: Vec<SummaryRow>,
}

/// Writes `summary.json` and one `regret_<env>_<regime>_k<k>.svg` per
/// environment, regime and `k`. Returns the written paths.
pub fn write_report(csv: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let rows = read_rows(csv)?;
    if rows.is_empty() {
        return Err(OpsError::EmptyData("results file has no rows".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let summary = summarize(&rows);
    let mut written = Vec::new();
    let path = out.join("summary.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&ReportSummary {
            groups: summary.clone(),
        })? + "\n",
    )?;
    written.push(path);
    let mut panels: BTreeMap<(String, String, usize), Vec<SummaryRow>> = BTreeMap::new();
    for r in &summary {
        panels
            .entry((r.env.clone(), r.regime.clone(), r.k))
            .or_default()
            .push(r.clone());
    }
    for ((env, regime, k), rows) in panels {
        let path = out.join(format!("regret_{env}_{regime}_k{k}.svg"));
        std::fs::write(&path, render_svg(&rows, &format!("{env} ({regime}), top-{k} regret")))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, n: usize, seed: u64, regret: f64) -> SweepRow {
        SweepRow {
            config_id: "x".into(),
            env: "gridworld".into(),
            regime: "well_covered".into(),
            method: method.into(),
            n,
            seed,
            k: 1,
            regret,
            chosen: Some(0),
            walltime_ms: 0,
        }
    }

    #[test]
    fn summary_groups_and_svg_renders() {
        let rows = vec![
            row("ibes", 10, 0, 0.2),
            row("ibes", 10, 1, 0.4),
            row("ibes", 100, 0, 0.0),
            row(RANDOM_METHOD, 10, 0, 0.5),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert!((s[0].mean - 0.3).abs() < 1e-12);
        assert_eq!(final_mean(&s, "ibes", 1), Some(0.0));
        let svg = render_svg(&s, "t");
        assert!(svg.starts_with("<svg") && svg.contains("stroke-dasharray"));
    }
}

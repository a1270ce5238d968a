//! Report directory layout.
//!
//! ```text
//! metrics.json   full report: per-run rows plus mean/std summary
//! metrics.csv    the same table flattened
//! records.jsonl  one line per scored video
//! report.md      human-readable tables
//! roc.svg, pr.svg, categories.svg   only when plots are requested
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::inference::EvalRecord;
use super::protocol::{ProtocolOutput, Report, Stat};
use crate::data::Label;
use crate::error::{Error, Result};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const REPORT_MD: &str = "report.md";
pub const PLOT_FILES: [&str; 3] = ["roc.svg", "pr.svg", "categories.svg"];

#[derive(Serialize)]
struct RecordLine<'a> {
    seed: u64,
    subset: &'a str,
    #[serde(flatten)]
    record: &'a EvalRecord,
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes every report file into `dir` (which must exist) and returns the
/// paths written.
pub fn write_report(dir: &Path, out: &ProtocolOutput, plots: bool) -> Result<Vec<PathBuf>> {
    let r = &out.report;
    let mut json = serde_json::to_string_pretty(r).map_err(|e| Error::Validation(e.to_string()))?;
    json.push('\n');
    let mut written = vec![write(dir.join(METRICS_JSON), &json)?];
    written.push(write(dir.join(METRICS_CSV), &to_csv(r))?);
    let mut lines = String::new();
    for (seed, subset, recs) in &out.records {
        for rec in recs {
            let line = RecordLine { seed: *seed, subset, record: rec };
            lines.push_str(&serde_json::to_string(&line).map_err(|e| Error::Validation(e.to_string()))?);
            lines.push('\n');
        }
    }
    written.push(write(dir.join(RECORDS_JSONL), &lines)?);
    written.push(write(dir.join(REPORT_MD), &render_markdown(r))?);
    if plots {
        let svgs = render_plots(out);
        for (name, svg) in PLOT_FILES.iter().zip(svgs) {
            written.push(write(dir.join(name), &svg)?);
        }
    }
    Ok(written)
}

/// Loads `metrics.json` from a report directory.
pub fn load_report(dir: &Path) -> Result<Report> {
    let path = dir.join(METRICS_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.6}"))
}

fn to_csv(r: &Report) -> String {
    let mut s = String::from("row,seed,subset,acc,ap,auc,n,positives\n");
    for run in &r.runs {
        let m = &run.metrics;
        let _ = writeln!(s, "run,{},{},{:.6},{},{},{},{}", run.seed, run.subset, m.acc, opt(m.ap), opt(m.auc), m.n, m.positives);
    }
    for row in &r.summary {
        let _ = writeln!(s, "mean,,{},{},{},{},,", row.subset, opt(row.acc.mean), opt(row.ap.mean), opt(row.auc.mean));
        let _ = writeln!(s, "std,,{},{},{},{},,", row.subset, opt(row.acc.std), opt(row.ap.std), opt(row.auc.std));
    }
    s
}

fn pct(s: &Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * d),
        _ => "undefined".into(),
    }
}

/// Markdown summary of a report.
pub fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation: {}\n", r.protocol);
    let _ = writeln!(s, "| field | value |\n|---|---|");
    let _ = writeln!(s, "| mode | {} |", r.mode);
    let _ = writeln!(s, "| tag | `{}` |", r.tag);
    let _ = writeln!(s, "| config hash | `{}` |", r.config_hash);
    let _ = writeln!(s, "| checkpoint | {:?} `{}` |", r.checkpoint_stage, r.checkpoint_sha256);
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "| seeds | {} |\n", seeds.join(", "));
    let _ = writeln!(s, "## Runs\n\n| seed | subset | ACC | AP | AUC | n | fake |\n|---|---|---|---|---|---|---|");
    for run in &r.runs {
        let m = &run.metrics;
        let _ = writeln!(s, "| {} | {} | {:.4} | {} | {} | {} | {} |", run.seed, run.subset, m.acc, opt(m.ap), opt(m.auc), m.n, m.positives);
    }
    let _ = writeln!(s, "\n## Summary (%, mean ± std over seeds)\n\n| subset | runs | ACC | AP | AUC |\n|---|---|---|---|---|");
    for row in &r.summary {
        let _ = writeln!(s, "| {} | {} | {} | {} | {} |", row.subset, row.runs, pct(&row.acc), pct(&row.ap), pct(&row.auc));
    }
    if r.has_undefined() {
        let _ = writeln!(s, "\nSome runs saw a single class; AP/AUC are undefined for them.");
    }
    s
}

/// ROC operating points `(fpr, tpr)` from the highest threshold down,
/// tied scores moving together.
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let p = positive.iter().filter(|&&b| b).count().max(1) as f64;
    let n = positive.iter().filter(|&&b| !b).count().max(1) as f64;
    let mut pts = vec![(0.0, 0.0)];
    for (tp, fp) in threshold_counts(scores, positive) {
        pts.push((fp as f64 / n, tp as f64 / p));
    }
    pts
}

/// Precision-recall points `(recall, precision)`.
pub fn pr_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let p = positive.iter().filter(|&&b| b).count().max(1) as f64;
    threshold_counts(scores, positive)
        .into_iter()
        .map(|(tp, fp)| (tp as f64 / p, tp as f64 / (tp + fp) as f64))
        .collect()
}

fn threshold_counts(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0, 0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        out.push((tp, fp));
        i = j;
    }
    out
}

const W: f64 = 420.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn svg_frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 1.5);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 - f * (y0 - y1));
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{f:.2}</text>"#, y0 + 14.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{f:.2}</text>"#, x0 - 4.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="12" y="{:.1}" text-anchor="middle" transform="rotate(-90 12 {:.1})">{y_label}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    s
}

fn to_px(x: f64, y: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 1.5);
    (x0 + x * (x1 - x0), y0 - y * (y0 - y1))
}

fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = svg_frame(title, x_label, y_label);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let (px, py) = to_px(x, y);
                format!("{}{px:.2} {py:.2}", if i == 0 { "M" } else { "L" })
            })
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{name}</text>"#, W - 150.0, H - PAD - 8.0 - 14.0 * k as f64);
    }
    s.push_str("</svg>\n");
    s
}

fn bar_plot(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = svg_frame(title, "category", "accuracy");
    let n = bars.len().max(1) as f64;
    let slot = (W - PAD * 1.5) / n;
    for (k, (name, v)) in bars.iter().enumerate() {
        let (_, top) = to_px(0.0, *v);
        let (_, base) = to_px(0.0, 0.0);
        let x = PAD + slot * k as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            slot * 0.7,
            base - top,
            COLORS[k % COLORS.len()]
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{name}</text>"#, x + slot * 0.35, top - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// ROC, PR and per-category accuracy plots, one curve per run.
pub fn render_plots(out: &ProtocolOutput) -> [String; 3] {
    let mut roc = Vec::new();
    let mut pr = Vec::new();
    let mut per_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let threshold = 0.5;
    for (seed, subset, recs) in &out.records {
        let scores: Vec<f64> = recs.iter().map(|r| r.score).collect();
        let labels: Vec<bool> = recs.iter().map(|r| r.label == Label::Fake).collect();
        let name = format!("seed {seed} {subset}");
        roc.push((name.clone(), roc_points(&scores, &labels)));
        pr.push((name, pr_points(&scores, &labels)));
        for r in recs {
            let e = per_cat.entry(r.category.as_str()).or_default();
            e.1 += 1;
            if (r.score >= threshold) == (r.label == Label::Fake) {
                e.0 += 1;
            }
        }
    }
    let bars: Vec<(String, f64)> = per_cat.into_iter().map(|(c, (ok, n))| (c.to_string(), ok as f64 / n as f64)).collect();
    let title = &out.report.protocol;
    [
        line_plot(&format!("ROC ({title})"), "false positive rate", "true positive rate", &roc),
        line_plot(&format!("Precision-recall ({title})"), "recall", "precision", &pr),
        bar_plot(&format!("Accuracy per category ({title})"), &bars),
    ]
}

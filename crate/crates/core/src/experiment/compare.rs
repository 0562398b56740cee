//! Aligns metric reports from several runs into one table and plots each
//! metric against a numeric run parameter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::MetricsReport;

/// One method at one setting; its rows may span several seeds.
#[derive(Clone, Debug)]
pub struct LabeledReport {
    pub label: String,
    /// Position on the plot's horizontal axis (intervention strength,
    /// teacher weight, ...).
    pub x: Option<f64>,
    pub report: MetricsReport,
}

/// (split, sampler, metric, K)
type Key = (String, String, String, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub x: Option<f64>,
    pub split: String,
    pub sampler: String,
    pub metric: String,
    pub k: usize,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over runs; 0 for a single run.
    pub std: f64,
    /// `mean` minus the first report's mean at the same key and `x`.
    pub diff: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn key_of(r: &crate::evalkit::MetricRow) -> Key {
    (r.split.clone(), r.sampler.clone(), r.metric.clone(), r.k)
}

fn show_key(k: &Key) -> String {
    format!("{}/{}/{}@{}", k.0, k.1, k.2, k.3)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-key mean ± std of every report, with a difference column against
/// the first report. Reports sharing a label and `x` are pooled.
pub fn compare_runs(reports: &[LabeledReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Invalid(format!(
            "comparison needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let keysets: Vec<BTreeSet<Key>> = reports
        .iter()
        .map(|r| r.report.rows.iter().map(key_of).collect())
        .collect();
    for (r, keys) in reports.iter().zip(&keysets) {
        if keys.is_empty() {
            return Err(Error::Invalid(format!("report {:?} has no rows", r.label)));
        }
    }
    let reference = &keysets[0];
    let mut problems = Vec::new();
    for (r, keys) in reports.iter().zip(&keysets).skip(1) {
        let missing: Vec<String> = reference.difference(keys).map(show_key).collect();
        let extra: Vec<String> = keys.difference(reference).map(show_key).collect();
        if !missing.is_empty() || !extra.is_empty() {
            problems.push(format!(
                "{} (x = {:?}): missing [{}], extra [{}]",
                r.label,
                r.x,
                missing.join(", "),
                extra.join(", ")
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Invalid(format!(
            "reports do not share keys with {:?}: {}",
            reports[0].label,
            problems.join("; ")
        )));
    }

    // Groups in first-seen order.
    let mut groups: Vec<(String, Option<f64>, BTreeMap<Key, Vec<f64>>)> = Vec::new();
    for r in reports {
        let idx = match groups
            .iter()
            .position(|(l, x, _)| *l == r.label && x.map(f64::to_bits) == r.x.map(f64::to_bits))
        {
            Some(i) => i,
            None => {
                groups.push((r.label.clone(), r.x, BTreeMap::new()));
                groups.len() - 1
            }
        };
        for row in &r.report.rows {
            groups[idx].2.entry(key_of(row)).or_default().push(row.value);
        }
    }
    let baseline = &reports[0].label;
    let base_mean = |key: &Key, x: Option<f64>| -> Option<f64> {
        groups
            .iter()
            .find(|(l, gx, _)| l == baseline && gx.map(f64::to_bits) == x.map(f64::to_bits))
            .and_then(|(_, _, m)| m.get(key))
            .map(|v| mean_std(v).0)
    };
    let mut rows = Vec::new();
    for (label, x, by_key) in &groups {
        for (key, values) in by_key {
            let (mean, std) = mean_std(values);
            rows.push(ComparisonRow {
                label: label.clone(),
                x: *x,
                split: key.0.clone(),
                sampler: key.1.clone(),
                metric: key.2.clone(),
                k: key.3,
                n: values.len(),
                mean,
                std,
                diff: base_mean(key, *x).map(|b| mean - b),
            });
        }
    }
    Ok(Comparison { rows })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,x,split,sampler,metric,K,n,mean,std,diff\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.label,
                opt(r.x),
                r.split,
                r.sampler,
                r.metric,
                r.k,
                r.n,
                r.mean,
                r.std,
                opt(r.diff)
            );
        }
        out
    }

    /// Human-readable table, one line per row, `mean ± std`.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:<22} {:<9} {:<7} {:>3} {:>17} {:>9}\n",
            "label", "x", "split", "sampler", "metric", "K", "mean ± std", "diff"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:<22} {:<9} {:<7} {:>3} {:>8.4} ± {:<6.4} {:>9}",
                r.label,
                opt(r.x),
                r.split,
                r.sampler,
                r.metric,
                r.k,
                r.mean,
                r.std,
                r.diff.map(|d| format!("{d:+.4}")).unwrap_or_default()
            );
        }
        out
    }

    fn keys(&self) -> BTreeSet<Key> {
        self.rows
            .iter()
            .map(|r| (r.split.clone(), r.sampler.clone(), r.metric.clone(), r.k))
            .collect()
    }
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Line plot of one metric against `x`, one line per label. Reports without
/// `x` are placed at their position in the table.
pub fn plot_comparison(
    cmp: &Comparison,
    split: &str,
    metric: &str,
    k: usize,
    x_label: &str,
    path: &Path,
) -> Result<()> {
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (i, r) in cmp
        .rows
        .iter()
        .filter(|r| r.split == split && r.metric == metric && r.k == k)
        .enumerate()
    {
        let x = r.x.unwrap_or(i as f64);
        match lines.iter_mut().find(|(l, _)| *l == r.label) {
            Some((_, pts)) => pts.push((x, r.mean)),
            None => lines.push((r.label.clone(), vec![(x, r.mean)])),
        }
    }
    if lines.is_empty() {
        return Err(Error::Invalid(format!("no rows for {split}/{metric}@{k}")));
    }
    for (_, pts) in &mut lines {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.05).max(1e-3);
        (lo - m)..(hi + m)
    };

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{metric}@{k} ({split})"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(pad(x0, x1), pad(y0, y1))
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(format!("{metric}@{k}"))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    for (i, (label, pts)) in lines.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(path, e))?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))?;
    Ok(())
}

/// Writes `comparison.csv`, `comparison.txt` and one SVG per key into
/// `dir`; returns the written paths.
pub fn write_comparison(cmp: &Comparison, dir: &Path, x_label: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, text) in [("comparison.csv", cmp.to_csv()), ("comparison.txt", cmp.to_table())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let keys: BTreeSet<(String, String, usize)> =
        cmp.keys().into_iter().map(|(s, _, m, k)| (s, m, k)).collect();
    for (split, metric, k) in keys {
        let path = plots.join(format!("{}_{metric}_at_{k}.svg", split.replace('/', "_")));
        plot_comparison(cmp, &split, &metric, k, x_label, &path)?;
        written.push(path);
    }
    Ok(written)
}

//! Aggregates a finished sweep directory into per-(width, rule) tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use alignflow::Rule;

use crate::error::CliError;
use crate::train::{RunSummary, METRICS_FILE, SUMMARY_FILE};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const LONG_CSV: &str = "long.csv";
pub const FINAL_CSV: &str = "final.csv";

/// Columns carried into the long-format file.
const LONG_PREFIXES: &[&str] = &["loss_train", "loss_test", "acc_train", "acc_test", "cos_align_", "cons_dev_", "cons_ratio_", "cos_omega"];

#[derive(Debug, Clone)]
pub struct RunData {
    pub summary: RunSummary,
    pub header: Vec<String>,
    /// Raw cells, so values are carried over digit for digit.
    pub rows: Vec<Vec<String>>,
}

impl RunData {
    fn last_cell(&self, col: &str) -> Option<&str> {
        let idx = self.header.iter().position(|h| h == col)?;
        self.rows.last().map(|r| r[idx].as_str()).filter(|s| !s.is_empty())
    }

    fn last_value(&self, col: &str) -> Option<f64> {
        self.last_cell(col).and_then(|s| s.parse().ok())
    }

    /// Mean over hidden layers of the final `cons_dev_i_mean` cells.
    fn final_deviation(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .header
            .iter()
            .filter(|h| h.starts_with("cons_dev_"))
            .filter_map(|h| self.last_value(h))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn collect_runs(dir: &Path) -> Result<Vec<RunData>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SUMMARY_FILE).is_file() && p.join(METRICS_FILE).is_file())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    for d in dirs {
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(d.join(SUMMARY_FILE))?)?;
        let mut rdr = csv::Reader::from_path(d.join(METRICS_FILE))?;
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        runs.push(RunData { summary, header, rows });
    }
    if runs.is_empty() {
        return Err(CliError::Config(format!("no runs found under {}", dir.display())));
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `√n`; `None` for a single replicate.
    pub se: Option<f64>,
}

pub fn mean_se(values: &[f64]) -> Option<Cell> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = (n > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    });
    Some(Cell { n, mean, se })
}

const METRICS: &[&str] = &["loss_train", "acc_train", "loss_test", "acc_test", "cons_dev"];

fn metric_value(run: &RunData, metric: &str) -> Option<f64> {
    match metric {
        "cons_dev" => run.final_deviation(),
        m => run.last_value(m),
    }
}

type Table = BTreeMap<(usize, Rule), BTreeMap<&'static str, Cell>>;

pub fn aggregate(runs: &[RunData]) -> Table {
    let mut groups: BTreeMap<(usize, Rule), Vec<&RunData>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.summary.width, r.summary.rule)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let cells = METRICS
                .iter()
                .filter_map(|&m| {
                    let vals: Vec<f64> = rs.iter().filter_map(|r| metric_value(r, m)).collect();
                    mean_se(&vals).map(|c| (m, c))
                })
                .collect();
            (k, cells)
        })
        .collect()
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

fn fmt_cell(c: &Cell) -> String {
    match c.se {
        Some(se) => format!("{} ± {}", fmt_num(c.mean), fmt_num(se)),
        None => format!("{} (n=1)", fmt_num(c.mean)),
    }
}

fn markdown(table: &Table) -> String {
    let rules: Vec<Rule> = {
        let mut r: Vec<Rule> = table.keys().map(|k| k.1).collect();
        r.sort();
        r.dedup();
        r
    };
    let widths: Vec<usize> = {
        let mut w: Vec<usize> = table.keys().map(|k| k.0).collect();
        w.dedup();
        w
    };
    let mut md = String::new();
    for (metric, title) in [
        ("cons_dev", "Mean absolute deviation from the conservation ratio"),
        ("acc_train", "Final train accuracy"),
        ("acc_test", "Final test accuracy"),
        ("loss_test", "Final test loss"),
    ] {
        if !table.values().any(|m| m.contains_key(metric)) {
            continue;
        }
        let _ = writeln!(md, "## {title}\n");
        let _ = writeln!(md, "| width | {} |", rules.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(md, "|---{}|", "|---".repeat(rules.len()));
        for w in &widths {
            let cells: Vec<String> = rules
                .iter()
                .map(|r| table.get(&(*w, *r)).and_then(|m| m.get(metric)).map(fmt_cell).unwrap_or_default())
                .collect();
            let _ = writeln!(md, "| {w} | {} |", cells.join(" | "));
        }
        md.push('\n');
    }
    if table.values().flat_map(|m| m.values()).any(|c| c.se.is_none()) {
        md.push_str("Cells marked n=1 come from a single replicate and have no standard error.\n");
    }
    md
}

pub fn run(dir: &Path) -> Result<Table, CliError> {
    let runs = collect_runs(dir)?;
    let table = aggregate(&runs);

    let mut w = csv::Writer::from_path(dir.join(REPORT_CSV))?;
    w.write_record(["width", "rule", "metric", "n", "mean", "se", "flag"])?;
    for ((width, rule), cells) in &table {
        for (metric, c) in cells {
            w.write_record([
                width.to_string(),
                rule.to_string(),
                metric.to_string(),
                c.n.to_string(),
                format!("{:.16e}", c.mean),
                c.se.map(|s| format!("{s:.16e}")).unwrap_or_default(),
                if c.se.is_none() { "single-replicate".into() } else { String::new() },
            ])?;
        }
    }
    w.flush()?;
    fs::write(dir.join(REPORT_MD), markdown(&table))?;

    let mut f = csv::Writer::from_path(dir.join(FINAL_CSV))?;
    f.write_record(["width", "rule", "seed", "step", "loss_train", "acc_train", "loss_test", "acc_test"])?;
    for r in &runs {
        let s = &r.summary;
        let cell = |c: &str| r.last_cell(c).unwrap_or("").to_string();
        f.write_record([s.width.to_string(), s.rule.to_string(), s.seed.to_string(), cell("step"), cell("loss_train"), cell("acc_train"), cell("loss_test"), cell("acc_test")])?;
    }
    f.flush()?;

    let mut long = csv::Writer::from_path(dir.join(LONG_CSV))?;
    long.write_record(["width", "rule", "seed", "step", "time", "metric", "value"])?;
    for r in &runs {
        let s = &r.summary;
        let step_i = r.header.iter().position(|h| h == "step");
        let time_i = r.header.iter().position(|h| h == "time");
        for row in &r.rows {
            for (i, h) in r.header.iter().enumerate() {
                if !LONG_PREFIXES.iter().any(|p| h.starts_with(p)) || row[i].is_empty() {
                    continue;
                }
                long.write_record([
                    s.width.to_string(),
                    s.rule.to_string(),
                    s.seed.to_string(),
                    step_i.map(|k| row[k].clone()).unwrap_or_default(),
                    time_i.map(|k| row[k].clone()).unwrap_or_default(),
                    h.clone(),
                    row[i].clone(),
                ])?;
            }
        }
    }
    long.flush()?;
    Ok(table)
}

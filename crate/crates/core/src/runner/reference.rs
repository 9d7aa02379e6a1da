//! Published benchmark numbers embedded for delta reporting.
//!
//! The headline results were produced on thousands of sampled tasks per
//! dataset with live backends, so they are not reproducible at desk scale.
//! They are carried here read-only: a run can print its own numbers next to
//! the published ones with a signed delta, but there is deliberately no
//! pass/fail judgment — live sampling variance is expected.

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::report::ReportSummary;

/// Where a reference number comes from. Everything embedded here is a
/// published table value.
pub const SOURCE_PUBLISHED: &str = "published";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub id: String,
    pub backbone: String,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceTable {
    pub fn lookup(&self, method: &str, dataset: &str, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.dataset == dataset && e.metric == metric)
            .map(|e| e.value)
    }
}

/// The main comparison grid: one column tuple per dataset/metric pair, in
/// the published column order.
const MAIN_COLUMNS: [(&str, &str); 7] = [
    ("gsm8k", "result-accuracy"),
    ("mmlu-pro", "result-accuracy"),
    ("longbench", "macro-average"),
    ("asap", "qwk"),
    ("commongen-hard", "all-present-rate"),
    ("commongen-hard", "missing-coverage-rate"),
    ("commongen-hard", "overall-success-rate"),
];

/// Ablation grid: same columns minus OSR (that metric ranks methods against
/// each other, which does not apply to comparing steps of one method).
const ABLATION_COLUMNS: [(&str, &str); 6] = [
    ("gsm8k", "result-accuracy"),
    ("mmlu-pro", "result-accuracy"),
    ("longbench", "macro-average"),
    ("asap", "qwk"),
    ("commongen-hard", "all-present-rate"),
    ("commongen-hard", "missing-coverage-rate"),
];

const N: Option<f64> = None;

fn grid_entries(
    columns: &[(&str, &str)],
    rows: &[(&str, &[Option<f64>])],
) -> Vec<ReferenceEntry> {
    let mut entries = Vec::new();
    for (method, values) in rows {
        assert_eq!(values.len(), columns.len());
        for ((dataset, metric), value) in columns.iter().zip(values.iter()) {
            if let Some(value) = value {
                entries.push(ReferenceEntry {
                    method: method.to_string(),
                    dataset: dataset.to_string(),
                    metric: metric.to_string(),
                    value: *value,
                    source: SOURCE_PUBLISHED.to_string(),
                });
            }
        }
    }
    entries
}

macro_rules! row {
    ($method:expr, $($value:expr),+ $(,)?) => {
        ($method, &[$($value),+][..])
    };
}

fn main_table(id: &str, backbone: &str, rows: &[(&str, &[Option<f64>])]) -> ReferenceTable {
    ReferenceTable {
        id: id.to_string(),
        backbone: backbone.to_string(),
        entries: grid_entries(&MAIN_COLUMNS, rows),
    }
}

static TABLES: Lazy<Vec<ReferenceTable>> = Lazy::new(|| {
    let s = Some;
    vec![
        main_table(
            "gpt-3.5-turbo",
            "GPT-3.5-turbo",
            &[
                row!("base", s(73.30), s(39.53), s(44.00), s(0.232), s(2.00), s(18.00), s(0.50)),
                row!("zero-shot-cot", s(81.65), s(41.75), s(46.45), s(0.286), s(3.00), s(17.80), s(2.00)),
                row!("bot", s(87.35), s(43.60), s(49.67), s(0.365), s(6.00), s(21.08), s(11.00)),
                row!("spp", s(84.45), s(43.15), s(47.37), s(0.379), s(4.50), s(15.30), s(15.00)),
                row!("step-back", s(81.35), s(42.19), s(47.04), s(0.335), s(3.00), s(17.30), s(3.50)),
                row!("dynathink", s(85.85), s(49.96), N, s(0.597), N, N, N),
                row!("ps", s(83.65), s(42.26), N, N, N, N, N),
                row!("bsm", N, N, N, N, s(8.00), s(14.68), s(20.50)),
                row!("fst", s(88.65), s(45.97), s(52.59), s(0.679), s(12.00), s(12.59), s(47.50)),
            ],
        ),
        main_table(
            "llama-3.1-8b-instruct",
            "Llama-3.1-8B-Instruct",
            &[
                row!("base", s(72.50), s(22.35), s(35.64), s(0.181), s(1.00), s(22.39), s(3.50)),
                row!("zero-shot-cot", s(84.50), s(29.02), s(37.95), s(0.206), s(2.00), s(20.45), s(5.00)),
                row!("bot", s(86.25), s(34.79), s(42.04), s(0.305), s(4.00), s(18.52), s(10.50)),
                row!("spp", s(85.95), s(32.49), s(40.49), s(0.279), s(2.50), s(19.34), s(10.00)),
                row!("step-back", s(85.85), s(31.09), s(40.21), s(0.231), s(2.50), s(20.01), s(5.50)),
                row!("dynathink", s(85.90), s(37.01), N, s(0.513), N, N, N),
                row!("ps", s(85.75), s(33.60), N, N, N, N, N),
                row!("bsm", N, N, N, N, s(5.00), s(18.06), s(18.50)),
                row!("fst", s(88.05), s(36.20), s(46.39), s(0.583), s(7.50), s(16.14), s(48.00)),
            ],
        ),
        main_table(
            "gemini-pro",
            "Gemini-pro",
            &[
                row!("base", s(69.65), s(28.87), s(40.43), s(0.218), s(1.00), s(20.17), s(2.00)),
                row!("zero-shot-cot", s(75.00), s(33.38), s(42.38), s(0.249), s(3.00), s(18.70), s(2.50)),
                row!("bot", s(83.35), s(36.05), s(46.64), s(0.391), s(5.00), s(22.58), s(10.00)),
                row!("spp", s(79.65), s(35.16), s(45.19), s(0.361), s(4.00), s(17.26), s(13.00)),
                row!("step-back", s(77.15), s(33.90), s(44.02), s(0.279), s(3.00), s(19.12), s(6.00)),
                row!("dynathink", s(81.35), s(39.45), N, s(0.536), N, N, N),
                row!("ps", s(78.05), s(33.75), N, N, N, N, N),
                row!("bsm", N, N, N, N, s(8.00), s(16.58), s(22.50)),
                row!("fst", s(85.50), s(40.04), s(49.11), s(0.601), s(9.00), s(14.52), s(44.00)),
            ],
        ),
        ReferenceTable {
            id: "llama-3.1-8b-instruct-ablation".to_string(),
            backbone: "Llama-3.1-8B-Instruct".to_string(),
            entries: grid_entries(
                &ABLATION_COLUMNS,
                &[
                    row!("base", s(72.50), s(22.35), s(35.64), s(0.181), s(1.00), s(22.39)),
                    row!("fst-ft", s(63.45), s(2.66), s(10.45), s(0.102), s(0.00), s(71.25)),
                    row!("fst-st", s(78.10), s(23.54), s(38.18), s(0.296), s(2.50), s(48.23)),
                    row!("fst-ft-st", s(87.35), s(35.16), s(44.84), s(0.492), s(7.00), s(17.22)),
                    row!("fst", s(90.05), s(36.20), s(46.39), s(0.583), s(7.50), s(16.14)),
                ],
            ),
        },
        ReferenceTable {
            id: "llama-3.1-8b-instruct-stability".to_string(),
            backbone: "Llama-3.1-8B-Instruct".to_string(),
            entries: grid_entries(
                &[("asap", "qwk")],
                &[
                    row!("fst", s(0.583)),
                    row!("fst+character", s(0.556)),
                    row!("fst+word", s(0.541)),
                    row!("fst+semantic", s(0.568)),
                ],
            ),
        },
    ]
});

pub fn reference_tables() -> &'static [ReferenceTable] {
    &TABLES
}

pub fn reference_table(id: &str) -> Option<&'static ReferenceTable> {
    TABLES.iter().find(|t| t.id == id)
}

/// Published benchmark sample sizes, for context in reports.
pub const DATASET_SIZES: [(&str, usize); 5] = [
    ("gsm8k", 2000),
    ("mmlu-pro", 1351),
    ("longbench", 2550),
    ("asap", 800),
    ("commongen-hard", 200),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backbone: String,
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub computed: f64,
    pub reference: Option<f64>,
    pub delta: Option<f64>,
}

/// Signed difference computed in micro-units so printed deltas are exact for
/// table-precision values instead of trailing float dust.
fn signed_delta(computed: f64, reference: f64) -> f64 {
    let scale = 1e6;
    ((computed * scale).round() - (reference * scale).round()) / scale
}

/// Run metrics that have no column in any published grid.
fn comparable(metric: &str) -> bool {
    metric != "total-calls" && metric != "mean-calls-per-task"
}

/// Line up a report's metrics against one reference table. Metrics with no
/// published value come back with `reference: None` ("no reference").
pub fn compare_to_reference(
    summary: &ReportSummary,
    table: &ReferenceTable,
) -> Vec<ComparisonRow> {
    summary
        .metrics
        .iter()
        .filter(|(metric, _)| comparable(metric))
        .map(|(metric, &computed)| {
            let reference = table.lookup(&summary.method, &summary.dataset_label, metric);
            ComparisonRow {
                backbone: table.backbone.clone(),
                method: summary.method.clone(),
                dataset: summary.dataset_label.clone(),
                metric: metric.clone(),
                computed,
                reference,
                delta: reference.map(|r| signed_delta(computed, r)),
            }
        })
        .collect()
}

/// Aligned text table for the comparison rows.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut grid: Vec<[String; 6]> = vec![[
        "backbone".to_string(),
        "method".to_string(),
        "dataset".to_string(),
        "metric".to_string(),
        "computed".to_string(),
        "reference (delta)".to_string(),
    ]];
    for row in rows {
        let reference = match (row.reference, row.delta) {
            (Some(reference), Some(delta)) => {
                format!("{reference:.4} ({delta:+.4})")
            }
            _ => "no reference".to_string(),
        };
        grid.push([
            row.backbone.clone(),
            row.method.clone(),
            row.dataset.clone(),
            row.metric.clone(),
            format!("{:.4}", row.computed),
            reference,
        ]);
    }
    render_grid(&grid)
}

/// Space-align rows of equal length into a text table.
pub(crate) fn render_grid<const W: usize>(rows: &[[String; W]]) -> String {
    let mut widths = [0usize; W];
    for row in rows {
        for (width, cell) in widths.iter_mut().zip(row.iter()) {
            *width = (*width).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, (cell, width)) in row.iter().zip(widths.iter()).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < W {
                for _ in cell.chars().count()..*width {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Dump one reference table as an aligned grid (the `report` subcommand uses
/// the same layout for computed runs).
pub fn render_reference_table(table: &ReferenceTable) -> String {
    let mut datasets: Vec<(String, String)> = Vec::new();
    for entry in &table.entries {
        let key = (entry.dataset.clone(), entry.metric.clone());
        if !datasets.contains(&key) {
            datasets.push(key);
        }
    }
    let mut methods: Vec<String> = Vec::new();
    for entry in &table.entries {
        if !methods.contains(&entry.method) {
            methods.push(entry.method.clone());
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![format!("{} [{}]", table.id, table.backbone)];
    header.extend(
        datasets
            .iter()
            .map(|(dataset, metric)| format!("{dataset}/{metric}")),
    );
    rows.push(header);
    for method in &methods {
        let mut row = vec![method.clone()];
        for (dataset, metric) in &datasets {
            row.push(match table.lookup(method, dataset, metric) {
                Some(value) => format!("{value:.4}"),
                None => "-".to_string(),
            });
        }
        rows.push(row);
    }
    render_dynamic_grid(&rows)
}

pub(crate) fn render_dynamic_grid(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < row.len() {
                for _ in cell.chars().count()..widths[i] {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

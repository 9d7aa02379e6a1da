//! Per-task scoring and the two report renderings: a tab-separated file for
//! machines and an aligned table for people.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{all_present_rate, missing_coverage_rate, story_coverage, MatcherConfig};
use crate::extract::{extract_for_family, ExtractedAnswer};
use crate::method::MethodId;
use crate::metrics::{macro_average, quadratic_weighted_kappa, result_accuracy, token_f1_score};
use crate::task::{GoldLabel, TaskFamily, TaskInstance};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read report {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// What one task produced, before scoring. `final_answer: None` means the
/// method failed outright; the row still scores (as zero) per the fixed
/// sample convention.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub index: usize,
    pub task_id: String,
    pub final_answer: Option<String>,
    pub calls: u64,
    pub error: Option<String>,
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub index: usize,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Rendered extracted answer, shortened for tabular display.
    pub answer: String,
    pub gold: String,
    /// Family-dependent per-task score: 0/1 correctness for math and
    /// multiple choice, token F1 for long-content, the predicted rubric
    /// score for essays, and the fraction of required words present for
    /// stories.
    pub score: f64,
    pub calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: MethodId,
    pub family: TaskFamily,
    pub dataset_path: String,
    pub dataset_label: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_hash: Option<String>,
    pub rows: Vec<TaskRow>,
    pub metrics: BTreeMap<String, f64>,
    /// Metrics that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metric_errors: BTreeMap<String, String>,
    pub total_calls: u64,
}

/// Everything `compare` needs from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub method: String,
    pub dataset_label: String,
    pub metrics: BTreeMap<String, f64>,
}

impl ScoreReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            method: self.method.to_string(),
            dataset_label: self.dataset_label.clone(),
            metrics: self.metrics.clone(),
        }
    }
}

pub struct ReportMeta {
    pub method: MethodId,
    pub family: TaskFamily,
    pub dataset_path: String,
    pub dataset_label: String,
    pub model: String,
    pub template_hash: Option<String>,
}

fn answer_matches_gold(answer: &ExtractedAnswer, gold: &GoldLabel) -> bool {
    match (answer, gold) {
        (ExtractedAnswer::Numeric(a), GoldLabel::Numeric(g)) => (a - g).abs() < 1e-9,
        (ExtractedAnswer::Choice(a), GoldLabel::Choice(g)) => {
            a.eq_ignore_ascii_case(g)
        }
        (ExtractedAnswer::Score(a), GoldLabel::Score(g)) => a == g,
        _ => false,
    }
}

/// Score a batch of outcomes with the family's metrics. Outcomes must be in
/// task order and aligned with `tasks`.
pub fn build_report(
    meta: ReportMeta,
    tasks: &[TaskInstance],
    outcomes: &[TaskOutcome],
) -> ScoreReport {
    assert_eq!(tasks.len(), outcomes.len(), "one outcome per task");
    let mut rows = Vec::with_capacity(tasks.len());
    let mut metrics = BTreeMap::new();
    let mut metric_errors = BTreeMap::new();

    // Family-specific accumulators.
    let mut correctness: Vec<bool> = Vec::new();
    let mut per_category: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut rating_pairs: Vec<crate::metrics::RatingPair> = Vec::new();
    let mut n_levels = 0usize;
    let mut coverages = Vec::new();

    for (task, outcome) in tasks.iter().zip(outcomes.iter()) {
        let response = outcome.final_answer.as_deref().unwrap_or("");
        let answer = extract_for_family(task, response);
        let mut error = outcome.error.clone();

        let score = match meta.family {
            TaskFamily::MathReasoning | TaskFamily::MultipleChoice => {
                let correct = answer_matches_gold(&answer, &task.gold);
                correctness.push(correct);
                if correct {
                    1.0
                } else {
                    0.0
                }
            }
            TaskFamily::LongContentQa => {
                let score = match &task.gold {
                    GoldLabel::Text(gold) => token_f1_score(response, gold),
                    _ => 0.0,
                };
                let category = task
                    .category
                    .clone()
                    .unwrap_or_else(|| "uncategorized".to_string());
                per_category.entry(category).or_default().push(score);
                score
            }
            TaskFamily::EssayScoring => {
                let (lo, hi) = task.score_range.unwrap_or((0, 0));
                // Unscorable output is filed at the bottom of the rubric so
                // the task still counts against the run.
                let model = match answer {
                    ExtractedAnswer::Score(s) => s,
                    _ => lo,
                };
                match (&task.gold, hi >= lo) {
                    (GoldLabel::Score(gold), true) if (lo..=hi).contains(gold) => {
                        rating_pairs.push(crate::metrics::RatingPair {
                            model_score: model - lo,
                            gold_score: gold - lo,
                        });
                        n_levels = n_levels.max((hi - lo + 1) as usize);
                    }
                    _ => {
                        if error.is_none() {
                            error = Some("task has no usable gold score".to_string());
                        }
                    }
                }
                model as f64
            }
            TaskFamily::ConstrainedStory => {
                match story_coverage(response, &task.required_words, &MatcherConfig::default()) {
                    Ok(coverage) => {
                        let present = coverage.required - coverage.missing.len();
                        let score = present as f64 / coverage.required as f64;
                        coverages.push(coverage);
                        score
                    }
                    Err(e) => {
                        if error.is_none() {
                            error = Some(e.to_string());
                        }
                        0.0
                    }
                }
            }
        };

        rows.push(TaskRow {
            index: outcome.index,
            task_id: task.id.clone(),
            category: task.category.clone(),
            answer: cell_text(&answer.render()),
            gold: cell_text(&task.gold.render()),
            score,
            calls: outcome.calls,
            error,
        });
    }

    match meta.family {
        TaskFamily::MathReasoning | TaskFamily::MultipleChoice => {
            record(&mut metrics, &mut metric_errors, "result-accuracy", result_accuracy(&correctness));
        }
        TaskFamily::LongContentQa => {
            record(
                &mut metrics,
                &mut metric_errors,
                "macro-average",
                macro_average(&per_category).map(|v| v * 100.0),
            );
        }
        TaskFamily::EssayScoring => {
            record(
                &mut metrics,
                &mut metric_errors,
                "qwk",
                quadratic_weighted_kappa(&rating_pairs, n_levels),
            );
        }
        TaskFamily::ConstrainedStory => {
            record(&mut metrics, &mut metric_errors, "all-present-rate", all_present_rate(&coverages));
            record(
                &mut metrics,
                &mut metric_errors,
                "missing-coverage-rate",
                missing_coverage_rate(&coverages),
            );
        }
    }

    let total_calls: u64 = rows.iter().map(|r| r.calls).sum();
    metrics.insert("total-calls".to_string(), total_calls as f64);

    ScoreReport {
        method: meta.method,
        family: meta.family,
        dataset_path: meta.dataset_path,
        dataset_label: meta.dataset_label,
        model: meta.model,
        template_hash: meta.template_hash,
        rows,
        metrics,
        metric_errors,
        total_calls,
    }
}

fn record<E: std::fmt::Display>(
    metrics: &mut BTreeMap<String, f64>,
    errors: &mut BTreeMap<String, String>,
    name: &str,
    result: Result<f64, E>,
) {
    match result {
        Ok(value) => {
            metrics.insert(name.to_string(), value);
        }
        Err(e) => {
            errors.insert(name.to_string(), e.to_string());
        }
    }
}

/// Single-line, bounded cell text: long story answers are summarized, real
/// content lives in the transcripts.
fn cell_text(text: &str) -> String {
    const MAX: usize = 60;
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= MAX {
        return flat;
    }
    let mut cut: String = flat.chars().take(MAX).collect();
    cut.push('…');
    cut
}

fn tsv_cell(text: &str) -> String {
    if text.is_empty() {
        "-".to_string()
    } else {
        cell_text(text)
    }
}

const REPORT_FORMAT: &str = "fastslow-report";
const REPORT_VERSION: &str = "1";

impl ScoreReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut meta = |key: &str, value: &str| {
            out.push_str(&format!("# {key}\t{value}\n"));
        };
        meta(REPORT_FORMAT, REPORT_VERSION);
        meta("method", &self.method.to_string());
        meta("family", self.family.as_str());
        meta("dataset", &self.dataset_path);
        meta("dataset-label", &self.dataset_label);
        meta("model", &self.model);
        if let Some(hash) = &self.template_hash {
            meta("template-hash", hash);
        }
        meta("tasks", &self.rows.len().to_string());
        out.push_str("index\ttask-id\tcategory\tanswer\tgold\tscore\tcalls\terror\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\n",
                row.index,
                tsv_cell(&row.task_id),
                tsv_cell(row.category.as_deref().unwrap_or("")),
                tsv_cell(&row.answer),
                tsv_cell(&row.gold),
                row.score,
                row.calls,
                tsv_cell(row.error.as_deref().unwrap_or("")),
            ));
        }
        for (name, value) in &self.metrics {
            out.push_str(&format!("metric\t{name}\t{value:.4}\n"));
        }
        for (name, message) in &self.metric_errors {
            out.push_str(&format!("metric-error\t{name}\t{}\n", tsv_cell(message)));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} on {} ({}, {} tasks)\n",
            self.method, self.dataset_label, self.family, self.rows.len()
        ));
        out.push_str(&format!("model: {}\n", self.model));
        if let Some(hash) = &self.template_hash {
            out.push_str(&format!("templates: {hash}\n"));
        }
        out.push('\n');

        let mut metric_rows: Vec<[String; 2]> =
            vec![["metric".to_string(), "value".to_string()]];
        for (name, value) in &self.metrics {
            metric_rows.push([name.clone(), format!("{value:.4}")]);
        }
        for (name, message) in &self.metric_errors {
            metric_rows.push([name.clone(), format!("unavailable: {message}")]);
        }
        out.push_str(&super::reference::render_grid(&metric_rows));
        out.push('\n');

        let mut task_rows: Vec<[String; 7]> = vec![[
            "index".to_string(),
            "task-id".to_string(),
            "category".to_string(),
            "score".to_string(),
            "calls".to_string(),
            "answer".to_string(),
            "status".to_string(),
        ]];
        for row in &self.rows {
            task_rows.push([
                row.index.to_string(),
                row.task_id.clone(),
                row.category.clone().unwrap_or_else(|| "-".to_string()),
                format!("{:.4}", row.score),
                row.calls.to_string(),
                tsv_cell(&row.answer),
                row.error.clone().unwrap_or_else(|| "ok".to_string()),
            ]);
        }
        out.push_str(&super::reference::render_grid(&task_rows));
        out
    }
}

/// Read back the metadata and metric lines of a written `report.tsv`.
pub fn read_report_summary(path: &Path) -> Result<ReportSummary, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |message: String| ReportError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let mut method = None;
    let mut dataset_label = None;
    let mut metrics = BTreeMap::new();
    let mut seen_format = false;
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        if let Some(key) = fields[0].strip_prefix("# ") {
            let value = *fields.get(1).unwrap_or(&"");
            match key {
                REPORT_FORMAT => seen_format = true,
                "method" => method = Some(value.to_string()),
                "dataset-label" => dataset_label = Some(value.to_string()),
                _ => {}
            }
        } else if fields[0] == "metric" {
            if fields.len() != 3 {
                return Err(malformed(format!("bad metric line: {line:?}")));
            }
            let value: f64 = fields[2]
                .parse()
                .map_err(|_| malformed(format!("bad metric value: {line:?}")))?;
            metrics.insert(fields[1].to_string(), value);
        }
    }
    if !seen_format {
        return Err(malformed(format!("missing `# {REPORT_FORMAT}` header")));
    }
    Ok(ReportSummary {
        method: method.ok_or_else(|| malformed("missing `# method` line".to_string()))?,
        dataset_label: dataset_label
            .ok_or_else(|| malformed("missing `# dataset-label` line".to_string()))?,
        metrics,
    })
}

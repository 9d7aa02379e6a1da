//! Task records, datasets, and seeded subsampling.
//!
//! Datasets are JSON Lines files: one task object per line. Every record
//! names its family; a loader call pins the family it expects and rejects
//! mixed or mismatched files.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The five task families the pipeline runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    MathReasoning,
    MultipleChoice,
    LongContentQa,
    EssayScoring,
    ConstrainedStory,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 5] = [
        TaskFamily::MathReasoning,
        TaskFamily::MultipleChoice,
        TaskFamily::LongContentQa,
        TaskFamily::EssayScoring,
        TaskFamily::ConstrainedStory,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskFamily::MathReasoning => "math-reasoning",
            TaskFamily::MultipleChoice => "multiple-choice",
            TaskFamily::LongContentQa => "long-content-qa",
            TaskFamily::EssayScoring => "essay-scoring",
            TaskFamily::ConstrainedStory => "constrained-story",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, TaskError> {
        TaskFamily::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| TaskError::UnknownFamily(s.to_string()))
    }
}

/// Reference answer attached to a task, when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum GoldLabel {
    Numeric(f64),
    Choice(String),
    Score(i64),
    Text(String),
    #[default]
    None,
}

impl GoldLabel {
    pub fn is_none(&self) -> bool {
        matches!(self, GoldLabel::None)
    }

    /// Display form used in score reports.
    pub fn render(&self) -> String {
        match self {
            GoldLabel::Numeric(v) => crate::extract::format_number(*v),
            GoldLabel::Choice(l) => format!("({})", l.to_uppercase()),
            GoldLabel::Score(s) => s.to_string(),
            GoldLabel::Text(t) => t.clone(),
            GoldLabel::None => "-".to_string(),
        }
    }
}

/// One option of a multiple-choice task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

/// A single task instance as read from a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub family: TaskFamily,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_words: Vec<String>,
    #[serde(default, skip_serializing_if = "GoldLabel::is_none")]
    pub gold: GoldLabel,
    /// Subtask bucket used for per-category aggregation (long-content runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Inclusive rubric score range; required for essay scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<(i64, i64)>,
}

impl TaskInstance {
    /// Full prompt text of the task: statement plus whatever material the
    /// family attaches (required words, passage or essay, options).
    pub fn full_text(&self) -> String {
        let mut out = self.statement.trim_end().to_string();
        if !self.required_words.is_empty() {
            out.push('\n');
            out.push_str(&self.required_words.join(", "));
        }
        if let Some(ctx) = &self.context {
            out.push_str("\n\n");
            out.push_str(ctx.trim_end());
        }
        if !self.choices.is_empty() {
            for c in &self.choices {
                out.push('\n');
                out.push_str(&format!("({}) {}", c.label, c.text));
            }
        }
        out
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".to_string());
        }
        if self.statement.trim().is_empty() {
            return Err("empty statement".to_string());
        }
        match self.family {
            TaskFamily::MultipleChoice => {
                if self.choices.len() < 2 {
                    return Err(format!(
                        "multiple-choice task needs at least 2 choices, got {}",
                        self.choices.len()
                    ));
                }
                let mut seen = HashSet::new();
                for c in &self.choices {
                    if !seen.insert(c.label.to_uppercase()) {
                        return Err(format!("duplicate choice label '{}'", c.label));
                    }
                }
            }
            TaskFamily::ConstrainedStory => {
                if self.required_words.is_empty() {
                    return Err("constrained-story task needs required_words".to_string());
                }
                if !self.gold.is_none() {
                    return Err("constrained-story tasks are open-ended; gold must be absent".to_string());
                }
            }
            TaskFamily::EssayScoring => {
                let (lo, hi) = self
                    .score_range
                    .ok_or_else(|| "essay-scoring task needs score_range [lo, hi]".to_string())?;
                if lo >= hi {
                    return Err(format!("score_range [{lo}, {hi}] is not an increasing range"));
                }
                if let GoldLabel::Score(s) = self.gold {
                    if s < lo || s > hi {
                        return Err(format!("gold score {s} outside score_range [{lo}, {hi}]"));
                    }
                }
            }
            TaskFamily::MathReasoning | TaskFamily::LongContentQa => {}
        }
        Ok(())
    }
}

/// An ordered collection of task instances from one source file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub source_path: PathBuf,
    pub family: TaskFamily,
    pub instances: Vec<TaskInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {path} contains no records")]
    Empty { path: PathBuf },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate task id '{id}'")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: record family {found} does not match requested family {expected}")]
    FamilyMismatch {
        path: PathBuf,
        line: usize,
        expected: TaskFamily,
        found: TaskFamily,
    },
    #[error("{path}:{line}: invalid task '{id}': {message}")]
    InvalidTask {
        path: PathBuf,
        line: usize,
        id: String,
        message: String,
    },
    #[error("unknown task family '{0}'")]
    UnknownFamily(String),
    #[error("sample size {requested} exceeds dataset size {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

/// Load a JSON Lines dataset, checking every record against `family`.
pub fn load_dataset(path: &Path, family: TaskFamily) -> Result<Dataset, TaskError> {
    let raw = std::fs::read_to_string(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut instances = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: TaskInstance =
            serde_json::from_str(line).map_err(|e| TaskError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if inst.family != family {
            return Err(TaskError::FamilyMismatch {
                path: path.to_path_buf(),
                line: line_no,
                expected: family,
                found: inst.family,
            });
        }
        inst.validate().map_err(|message| TaskError::InvalidTask {
            path: path.to_path_buf(),
            line: line_no,
            id: inst.id.clone(),
            message,
        })?;
        if !seen_ids.insert(inst.id.clone()) {
            return Err(TaskError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: inst.id,
            });
        }
        instances.push(inst);
    }
    if instances.is_empty() {
        return Err(TaskError::Empty {
            path: path.to_path_buf(),
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset {
        name,
        source_path: path.to_path_buf(),
        family,
        instances,
    })
}

/// Draw `n` tasks by seeded shuffle-then-prefix. The same (dataset, n, seed)
/// always yields the same instances in the same order.
pub fn sample_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<TaskInstance>, TaskError> {
    if n > dataset.instances.len() {
        return Err(TaskError::SampleTooLarge {
            requested: n,
            available: dataset.instances.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = dataset.instances.clone();
    shuffled.shuffle(&mut rng);
    shuffled.truncate(n);
    Ok(shuffled)
}

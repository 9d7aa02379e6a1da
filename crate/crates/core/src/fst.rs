//! The fast-slow pipeline: a fast simplify-and-draft pass (FT), a slow
//! constraint-restoring refinement pass (ST), and an answer check (OI).

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::gateway::{ChatRequest, ChatResponse, Gateway, GatewayError, ModelConfig, UsageRecord};
use crate::method::MethodId;
use crate::prompt::{load_template_set, Bindings, PromptError, TemplateSet, TemplateVariant};
use crate::task::TaskInstance;

/// Which pipeline stages actually run. The full pipeline costs three model
/// calls per task; each ablation drops stages and cost together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// FT alone; the draft answer is the final answer.
    FtOnly,
    /// ST alone, fed the original task as both concise task and constraints.
    StOnly,
    /// FT then ST, skipping the final check.
    FtSt,
    /// FT, ST, and OI.
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::FtOnly,
        AblationMode::StOnly,
        AblationMode::FtSt,
        AblationMode::Full,
    ];

    /// Model calls one task costs under this mode.
    pub fn call_budget(self) -> u64 {
        match self {
            AblationMode::FtOnly | AblationMode::StOnly => 1,
            AblationMode::FtSt => 2,
            AblationMode::Full => 3,
        }
    }

    pub fn runs_ft(self) -> bool {
        !matches!(self, AblationMode::StOnly)
    }

    pub fn runs_st(self) -> bool {
        !matches!(self, AblationMode::FtOnly)
    }

    pub fn runs_oi(self) -> bool {
        matches!(self, AblationMode::Full)
    }

    pub fn method_id(self) -> MethodId {
        MethodId::Fst(self)
    }
}

/// The three fields FT is asked to produce. When the response does not
/// follow the sectioned format, the pipeline degrades instead of aborting:
/// the original task stands in for the simplification and constraints, the
/// whole response becomes the draft, and `parse_fallback` records that.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtParse {
    pub simplified_task: String,
    pub removed_constraints: String,
    pub draft_answer: String,
    pub parse_fallback: bool,
}

const FT_HEADERS: [&str; 3] = ["simplified task:", "removed constraints:", "answer:"];

/// Split an FT response into its three sections. Headers are matched
/// case-insensitively at line starts (list markers and emphasis characters
/// are tolerated) and must appear in order; the simplification and the
/// constraints must be non-empty for the parse to count.
pub fn parse_ft_response(response: &str, task: &TaskInstance) -> FtParse {
    let mut sections: [Vec<&str>; 3] = [vec![], vec![], vec![]];
    let mut current: Option<usize> = None;
    let mut next_expected = 0usize;
    for line in response.lines() {
        let stripped = line.trim_start().trim_start_matches(['*', '#', '-']).trim_start();
        let lowered = stripped.to_lowercase();
        if next_expected < FT_HEADERS.len() && lowered.starts_with(FT_HEADERS[next_expected]) {
            let rest = stripped[FT_HEADERS[next_expected].len()..].trim();
            if !rest.is_empty() {
                sections[next_expected].push(rest);
            }
            current = Some(next_expected);
            next_expected += 1;
        } else if let Some(idx) = current {
            sections[idx].push(line);
        }
    }
    let joined: Vec<String> = sections.iter().map(|s| s.join("\n").trim().to_string()).collect();
    if next_expected == FT_HEADERS.len() && !joined[0].is_empty() && !joined[1].is_empty() {
        FtParse {
            simplified_task: joined[0].clone(),
            removed_constraints: joined[1].clone(),
            draft_answer: joined[2].clone(),
            parse_fallback: false,
        }
    } else {
        FtParse {
            simplified_task: task.statement.clone(),
            removed_constraints: task.full_text(),
            draft_answer: response.trim().to_string(),
            parse_fallback: true,
        }
    }
}

/// One model exchange inside a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Stage label: "ft", "st", "oi" here; baselines use their own.
    pub label: String,
    pub rendered_prompt: String,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ft_parse: Option<FtParse>,
    pub usage: UsageRecord,
    pub cached: bool,
}

impl StepRecord {
    pub fn from_response(label: &str, prompt: String, response: &ChatResponse) -> Self {
        StepRecord {
            label: label.to_string(),
            rendered_prompt: prompt,
            raw_response: response.text.clone(),
            ft_parse: None,
            usage: response.usage,
            cached: response.cached,
        }
    }
}

/// Everything one method did to one task, ending in the answer handed to
/// scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    pub method: MethodId,
    pub steps: Vec<StepRecord>,
    pub final_answer: String,
    pub total_calls: u64,
}

/// File-system-safe rendering of an identifier: anything outside
/// `[A-Za-z0-9._-]` becomes `-`.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

impl Transcript {
    /// `<task>__<method>.json`, sanitized for the file system.
    pub fn file_name(&self) -> String {
        format!(
            "{}__{}.json",
            sanitize_id(&self.task_id),
            sanitize_id(&self.method.to_string())
        )
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(self.file_name());
        let json = serde_json::to_string_pretty(self).expect("transcript serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> std::io::Result<Transcript> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FstErrorKind {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A pipeline failure, carrying the steps that did complete so callers can
/// log partial work.
#[derive(Debug, thiserror::Error)]
#[error("{kind}")]
pub struct FstError {
    #[source]
    pub kind: FstErrorKind,
    pub steps: Vec<StepRecord>,
}

/// How to run the pipeline: which stages, and which template variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FstOptions {
    pub mode: AblationMode,
    pub variant: TemplateVariant,
}

impl Default for FstOptions {
    fn default() -> Self {
        FstOptions {
            mode: AblationMode::Full,
            variant: TemplateVariant::Canonical,
        }
    }
}

fn fail<E: Into<FstErrorKind>>(steps: &mut Vec<StepRecord>) -> impl FnOnce(E) -> FstError + '_ {
    move |e| FstError {
        kind: e.into(),
        steps: std::mem::take(steps),
    }
}

/// Run the pipeline on one task and return the transcript.
pub fn run_fst(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
    options: &FstOptions,
) -> Result<Transcript, FstError> {
    let templates = load_template_set(task.family, &options.variant)
        .map_err(|e| FstError { kind: e.into(), steps: vec![] })?;
    run_fst_with_templates(gateway, config, task, options.mode, &templates)
}

/// Like [`run_fst`] but with an already-loaded template set, so callers can
/// reuse one set across a batch or supply a perturbed one.
pub fn run_fst_with_templates(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
    mode: AblationMode,
    templates: &TemplateSet,
) -> Result<Transcript, FstError> {
    let mut steps: Vec<StepRecord> = Vec::new();

    let ft_parse = if mode.runs_ft() {
        let bindings = Bindings::new().bind("the-task", task.full_text());
        let prompt = templates.ft.render(&bindings).map_err(fail(&mut steps))?;
        let response = gateway
            .complete(&ChatRequest::new(prompt.clone(), config.clone()))
            .map_err(fail(&mut steps))?;
        let parse = parse_ft_response(&response.text, task);
        let mut record = StepRecord::from_response("ft", prompt, &response);
        record.ft_parse = Some(parse.clone());
        steps.push(record);
        parse
    } else {
        // ST-only: no fast pass ran, so the original task plays both roles
        // and there is no draft to improve.
        FtParse {
            simplified_task: task.statement.clone(),
            removed_constraints: task.full_text(),
            draft_answer: String::new(),
            parse_fallback: false,
        }
    };

    let mut final_answer = ft_parse.draft_answer.clone();

    if mode.runs_st() {
        let bindings = Bindings::new()
            .bind("concise-general-task", &ft_parse.simplified_task)
            .bind("removed-constraints", &ft_parse.removed_constraints)
            .bind("draft-answer", &ft_parse.draft_answer);
        let prompt = templates.st.render(&bindings).map_err(fail(&mut steps))?;
        let response = gateway
            .complete(&ChatRequest::new(prompt.clone(), config.clone()))
            .map_err(fail(&mut steps))?;
        steps.push(StepRecord::from_response("st", prompt, &response));
        final_answer = response.text;
    }

    if mode.runs_oi() {
        let bindings = Bindings::new()
            .bind("original-task", task.full_text())
            .bind("st-answer", &final_answer);
        let prompt = templates.oi.render(&bindings).map_err(fail(&mut steps))?;
        let response = gateway
            .complete(&ChatRequest::new(prompt.clone(), config.clone()))
            .map_err(fail(&mut steps))?;
        steps.push(StepRecord::from_response("oi", prompt, &response));
        final_answer = response.text;
    }

    let total_calls = steps.len() as u64;
    Ok(Transcript {
        task_id: task.id.clone(),
        method: mode.method_id(),
        steps,
        final_answer,
        total_calls,
    })
}

//! Single- and two-call comparison methods, plus user-supplied prompt
//! chains.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use once_cell::sync::Lazy;
use regex::Regex;

use crate::fst::{sanitize_id, StepRecord, Transcript};
use crate::gateway::{ChatRequest, Gateway, GatewayError, ModelConfig};
use crate::method::MethodId;
use crate::task::TaskInstance;

/// The verbatim chain-of-thought trigger appended by [`run_cot`].
pub const COT_TRIGGER: &str = "Let's think step by step";

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("task {0:?} has an empty statement")]
    EmptyTask(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("external chain directory {} has no .txt step files", dir.display())]
    NoSteps { dir: PathBuf },
    #[error("unknown placeholder <<{name}>> in external step {file}; only <<the-task>> and <<previous-answer>> are available")]
    UnknownPlaceholder { file: String, name: String },
    #[error("unclosed placeholder delimiter in external step {file}")]
    UnclosedDelimiter { file: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn check_task(task: &TaskInstance) -> Result<(), BaselineError> {
    if task.statement.trim().is_empty() {
        return Err(BaselineError::EmptyTask(task.id.clone()));
    }
    Ok(())
}

fn single_call(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
    method: MethodId,
    prompt: String,
) -> Result<Transcript, BaselineError> {
    let response = gateway.complete(&ChatRequest::new(prompt.clone(), config.clone()))?;
    let record = StepRecord::from_response("answer", prompt, &response);
    Ok(Transcript {
        task_id: task.id.clone(),
        method,
        final_answer: response.text,
        steps: vec![record],
        total_calls: 1,
    })
}

/// One raw call with the task text as the whole prompt.
pub fn run_base(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
) -> Result<Transcript, BaselineError> {
    check_task(task)?;
    single_call(gateway, config, task, MethodId::Base, task.full_text())
}

/// One call with the chain-of-thought trigger appended to the task text.
pub fn run_cot(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
) -> Result<Transcript, BaselineError> {
    check_task(task)?;
    let prompt = format!("{}\n\n{}", task.full_text().trim_end(), COT_TRIGGER);
    single_call(gateway, config, task, MethodId::ZeroShotCot, prompt)
}

/// Two calls: elicit the skills and knowledge the task involves, then solve
/// the task grounded on that abstraction.
pub fn run_step_back(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
) -> Result<Transcript, BaselineError> {
    check_task(task)?;
    let full = task.full_text();
    let abstraction_prompt = format!(
        "Consider the following task:\n\n{}\n\nWhat are the skills and knowledge involved in completing this task?",
        full.trim_end()
    );
    let abstraction =
        gateway.complete(&ChatRequest::new(abstraction_prompt.clone(), config.clone()))?;
    let answer_prompt = format!(
        "{}\n\nUseful background:\n{}\n\nNow complete the task.",
        full.trim_end(),
        abstraction.text.trim_end()
    );
    let answer = gateway.complete(&ChatRequest::new(answer_prompt.clone(), config.clone()))?;
    Ok(Transcript {
        task_id: task.id.clone(),
        method: MethodId::StepBack,
        final_answer: answer.text.clone(),
        steps: vec![
            StepRecord::from_response("abstraction", abstraction_prompt, &abstraction),
            StepRecord::from_response("answer", answer_prompt, &answer),
        ],
        total_calls: 2,
    })
}

fn render_chain_step(
    file: &str,
    body: &str,
    task_text: &str,
    previous: &str,
) -> Result<String, BaselineError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find("<<") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find(">>") else {
            return Err(BaselineError::UnclosedDelimiter { file: file.to_string() });
        };
        let name = &after[..close];
        match name {
            "the-task" => out.push_str(task_text),
            "previous-answer" => out.push_str(previous),
            other => {
                return Err(BaselineError::UnknownPlaceholder {
                    file: file.to_string(),
                    name: other.to_string(),
                })
            }
        }
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Run a user-supplied prompt chain: every `.txt` file in `dir`, in
/// lexicographic order, is one step. Steps may reference `<<the-task>>` and
/// `<<previous-answer>>` (empty at the first step); the last step's response
/// is the final answer.
pub fn run_external_chain(
    gateway: &Gateway,
    config: &ModelConfig,
    task: &TaskInstance,
    name: &str,
    dir: &Path,
) -> Result<Transcript, BaselineError> {
    check_task(task)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| BaselineError::Io { path: dir.to_path_buf(), source })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(BaselineError::NoSteps { dir: dir.to_path_buf() });
    }

    let task_text = task.full_text();
    let mut steps = Vec::with_capacity(files.len());
    let mut previous = String::new();
    for path in &files {
        let body = std::fs::read_to_string(path)
            .map_err(|source| BaselineError::Io { path: path.clone(), source })?;
        let label = path
            .file_stem()
            .map(|s| sanitize_id(&s.to_string_lossy()))
            .unwrap_or_else(|| "step".to_string());
        let prompt = render_chain_step(&label, &body, &task_text, &previous)?;
        let response = gateway.complete(&ChatRequest::new(prompt.clone(), config.clone()))?;
        previous = response.text.clone();
        steps.push(StepRecord::from_response(&label, prompt, &response));
    }

    let total_calls = steps.len() as u64;
    Ok(Transcript {
        task_id: task.id.clone(),
        method: MethodId::External(name.to_string()),
        final_answer: previous,
        steps,
        total_calls,
    })
}

/// Votes per distinct answer out of `n` drawn samples. Samples that yielded
/// no parseable answer count toward `n` but not toward any entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoteDistribution {
    pub counts: BTreeMap<String, usize>,
    pub n: usize,
}

impl VoteDistribution {
    pub fn from_keys<'a>(keys: impl IntoIterator<Item = Option<&'a str>>) -> Self {
        let mut dist = VoteDistribution::default();
        for key in keys {
            dist.n += 1;
            if let Some(key) = key {
                *dist.counts.entry(key.to_string()).or_default() += 1;
            }
        }
        dist
    }
}

/// The modal answer and its vote count. Ties go to the lexicographically
/// smallest answer.
pub fn majority_vote(dist: &VoteDistribution) -> Option<(String, usize)> {
    let mut best: Option<(&str, usize)> = None;
    for (answer, &votes) in &dist.counts {
        // BTreeMap iterates in ascending order, so a strict comparison keeps
        // the smallest answer on ties.
        if best.map_or(true, |(_, b)| votes > b) {
            best = Some((answer, votes));
        }
    }
    best.map(|(a, v)| (a.to_string(), v))
}

static STEP_MARKER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\bstep\s+(\d+)\b").expect("static regex"));

/// How many reasoning steps a response shows: the number of distinct
/// "Step k" markers, else the number of non-empty line blocks, with a floor
/// of one.
pub fn count_reasoning_steps(response: &str) -> usize {
    let distinct: std::collections::BTreeSet<&str> = STEP_MARKER
        .captures_iter(response)
        .map(|c| c.get(1).expect("group").as_str())
        .collect();
    if !distinct.is_empty() {
        return distinct.len();
    }
    let blocks = response
        .split("\n\n")
        .filter(|block| !block.trim().is_empty())
        .count();
    blocks.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendKind, MockScript};
    use crate::task::{GoldLabel, TaskFamily};

    fn task() -> TaskInstance {
        TaskInstance {
            id: "t1".into(),
            family: TaskFamily::MathReasoning,
            statement: "What is 2 + 2?".into(),
            context: None,
            choices: vec![],
            required_words: vec![],
            gold: GoldLabel::Numeric(4.0),
            category: None,
            score_range: None,
        }
    }

    fn config() -> ModelConfig {
        ModelConfig::new(BackendKind::Mock, "mock-model")
    }

    #[test]
    fn base_sends_the_task_verbatim() {
        let gateway = Gateway::mock(MockScript::with_default("4"));
        let transcript = run_base(&gateway, &config(), &task()).unwrap();
        assert_eq!(transcript.method, MethodId::Base);
        assert_eq!(transcript.steps[0].rendered_prompt, "What is 2 + 2?");
        assert_eq!(transcript.final_answer, "4");
        assert_eq!(transcript.total_calls, 1);
        assert_eq!(gateway.usage().calls, 1);
    }

    #[test]
    fn cot_appends_the_trigger_at_the_end() {
        let gateway = Gateway::mock(MockScript::with_default("thinking... 4"));
        let transcript = run_cot(&gateway, &config(), &task()).unwrap();
        assert_eq!(transcript.method, MethodId::ZeroShotCot);
        assert!(transcript.steps[0]
            .rendered_prompt
            .ends_with("Let's think step by step"));
        assert_eq!(transcript.total_calls, 1);
    }

    #[test]
    fn step_back_grounds_the_answer_on_the_abstraction() {
        let script = MockScript::new(vec![])
            .contains("skills and knowledge involved", "arithmetic: addition")
            .or_default("the answer is 4");
        let gateway = Gateway::mock(script);
        let transcript = run_step_back(&gateway, &config(), &task()).unwrap();
        assert_eq!(transcript.method, MethodId::StepBack);
        assert_eq!(transcript.total_calls, 2);
        assert_eq!(gateway.usage().calls, 2);
        let labels: Vec<&str> = transcript.steps.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["abstraction", "answer"]);
        assert!(transcript.steps[0]
            .rendered_prompt
            .contains("skills and knowledge involved in completing this task"));
        assert!(transcript.steps[1]
            .rendered_prompt
            .contains("arithmetic: addition"));
        assert_eq!(transcript.final_answer, "the answer is 4");
    }

    #[test]
    fn empty_statements_are_rejected_before_any_call() {
        let gateway = Gateway::mock(MockScript::with_default("x"));
        let mut t = task();
        t.statement = "   ".into();
        assert!(matches!(
            run_base(&gateway, &config(), &t),
            Err(BaselineError::EmptyTask(_))
        ));
        assert!(matches!(
            run_cot(&gateway, &config(), &t),
            Err(BaselineError::EmptyTask(_))
        ));
        assert!(matches!(
            run_step_back(&gateway, &config(), &t),
            Err(BaselineError::EmptyTask(_))
        ));
        assert_eq!(gateway.usage().calls, 0);
    }

    #[test]
    fn external_chains_run_in_file_order_and_thread_answers() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("01-draft.txt"),
            "Draft an answer to: <<the-task>>",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("02-polish.txt"),
            "Task: <<the-task>>\nDraft: <<previous-answer>>\nPolish it.",
        )
        .unwrap();
        std::fs::write(dir.path().join("notes.md"), "not a step").unwrap();

        let script = MockScript::new(vec![])
            .contains("Polish it.", "final polished 4")
            .contains("Draft an answer", "rough 4");
        let gateway = Gateway::mock(script);
        let transcript =
            run_external_chain(&gateway, &config(), &task(), "two-pass", dir.path()).unwrap();

        assert_eq!(transcript.method, MethodId::External("two-pass".into()));
        assert_eq!(transcript.total_calls, 2);
        let labels: Vec<&str> = transcript.steps.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["01-draft", "02-polish"]);
        assert!(transcript.steps[1].rendered_prompt.contains("rough 4"));
        assert_eq!(transcript.final_answer, "final polished 4");
        assert_eq!(transcript.file_name(), "t1__ext-two-pass.json");
    }

    #[test]
    fn external_chain_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let gateway = Gateway::mock(MockScript::with_default("x"));
        assert!(matches!(
            run_external_chain(&gateway, &config(), &task(), "empty", dir.path()),
            Err(BaselineError::NoSteps { .. })
        ));

        std::fs::write(dir.path().join("01.txt"), "use <<unknown-thing>>").unwrap();
        assert!(matches!(
            run_external_chain(&gateway, &config(), &task(), "bad", dir.path()),
            Err(BaselineError::UnknownPlaceholder { .. })
        ));

        std::fs::write(dir.path().join("01.txt"), "broken <<the-task").unwrap();
        assert!(matches!(
            run_external_chain(&gateway, &config(), &task(), "broken", dir.path()),
            Err(BaselineError::UnclosedDelimiter { .. })
        ));
    }

    #[test]
    fn majority_vote_prefers_most_votes_then_smallest_answer() {
        let dist = VoteDistribution::from_keys([Some("8"), Some("8"), Some("9")]);
        assert_eq!(dist.n, 3);
        assert_eq!(majority_vote(&dist), Some(("8".to_string(), 2)));

        let tie = VoteDistribution::from_keys([Some("9"), Some("8")]);
        assert_eq!(majority_vote(&tie), Some(("8".to_string(), 1)));

        let empty = VoteDistribution::default();
        assert_eq!(majority_vote(&empty), None);

        let unparsed = VoteDistribution::from_keys([Some("8"), None, None]);
        assert_eq!(unparsed.n, 3);
        assert_eq!(majority_vote(&unparsed), Some(("8".to_string(), 1)));
    }

    #[test]
    fn step_counting_prefers_markers_then_blocks() {
        assert_eq!(count_reasoning_steps("Step 1: add. Step 2: check."), 2);
        assert_eq!(count_reasoning_steps("Step 1: a\nStep 1 again\nstep 2: b"), 2);
        assert_eq!(count_reasoning_steps("first paragraph\n\nsecond paragraph"), 2);
        assert_eq!(count_reasoning_steps("one line only"), 1);
        assert_eq!(count_reasoning_steps(""), 1);
        assert_eq!(count_reasoning_steps("  \n\n  "), 1);
    }
}

//! Shared fixtures for the integration tests: synthetic datasets per task
//! family, and scripted mock backends shaped around the prompts each method
//! actually renders.
//!
//! Script construction leans on two facts about the pipeline prompts:
//! the refine-stage prompt embeds the draft answer, and the check-stage
//! prompt embeds both the original task and the refined answer. Each task
//! therefore gets bracket-bounded markers (`[draft id]`, `[st id]`) planted
//! in the scripted responses, and rules are ordered so the most specific
//! marker wins before the bare statement rule catches the first call.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use fastslow::gateway::{MockMatcher, MockRule, MockScript};
use fastslow::task::{Choice, GoldLabel, TaskFamily, TaskInstance};

/// Digit-free tags so task ids never collide with numeric answer extraction.
const TAGS: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

pub fn tag(i: usize) -> String {
    if i < TAGS.len() {
        TAGS[i].to_string()
    } else {
        format!("{}-{}", TAGS[(i / TAGS.len()) - 1], TAGS[i % TAGS.len()])
    }
}

fn bare(id: String, family: TaskFamily, statement: String) -> TaskInstance {
    TaskInstance {
        id,
        family,
        statement,
        context: None,
        choices: Vec::new(),
        required_words: Vec::new(),
        gold: GoldLabel::None,
        category: None,
        score_range: None,
    }
}

pub fn math_task(i: usize) -> TaskInstance {
    let t = tag(i);
    let a = 3 + i as i64;
    let mut task = bare(
        format!("math-{t}"),
        TaskFamily::MathReasoning,
        format!("Task math-{t}: a basket holds {a} plums and a second identical basket arrives; how many plums are there in total?"),
    );
    task.gold = GoldLabel::Numeric((2 * a) as f64);
    task
}

pub fn choice_task(i: usize) -> TaskInstance {
    let t = tag(i);
    let labels = ["A", "B", "C", "D"];
    let gold = labels[i % labels.len()];
    let mut task = bare(
        format!("mc-{t}"),
        TaskFamily::MultipleChoice,
        format!("Task mc-{t}: which option is the marked one?"),
    );
    task.choices = labels
        .iter()
        .map(|l| Choice {
            label: l.to_string(),
            text: if *l == gold {
                format!("the marked option of {t}")
            } else {
                "an unmarked option".to_string()
            },
        })
        .collect();
    task.gold = GoldLabel::Choice(gold.to_string());
    task
}

pub fn long_task(i: usize) -> TaskInstance {
    let t = tag(i);
    let phrase = format!("a quiet {t} harbor");
    let mut task = bare(
        format!("long-{t}"),
        TaskFamily::LongContentQa,
        format!("Task long-{t}: what does the report call the landing site?"),
    );
    task.context = Some(format!(
        "Site report {t}: after a long survey the crew described the landing site as {phrase}, and moved on."
    ));
    task.gold = GoldLabel::Text(phrase);
    task.category = Some(if i % 2 == 0 { "single-doc" } else { "multi-doc" }.to_string());
    task
}

pub fn essay_task(i: usize) -> TaskInstance {
    let t = tag(i);
    let mut task = bare(
        format!("essay-{t}"),
        TaskFamily::EssayScoring,
        format!("Task essay-{t}: score the essay below against the rubric."),
    );
    task.context = Some(format!(
        "Essay {t}: the tide came in, and the {t} lighthouse kept its watch over the bay."
    ));
    task.gold = GoldLabel::Score(1 + (i as i64 % 5));
    task.score_range = Some((1, 5));
    task
}

pub fn story_task(i: usize) -> TaskInstance {
    let t = tag(i);
    let mut task = bare(
        format!("story-{t}"),
        TaskFamily::ConstrainedStory,
        format!("Task story-{t}: write a very short story that uses every required word."),
    );
    task.required_words = vec![format!("{t}stone"), "lantern".to_string(), "compass".to_string()];
    task
}

pub fn tasks_of(family: TaskFamily, n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| match family {
            TaskFamily::MathReasoning => math_task(i),
            TaskFamily::MultipleChoice => choice_task(i),
            TaskFamily::LongContentQa => long_task(i),
            TaskFamily::EssayScoring => essay_task(i),
            TaskFamily::ConstrainedStory => story_task(i),
        })
        .collect()
}

/// The response text that scores full marks for the task.
pub fn gold_answer_text(task: &TaskInstance) -> String {
    match &task.gold {
        GoldLabel::Numeric(v) => {
            if v.fract() == 0.0 {
                format!("The answer is {}.", *v as i64)
            } else {
                format!("The answer is {v}.")
            }
        }
        GoldLabel::Choice(l) => format!("The correct choice is ({l})."),
        GoldLabel::Score(s) => format!("Score: {s}"),
        GoldLabel::Text(t) => t.clone(),
        GoldLabel::None => format!("They packed the {}.", task.required_words.join(", the ")),
    }
}

fn rule(key: impl Into<String>, response: impl Into<String>) -> MockRule {
    MockRule {
        matcher: MockMatcher::ContainsSubstring,
        key: key.into(),
        response: response.into(),
    }
}

/// First-stage response in the three-section shape the parser expects; the
/// answer section plants the draft marker the next stage's rule keys on.
pub fn ft_response(task: &TaskInstance) -> String {
    format!(
        "Simplified task: the core of {id}\nRemoved constraints: the fine print of {id}\nAnswer: [draft {id}]",
        id = task.id
    )
}

pub fn st_response(task: &TaskInstance, answer: &str) -> String {
    format!("[st {id}] working answer: {answer}", id = task.id)
}

/// Rules for one task under the full pipeline. Order matters: the check
/// prompt contains the refined answer *and* the statement, so the `[st ..]`
/// rule has to come first; likewise the refine prompt carries `[draft ..]`.
pub fn fst_task_rules(task: &TaskInstance) -> Vec<MockRule> {
    let answer = gold_answer_text(task);
    vec![
        rule(format!("[st {}]", task.id), answer.clone()),
        rule(format!("[draft {}]", task.id), st_response(task, &answer)),
        rule(task.statement.clone(), ft_response(task)),
    ]
}

pub fn fst_script(tasks: &[TaskInstance]) -> MockScript {
    MockScript::new(tasks.iter().flat_map(fst_task_rules).collect())
}

/// One statement-keyed rule per task; enough for the single- and two-call
/// methods, whose every prompt embeds the full task text.
pub fn flat_script(tasks: &[TaskInstance]) -> MockScript {
    MockScript::new(
        tasks
            .iter()
            .map(|t| rule(t.statement.clone(), gold_answer_text(t)))
            .collect(),
    )
}

pub fn sampling_key(task: &TaskInstance) -> String {
    format!("{}\n\nLet's think step by step", task.full_text().trim_end())
}

/// A sample that votes consistently and with minimal reasoning, so the
/// router settles the task fast.
pub fn fast_sample_response(task: &TaskInstance) -> String {
    format!("Step 1: restate it.\nStep 2: settle it. {}", gold_answer_text(task))
}

/// A sample with nothing extractable in it: an unparsed vote that pushes
/// the task toward the slow path.
pub const STALLED_SAMPLE: &str = "Still mulling it over without committing to anything.";

/// Rules for one task under consistency routing. The sampling rule must sit
/// before the statement rule (the sampling prompt embeds the statement) and
/// after the pipeline markers (slow tasks fall through to the pipeline).
pub fn dynathink_task_rules(task: &TaskInstance, fast: bool) -> Vec<MockRule> {
    let answer = gold_answer_text(task);
    let sample = if fast {
        fast_sample_response(task)
    } else {
        STALLED_SAMPLE.to_string()
    };
    vec![
        rule(format!("[st {}]", task.id), answer.clone()),
        rule(format!("[draft {}]", task.id), st_response(task, &answer)),
        rule(sampling_key(task), sample),
        rule(task.statement.clone(), ft_response(task)),
    ]
}

pub fn dynathink_script(tasks: &[TaskInstance], fast: impl Fn(&TaskInstance) -> bool) -> MockScript {
    MockScript::new(
        tasks
            .iter()
            .flat_map(|t| dynathink_task_rules(t, fast(t)))
            .collect(),
    )
}

pub fn write_jsonl(path: &Path, tasks: &[TaskInstance]) {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("serialize task"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).expect("create dataset dir");
    }
    fs::write(path, out).expect("write dataset");
}

pub fn write_script(path: &Path, script: &MockScript) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).expect("create script dir");
    }
    fs::write(path, serde_json::to_string_pretty(script).expect("serialize script"))
        .expect("write script");
}

/// Minimal mock-backed config; callers append extra sections as needed.
pub fn mock_config_toml(
    dataset: &Path,
    family: TaskFamily,
    method: &str,
    script: &Path,
    output_dir: &Path,
) -> String {
    format!(
        "[dataset]\npath = {dataset:?}\nfamily = {family:?}\n\n\
         [method]\nname = {method:?}\n\n\
         [model]\nbackend = \"mock\"\nname = \"scripted\"\nscript = {script:?}\n\n\
         [run]\nconcurrency = 2\noutput_dir = {outdir:?}\n",
        dataset = dataset.display().to_string(),
        family = family.as_str(),
        method = method,
        script = script.display().to_string(),
        outdir = output_dir.display().to_string(),
    )
}

/// Write a full mock experiment under `dir`: dataset, script, config.
/// Returns the config path.
pub fn stage_experiment(
    dir: &Path,
    family: TaskFamily,
    method: &str,
    tasks: &[TaskInstance],
    script: &MockScript,
) -> PathBuf {
    let dataset = dir.join("dataset.jsonl");
    let script_path = dir.join("script.json");
    let config_path = dir.join("config.toml");
    write_jsonl(&dataset, tasks);
    write_script(&script_path, script);
    let toml = mock_config_toml(&dataset, family, method, &script_path, &dir.join("out"));
    fs::write(&config_path, toml).expect("write config");
    config_path
}

//! End-to-end runs over the mock backend: call budgets, transcript layout,
//! deterministic artifacts, failure handling, and per-family scoring.

mod common;

use std::fs;

use fastslow::runner::{load_experiment_config, rescore_manifest, run_experiment};
use fastslow::task::TaskFamily;
use tempfile::TempDir;

use common::*;

#[test]
fn fst_run_yields_transcripts_and_budgeted_calls() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    let config_path = stage_experiment(
        dir.path(),
        TaskFamily::MathReasoning,
        "fst",
        &tasks,
        &fst_script(&tasks),
    );
    let config = load_experiment_config(&config_path).unwrap();
    let arts = run_experiment(&config).unwrap();

    assert_eq!(arts.report.rows.len(), 3);
    for row in &arts.report.rows {
        assert_eq!(row.score, 1.0, "task {} not scored correct", row.task_id);
        assert_eq!(row.calls, 3);
        assert!(row.error.is_none());
    }
    assert_eq!(arts.report.metrics["result-accuracy"], 100.0);
    assert_eq!(arts.report.metrics["total-calls"], 9.0);
    assert_eq!(arts.manifest.usage.calls, 9);
    assert_eq!(arts.manifest.tasks.len(), 3);

    let transcripts_dir = arts.manifest_path.parent().unwrap().join("transcripts");
    let transcripts: Vec<_> = fs::read_dir(&transcripts_dir).unwrap().collect();
    assert_eq!(transcripts.len(), 3);
    for t in &arts.manifest.tasks {
        let rel = t.transcript.as_ref().expect("transcript recorded");
        assert!(arts.manifest_path.parent().unwrap().join(rel).exists());
    }
}

#[test]
fn identical_mock_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    let config_path = stage_experiment(
        dir.path(),
        TaskFamily::MathReasoning,
        "fst",
        &tasks,
        &fst_script(&tasks),
    );
    let config = load_experiment_config(&config_path).unwrap();

    let first = run_experiment(&config).unwrap();
    let manifest_1 = fs::read(&first.manifest_path).unwrap();
    let report_1 = fs::read(&first.report_tsv).unwrap();

    let second = run_experiment(&config).unwrap();
    let manifest_2 = fs::read(&second.manifest_path).unwrap();
    let report_2 = fs::read(&second.report_tsv).unwrap();

    assert_eq!(manifest_1, manifest_2, "manifest bytes differ across reruns");
    assert_eq!(report_1, report_2, "report bytes differ across reruns");
}

#[test]
fn baseline_methods_spend_their_fixed_budgets() {
    for (method, per_task) in [("base", 1u64), ("zero-shot-cot", 1), ("step-back", 2)] {
        let dir = TempDir::new().unwrap();
        let tasks = tasks_of(TaskFamily::MathReasoning, 4);
        let config_path = stage_experiment(
            dir.path(),
            TaskFamily::MathReasoning,
            method,
            &tasks,
            &flat_script(&tasks),
        );
        let config = load_experiment_config(&config_path).unwrap();
        let arts = run_experiment(&config).unwrap();
        assert_eq!(arts.manifest.usage.calls, 4 * per_task, "method {method}");
        assert_eq!(arts.report.metrics["result-accuracy"], 100.0, "method {method}");
        for row in &arts.report.rows {
            assert_eq!(row.calls, per_task, "method {method}, task {}", row.task_id);
        }
    }
}

#[test]
fn external_chain_runs_every_step_in_file_order() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 2);
    let chain = dir.path().join("chain");
    fs::create_dir_all(&chain).unwrap();
    fs::write(chain.join("01-outline.txt"), "Outline a solution to:\n<<the-task>>").unwrap();
    fs::write(
        chain.join("02-final.txt"),
        "Given this outline:\n<<previous-answer>>\n\nNow answer:\n<<the-task>>",
    )
    .unwrap();

    let dataset = dir.path().join("dataset.jsonl");
    let script_path = dir.path().join("script.json");
    write_jsonl(&dataset, &tasks);
    write_script(&script_path, &flat_script(&tasks));
    let toml = mock_config_toml(
        &dataset,
        TaskFamily::MathReasoning,
        "ext:refine",
        &script_path,
        &dir.path().join("out"),
    )
    .replace(
        "name = \"ext:refine\"\n",
        &format!("name = \"ext:refine\"\nchain_dir = {:?}\n", chain.display().to_string()),
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, &toml).unwrap();
    let config = load_experiment_config(&config_path).unwrap();
    let arts = run_experiment(&config).unwrap();

    assert_eq!(arts.manifest.usage.calls, 4, "two steps per task");
    assert_eq!(arts.report.metrics["result-accuracy"], 100.0);
    for row in &arts.report.rows {
        assert_eq!(row.calls, 2);
    }
}

#[test]
fn dynathink_routes_fast_and_slow_tasks() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    // first two tasks vote consistently; the last never parses and goes slow
    let script = dynathink_script(&tasks, |t| t.id != tasks[2].id);
    let dataset = dir.path().join("dataset.jsonl");
    let script_path = dir.path().join("script.json");
    write_jsonl(&dataset, &tasks);
    write_script(&script_path, &script);
    let toml = format!(
        "{}\n[dynathink]\nn0 = 2\nn_max = 4\n",
        mock_config_toml(
            &dataset,
            TaskFamily::MathReasoning,
            "dynathink",
            &script_path,
            &dir.path().join("out"),
        )
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, toml).unwrap();
    let config = load_experiment_config(&config_path).unwrap();
    let arts = run_experiment(&config).unwrap();

    // round 1: all three draw 2 samples; the stalled task retries with 4
    // more, decides nothing, and falls through to the 3-call pipeline.
    assert_eq!(arts.report.metrics["result-accuracy"], 100.0);
    let by_id: std::collections::BTreeMap<_, _> = arts
        .report
        .rows
        .iter()
        .map(|r| (r.task_id.as_str(), r.calls))
        .collect();
    assert_eq!(by_id[tasks[0].id.as_str()], 2);
    assert_eq!(by_id[tasks[1].id.as_str()], 2);
    assert_eq!(by_id[tasks[2].id.as_str()], 6 + 3);
    assert_eq!(arts.manifest.usage.calls, 2 + 2 + 9);
}

#[test]
fn unscripted_task_fails_alone_and_scores_zero() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    // script only covers the first two tasks
    let script = fst_script(&tasks[..2]);
    let config_path = stage_experiment(
        dir.path(),
        TaskFamily::MathReasoning,
        "fst",
        &tasks,
        &script,
    );
    let config = load_experiment_config(&config_path).unwrap();
    let arts = run_experiment(&config).unwrap();

    assert_eq!(arts.report.rows.len(), 3, "failed task still has a row");
    let failed: Vec<_> = arts.report.rows.iter().filter(|r| r.error.is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].task_id, tasks[2].id);
    assert_eq!(failed[0].score, 0.0);
    let accuracy = arts.report.metrics["result-accuracy"];
    assert!((accuracy - 200.0 / 3.0).abs() < 1e-9, "got {accuracy}");
}

#[test]
fn rescore_reproduces_the_report_from_transcripts() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    let config_path = stage_experiment(
        dir.path(),
        TaskFamily::MathReasoning,
        "fst",
        &tasks,
        &fst_script(&tasks),
    );
    let config = load_experiment_config(&config_path).unwrap();
    let arts = run_experiment(&config).unwrap();
    let original = fs::read(&arts.report_tsv).unwrap();
    fs::remove_file(&arts.report_tsv).unwrap();

    let rescored = rescore_manifest(&arts.manifest_path).unwrap();
    let rebuilt = fs::read(&rescored.report_tsv).unwrap();
    assert_eq!(original, rebuilt, "rescoring changed the report");
}

#[test]
fn sampling_picks_a_stable_seeded_subset() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 6);
    let dataset = dir.path().join("dataset.jsonl");
    let script_path = dir.path().join("script.json");
    write_jsonl(&dataset, &tasks);
    write_script(&script_path, &fst_script(&tasks));
    let toml = format!(
        "{}\n[sample]\nn = 2\nseed = 7\n",
        mock_config_toml(
            &dataset,
            TaskFamily::MathReasoning,
            "fst",
            &script_path,
            &dir.path().join("out"),
        )
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, toml).unwrap();
    let config = load_experiment_config(&config_path).unwrap();

    let first = run_experiment(&config).unwrap();
    let second = run_experiment(&config).unwrap();
    assert_eq!(first.report.rows.len(), 2);
    let ids = |a: &fastslow::runner::RunArtifacts| {
        a.report.rows.iter().map(|r| r.task_id.clone()).collect::<Vec<_>>()
    };
    assert_eq!(ids(&first), ids(&second), "same seed must sample the same subset");
}

#[test]
fn every_family_scores_through_the_runner() {
    // (family, metric that proves the family-specific scorer ran, expected)
    let cases = [
        (TaskFamily::MultipleChoice, "result-accuracy", 100.0),
        (TaskFamily::LongContentQa, "macro-average", 100.0),
        (TaskFamily::EssayScoring, "qwk", 1.0),
        (TaskFamily::ConstrainedStory, "all-present-rate", 100.0),
    ];
    for (family, metric, expected) in cases {
        let dir = TempDir::new().unwrap();
        let tasks = tasks_of(family, 4);
        let config_path =
            stage_experiment(dir.path(), family, "fst", &tasks, &fst_script(&tasks));
        let config = load_experiment_config(&config_path).unwrap();
        let arts = run_experiment(&config).unwrap();
        let got = arts.report.metrics.get(metric).copied().unwrap_or_else(|| {
            panic!(
                "{family:?}: metric {metric} missing; have {:?} errors {:?}",
                arts.report.metrics, arts.report.metric_errors
            )
        });
        assert!(
            (got - expected).abs() < 1e-9,
            "{family:?}: {metric} = {got}, want {expected}"
        );
    }
    // story runs also report the complement rate
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::ConstrainedStory, 4);
    let config_path = stage_experiment(
        dir.path(),
        TaskFamily::ConstrainedStory,
        "fst",
        &tasks,
        &fst_script(&tasks),
    );
    let arts = run_experiment(&load_experiment_config(&config_path).unwrap()).unwrap();
    assert_eq!(arts.report.metrics["missing-coverage-rate"], 0.0);
}

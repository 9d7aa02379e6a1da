//! Cross-cutting runner guarantees: the concurrency ceiling is respected,
//! cached reruns issue no new calls, and report totals stay additive.

mod common;

use std::fs;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use fastslow::gateway::{
    Backend, BackendKind, ChatRequest, Gateway, GatewayError, MockBackend, RetryPolicy,
};
use fastslow::runner::{load_experiment_config, run_experiment, run_experiment_with_gateway};
use fastslow::task::TaskFamily;
use tempfile::TempDir;

use common::*;

/// Wraps the scripted backend, tracking how many `complete` calls overlap.
struct InstrumentedBackend {
    inner: MockBackend,
    in_flight: AtomicI64,
    max_in_flight: AtomicI64,
    delay: Duration,
}

impl InstrumentedBackend {
    fn new(script: fastslow::gateway::MockScript, delay: Duration) -> Self {
        InstrumentedBackend {
            inner: MockBackend::new(script),
            in_flight: AtomicI64::new(0),
            max_in_flight: AtomicI64::new(0),
            delay,
        }
    }
}

impl Backend for InstrumentedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let out = self.inner.complete(req);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

fn run_with_limit(method: &str, n_tasks: usize, limit: usize) -> i64 {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, n_tasks);
    let script = match method {
        "fst" => fst_script(&tasks),
        _ => flat_script(&tasks),
    };
    let config_path = stage_experiment(dir.path(), TaskFamily::MathReasoning, method, &tasks, &script);
    let toml = fs::read_to_string(&config_path)
        .unwrap()
        .replace("concurrency = 2", &format!("concurrency = {limit}"));
    fs::write(&config_path, toml).unwrap();
    let config = load_experiment_config(&config_path).unwrap();

    let backend = Arc::new(InstrumentedBackend::new(script, Duration::from_millis(25)));
    let gateway = Gateway::new(backend.clone(), None, RetryPolicy::default());
    let arts = run_experiment_with_gateway(&config, &gateway).unwrap();
    assert!(
        arts.report.rows.iter().all(|r| r.error.is_none()),
        "instrumented run must stay clean"
    );
    backend.max_in_flight.load(Ordering::SeqCst)
}

#[test]
fn concurrency_limit_caps_in_flight_calls() {
    let max = run_with_limit("base", 12, 3);
    assert!(max <= 3, "in-flight peak {max} exceeded the limit of 3");
    assert!(max >= 2, "limit 3 never overlapped at all (peak {max})");
}

#[test]
fn pipeline_runs_respect_the_limit_too() {
    let max = run_with_limit("fst", 6, 2);
    assert!(max <= 2, "in-flight peak {max} exceeded the limit of 2");
}

#[test]
fn serial_runs_never_overlap() {
    let max = run_with_limit("base", 5, 1);
    assert_eq!(max, 1, "concurrency 1 must serialize");
}

#[test]
fn cached_rerun_issues_no_new_calls() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 3);
    let dataset = dir.path().join("dataset.jsonl");
    let script_path = dir.path().join("script.json");
    write_jsonl(&dataset, &tasks);
    write_script(&script_path, &fst_script(&tasks));
    let toml = mock_config_toml(
        &dataset,
        TaskFamily::MathReasoning,
        "fst",
        &script_path,
        &dir.path().join("out"),
    )
    .replace(
        "script = ",
        &format!(
            "cache = true\ncache_dir = {:?}\nscript = ",
            dir.path().join("cache").display().to_string()
        ),
    );
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, toml).unwrap();
    let config = load_experiment_config(&config_path).unwrap();

    let first = run_experiment(&config).unwrap();
    assert_eq!(first.manifest.usage.calls, 9);
    assert_eq!(first.manifest.usage.cache_hits, 0);

    let second = run_experiment(&config).unwrap();
    assert_eq!(second.manifest.usage.calls, 0, "a completed run must replay from cache");
    assert_eq!(second.manifest.usage.cache_hits, 9);
    assert_eq!(
        fs::read(&first.report_tsv).unwrap(),
        fs::read(&second.report_tsv).unwrap(),
        "cached replay must score identically"
    );
}

#[test]
fn partial_run_resumes_without_reissuing_completed_calls() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 4);
    let dataset = dir.path().join("dataset.jsonl");
    let script_path = dir.path().join("script.json");
    write_jsonl(&dataset, &tasks);
    write_script(&script_path, &fst_script(&tasks));
    let base_toml = mock_config_toml(
        &dataset,
        TaskFamily::MathReasoning,
        "fst",
        &script_path,
        &dir.path().join("out"),
    )
    .replace(
        "script = ",
        &format!(
            "cache = true\ncache_dir = {:?}\nscript = ",
            dir.path().join("cache").display().to_string()
        ),
    );

    // first pass covers only half the dataset, as an interrupted run would
    let partial = format!("{base_toml}\n[sample]\nn = 2\nseed = 5\n");
    let partial_path = dir.path().join("partial.toml");
    fs::write(&partial_path, partial).unwrap();
    let first = run_experiment(&load_experiment_config(&partial_path).unwrap()).unwrap();
    assert_eq!(first.manifest.usage.calls, 6);

    // the full rerun only pays for the tasks the first pass never reached
    let full_path = dir.path().join("full.toml");
    fs::write(&full_path, base_toml).unwrap();
    let second = run_experiment(&load_experiment_config(&full_path).unwrap()).unwrap();
    assert_eq!(second.report.rows.len(), 4);
    assert_eq!(second.manifest.usage.calls, 6, "two unseen tasks at three calls each");
    assert_eq!(second.manifest.usage.cache_hits, 6);
}

#[test]
fn report_total_calls_is_the_row_sum() {
    let dir = TempDir::new().unwrap();
    let tasks = tasks_of(TaskFamily::MathReasoning, 4);
    let script = dynathink_script(&tasks, |t| t.id != tasks[3].id);
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
    let arts = run_experiment(&load_experiment_config(&config_path).unwrap()).unwrap();

    let row_sum: u64 = arts.report.rows.iter().map(|r| r.calls).sum();
    assert_eq!(arts.report.metrics["total-calls"], row_sum as f64);
    assert_eq!(arts.manifest.usage.calls, row_sum, "usage and rows must agree on a clean run");
}

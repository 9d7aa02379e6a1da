//! Declarative experiment execution: load a config, run the configured
//! method over a task sample with bounded parallelism, score, and write
//! manifest + reports.

pub mod config;
pub mod manifest;
pub mod reference;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

use crate::baseline::{
    count_reasoning_steps, run_base, run_cot, run_external_chain, run_step_back, COT_TRIGGER,
};
use crate::dynathink::{dynathink_route, ResponseSample, RouteError};
use crate::extract::extract_for_family;
use crate::fst::{run_fst_with_templates, FstError, StepRecord, Transcript};
use crate::gateway::{
    BackendKind, ChatRequest, DiskCache, Gateway, GatewayError, MockBackend, MockScript,
    ModelConfig, RetryPolicy, UsageRecord, DEFAULT_CACHE_DIR,
};
use crate::method::MethodId;
use crate::perturb::{apply_table_variant, perturb_set, PerturbError, VariantSource};
use crate::prompt::{load_template_set, PromptError, TemplateSet, TemplateVariant};
use crate::task::{load_dataset, sample_subset, TaskError, TaskInstance};

pub use config::{load_experiment_config, ConfigError, ExperimentConfig};
pub use manifest::{write_atomic, ManifestTask, RunManifest};
pub use reference::{
    compare_to_reference, reference_table, reference_tables, ComparisonRow, ReferenceTable,
};
pub use report::{
    build_report, read_report_summary, ReportMeta, ReportSummary, ScoreReport, TaskOutcome,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest does not match its config: {0}")]
    ManifestMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub report: ScoreReport,
    pub manifest_path: PathBuf,
    pub report_tsv: PathBuf,
    pub report_txt: PathBuf,
}

/// Build the gateway the config asks for. Mock runs need a script file;
/// HTTP runs get the on-disk response cache unless turned off.
pub fn build_gateway(config: &ExperimentConfig) -> Result<Gateway, RunError> {
    let cache = if config.model.cache_enabled() {
        let dir = config
            .model
            .cache_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR));
        Some(DiskCache::open(&dir)?)
    } else {
        None
    };
    match config.model.backend {
        BackendKind::Mock => {
            let path = config.model.script.as_ref().ok_or_else(|| {
                ConfigError::Field {
                    field: "model.script".to_string(),
                    message: "mock runs need a script file".to_string(),
                }
            })?;
            let script = MockScript::from_file(path)?;
            Ok(Gateway::new(
                Arc::new(MockBackend::new(script)),
                cache,
                RetryPolicy::default(),
            ))
        }
        BackendKind::HttpChat => {
            let model_config = config.model.to_model_config();
            let http = crate::gateway::HttpBackend::from_config(&model_config)?;
            Ok(Gateway::new(Arc::new(http), cache, RetryPolicy::default()))
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let gateway = build_gateway(config)?;
    run_experiment_with_gateway(config, &gateway)
}

/// Like [`run_experiment`] but on a caller-supplied gateway, so tests can
/// inject scripted or instrumented backends.
pub fn run_experiment_with_gateway(
    config: &ExperimentConfig,
    gateway: &Gateway,
) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let started = Instant::now();
    let usage_before = gateway.usage();

    let dataset = load_dataset(&config.dataset.path, config.dataset.family)?;
    let tasks: Vec<TaskInstance> = match &config.sample {
        Some(sample) => sample_subset(&dataset, sample.n, sample.seed)?,
        None => dataset.instances.clone(),
    };

    let templates = resolve_templates(config)?;
    let template_hash = templates.as_ref().map(TemplateSet::content_hash);
    let model_config = config.model.to_model_config();

    let output_dir = &config.run.output_dir;
    let transcripts_dir = output_dir.join("transcripts");
    std::fs::create_dir_all(&transcripts_dir).map_err(io_err(&transcripts_dir))?;

    let outcomes = match &config.method.name {
        MethodId::DynaThink => run_dynathink_batch(
            config,
            gateway,
            &model_config,
            &tasks,
            templates.as_ref().expect("dynathink uses templates"),
            &transcripts_dir,
        ),
        method => {
            let method = method.clone();
            run_pool(tasks.len(), config.run.concurrency, |i| {
                run_single(
                    gateway,
                    &model_config,
                    &tasks[i],
                    i,
                    &method,
                    templates.as_ref(),
                    config.method.chain_dir.as_deref(),
                    &transcripts_dir,
                )
            })
        }
    };

    let usage = usage_delta(&gateway.usage(), &usage_before);
    let wall_clock_ms = match gateway.backend_kind() {
        BackendKind::Mock => None,
        BackendKind::HttpChat => Some(started.elapsed().as_millis() as u64),
    };

    let report = build_report(
        ReportMeta {
            method: config.method.name.clone(),
            family: config.dataset.family,
            dataset_path: config.dataset.path.display().to_string(),
            dataset_label: config.dataset_label(),
            model: format!("{}/{}", model_config.backend, model_config.model_name),
            template_hash: template_hash.clone(),
        },
        &tasks,
        &outcomes,
    );

    let manifest = RunManifest {
        config: config.clone(),
        template_hash,
        tasks: outcomes
            .iter()
            .map(|o| ManifestTask {
                index: o.index,
                task_id: o.task_id.clone(),
                transcript: o
                    .transcript
                    .as_ref()
                    .map(|p| p.display().to_string()),
                calls: o.calls,
                error: o.error.clone(),
            })
            .collect(),
        usage,
        wall_clock_ms,
    };

    let manifest_path = output_dir.join("manifest.json");
    manifest.save(&manifest_path).map_err(io_err(&manifest_path))?;
    let (report_tsv, report_txt) = write_report_files(&report, output_dir)?;

    Ok(RunArtifacts {
        manifest,
        report,
        manifest_path,
        report_tsv,
        report_txt,
    })
}

pub fn write_report_files(
    report: &ScoreReport,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), RunError> {
    let tsv_path = dir.join("report.tsv");
    let txt_path = dir.join("report.txt");
    write_atomic(&tsv_path, report.to_tsv().as_bytes()).map_err(io_err(&tsv_path))?;
    write_atomic(&txt_path, report.to_text().as_bytes()).map_err(io_err(&txt_path))?;
    Ok((tsv_path, txt_path))
}

/// Re-score an existing run from its manifest and saved transcripts,
/// rewriting the report files next to the manifest.
pub fn rescore_manifest(manifest_path: &Path) -> Result<RunArtifacts, RunError> {
    let manifest = RunManifest::load(manifest_path).map_err(io_err(manifest_path))?;
    let config = manifest.config.clone();
    config.validate()?;
    let dataset = load_dataset(&config.dataset.path, config.dataset.family)?;
    let tasks: Vec<TaskInstance> = match &config.sample {
        Some(sample) => sample_subset(&dataset, sample.n, sample.seed)?,
        None => dataset.instances.clone(),
    };
    if tasks.len() != manifest.tasks.len() {
        return Err(RunError::ManifestMismatch(format!(
            "manifest lists {} tasks but the config samples {}",
            manifest.tasks.len(),
            tasks.len()
        )));
    }
    let base_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let outcomes: Vec<TaskOutcome> = tasks
        .iter()
        .zip(manifest.tasks.iter())
        .map(|(task, entry)| {
            if task.id != entry.task_id {
                return Err(RunError::ManifestMismatch(format!(
                    "task {} resolves to id {} but the manifest recorded {}",
                    entry.index, task.id, entry.task_id
                )));
            }
            let mut error = entry.error.clone();
            let final_answer = match &entry.transcript {
                Some(rel) => match Transcript::load(&base_dir.join(rel)) {
                    Ok(t) => Some(t.final_answer),
                    Err(e) => {
                        error = Some(format!("transcript unreadable: {e}"));
                        None
                    }
                },
                None => None,
            };
            Ok(TaskOutcome {
                index: entry.index,
                task_id: entry.task_id.clone(),
                final_answer,
                calls: entry.calls,
                error,
                transcript: entry.transcript.clone().map(PathBuf::from),
            })
        })
        .collect::<Result<_, _>>()?;

    let templates = resolve_templates(&config)?;
    let model_config = config.model.to_model_config();
    let report = build_report(
        ReportMeta {
            method: config.method.name.clone(),
            family: config.dataset.family,
            dataset_path: config.dataset.path.display().to_string(),
            dataset_label: config.dataset_label(),
            model: format!("{}/{}", model_config.backend, model_config.model_name),
            template_hash: templates.as_ref().map(TemplateSet::content_hash),
        },
        &tasks,
        &outcomes,
    );
    let (report_tsv, report_txt) = write_report_files(&report, base_dir)?;
    Ok(RunArtifacts {
        manifest,
        report,
        manifest_path: manifest_path.to_path_buf(),
        report_tsv,
        report_txt,
    })
}

/// The template set a run executes with: canonical for plain runs, a
/// transcribed or programmatically perturbed variant when configured.
fn resolve_templates(config: &ExperimentConfig) -> Result<Option<TemplateSet>, RunError> {
    if !config.uses_templates() {
        return Ok(None);
    }
    let family = config.dataset.family;
    let set = match &config.perturbation {
        None => load_template_set(family, &TemplateVariant::Canonical)?,
        Some(perturbation) => {
            let spec = perturbation.to_spec();
            match spec.variant_source {
                VariantSource::TableVariant => apply_table_variant(family, spec.level)?,
                VariantSource::Programmatic => {
                    let base = load_template_set(family, &TemplateVariant::Canonical)?;
                    perturb_set(&base, &spec)?.set
                }
            }
        }
    };
    Ok(Some(set))
}

fn usage_delta(after: &UsageRecord, before: &UsageRecord) -> UsageRecord {
    UsageRecord {
        calls: after.calls - before.calls,
        prompt_chars: after.prompt_chars - before.prompt_chars,
        completion_chars: after.completion_chars - before.completion_chars,
        cache_hits: after.cache_hits - before.cache_hits,
    }
}

/// Claim task indices off a shared counter with at most `concurrency`
/// workers; results come back in task order regardless of who ran what.
fn run_pool<F>(count: usize, concurrency: usize, run: F) -> Vec<TaskOutcome>
where
    F: Fn(usize) -> TaskOutcome + Sync,
{
    if count == 0 {
        return Vec::new();
    }
    let workers = concurrency.clamp(1, count);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TaskOutcome>>> =
        Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let outcome = run(i);
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|slot| slot.expect("every index ran"))
        .collect()
}

fn save_transcript(
    transcript: &Transcript,
    transcripts_dir: &Path,
) -> (Option<PathBuf>, Option<String>) {
    match transcript.save(transcripts_dir) {
        Ok(path) => {
            let rel = path
                .strip_prefix(transcripts_dir.parent().unwrap_or(transcripts_dir))
                .unwrap_or(&path)
                .to_path_buf();
            (Some(rel), None)
        }
        Err(e) => (None, Some(format!("transcript write failed: {e}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_single(
    gateway: &Gateway,
    model_config: &ModelConfig,
    task: &TaskInstance,
    index: usize,
    method: &MethodId,
    templates: Option<&TemplateSet>,
    chain_dir: Option<&Path>,
    transcripts_dir: &Path,
) -> TaskOutcome {
    let result: Result<Transcript, String> = match method {
        MethodId::Base => run_base(gateway, model_config, task).map_err(|e| e.to_string()),
        MethodId::ZeroShotCot => run_cot(gateway, model_config, task).map_err(|e| e.to_string()),
        MethodId::StepBack => {
            run_step_back(gateway, model_config, task).map_err(|e| e.to_string())
        }
        MethodId::External(name) => {
            let dir = chain_dir.expect("validated: ext methods carry a chain dir");
            run_external_chain(gateway, model_config, task, name, dir)
                .map_err(|e| e.to_string())
        }
        MethodId::Fst(mode) => {
            let templates = templates.expect("validated: fst runs carry templates");
            match run_fst_with_templates(gateway, model_config, task, *mode, templates) {
                Ok(t) => Ok(t),
                Err(e) => {
                    // Keep whatever steps completed so the failure can be
                    // inspected alongside successful transcripts.
                    let FstError { kind, steps } = e;
                    let partial = Transcript {
                        task_id: task.id.clone(),
                        method: method.clone(),
                        total_calls: steps.len() as u64,
                        steps,
                        final_answer: String::new(),
                    };
                    let (transcript, save_error) =
                        save_transcript(&partial, transcripts_dir);
                    return TaskOutcome {
                        index,
                        task_id: task.id.clone(),
                        final_answer: None,
                        calls: partial.total_calls,
                        error: Some(save_error
                            .map(|w| format!("{kind} ({w})"))
                            .unwrap_or_else(|| kind.to_string())),
                        transcript,
                    };
                }
            }
        }
        MethodId::DynaThink => unreachable!("dynathink runs as a batch"),
    };

    match result {
        Ok(transcript) => {
            let (path, save_error) = save_transcript(&transcript, transcripts_dir);
            TaskOutcome {
                index,
                task_id: task.id.clone(),
                final_answer: Some(transcript.final_answer),
                calls: transcript.total_calls,
                error: save_error,
                transcript: path,
            }
        }
        Err(message) => TaskOutcome {
            index,
            task_id: task.id.clone(),
            final_answer: None,
            calls: 0,
            error: Some(message),
            transcript: None,
        },
    }
}

/// Per-problem sampling state accumulated while the router runs.
struct ProblemState {
    steps: Vec<StepRecord>,
    samples: Vec<(Option<String>, String)>,
    errors: Vec<String>,
    issued: u64,
}

/// Routing splits the batch into fast problems (answered by their majority
/// vote) and slow problems (handed to the three-step pipeline), so the whole
/// sample is processed together rather than task by task.
fn run_dynathink_batch(
    config: &ExperimentConfig,
    gateway: &Gateway,
    model_config: &ModelConfig,
    tasks: &[TaskInstance],
    templates: &TemplateSet,
    transcripts_dir: &Path,
) -> Vec<TaskOutcome> {
    let index_by_id: BTreeMap<&str, usize> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let problem_ids: Vec<String> = tasks.iter().map(|t| t.id.clone()).collect();
    let states: Mutex<BTreeMap<String, ProblemState>> = Mutex::new(
        problem_ids
            .iter()
            .map(|id| {
                (
                    id.clone(),
                    ProblemState {
                        steps: Vec::new(),
                        samples: Vec::new(),
                        errors: Vec::new(),
                        issued: 0,
                    },
                )
            })
            .collect(),
    );
    let base_seed = model_config.request_seed.unwrap_or(0);

    let sampler = |problem_id: &str, n: usize| -> Result<Vec<ResponseSample>, GatewayError> {
        let index = index_by_id[problem_id];
        let task = &tasks[index];
        let prompt = format!("{}\n\n{}", task.full_text().trim_end(), COT_TRIGGER);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut guard = states.lock().expect("states lock");
            let state = guard.get_mut(problem_id).expect("known problem");
            let seed = base_seed.wrapping_add(state.issued);
            state.issued += 1;
            drop(guard);

            let request = ChatRequest::new(prompt.clone(), model_config.with_seed(seed));
            let mut guard = states.lock().expect("states lock");
            let state = guard.get_mut(problem_id).expect("known problem");
            match gateway.complete(&request) {
                Ok(response) => {
                    let label = format!("sample-{seed}");
                    let key = extract_for_family(task, &response.text).vote_key();
                    let steps = count_reasoning_steps(&response.text);
                    state
                        .steps
                        .push(StepRecord::from_response(&label, prompt.clone(), &response));
                    state.samples.push((key.clone(), response.text));
                    out.push(ResponseSample { answer: key, steps });
                }
                Err(e) => {
                    // A failed sample is an unparsed vote; the problem keeps
                    // going and drifts toward the slow path.
                    state.errors.push(e.to_string());
                    out.push(ResponseSample {
                        answer: None,
                        steps: 1,
                    });
                }
            }
        }
        Ok(out)
    };

    let outcome = match dynathink_route(&problem_ids, &config.route_config(), sampler) {
        Ok(outcome) => outcome,
        Err(RouteError::Sampler(e)) => {
            // The sampler itself never returns Err; this arm is for the type.
            return error_outcomes(tasks, &e.to_string());
        }
        Err(e) => return error_outcomes(tasks, &e.to_string()),
    };

    let states = states.into_inner().expect("states lock");
    let mut results: Vec<Option<TaskOutcome>> = (0..tasks.len()).map(|_| None).collect();

    for decision in &outcome.fast {
        let index = index_by_id[decision.problem_id.as_str()];
        let state = &states[&decision.problem_id];
        // The voted answer is reported through a sample that cast it, so
        // extraction and scoring see real model output.
        let representative = state
            .samples
            .iter()
            .find(|(key, _)| key.as_deref() == Some(decision.answer.as_str()))
            .map(|(_, text)| text.clone())
            .unwrap_or_else(|| decision.answer.clone());
        let transcript = Transcript {
            task_id: decision.problem_id.clone(),
            method: MethodId::DynaThink,
            steps: state.steps.clone(),
            final_answer: representative,
            total_calls: state.steps.len() as u64,
        };
        let (path, save_error) = save_transcript(&transcript, transcripts_dir);
        results[index] = Some(TaskOutcome {
            index,
            task_id: decision.problem_id.clone(),
            final_answer: Some(transcript.final_answer),
            calls: outcome.samples_per_problem[&decision.problem_id] as u64,
            error: save_error,
            transcript: path,
        });
    }

    // Slow problems: the configured fallback is the three-step pipeline,
    // run under the same concurrency bound as a plain batch.
    let slow_indices: Vec<usize> = outcome
        .slow
        .iter()
        .map(|id| index_by_id[id.as_str()])
        .collect();
    let slow_outcomes = run_pool(slow_indices.len(), config.run.concurrency, |k| {
        let index = slow_indices[k];
        let task = &tasks[index];
        let state = &states[&task.id];
        let sample_calls = state.steps.len() as u64;
        match run_fst_with_templates(gateway, model_config, task, crate::fst::AblationMode::Full, templates)
        {
            Ok(fst) => {
                let mut steps = state.steps.clone();
                steps.extend(fst.steps);
                let transcript = Transcript {
                    task_id: task.id.clone(),
                    method: MethodId::DynaThink,
                    total_calls: steps.len() as u64,
                    steps,
                    final_answer: fst.final_answer,
                };
                let (path, save_error) = save_transcript(&transcript, transcripts_dir);
                TaskOutcome {
                    index,
                    task_id: task.id.clone(),
                    final_answer: Some(transcript.final_answer),
                    calls: transcript.total_calls,
                    error: save_error,
                    transcript: path,
                }
            }
            Err(e) => {
                let FstError { kind, steps } = e;
                let mut all_steps = state.steps.clone();
                all_steps.extend(steps);
                let partial = Transcript {
                    task_id: task.id.clone(),
                    method: MethodId::DynaThink,
                    total_calls: all_steps.len() as u64,
                    steps: all_steps,
                    final_answer: String::new(),
                };
                let (path, _) = save_transcript(&partial, transcripts_dir);
                TaskOutcome {
                    index,
                    task_id: task.id.clone(),
                    final_answer: None,
                    calls: sample_calls.max(partial.total_calls),
                    error: Some(kind.to_string()),
                    transcript: path,
                }
            }
        }
    });
    for outcome in slow_outcomes {
        let index = outcome.index;
        results[index] = Some(outcome);
    }

    results
        .into_iter()
        .map(|slot| slot.expect("router partitions every problem"))
        .collect()
}

fn error_outcomes(tasks: &[TaskInstance], message: &str) -> Vec<TaskOutcome> {
    tasks
        .iter()
        .enumerate()
        .map(|(index, task)| TaskOutcome {
            index,
            task_id: task.id.clone(),
            final_answer: None,
            calls: 0,
            error: Some(message.to_string()),
            transcript: None,
        })
        .collect()
}

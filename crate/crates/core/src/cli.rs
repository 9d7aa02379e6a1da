//! Command-line surface. Every subcommand wraps a library entry point; the
//! binary in `src/bin` is a thin `exit(run_cli(...))`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::human::{
    build_blind_packet, compute_osr, ingest_rankings, HumanError, OsrAggregation, SealedMapping,
};
use crate::method::MethodId;
use crate::perturb::{perturb_set, EditRecord, PerturbLevel, PerturbSpec, VariantSource};
use crate::prompt::{load_template_set, TemplateSet, TemplateVariant};
use crate::runner::{
    compare_to_reference, load_experiment_config, read_report_summary, reference::render_comparison,
    reference::render_dynamic_grid, reference::render_reference_table, reference_table,
    rescore_manifest, run_experiment, RunArtifacts,
};
use crate::task::TaskFamily;

#[derive(Parser)]
#[command(
    name = "fastslow",
    version,
    about = "Run fast/slow-thinking prompt pipelines and score the results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a TOML config file.
    Run(RunCmd),
    /// Re-score an existing run from its manifest and transcripts.
    Score(ScoreCmd),
    /// Emit a (possibly perturbed) template set as plain text files.
    Perturb(PerturbCmd),
    /// Build blind review packets and sealed mappings from stories.
    Pack(PackCmd),
    /// Turn annotator rankings into overall success rates.
    Osr(OsrCmd),
    /// Print run reports (or an embedded reference table) as aligned tables.
    Report(ReportCmd),
    /// Compare a run report against an embedded reference table.
    Compare(CompareCmd),
}

#[derive(Args)]
struct RunCmd {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the configured concurrency limit.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Override the sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Override the sample seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the method (e.g. fst, fst-ft-st, base, dynathink).
    #[arg(long)]
    method: Option<MethodId>,
}

#[derive(Args)]
struct ScoreCmd {
    /// Path to a run's manifest.json.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct PerturbCmd {
    /// Task family whose template set to emit.
    #[arg(long)]
    family: TaskFamily,
    /// Disturbance level: character, word, or semantic. Omit for the
    /// canonical set.
    #[arg(long)]
    level: Option<PerturbLevel>,
    /// programmatic or table-variant (default).
    #[arg(long)]
    source: Option<VariantSource>,
    /// Seeded edits per template (programmatic only).
    #[arg(long)]
    edits: Option<usize>,
    /// RNG seed (programmatic only).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file mapping words to substitutes (word-level programmatic).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Directory to write ft.txt / st.txt / oi.txt (and edits.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PackCmd {
    /// JSON file: [{"task_id": ..., "stories": [{"method": ..., "text": ...}]}].
    #[arg(long)]
    stories: PathBuf,
    /// Directory for the annotator-facing packet files.
    #[arg(long)]
    packets_dir: PathBuf,
    /// Directory for the sealed label→method mappings.
    #[arg(long)]
    sealed_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OsrCmd {
    /// Tab-separated rankings: annotator <TAB> task <TAB> A=1,B=2,...
    #[arg(long)]
    rankings: PathBuf,
    /// Directory holding the sealed *.mapping.json files.
    #[arg(long)]
    sealed_dir: PathBuf,
    /// mean-rank-top (default) or per-annotator-count.
    #[arg(long)]
    aggregation: Option<OsrAggregation>,
}

#[derive(Args)]
struct ReportCmd {
    /// Manifests of runs to summarize side by side.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Print an embedded reference table instead.
    #[arg(long)]
    table: Option<String>,
}

#[derive(Args)]
struct CompareCmd {
    /// A run's report.tsv.
    #[arg(long)]
    report: PathBuf,
    /// Reference table id, e.g. gpt-3.5-turbo.
    #[arg(long)]
    table: String,
}

/// Parse and execute `argv`, returning the process exit code: 0 on success,
/// 1 on a runtime failure, 2 on a usage error.
pub fn run_cli<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            // Help and usage text go where clap intended them.
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(cmd) => cmd_run(cmd),
        Command::Score(cmd) => cmd_score(cmd),
        Command::Perturb(cmd) => cmd_perturb(cmd),
        Command::Pack(cmd) => cmd_pack(cmd),
        Command::Osr(cmd) => cmd_osr(cmd),
        Command::Report(cmd) => cmd_report(cmd),
        Command::Compare(cmd) => cmd_compare(cmd),
    };
    match result {
        Ok(()) => 0,
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}

fn cmd_run(cmd: RunCmd) -> Result<(), String> {
    let mut config = load_experiment_config(&cmd.config).map_err(|e| e.to_string())?;
    if let Some(output_dir) = cmd.output_dir {
        config.run.output_dir = output_dir;
    }
    if let Some(concurrency) = cmd.concurrency {
        config.run.concurrency = concurrency;
    }
    if let Some(n) = cmd.n {
        if let Some(sample) = &mut config.sample {
            sample.n = n;
        } else {
            return Err("--n needs a [sample] section in the config".to_string());
        }
    }
    if let Some(seed) = cmd.seed {
        if let Some(sample) = &mut config.sample {
            sample.seed = seed;
        } else {
            return Err("--seed needs a [sample] section in the config".to_string());
        }
    }
    if let Some(method) = cmd.method {
        config.method.name = method;
    }
    config.validate().map_err(|e| e.to_string())?;

    let artifacts = run_experiment(&config).map_err(|e| e.to_string())?;
    print_artifacts(&artifacts);

    if let Some(reference) = &config.reference {
        let table = reference_table(&reference.table)
            .expect("validated: reference table exists");
        let rows = compare_to_reference(&artifacts.report.summary(), table);
        println!();
        print!("{}", render_comparison(&rows));
    }
    Ok(())
}

fn print_artifacts(artifacts: &RunArtifacts) {
    println!("manifest: {}", artifacts.manifest_path.display());
    println!("report:   {}", artifacts.report_tsv.display());
    println!();
    print!("{}", artifacts.report.to_text());
    let failed = artifacts
        .report
        .rows
        .iter()
        .filter(|r| r.error.is_some())
        .count();
    if failed > 0 {
        println!();
        println!("{failed} task(s) failed; see the report rows above");
    }
}

fn cmd_score(cmd: ScoreCmd) -> Result<(), String> {
    let artifacts = rescore_manifest(&cmd.manifest).map_err(|e| e.to_string())?;
    print_artifacts(&artifacts);
    Ok(())
}

fn cmd_perturb(cmd: PerturbCmd) -> Result<(), String> {
    let canonical =
        load_template_set(cmd.family, &TemplateVariant::Canonical).map_err(|e| e.to_string())?;
    let (set, edit_logs): (TemplateSet, Option<BTreeMap<String, Vec<EditRecord>>>) =
        match cmd.level {
            None => (canonical, None),
            Some(level) => {
                let mut spec = PerturbSpec::new(level, cmd.seed);
                if let Some(edits) = cmd.edits {
                    spec.edits_per_step = edits;
                }
                if let Some(source) = cmd.source {
                    spec.variant_source = source;
                }
                if let Some(lexicon_path) = &cmd.lexicon {
                    let raw = std::fs::read_to_string(lexicon_path)
                        .map_err(|e| format!("cannot read {}: {e}", lexicon_path.display()))?;
                    spec.lexicon = Some(
                        serde_json::from_str(&raw)
                            .map_err(|e| format!("bad lexicon {}: {e}", lexicon_path.display()))?,
                    );
                }
                match spec.variant_source {
                    VariantSource::TableVariant => (
                        crate::perturb::apply_table_variant(cmd.family, level)
                            .map_err(|e| e.to_string())?,
                        None,
                    ),
                    VariantSource::Programmatic => {
                        let perturbed =
                            perturb_set(&canonical, &spec).map_err(|e| e.to_string())?;
                        (perturbed.set, Some(perturbed.edit_logs))
                    }
                }
            }
        };

    std::fs::create_dir_all(&cmd.out)
        .map_err(|e| format!("cannot create {}: {e}", cmd.out.display()))?;
    for (name, template) in [("ft.txt", &set.ft), ("st.txt", &set.st), ("oi.txt", &set.oi)] {
        let path = cmd.out.join(name);
        std::fs::write(&path, &template.body)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    if let Some(edit_logs) = edit_logs {
        let path = cmd.out.join("edits.json");
        let json = serde_json::to_string_pretty(&edit_logs).expect("edit logs serialize");
        std::fs::write(&path, json)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    println!("content hash: {}", set.content_hash());
    Ok(())
}

#[derive(Deserialize)]
struct StoryEntry {
    task_id: String,
    stories: Vec<StoryVersion>,
}

#[derive(Deserialize)]
struct StoryVersion {
    method: MethodId,
    text: String,
}

fn cmd_pack(cmd: PackCmd) -> Result<(), String> {
    let raw = std::fs::read_to_string(&cmd.stories)
        .map_err(|e| format!("cannot read {}: {e}", cmd.stories.display()))?;
    let entries: Vec<StoryEntry> = serde_json::from_str(&raw)
        .map_err(|e| format!("bad stories file {}: {e}", cmd.stories.display()))?;
    if entries.is_empty() {
        return Err("stories file lists no tasks".to_string());
    }
    for dir in [&cmd.packets_dir, &cmd.sealed_dir] {
        std::fs::create_dir_all(dir)
            .map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    for entry in entries {
        let stories: Vec<(MethodId, String)> = entry
            .stories
            .into_iter()
            .map(|s| (s.method, s.text))
            .collect();
        let packet = build_blind_packet(&entry.task_id, &stories, cmd.seed)
            .map_err(|e| format!("task {}: {e}", entry.task_id))?;
        let (packet_path, sealed_path) = packet
            .save(&cmd.packets_dir, &cmd.sealed_dir)
            .map_err(|e| format!("task {}: {e}", entry.task_id))?;
        println!("wrote {}", packet_path.display());
        println!("sealed {}", sealed_path.display());
    }
    Ok(())
}

fn load_sealed_dir(dir: &Path) -> Result<Vec<SealedMapping>, String> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| {
            n.to_string_lossy().ends_with(".mapping.json")
        }))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no *.mapping.json files in {}", dir.display()));
    }
    paths
        .iter()
        .map(|p| SealedMapping::load(p).map_err(|e| e.to_string()))
        .collect()
}

fn cmd_osr(cmd: OsrCmd) -> Result<(), String> {
    let mappings = load_sealed_dir(&cmd.sealed_dir)?;
    let labels: BTreeMap<String, BTreeSet<char>> = mappings
        .iter()
        .map(|m| (m.task_id.clone(), m.labels.keys().copied().collect()))
        .collect();
    let records = match ingest_rankings(&cmd.rankings, &labels) {
        Ok(records) => records,
        Err(HumanError::Rows(issues)) => {
            for issue in &issues {
                eprintln!("{}:{}: {}", cmd.rankings.display(), issue.line, issue.message);
            }
            return Err(format!("{} invalid ranking row(s)", issues.len()));
        }
        Err(e) => return Err(e.to_string()),
    };
    let aggregation = cmd.aggregation.unwrap_or_default();
    let report = compute_osr(&records, &mappings, aggregation).map_err(|e| e.to_string())?;

    let mut rows: Vec<[String; 3]> = vec![[
        "method".to_string(),
        "credit".to_string(),
        "osr".to_string(),
    ]];
    for (method, entry) in &report.per_method {
        rows.push([
            method.to_string(),
            format!("{:.2}", entry.credit),
            format!("{:.2}%", entry.proportion),
        ]);
    }
    print!("{}", crate::runner::reference::render_grid(&rows));
    println!("rankings: {} row(s), credit total {:.2}", records.len(), report.total_credit);
    Ok(())
}

fn cmd_report(cmd: ReportCmd) -> Result<(), String> {
    if let Some(id) = &cmd.table {
        let table = reference_table(id)
            .ok_or_else(|| format!("unknown reference table \"{id}\""))?;
        print!("{}", render_reference_table(table));
        if !cmd.manifests.is_empty() {
            println!();
        }
    } else if cmd.manifests.is_empty() {
        return Err("pass --manifest (repeatable) or --table".to_string());
    }
    if cmd.manifests.is_empty() {
        return Ok(());
    }

    // One row per run, metrics unioned across runs as columns.
    let mut summaries = Vec::new();
    for manifest_path in &cmd.manifests {
        let report_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("report.tsv");
        let summary = read_report_summary(&report_path).map_err(|e| e.to_string())?;
        summaries.push(summary);
    }
    let mut metric_names: Vec<String> = Vec::new();
    for summary in &summaries {
        for name in summary.metrics.keys() {
            if !metric_names.contains(name) {
                metric_names.push(name.clone());
            }
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string(), "dataset".to_string()];
    header.extend(metric_names.iter().cloned());
    rows.push(header);
    for summary in &summaries {
        let mut row = vec![summary.method.clone(), summary.dataset_label.clone()];
        for name in &metric_names {
            row.push(match summary.metrics.get(name) {
                Some(value) => format!("{value:.4}"),
                None => "-".to_string(),
            });
        }
        rows.push(row);
    }
    print!("{}", render_dynamic_grid(&rows));
    Ok(())
}

fn cmd_compare(cmd: CompareCmd) -> Result<(), String> {
    let summary = read_report_summary(&cmd.report).map_err(|e| e.to_string())?;
    let table = reference_table(&cmd.table)
        .ok_or_else(|| format!("unknown reference table \"{}\"", cmd.table))?;
    let rows = compare_to_reference(&summary, table);
    if rows.is_empty() {
        return Err("report carries no comparable metrics".to_string());
    }
    print!("{}", render_comparison(&rows));
    Ok(())
}

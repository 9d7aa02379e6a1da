//! Blind ranking packets for manual story assessment, and the optimal-story
//! ratio computed from returned rankings.
//!
//! Stories from different methods are shuffled behind neutral labels so
//! annotators cannot tell which method wrote which story; the label→method
//! mapping is sealed into a separate file that only the final aggregation
//! reads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::fst::sanitize_id;
use crate::method::MethodId;

/// Labels are single uppercase letters, so a packet holds at most 26
/// stories.
pub const MAX_STORIES: usize = 26;

#[derive(Debug, thiserror::Error)]
pub enum HumanError {
    #[error("a packet needs at least two stories, got {0}")]
    TooFewStories(usize),
    #[error("a packet holds at most {MAX_STORIES} stories, got {0}")]
    TooManyStories(usize),
    #[error("method {0} appears twice in the story set")]
    DuplicateMethod(MethodId),
    #[error("ranking file has problems:\n{}", format_issues(.0))]
    Rows(Vec<RowIssue>),
    #[error("no mapping for task {0:?}")]
    MissingMapping(String),
    #[error("no ranking records to aggregate")]
    NoRecords,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One rejected ranking row: which line, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

fn format_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  line {}: {}", i.line, i.message))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The label→method key for one packet, stored apart from the packet so the
/// packet itself stays blind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealedMapping {
    pub task_id: String,
    pub seed: u64,
    pub labels: BTreeMap<char, MethodId>,
}

/// One task's shuffled, labeled story set.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindPacket {
    pub task_id: String,
    pub seed: u64,
    /// `(label, story text)` in presentation order.
    pub items: Vec<(char, String)>,
    pub sealed: SealedMapping,
}

fn count_word(k: usize) -> String {
    match k {
        2 => "Two".to_string(),
        3 => "Three".to_string(),
        4 => "Four".to_string(),
        5 => "Five".to_string(),
        6 => "Six".to_string(),
        7 => "Seven".to_string(),
        8 => "Eight".to_string(),
        9 => "Nine".to_string(),
        10 => "Ten".to_string(),
        other => other.to_string(),
    }
}

/// The annotator instruction block for a packet of `k` stories.
pub fn annotator_instruction(k: usize) -> String {
    format!(
        "{} stories are shown below. Please read the content of each story carefully, \
         and comprehensively consider many aspects (story theme, contextual logic, \
         sentence fluency, plot completeness, etc.). After that, you need to give a \
         ranking of {k} stories, of which 1 is the best, and {k} is the worst.",
        count_word(k)
    )
}

fn permutation_seed(task_id: &str, seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(task_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Shuffle one task's stories behind labels A, B, C, … The permutation is a
/// pure function of `(task_id, seed)`, so rebuilding a packet is
/// reproducible without storing the order anywhere.
pub fn build_blind_packet(
    task_id: &str,
    stories: &[(MethodId, String)],
    seed: u64,
) -> Result<BlindPacket, HumanError> {
    if stories.len() < 2 {
        return Err(HumanError::TooFewStories(stories.len()));
    }
    if stories.len() > MAX_STORIES {
        return Err(HumanError::TooManyStories(stories.len()));
    }
    let mut seen = BTreeSet::new();
    for (method, _) in stories {
        if !seen.insert(method.clone()) {
            return Err(HumanError::DuplicateMethod(method.clone()));
        }
    }

    let mut order: Vec<usize> = (0..stories.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed(task_id, seed));
    order.shuffle(&mut rng);

    let mut items = Vec::with_capacity(stories.len());
    let mut labels = BTreeMap::new();
    for (position, &source) in order.iter().enumerate() {
        let label = (b'A' + position as u8) as char;
        let (method, text) = &stories[source];
        items.push((label, text.clone()));
        labels.insert(label, method.clone());
    }

    Ok(BlindPacket {
        task_id: task_id.to_string(),
        seed,
        items,
        sealed: SealedMapping {
            task_id: task_id.to_string(),
            seed,
            labels,
        },
    })
}

impl BlindPacket {
    /// The text handed to annotators: instruction block, then the labeled
    /// stories. Method identities appear nowhere in it.
    pub fn packet_text(&self) -> String {
        let mut out = format!(
            "Task: {}\n\n{}\n",
            self.task_id,
            annotator_instruction(self.items.len())
        );
        for (label, text) in &self.items {
            out.push_str(&format!("\nStory {label}:\n{text}\n"));
        }
        out
    }

    pub fn labels(&self) -> BTreeSet<char> {
        self.items.iter().map(|(l, _)| *l).collect()
    }

    /// Write `<task>.packet.txt` under `packets_dir` and
    /// `<task>.mapping.json` under `sealed_dir`. Keeping the two directories
    /// separate is what lets the packet set be shared while the mappings
    /// stay private.
    pub fn save(&self, packets_dir: &Path, sealed_dir: &Path) -> Result<(PathBuf, PathBuf), HumanError> {
        let stem = sanitize_id(&self.task_id);
        let packet_path = packets_dir.join(format!("{stem}.packet.txt"));
        let mapping_path = sealed_dir.join(format!("{stem}.mapping.json"));
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HumanError::Io { path, source }
        };
        std::fs::write(&packet_path, self.packet_text()).map_err(io_err(&packet_path))?;
        let json = serde_json::to_string_pretty(&self.sealed).expect("mapping serializes");
        std::fs::write(&mapping_path, json).map_err(io_err(&mapping_path))?;
        Ok((packet_path, mapping_path))
    }
}

impl SealedMapping {
    pub fn load(path: &Path) -> Result<SealedMapping, HumanError> {
        let text = std::fs::read_to_string(path).map_err(|source| HumanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HumanError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

/// One annotator's ranking of one packet. Rank 1 is the best story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub annotator_id: String,
    pub task_id: String,
    pub ranking: BTreeMap<char, u32>,
}

impl RankingRecord {
    pub fn top_label(&self) -> char {
        *self
            .ranking
            .iter()
            .find(|(_, &rank)| rank == 1)
            .expect("validated rankings contain rank 1")
            .0
    }
}

/// Parse and validate a rankings file against the known packets.
///
/// Format: one record per line, `annotator<TAB>task_id<TAB>A=1,B=3,…`;
/// blank lines and `#` comments are skipped. Every label of the packet must
/// appear exactly once and the ranks must form a bijection onto `1..=K`.
/// All offending rows are reported together, by line number.
pub fn parse_rankings(
    text: &str,
    packet_labels: &BTreeMap<String, BTreeSet<char>>,
) -> Result<Vec<RankingRecord>, HumanError> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen_pairs = BTreeSet::new();

    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut push = |message: String| issues.push(RowIssue { line, message });

        let fields: Vec<&str> = raw_line.split('\t').collect();
        if fields.len() != 3 {
            push(format!(
                "expected 3 tab-separated fields (annotator, task, ranking), got {}",
                fields.len()
            ));
            continue;
        }
        let (annotator, task_id, ranking_field) =
            (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if annotator.is_empty() {
            push("annotator id is empty".to_string());
            continue;
        }
        let Some(expected_labels) = packet_labels.get(task_id) else {
            push(format!("unknown task {task_id:?}"));
            continue;
        };
        if !seen_pairs.insert((annotator.to_string(), task_id.to_string())) {
            push(format!(
                "duplicate ranking for annotator {annotator:?} on task {task_id:?}"
            ));
            continue;
        }

        let mut ranking = BTreeMap::new();
        let mut row_ok = true;
        for part in ranking_field.split(',') {
            let part = part.trim();
            let Some((label_str, rank_str)) = part.split_once('=') else {
                push(format!("malformed entry {part:?}, expected LABEL=RANK"));
                row_ok = false;
                break;
            };
            let label_str = label_str.trim();
            let mut chars = label_str.chars();
            let (Some(label), None) = (chars.next(), chars.next()) else {
                push(format!("label {label_str:?} is not a single letter"));
                row_ok = false;
                break;
            };
            if !expected_labels.contains(&label) {
                push(format!("unknown label {label} for task {task_id:?}"));
                row_ok = false;
                break;
            }
            let Ok(rank) = rank_str.trim().parse::<u32>() else {
                push(format!("rank {:?} is not an integer", rank_str.trim()));
                row_ok = false;
                break;
            };
            if ranking.insert(label, rank).is_some() {
                push(format!("label {label} listed twice"));
                row_ok = false;
                break;
            }
        }
        if !row_ok {
            continue;
        }

        let k = expected_labels.len() as u32;
        let missing: Vec<char> = expected_labels
            .iter()
            .filter(|l| !ranking.contains_key(l))
            .copied()
            .collect();
        if !missing.is_empty() {
            push(format!("missing labels {missing:?}"));
            continue;
        }
        let mut rank_seen = BTreeSet::new();
        let mut bad_rank = None;
        for (&label, &rank) in &ranking {
            if rank < 1 || rank > k {
                bad_rank = Some(format!("rank {rank} for label {label} is outside 1..={k}"));
                break;
            }
            if !rank_seen.insert(rank) {
                bad_rank = Some(format!("duplicate rank {rank}"));
                break;
            }
        }
        if let Some(message) = bad_rank {
            push(message);
            continue;
        }

        records.push(RankingRecord {
            annotator_id: annotator.to_string(),
            task_id: task_id.to_string(),
            ranking,
        });
    }

    if issues.is_empty() {
        Ok(records)
    } else {
        Err(HumanError::Rows(issues))
    }
}

/// Read and validate a rankings file from disk.
pub fn ingest_rankings(
    path: &Path,
    packet_labels: &BTreeMap<String, BTreeSet<char>>,
) -> Result<Vec<RankingRecord>, HumanError> {
    let text = std::fs::read_to_string(path).map_err(|source| HumanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_rankings(&text, packet_labels)
}

/// How the per-annotator rankings are folded into one top-story ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OsrAggregation {
    /// Every (annotator, task) ranking is one vote for its top story.
    PerAnnotatorCount,
    /// Per task, the method with the best mean rank across annotators gets
    /// the task's single credit; ties split it equally.
    #[default]
    MeanRankTop,
}

impl std::fmt::Display for OsrAggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OsrAggregation::PerAnnotatorCount => "per-annotator-count",
            OsrAggregation::MeanRankTop => "mean-rank-top",
        })
    }
}

impl std::str::FromStr for OsrAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-annotator-count" => Ok(OsrAggregation::PerAnnotatorCount),
            "mean-rank-top" => Ok(OsrAggregation::MeanRankTop),
            other => Err(format!(
                "unknown aggregation {other:?}; expected mean-rank-top or per-annotator-count"
            )),
        }
    }
}

/// Credit and share for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsrEntry {
    pub credit: f64,
    /// Percentage of the total credit, 0..=100.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsrReport {
    pub aggregation: OsrAggregation,
    pub total_credit: f64,
    pub per_method: BTreeMap<MethodId, OsrEntry>,
}

/// Unseal the mappings and aggregate rankings into the optimal-story ratio.
pub fn compute_osr(
    records: &[RankingRecord],
    mappings: &[SealedMapping],
    aggregation: OsrAggregation,
) -> Result<OsrReport, HumanError> {
    if records.is_empty() {
        return Err(HumanError::NoRecords);
    }
    let by_task: BTreeMap<&str, &SealedMapping> = mappings
        .iter()
        .map(|m| (m.task_id.as_str(), m))
        .collect();
    for record in records {
        if !by_task.contains_key(record.task_id.as_str()) {
            return Err(HumanError::MissingMapping(record.task_id.clone()));
        }
    }

    // Every method that appears in any consulted mapping gets a row, even
    // at zero credit.
    let mut credit: BTreeMap<MethodId, f64> = BTreeMap::new();
    let mut tasks_seen = BTreeSet::new();
    for record in records {
        tasks_seen.insert(record.task_id.as_str());
        for method in by_task[record.task_id.as_str()].labels.values() {
            credit.entry(method.clone()).or_insert(0.0);
        }
    }

    let total_credit;
    match aggregation {
        OsrAggregation::PerAnnotatorCount => {
            for record in records {
                let mapping = by_task[record.task_id.as_str()];
                let method = mapping.labels[&record.top_label()].clone();
                *credit.entry(method).or_insert(0.0) += 1.0;
            }
            total_credit = records.len() as f64;
        }
        OsrAggregation::MeanRankTop => {
            for &task_id in &tasks_seen {
                let mapping = by_task[task_id];
                let task_records: Vec<&RankingRecord> = records
                    .iter()
                    .filter(|r| r.task_id == task_id)
                    .collect();
                let mut mean_ranks: BTreeMap<char, f64> = BTreeMap::new();
                for (&label, _) in &mapping.labels {
                    let sum: u32 = task_records.iter().map(|r| r.ranking[&label]).sum();
                    mean_ranks.insert(label, sum as f64 / task_records.len() as f64);
                }
                let best = mean_ranks
                    .values()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                let winners: Vec<char> = mean_ranks
                    .iter()
                    .filter(|(_, &m)| m == best)
                    .map(|(&l, _)| l)
                    .collect();
                let share = 1.0 / winners.len() as f64;
                for label in winners {
                    let method = mapping.labels[&label].clone();
                    *credit.entry(method).or_insert(0.0) += share;
                }
            }
            total_credit = tasks_seen.len() as f64;
        }
    }

    let per_method = credit
        .into_iter()
        .map(|(method, c)| {
            (
                method,
                OsrEntry {
                    credit: c,
                    proportion: 100.0 * c / total_credit,
                },
            )
        })
        .collect();
    Ok(OsrReport {
        aggregation,
        total_credit,
        per_method,
    })
}

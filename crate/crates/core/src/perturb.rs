//! Controlled damage to prompt templates for the stability study.
//!
//! Character-level noise is generated programmatically; word- and
//! semantic-level variants ship as transcribed template data, since faithful
//! synonym swaps and sentence rewrites are editorial work, not something to
//! synthesize. All perturbations leave placeholders untouched.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::prompt::{
    load_template_set, PromptError, PromptTemplate, TemplateSet, TemplateVariant,
    PLACEHOLDER_CLOSE, PLACEHOLDER_OPEN,
};
use crate::task::TaskFamily;

/// The three disturbance levels of the stability study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbLevel {
    Character,
    Word,
    Semantic,
}

impl PerturbLevel {
    /// Edits applied to each step's template by default: two character
    /// edits, four word swaps, or three sentence rewrites.
    pub fn default_edits_per_step(self) -> usize {
        match self {
            PerturbLevel::Character => 2,
            PerturbLevel::Word => 4,
            PerturbLevel::Semantic => 3,
        }
    }

    pub fn table_variant(self) -> TemplateVariant {
        match self {
            PerturbLevel::Character => TemplateVariant::CharLevel,
            PerturbLevel::Word => TemplateVariant::WordLevel,
            PerturbLevel::Semantic => TemplateVariant::SemanticLevel,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbLevel::Character => "character",
            PerturbLevel::Word => "word",
            PerturbLevel::Semantic => "semantic",
        }
    }
}

impl std::fmt::Display for PerturbLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PerturbLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "character" => Ok(PerturbLevel::Character),
            "word" => Ok(PerturbLevel::Word),
            "semantic" => Ok(PerturbLevel::Semantic),
            other => Err(format!(
                "unknown level {other:?}; expected character, word, or semantic"
            )),
        }
    }
}

/// Where the perturbed templates come from: generated on the fly, or the
/// transcribed variant tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VariantSource {
    Programmatic,
    #[default]
    TableVariant,
}

impl std::fmt::Display for VariantSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariantSource::Programmatic => "programmatic",
            VariantSource::TableVariant => "table-variant",
        })
    }
}

impl std::str::FromStr for VariantSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "programmatic" => Ok(VariantSource::Programmatic),
            "table-variant" => Ok(VariantSource::TableVariant),
            other => Err(format!(
                "unknown source {other:?}; expected programmatic or table-variant"
            )),
        }
    }
}

/// Full description of one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub level: PerturbLevel,
    pub edits_per_step: usize,
    pub seed: u64,
    /// Word-level substitutions: word → candidate replacements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub variant_source: VariantSource,
}

impl PerturbSpec {
    pub fn new(level: PerturbLevel, seed: u64) -> Self {
        PerturbSpec {
            level,
            edits_per_step: level.default_edits_per_step(),
            seed,
            lexicon: None,
            variant_source: VariantSource::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("template has {found} eligible words but {needed} edits were requested")]
    NotEnoughEligibleWords { needed: usize, found: usize },
    #[error("word-level programmatic perturbation needs a lexicon with substitutes that occur in the template")]
    MissingLexicon,
    #[error("semantic-level perturbation has no programmatic generator; use the transcribed variant")]
    SemanticUnsupported,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// The five character edit kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    Add,
    Delete,
    Repeat,
    Replace,
    Permute,
    /// Word-level lexicon substitution.
    Substitute,
}

/// One applied edit: where, what it was, what it became.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    /// Byte offset of the edited word in the original body.
    pub offset: usize,
    pub kind: EditKind,
    pub before: String,
    pub after: String,
}

/// A perturbed template next to its base and the log of what changed.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedTemplate {
    pub base: PromptTemplate,
    pub result: PromptTemplate,
    pub edit_log: Vec<EditRecord>,
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Placeholder(String),
    Word(String),
    Other(String),
}

/// Split a body into placeholders, alphabetic words, and everything else.
/// Rebuilding by concatenation is lossless.
fn segment(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        if let Some(stripped) = rest.strip_prefix(PLACEHOLDER_OPEN) {
            // Validated templates always close their placeholders.
            let end = stripped.find(PLACEHOLDER_CLOSE).expect("validated body");
            let full = &rest[..PLACEHOLDER_OPEN.len() + end + PLACEHOLDER_CLOSE.len()];
            segments.push(Segment::Placeholder(full.to_string()));
            rest = &rest[full.len()..];
            continue;
        }
        let mut chars = rest.char_indices();
        let (_, first) = chars.next().expect("non-empty rest");
        if first.is_alphabetic() {
            let end = rest
                .char_indices()
                .find(|(_, c)| !c.is_alphabetic())
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            // A placeholder opener may start mid-run ("ab<<x>>"): cut the
            // word at the opener.
            let end = rest.find(PLACEHOLDER_OPEN).map_or(end, |p| end.min(p));
            segments.push(Segment::Word(rest[..end].to_string()));
            rest = &rest[end..];
        } else {
            let mut end = rest.len();
            for (i, c) in rest.char_indices() {
                if i == 0 {
                    continue;
                }
                if c.is_alphabetic() || rest[i..].starts_with(PLACEHOLDER_OPEN) {
                    end = i;
                    break;
                }
            }
            segments.push(Segment::Other(rest[..end].to_string()));
            rest = &rest[end..];
        }
    }
    segments
}

fn interior_permutable(word: &[char]) -> bool {
    if word.len() < 4 {
        return false;
    }
    let interior = &word[1..word.len() - 1];
    interior.iter().any(|&c| c != interior[0])
}

fn random_letter(rng: &mut ChaCha8Rng) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

fn apply_char_edit(word: &str, kind: EditKind, rng: &mut ChaCha8Rng) -> (EditKind, String) {
    let chars: Vec<char> = word.chars().collect();
    let kind = if kind == EditKind::Permute && !interior_permutable(&chars) {
        EditKind::Replace
    } else {
        kind
    };
    let mut out = chars.clone();
    match kind {
        EditKind::Add => {
            let at = rng.gen_range(0..=out.len());
            out.insert(at, random_letter(rng));
        }
        EditKind::Delete => {
            let at = rng.gen_range(0..out.len());
            out.remove(at);
        }
        EditKind::Repeat => {
            let at = rng.gen_range(0..out.len());
            let c = out[at];
            out.insert(at, c);
        }
        EditKind::Replace => {
            let at = rng.gen_range(0..out.len());
            let old = out[at];
            let mut new = random_letter(rng);
            while new == old.to_ascii_lowercase() {
                new = random_letter(rng);
            }
            out[at] = new;
        }
        EditKind::Permute => {
            // Swap two differing interior characters; never the first or
            // last, which is how human typos tend to look.
            let interior = 1..out.len() - 1;
            loop {
                let i = rng.gen_range(interior.clone());
                let j = rng.gen_range(interior.clone());
                if out[i] != out[j] {
                    out.swap(i, j);
                    break;
                }
            }
        }
        EditKind::Substitute => unreachable!("substitution is not a character edit"),
    }
    (kind, out.into_iter().collect())
}

/// A word position eligible for editing: segment index and byte offset.
struct Site {
    segment: usize,
    offset: usize,
}

/// Eligible sites under `filter`, at most one per whitespace token so that
/// `edits_per_step` edits always change exactly that many whitespace
/// tokens.
fn eligible_sites(segments: &[Segment], filter: impl Fn(&str) -> bool) -> Vec<Site> {
    let mut sites = Vec::new();
    let mut offset = 0;
    let mut token = 0;
    let mut taken_token = usize::MAX;
    for (index, seg) in segments.iter().enumerate() {
        let text = match seg {
            Segment::Placeholder(t) | Segment::Word(t) | Segment::Other(t) => t.as_str(),
        };
        if let Segment::Word(word) = seg {
            if filter(word) && token != taken_token {
                sites.push(Site {
                    segment: index,
                    offset,
                });
                taken_token = token;
            }
        }
        token += text.chars().filter(|c| c.is_whitespace()).count();
        offset += text.len();
    }
    sites
}

const CHAR_EDIT_KINDS: [EditKind; 5] = [
    EditKind::Add,
    EditKind::Delete,
    EditKind::Repeat,
    EditKind::Replace,
    EditKind::Permute,
];

/// Damage `edits_per_step` distinct words of the template with seeded
/// character edits, leaving placeholders alone.
pub fn perturb_characters(
    template: &PromptTemplate,
    spec: &PerturbSpec,
) -> Result<PerturbedTemplate, PerturbError> {
    let mut segments = segment(&template.body);
    let sites = eligible_sites(&segments, |w| w.chars().count() >= 3);
    if sites.len() < spec.edits_per_step {
        return Err(PerturbError::NotEnoughEligibleWords {
            needed: spec.edits_per_step,
            found: sites.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked: Vec<usize> = (0..sites.len()).collect();
    picked.shuffle(&mut rng);
    let mut picked: Vec<usize> = picked.into_iter().take(spec.edits_per_step).collect();
    picked.sort_unstable();

    let mut edit_log = Vec::with_capacity(spec.edits_per_step);
    for site_index in picked {
        let site = &sites[site_index];
        let Segment::Word(word) = segments[site.segment].clone() else {
            unreachable!("sites index word segments");
        };
        let kind = *CHAR_EDIT_KINDS.choose(&mut rng).expect("non-empty");
        let (kind, edited) = apply_char_edit(&word, kind, &mut rng);
        edit_log.push(EditRecord {
            offset: site.offset,
            kind,
            before: word.clone(),
            after: edited.clone(),
        });
        segments[site.segment] = Segment::Word(edited);
    }

    rebuild(template, segments, edit_log)
}

/// Swap `edits_per_step` lexicon words for seeded substitutes.
pub fn perturb_words(
    template: &PromptTemplate,
    spec: &PerturbSpec,
) -> Result<PerturbedTemplate, PerturbError> {
    let lexicon = spec.lexicon.as_ref().ok_or(PerturbError::MissingLexicon)?;
    let usable = |w: &str| {
        lexicon
            .get(&w.to_lowercase())
            .is_some_and(|subs| !subs.is_empty())
    };
    let mut segments = segment(&template.body);
    let sites = eligible_sites(&segments, usable);
    if sites.len() < spec.edits_per_step {
        return Err(PerturbError::NotEnoughEligibleWords {
            needed: spec.edits_per_step,
            found: sites.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked: Vec<usize> = (0..sites.len()).collect();
    picked.shuffle(&mut rng);
    let mut picked: Vec<usize> = picked.into_iter().take(spec.edits_per_step).collect();
    picked.sort_unstable();

    let mut edit_log = Vec::with_capacity(spec.edits_per_step);
    for site_index in picked {
        let site = &sites[site_index];
        let Segment::Word(word) = segments[site.segment].clone() else {
            unreachable!("sites index word segments");
        };
        let substitutes = &lexicon[&word.to_lowercase()];
        let after = substitutes
            .choose(&mut rng)
            .expect("checked non-empty")
            .clone();
        edit_log.push(EditRecord {
            offset: site.offset,
            kind: EditKind::Substitute,
            before: word.clone(),
            after: after.clone(),
        });
        segments[site.segment] = Segment::Word(after);
    }

    rebuild(template, segments, edit_log)
}

fn rebuild(
    template: &PromptTemplate,
    segments: Vec<Segment>,
    edit_log: Vec<EditRecord>,
) -> Result<PerturbedTemplate, PerturbError> {
    let body: String = segments
        .into_iter()
        .map(|s| match s {
            Segment::Placeholder(t) | Segment::Word(t) | Segment::Other(t) => t,
        })
        .collect();
    let result = PromptTemplate::new(
        template.step,
        template.family,
        template.variant.clone(),
        body,
    )?;
    debug_assert!(verify_placeholders_intact(&template.body, &result.body));
    Ok(PerturbedTemplate {
        base: template.clone(),
        result,
        edit_log,
    })
}

/// Perturb one template according to the spec. Word level requires a
/// lexicon; semantic level has no generator.
pub fn perturb_template(
    template: &PromptTemplate,
    spec: &PerturbSpec,
) -> Result<PerturbedTemplate, PerturbError> {
    match spec.level {
        PerturbLevel::Character => perturb_characters(template, spec),
        PerturbLevel::Word => perturb_words(template, spec),
        PerturbLevel::Semantic => Err(PerturbError::SemanticUnsupported),
    }
}

/// A perturbed template triple with per-step edit logs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSet {
    pub set: TemplateSet,
    pub edit_logs: BTreeMap<String, Vec<EditRecord>>,
}

fn step_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    u64::from_le_bytes(hasher.finalize()[..8].try_into().expect("8 bytes"))
}

/// Perturb every step of a template set, each with its own seeded stream.
pub fn perturb_set(set: &TemplateSet, spec: &PerturbSpec) -> Result<PerturbedSet, PerturbError> {
    let mut edit_logs = BTreeMap::new();
    let mut one = |template: &PromptTemplate| -> Result<PromptTemplate, PerturbError> {
        let mut step_spec = spec.clone();
        step_spec.seed = step_seed(spec.seed, &template.step.to_string());
        let perturbed = perturb_template(template, &step_spec)?;
        edit_logs.insert(template.step.to_string(), perturbed.edit_log);
        Ok(perturbed.result)
    };
    let set = TemplateSet {
        ft: one(&set.ft)?,
        st: one(&set.st)?,
        oi: one(&set.oi)?,
    };
    Ok(PerturbedSet { set, edit_logs })
}

/// The transcribed disturbance tables for a family and level.
pub fn apply_table_variant(
    family: TaskFamily,
    level: PerturbLevel,
) -> Result<TemplateSet, PromptError> {
    load_template_set(family, &level.table_variant())
}

/// True iff `result` still has exactly the placeholders of `base` (as a
/// multiset) and every delimiter in `result` is well-formed.
pub fn verify_placeholders_intact(base: &str, result: &str) -> bool {
    match (placeholder_multiset(base), placeholder_multiset(result)) {
        (Some(b), Some(r)) => b == r,
        _ => false,
    }
}

/// All placeholder names in order of appearance, or `None` when delimiters
/// are malformed.
fn placeholder_multiset(body: &str) -> Option<BTreeMap<String, usize>> {
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    let mut rest = body;
    loop {
        let open = rest.find(PLACEHOLDER_OPEN);
        let close = rest.find(PLACEHOLDER_CLOSE);
        match (open, close) {
            (None, None) => return Some(names),
            (None, Some(_)) => return None,
            (Some(_), None) => return None,
            (Some(o), Some(c)) => {
                if c < o {
                    return None;
                }
                let name = &rest[o + PLACEHOLDER_OPEN.len()..c];
                if name.contains('<') || name.contains('>') {
                    return None;
                }
                *names.entry(name.to_string()).or_default() += 1;
                rest = &rest[c + PLACEHOLDER_CLOSE.len()..];
            }
        }
    }
}

//! Prompt templates and placeholder rendering.
//!
//! Templates mark insertion points with double angle brackets, e.g.
//! `<<the-task>>`. Substitution is literal and single-pass: substituted text
//! is never re-scanned, so values containing brackets cannot smuggle new
//! placeholders into the output.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::task::TaskFamily;

pub const PLACEHOLDER_OPEN: &str = "<<";
pub const PLACEHOLDER_CLOSE: &str = ">>";

/// Every placeholder name a shipped template may use.
pub const REGISTERED_PLACEHOLDERS: [&str; 8] = [
    "the-task",
    "domain-of-task",
    "simplification-examples",
    "concise-general-task",
    "removed-constraints",
    "draft-answer",
    "original-task",
    "st-answer",
];

/// Placeholders that may be bound to an empty value (or left unbound).
/// The draft answer is empty when the slow-thinking step runs on its own.
pub const OPTIONAL_PLACEHOLDERS: [&str; 1] = ["draft-answer"];

const FT_GENERIC: &str = include_str!("templates/ft_generic.txt");
const FT_MATH: &str = include_str!("templates/ft_math.txt");
const FT_LONG: &str = include_str!("templates/ft_long_content.txt");
const FT_STORY: &str = include_str!("templates/ft_story.txt");
const ST_CANONICAL: &str = include_str!("templates/st.txt");
const OI_CANONICAL: &str = include_str!("templates/oi.txt");
const FT_OUTPUT_FORMAT: &str = include_str!("templates/ft_output_format.txt");

const FT_LONG_CHAR: &str = include_str!("templates/ft_long_char.txt");
const ST_CHAR: &str = include_str!("templates/st_char.txt");
const OI_CHAR: &str = include_str!("templates/oi_char.txt");
const FT_LONG_WORD: &str = include_str!("templates/ft_long_word.txt");
const ST_WORD: &str = include_str!("templates/st_word.txt");
const OI_WORD: &str = include_str!("templates/oi_word.txt");
const FT_LONG_SEMANTIC: &str = include_str!("templates/ft_long_semantic.txt");
const ST_SEMANTIC: &str = include_str!("templates/st_semantic.txt");
const OI_SEMANTIC: &str = include_str!("templates/oi_semantic.txt");

/// The three pipeline steps a template can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStep {
    Ft,
    St,
    Oi,
}

impl fmt::Display for PipelineStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStep::Ft => "ft",
            PipelineStep::St => "st",
            PipelineStep::Oi => "oi",
        })
    }
}

/// Which body a template set is built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateVariant {
    Canonical,
    CharLevel,
    WordLevel,
    SemanticLevel,
    External(PathBuf),
}

impl fmt::Display for TemplateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateVariant::Canonical => f.write_str("canonical"),
            TemplateVariant::CharLevel => f.write_str("char"),
            TemplateVariant::WordLevel => f.write_str("word"),
            TemplateVariant::SemanticLevel => f.write_str("semantic"),
            TemplateVariant::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

/// Task family a template was specialized for; `Generic` carries the
/// domain and simplification examples as placeholders instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateFamily {
    Generic,
    Family(TaskFamily),
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unclosed placeholder delimiter at byte {offset} in {step} template")]
    UnclosedDelimiter { step: PipelineStep, offset: usize },
    #[error("stray closing delimiter at byte {offset} in {step} template")]
    StrayDelimiter { step: PipelineStep, offset: usize },
    #[error("unknown placeholder <<{name}>> in {step} template")]
    UnknownPlaceholder { step: PipelineStep, name: String },
    #[error("missing binding for placeholder <<{0}>>")]
    MissingBinding(String),
    #[error("binding for placeholder <<{0}>> is empty; only optional placeholders may be empty")]
    EmptyBinding(String),
    #[error("{variant} templates are defined only for the long-content stability study, not for {family}")]
    VariantUnavailable {
        family: TaskFamily,
        variant: TemplateVariant,
    },
    #[error("cannot read template file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One step's prompt body with validated placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub step: PipelineStep,
    pub family: TemplateFamily,
    pub variant: TemplateVariant,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(
        step: PipelineStep,
        family: TemplateFamily,
        variant: TemplateVariant,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        scan_placeholders(step, &body)?;
        Ok(PromptTemplate {
            step,
            family,
            variant,
            body,
        })
    }

    /// Names of all placeholders that occur in the body.
    pub fn placeholders(&self) -> BTreeSet<String> {
        scan_placeholders(self.step, &self.body)
            .expect("body was validated at construction")
            .into_iter()
            .collect()
    }

    /// Substitute every placeholder. Required placeholders must be bound to
    /// non-empty values; optional ones default to empty.
    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find(PLACEHOLDER_OPEN) {
            out.push_str(&rest[..start]);
            let after_open = &rest[start + PLACEHOLDER_OPEN.len()..];
            let end = after_open
                .find(PLACEHOLDER_CLOSE)
                .expect("body was validated at construction");
            let name = &after_open[..end];
            match bindings.get(name) {
                Some(value) if value.is_empty() && !is_optional(name) => {
                    return Err(PromptError::EmptyBinding(name.to_string()));
                }
                Some(value) => out.push_str(value),
                None if is_optional(name) => {}
                None => return Err(PromptError::MissingBinding(name.to_string())),
            }
            rest = &after_open[end + PLACEHOLDER_CLOSE.len()..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_optional(name: &str) -> bool {
    OPTIONAL_PLACEHOLDERS.contains(&name)
}

/// Scan a body, returning placeholder names in order of first occurrence.
fn scan_placeholders(step: PipelineStep, body: &str) -> Result<Vec<String>, PromptError> {
    let mut names = Vec::new();
    let mut pos = 0;
    let bytes_scanned = |rest_offset: usize| rest_offset;
    let mut rest = body;
    loop {
        let open = rest.find(PLACEHOLDER_OPEN);
        let close = rest.find(PLACEHOLDER_CLOSE);
        match (open, close) {
            (None, None) => break,
            (None, Some(c)) => {
                return Err(PromptError::StrayDelimiter {
                    step,
                    offset: bytes_scanned(pos + c),
                });
            }
            (Some(o), Some(c)) if c < o => {
                return Err(PromptError::StrayDelimiter {
                    step,
                    offset: bytes_scanned(pos + c),
                });
            }
            (Some(o), None) => {
                return Err(PromptError::UnclosedDelimiter {
                    step,
                    offset: bytes_scanned(pos + o),
                });
            }
            (Some(o), Some(_)) => {
                let after_open = &rest[o + PLACEHOLDER_OPEN.len()..];
                let end = after_open.find(PLACEHOLDER_CLOSE).ok_or(
                    PromptError::UnclosedDelimiter {
                        step,
                        offset: bytes_scanned(pos + o),
                    },
                )?;
                let name = &after_open[..end];
                if !REGISTERED_PLACEHOLDERS.contains(&name) {
                    return Err(PromptError::UnknownPlaceholder {
                        step,
                        name: name.to_string(),
                    });
                }
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
                let consumed = o + PLACEHOLDER_OPEN.len() + end + PLACEHOLDER_CLOSE.len();
                pos += consumed;
                rest = &rest[consumed..];
            }
        }
    }
    Ok(names)
}

/// Placeholder-name-to-value map used at render time.
#[derive(Debug, Clone, Default)]
pub struct Bindings(std::collections::BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &str, value: impl Into<String>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&String> {
        self.0.get(name)
    }
}

/// The FT/ST/OI template triple used to run one pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub ft: PromptTemplate,
    pub st: PromptTemplate,
    pub oi: PromptTemplate,
}

impl TemplateSet {
    /// Content digest over the three bodies; recorded in run manifests so a
    /// run is traceable to the exact prompts it used.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in [&self.ft, &self.st, &self.oi] {
            hasher.update(t.step.to_string().as_bytes());
            hasher.update([0u8]);
            hasher.update(t.body.as_bytes());
            hasher.update([0u8]);
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Append the machine-readable FT output contract to an FT body. The three
/// section headers are what `parse_ft_response` looks for.
fn with_output_format(ft_body: &str) -> String {
    format!("{}\n\n{}", ft_body.trim_end(), FT_OUTPUT_FORMAT.trim_end())
}

fn family_ft_body(family: TaskFamily) -> &'static str {
    match family {
        TaskFamily::MathReasoning | TaskFamily::MultipleChoice => FT_MATH,
        TaskFamily::LongContentQa | TaskFamily::EssayScoring => FT_LONG,
        TaskFamily::ConstrainedStory => FT_STORY,
    }
}

fn is_long_content(family: TaskFamily) -> bool {
    matches!(
        family,
        TaskFamily::LongContentQa | TaskFamily::EssayScoring
    )
}

/// Build the template set for a family and variant.
///
/// Canonical bodies embed the family's domain line and simplification
/// examples. The Char/Word/Semantic bodies are the long-content stability
/// variants and are rejected for other families. External sets read
/// `ft.txt`, `st.txt`, `oi.txt` from the given directory verbatim.
pub fn load_template_set(
    family: TaskFamily,
    variant: &TemplateVariant,
) -> Result<TemplateSet, PromptError> {
    let fam = TemplateFamily::Family(family);
    let make = |ft_body: &str, st_body: &str, oi_body: &str| -> Result<TemplateSet, PromptError> {
        Ok(TemplateSet {
            ft: PromptTemplate::new(
                PipelineStep::Ft,
                fam,
                variant.clone(),
                with_output_format(ft_body),
            )?,
            st: PromptTemplate::new(PipelineStep::St, fam, variant.clone(), st_body.trim_end())?,
            oi: PromptTemplate::new(PipelineStep::Oi, fam, variant.clone(), oi_body.trim_end())?,
        })
    };
    match variant {
        TemplateVariant::Canonical => make(family_ft_body(family), ST_CANONICAL, OI_CANONICAL),
        TemplateVariant::CharLevel => {
            if !is_long_content(family) {
                return Err(PromptError::VariantUnavailable {
                    family,
                    variant: variant.clone(),
                });
            }
            make(FT_LONG_CHAR, ST_CHAR, OI_CHAR)
        }
        TemplateVariant::WordLevel => {
            if !is_long_content(family) {
                return Err(PromptError::VariantUnavailable {
                    family,
                    variant: variant.clone(),
                });
            }
            make(FT_LONG_WORD, ST_WORD, OI_WORD)
        }
        TemplateVariant::SemanticLevel => {
            if !is_long_content(family) {
                return Err(PromptError::VariantUnavailable {
                    family,
                    variant: variant.clone(),
                });
            }
            make(FT_LONG_SEMANTIC, ST_SEMANTIC, OI_SEMANTIC)
        }
        TemplateVariant::External(dir) => load_external_set(family, dir),
    }
}

fn load_external_set(family: TaskFamily, dir: &Path) -> Result<TemplateSet, PromptError> {
    let read = |name: &str| -> Result<String, PromptError> {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
    };
    let variant = TemplateVariant::External(dir.to_path_buf());
    let fam = TemplateFamily::Family(family);
    Ok(TemplateSet {
        ft: PromptTemplate::new(PipelineStep::Ft, fam, variant.clone(), read("ft.txt")?)?,
        st: PromptTemplate::new(PipelineStep::St, fam, variant.clone(), read("st.txt")?)?,
        oi: PromptTemplate::new(PipelineStep::Oi, fam, variant, read("oi.txt")?)?,
    })
}

/// The family-agnostic template set: domain and simplification examples are
/// left as placeholders for the caller to bind.
pub fn generic_template_set() -> TemplateSet {
    TemplateSet {
        ft: PromptTemplate::new(
            PipelineStep::Ft,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            with_output_format(FT_GENERIC),
        )
        .expect("embedded template is valid"),
        st: PromptTemplate::new(
            PipelineStep::St,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            ST_CANONICAL.trim_end(),
        )
        .expect("embedded template is valid"),
        oi: PromptTemplate::new(
            PipelineStep::Oi,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            OI_CANONICAL.trim_end(),
        )
        .expect("embedded template is valid"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &BTreeSet<String>) -> Vec<&str> {
        name.iter().map(String::as_str).collect()
    }

    #[test]
    fn generic_ft_binds_domain() {
        let generic = generic_template_set();
        assert_eq!(
            set(&generic.ft.placeholders()),
            vec!["domain-of-task", "simplification-examples", "the-task"]
        );
        let rendered = generic
            .ft
            .render(
                &Bindings::new()
                    .bind("domain-of-task", "math reasoning")
                    .bind("the-task", "Tom has 3 apples.")
                    .bind("simplification-examples", "Task 1: ..."),
            )
            .unwrap();
        assert!(rendered.contains("You are an expert in math reasoning"));
        assert!(!rendered.contains(PLACEHOLDER_OPEN));
        assert!(!rendered.contains(PLACEHOLDER_CLOSE));
    }

    #[test]
    fn missing_binding_names_the_placeholder() {
        let generic = generic_template_set();
        let err = generic
            .st
            .render(&Bindings::new().bind("concise-general-task", "x"))
            .unwrap_err();
        match err {
            PromptError::MissingBinding(name) => assert_eq!(name, "removed-constraints"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_required_binding_is_rejected_but_optional_passes() {
        let generic = generic_template_set();
        let bindings = Bindings::new()
            .bind("concise-general-task", "task")
            .bind("removed-constraints", "")
            .bind("draft-answer", "");
        let err = generic.st.render(&bindings).unwrap_err();
        assert!(matches!(err, PromptError::EmptyBinding(n) if n == "removed-constraints"));

        let ok = generic
            .st
            .render(
                &Bindings::new()
                    .bind("concise-general-task", "task")
                    .bind("removed-constraints", "constraints")
                    .bind("draft-answer", ""),
            )
            .unwrap();
        assert!(ok.contains("I will add some constraints:\nconstraints"));
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let err = PromptTemplate::new(
            PipelineStep::Ft,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            "Do <<something-strange>> now.",
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::UnknownPlaceholder { name, .. } if name == "something-strange"));
    }

    #[test]
    fn malformed_delimiters_are_rejected() {
        let unclosed = PromptTemplate::new(
            PipelineStep::Ft,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            "Take <<the-task and run.",
        );
        assert!(matches!(unclosed, Err(PromptError::UnclosedDelimiter { .. })));

        let stray = PromptTemplate::new(
            PipelineStep::Ft,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            "the-task>> is stray.",
        );
        assert!(matches!(stray, Err(PromptError::StrayDelimiter { .. })));
    }

    #[test]
    fn substitution_is_literal_not_rescanned() {
        let t = PromptTemplate::new(
            PipelineStep::Oi,
            TemplateFamily::Generic,
            TemplateVariant::Canonical,
            "Task: <<original-task>> Answer: <<st-answer>>",
        )
        .unwrap();
        let rendered = t
            .render(
                &Bindings::new()
                    .bind("original-task", "<<st-answer>>")
                    .bind("st-answer", "42"),
            )
            .unwrap();
        assert_eq!(rendered, "Task: <<st-answer>> Answer: 42");
    }

    #[test]
    fn family_sets_embed_examples_and_format_contract() {
        let math = load_template_set(TaskFamily::MathReasoning, &TemplateVariant::Canonical).unwrap();
        assert!(math.ft.body.contains("You are an expert in math reasoning"));
        assert!(math.ft.body.contains("Tom had three apples"));
        assert!(math.ft.body.contains("Simplified task:"));
        assert_eq!(set(&math.ft.placeholders()), vec!["the-task"]);

        let story =
            load_template_set(TaskFamily::ConstrainedStory, &TemplateVariant::Canonical).unwrap();
        assert!(story.ft.body.contains("constrained story generation"));
        assert!(story.ft.body.contains("snow, child, sky, cloud, tree, happy"));

        let long = load_template_set(TaskFamily::LongContentQa, &TemplateVariant::Canonical).unwrap();
        assert!(long.ft.body.contains("long-content answering"));
        assert!(long.ft.body.contains("Summarize this article."));
    }

    #[test]
    fn st_and_oi_share_bodies_across_families() {
        let math = load_template_set(TaskFamily::MathReasoning, &TemplateVariant::Canonical).unwrap();
        let story =
            load_template_set(TaskFamily::ConstrainedStory, &TemplateVariant::Canonical).unwrap();
        assert_eq!(math.st.body, story.st.body);
        assert_eq!(math.oi.body, story.oi.body);
        assert!(math.st.body.starts_with("Based on the concise and general task"));
        assert!(math.oi.body.contains("You need to check the answer through the following steps"));
    }

    #[test]
    fn stability_variants_cover_only_long_content() {
        for variant in [
            TemplateVariant::CharLevel,
            TemplateVariant::WordLevel,
            TemplateVariant::SemanticLevel,
        ] {
            assert!(load_template_set(TaskFamily::EssayScoring, &variant).is_ok());
            assert!(load_template_set(TaskFamily::LongContentQa, &variant).is_ok());
            let err = load_template_set(TaskFamily::MathReasoning, &variant).unwrap_err();
            assert!(matches!(err, PromptError::VariantUnavailable { .. }));
        }
    }

    #[test]
    fn variant_bodies_carry_their_signature_edits() {
        let char_set =
            load_template_set(TaskFamily::EssayScoring, &TemplateVariant::CharLevel).unwrap();
        assert!(char_set.ft.body.contains("samplify"));
        assert!(char_set.st.body.contains("considerasion"));
        assert!(char_set.oi.body.contains("thtough"));

        let word_set =
            load_template_set(TaskFamily::EssayScoring, &TemplateVariant::WordLevel).unwrap();
        assert!(word_set.ft.body.contains("simplification cases"));
        assert!(word_set.st.body.contains("add some requirements"));
        assert!(word_set.oi.body.contains("review the answer"));

        let sem_set =
            load_template_set(TaskFamily::EssayScoring, &TemplateVariant::SemanticLevel).unwrap();
        assert!(sem_set.ft.body.contains("You are professional in answering long-content questions."));
        assert!(sem_set.st.body.starts_with("On the basis of this task:"));
        assert!(sem_set.oi.body.contains("from the following two aspects"));
    }

    #[test]
    fn variant_placeholder_sets_match_canonical() {
        let canonical =
            load_template_set(TaskFamily::EssayScoring, &TemplateVariant::Canonical).unwrap();
        for variant in [
            TemplateVariant::CharLevel,
            TemplateVariant::WordLevel,
            TemplateVariant::SemanticLevel,
        ] {
            let v = load_template_set(TaskFamily::EssayScoring, &variant).unwrap();
            assert_eq!(v.ft.placeholders(), canonical.ft.placeholders());
            assert_eq!(v.st.placeholders(), canonical.st.placeholders());
            assert_eq!(v.oi.placeholders(), canonical.oi.placeholders());
        }
    }

    #[test]
    fn every_shipped_set_renders_clean_with_dummy_bindings() {
        let dummy = Bindings::new()
            .bind("the-task", "T")
            .bind("domain-of-task", "D")
            .bind("simplification-examples", "E")
            .bind("concise-general-task", "C")
            .bind("removed-constraints", "R")
            .bind("draft-answer", "A")
            .bind("original-task", "O")
            .bind("st-answer", "S");
        let mut sets = vec![generic_template_set()];
        for family in TaskFamily::ALL {
            sets.push(load_template_set(family, &TemplateVariant::Canonical).unwrap());
        }
        for variant in [
            TemplateVariant::CharLevel,
            TemplateVariant::WordLevel,
            TemplateVariant::SemanticLevel,
        ] {
            sets.push(load_template_set(TaskFamily::EssayScoring, &variant).unwrap());
        }
        for s in sets {
            for t in [&s.ft, &s.st, &s.oi] {
                let r = t.render(&dummy).unwrap();
                assert!(!r.contains(PLACEHOLDER_OPEN), "{}/{} left <<", t.step, t.variant);
                assert!(!r.contains(PLACEHOLDER_CLOSE), "{}/{} left >>", t.step, t.variant);
            }
        }
    }

    #[test]
    fn external_sets_load_from_step_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ft.txt"), "Solve <<the-task>> quickly.").unwrap();
        std::fs::write(dir.path().join("st.txt"), "Refine <<concise-general-task>> with <<removed-constraints>> and <<draft-answer>>.").unwrap();
        std::fs::write(dir.path().join("oi.txt"), "Check <<original-task>> against <<st-answer>>.").unwrap();
        let set = load_template_set(
            TaskFamily::MathReasoning,
            &TemplateVariant::External(dir.path().to_path_buf()),
        )
        .unwrap();
        assert_eq!(set.ft.body, "Solve <<the-task>> quickly.");

        std::fs::remove_file(dir.path().join("oi.txt")).unwrap();
        let err = load_template_set(
            TaskFamily::MathReasoning,
            &TemplateVariant::External(dir.path().to_path_buf()),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::Io { .. }));
    }

    #[test]
    fn content_hash_is_stable_and_body_sensitive() {
        let a = load_template_set(TaskFamily::MathReasoning, &TemplateVariant::Canonical).unwrap();
        let b = load_template_set(TaskFamily::MathReasoning, &TemplateVariant::Canonical).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = load_template_set(TaskFamily::EssayScoring, &TemplateVariant::Canonical).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }
}

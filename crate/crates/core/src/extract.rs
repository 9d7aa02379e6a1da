//! Answer extraction from free-form model responses.
//!
//! Each task family gets one extractor. Extraction is heuristic by nature:
//! when nothing matches, the answer is `Unparsed`, which downstream scoring
//! counts as incorrect rather than dropping the task.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::task::{TaskFamily, TaskInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum ExtractedAnswer {
    Numeric(f64),
    Choice(String),
    Score(i64),
    Story(String),
    Text(String),
    Unparsed,
}

impl ExtractedAnswer {
    /// Display form used in score reports.
    pub fn render(&self) -> String {
        match self {
            ExtractedAnswer::Numeric(v) => format_number(*v),
            ExtractedAnswer::Choice(l) => format!("({l})"),
            ExtractedAnswer::Score(s) => s.to_string(),
            ExtractedAnswer::Story(_) => "<story>".to_string(),
            ExtractedAnswer::Text(t) => t.clone(),
            ExtractedAnswer::Unparsed => "<unparsed>".to_string(),
        }
    }

    /// Canonical key used when identical answers must band together, e.g.
    /// for consistency voting.
    pub fn vote_key(&self) -> Option<String> {
        match self {
            ExtractedAnswer::Numeric(v) => Some(format_number(*v)),
            ExtractedAnswer::Choice(l) => Some(l.to_uppercase()),
            ExtractedAnswer::Score(s) => Some(s.to_string()),
            ExtractedAnswer::Story(t) | ExtractedAnswer::Text(t) => Some(t.clone()),
            ExtractedAnswer::Unparsed => None,
        }
    }
}

/// Canonical display form for a number: integral values print without a
/// fractional part, so "42.0" and "42" agree.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

const NUMBER: &str = r"-?\$?\d[\d,]*(?:\.\d+)?";

static KEYWORD_NUMBER: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b(?:answer|result)\b[^\n.?!]{0,60}?\b(?:is|=)[:\s]\s*\(?\$?(-?\d[\d,]*(?:\.\d+)?)")
        .expect("static regex")
});

static ANY_NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(NUMBER).expect("static regex"));

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim_start_matches('$')
        .replace([',', '$'], "")
        .parse::<f64>()
        .ok()
}

/// Pull the final numeric answer out of a response. Phrases like
/// "the answer is X" or "the result is X" win; otherwise the last number
/// in the text is taken. Commas and currency signs are stripped.
pub fn extract_numeric(text: &str) -> ExtractedAnswer {
    let keyword_hit = KEYWORD_NUMBER
        .captures_iter(text)
        .last()
        .and_then(|c| parse_number(c.get(1).expect("group 1").as_str()));
    if let Some(v) = keyword_hit {
        return ExtractedAnswer::Numeric(v);
    }
    ANY_NUMBER
        .find_iter(text)
        .last()
        .and_then(|m| parse_number(m.as_str()))
        .map(ExtractedAnswer::Numeric)
        .unwrap_or(ExtractedAnswer::Unparsed)
}

static PAREN_CHOICE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\(([A-Za-z])\)").expect("static regex"));

static KEYWORD_CHOICE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b(?:answer|choice|option)\b[^\n.?!]{0,40}?\bis\b:?\s*(?-i:([A-Z]))(?:\b|$)")
        .expect("static regex")
});

/// Pull a choice label out of a response: the last parenthesized label or
/// "the answer is X" phrasing, whichever occurs later.
pub fn extract_choice(text: &str) -> ExtractedAnswer {
    let paren = PAREN_CHOICE
        .captures_iter(text)
        .last()
        .map(|c| (c.get(0).expect("match").start(), c.get(1).expect("group").as_str()));
    let keyword = KEYWORD_CHOICE
        .captures_iter(text)
        .last()
        .map(|c| (c.get(0).expect("match").start(), c.get(1).expect("group").as_str()));
    let label = match (paren, keyword) {
        (Some((p_at, p)), Some((k_at, k))) => Some(if p_at >= k_at { p } else { k }),
        (Some((_, p)), None) => Some(p),
        (None, Some((_, k))) => Some(k),
        (None, None) => None,
    };
    label
        .map(|l| ExtractedAnswer::Choice(l.to_uppercase()))
        .unwrap_or(ExtractedAnswer::Unparsed)
}

static SCORE_PHRASE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b(?:scor(?:e|ed|es|ing)|rat(?:e|ed|es|ing))\b[^0-9]{0,40}?(-?\d+)")
        .expect("static regex")
});

/// Pull a rubric score out of a response: the last integer adjacent to
/// score/rating phrasing that falls inside `[lo, hi]`. Out-of-range
/// mentions are ignored rather than clamped.
pub fn extract_rubric_score(text: &str, lo: i64, hi: i64) -> ExtractedAnswer {
    SCORE_PHRASE
        .captures_iter(text)
        .filter_map(|c| c.get(1).expect("group").as_str().parse::<i64>().ok())
        .filter(|s| (lo..=hi).contains(s))
        .last()
        .map(ExtractedAnswer::Score)
        .unwrap_or(ExtractedAnswer::Unparsed)
}

/// Normal form for free-text answers: trimmed, lowercased, inner whitespace
/// collapsed, one trailing sentence terminator dropped ("8." matches "8").
pub fn normalize_text_answer(text: &str) -> String {
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_suffix(['.', '!', '?'])
        .unwrap_or(trimmed)
        .trim_end();
    trimmed.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dispatch to the family's extractor. Essay scoring needs the task for its
/// rubric range; story and long-content answers pass through as text.
pub fn extract_for_family(task: &TaskInstance, response: &str) -> ExtractedAnswer {
    match task.family {
        TaskFamily::MathReasoning => extract_numeric(response),
        TaskFamily::MultipleChoice => extract_choice(response),
        TaskFamily::EssayScoring => match task.score_range {
            Some((lo, hi)) => extract_rubric_score(response, lo, hi),
            None => ExtractedAnswer::Unparsed,
        },
        TaskFamily::LongContentQa => ExtractedAnswer::Text(normalize_text_answer(response)),
        TaskFamily::ConstrainedStory => ExtractedAnswer::Story(response.to_string()),
    }
}

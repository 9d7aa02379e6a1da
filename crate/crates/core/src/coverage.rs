//! Required-word coverage for constrained story generation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::metrics::MetricError;

/// Tuning knobs for [`word_present`]. The built-in inflection table covers
/// plural, past, and progressive forms; `extra_suffixes` widens the net for
/// corpora that need more (e.g. `"ny"` to let "sun" claim "sunny").
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatcherConfig {
    #[serde(default)]
    pub extra_suffixes: Vec<String>,
}

fn is_consonant(c: char) -> bool {
    c.is_ascii_alphabetic() && !matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn inflections(word: &str, config: &MatcherConfig) -> BTreeSet<String> {
    let w = word.to_lowercase();
    let mut out = BTreeSet::new();
    for suffix in ["", "s", "es", "ed", "d", "ing"] {
        out.insert(format!("{w}{suffix}"));
    }
    if let Some(stem) = w.strip_suffix('e') {
        out.insert(format!("{stem}ing"));
        out.insert(format!("{stem}ed"));
    }
    if let Some(last) = w.chars().last().filter(|&c| is_consonant(c)) {
        out.insert(format!("{w}{last}ing"));
        out.insert(format!("{w}{last}ed"));
    }
    for suffix in &config.extra_suffixes {
        out.insert(format!("{w}{suffix}"));
    }
    out
}

/// Whether `word` occurs in `text` as a whole token, directly or through a
/// common inflection ("sip" claims "sipping", "use" claims "used" and
/// "using", "vegetable" claims "vegetables"). Matching is case-insensitive
/// and token-bounded: "chess" does not claim "chessboard".
pub fn word_present(text: &str, word: &str, config: &MatcherConfig) -> bool {
    let forms = inflections(word, config);
    tokens(text).any(|token| forms.contains(&token))
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Coverage verdict for one story against its required word list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub required: usize,
    pub missing: Vec<String>,
    pub complete: bool,
}

/// Check every required word against the story text. `missing` preserves
/// the order the words were required in.
pub fn story_coverage(
    story: &str,
    required_words: &[String],
    config: &MatcherConfig,
) -> Result<CoverageResult, MetricError> {
    if required_words.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let missing: Vec<String> = required_words
        .iter()
        .filter(|word| !word_present(story, word, config))
        .cloned()
        .collect();
    Ok(CoverageResult {
        required: required_words.len(),
        complete: missing.is_empty(),
        missing,
    })
}

/// All-present rate: the percentage of stories that covered every required
/// word.
pub fn all_present_rate(results: &[CoverageResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let complete = results.iter().filter(|r| r.complete).count();
    Ok(100.0 * complete as f64 / results.len() as f64)
}

/// Missing-coverage rate: the mean percentage of required words each story
/// failed to include. Lower is better.
pub fn missing_coverage_rate(results: &[CoverageResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: f64 = results
        .iter()
        .map(|r| r.missing.len() as f64 / r.required as f64)
        .sum();
    Ok(100.0 * total / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MAGIC_WORLD_STORY: &str = "This is a world full of magic. One day, as the sun beat down on the lush lawn, a group of friends gathered around an old, abandoned house, wanting to make it their base. One of them, Mike arrived on his motorcycle. Upon their arrival at the house, they were intrigued by a chessboard set up outside. They need to play chess, moving the pieces into special formations to unlock the house. After success, they discovered a basement. In one corner, hidden beneath an old shoe and a mask, was a hole leading into the depths below. They dove into the unknown. They stumbled upon a magic instrument keyboard that seemed ancient, a wheel etched with peculiar symbols, and a wand emitting a faint glow. As they explored, they encountered challenges. They found themselves playing a life-sized game, each move determining their fate. With teamwork, they emerged victorious. Finally, it seems they have entered a new world, one where magic doesn't exist. They found that although there was no magic, people used tools instead, such as using a hose to glue vegetables, using a board to ski, etc. They are trying new things, such as painting, feeding a calf grazing, hitting the ball with a racket, sipping a hookah, etc. Suddenly, there was a crash. A part of the ground opened up. They are sucked into the hole and return to their world, and the previous experience is like a dream.";

    pub(crate) const MAGIC_WORLD_WORDS: &[&str] = &[
        "vegetable",
        "chess",
        "keyboard",
        "motorcycle",
        "sun",
        "sip",
        "ski",
        "part",
        "shoe",
        "mask",
        "use",
        "hose",
        "racket",
        "paint",
        "wheel",
        "hookah",
        "hole",
        "lawn",
        "wand",
        "base",
        "calf",
        "crash",
        "game",
    ];

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn inflected_forms_count_as_present() {
        let cfg = MatcherConfig::default();
        assert!(word_present("They are sipping tea", "sip", &cfg));
        assert!(word_present("people used tools", "use", &cfg));
        assert!(word_present("using a hose", "use", &cfg));
        assert!(word_present("glue vegetables", "vegetable", &cfg));
        assert!(word_present("such as painting", "paint", &cfg));
        assert!(word_present("planned the trip", "plan", &cfg));
        assert!(word_present("The Sun rose", "sun", &cfg));
    }

    #[test]
    fn matching_is_token_bounded() {
        let cfg = MatcherConfig::default();
        assert!(!word_present("a chessboard on the table", "chess", &cfg));
        assert!(word_present("a chessboard; later they played chess", "chess", &cfg));
        assert!(!word_present("the basement door", "base", &cfg));
        assert!(!word_present("a sunny day", "sun", &cfg));
    }

    #[test]
    fn extra_suffixes_widen_the_match() {
        let cfg = MatcherConfig {
            extra_suffixes: vec!["ny".into()],
        };
        assert!(word_present("a sunny day", "sun", &cfg));
    }

    #[test]
    fn the_magic_world_story_is_complete() {
        let result = story_coverage(
            MAGIC_WORLD_STORY,
            &words(MAGIC_WORLD_WORDS),
            &MatcherConfig::default(),
        )
        .unwrap();
        assert!(
            result.complete,
            "expected full coverage, missing: {:?}",
            result.missing
        );
        assert_eq!(result.required, 23);
    }

    #[test]
    fn missing_words_are_reported_in_order() {
        let result = story_coverage(
            "The cat sat on the mat.",
            &words(&["mat", "dog", "cat", "fish"]),
            &MatcherConfig::default(),
        )
        .unwrap();
        assert!(!result.complete);
        assert_eq!(result.missing, vec!["dog".to_string(), "fish".to_string()]);
    }

    #[test]
    fn rates_aggregate_across_stories() {
        let cfg = MatcherConfig::default();
        let complete = story_coverage("a b c d", &words(&["a", "b", "c", "d"]), &cfg).unwrap();
        let partial = story_coverage("a b c", &words(&["a", "b", "c", "d"]), &cfg).unwrap();
        let results = [complete, partial];
        assert_eq!(all_present_rate(&results), Ok(50.0));
        assert_eq!(missing_coverage_rate(&results), Ok(12.5));
        assert_eq!(all_present_rate(&[]), Err(MetricError::EmptyInput));
        assert_eq!(missing_coverage_rate(&[]), Err(MetricError::EmptyInput));
        assert_eq!(
            story_coverage("text", &[], &cfg),
            Err(MetricError::EmptyInput)
        );
    }
}

//! Scalar metrics over scored task outcomes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::extract::normalize_text_answer;

/// One graded item: the model's rating next to the reference rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingPair {
    pub model_score: i64,
    pub gold_score: i64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("need at least two rating pairs, got {0}")]
    NotEnoughPairs(usize),
    #[error("need at least two rating levels, got {0}")]
    TooFewLevels(usize),
    #[error("rating {value} at pair {index} is outside 0..{n_levels}")]
    ScoreOutOfRange {
        index: usize,
        value: i64,
        n_levels: usize,
    },
    #[error("both raters produced a single identical level; agreement is undefined")]
    DegenerateMarginals,
    #[error("metric input is empty")]
    EmptyInput,
    #[error("category {0:?} has no items")]
    EmptyCategory(String),
}

/// Quadratic weighted kappa between model and gold ratings on an
/// `n_levels`-point scale (ratings must lie in `0..n_levels`).
///
/// Disagreement is weighted by `(i - j)^2 / (n_levels - 1)^2`; the expected
/// disagreement comes from the outer product of the two marginal histograms,
/// scaled to the observed pair count. Perfect agreement gives 1.0; when both
/// raters use a single identical level the statistic is undefined and an
/// error is returned instead of a silent zero.
pub fn quadratic_weighted_kappa(
    pairs: &[RatingPair],
    n_levels: usize,
) -> Result<f64, MetricError> {
    if pairs.len() < 2 {
        return Err(MetricError::NotEnoughPairs(pairs.len()));
    }
    if n_levels < 2 {
        return Err(MetricError::TooFewLevels(n_levels));
    }
    let mut model_hist = vec![0u64; n_levels];
    let mut gold_hist = vec![0u64; n_levels];
    let mut observed = 0.0;
    for (index, pair) in pairs.iter().enumerate() {
        for value in [pair.model_score, pair.gold_score] {
            if value < 0 || value as usize >= n_levels {
                return Err(MetricError::ScoreOutOfRange {
                    index,
                    value,
                    n_levels,
                });
            }
        }
        model_hist[pair.model_score as usize] += 1;
        gold_hist[pair.gold_score as usize] += 1;
        let diff = (pair.model_score - pair.gold_score) as f64;
        observed += diff * diff;
    }
    let mut expected = 0.0;
    for (i, &m) in model_hist.iter().enumerate() {
        if m == 0 {
            continue;
        }
        for (j, &g) in gold_hist.iter().enumerate() {
            let diff = (i as f64) - (j as f64);
            expected += (m as f64) * (g as f64) * diff * diff;
        }
    }
    // Both sums carry the same 1/(n_levels-1)^2 weight factor, so it cancels;
    // `expected` still needs scaling from n^2 outer-product mass down to n.
    let expected = expected / pairs.len() as f64;
    if expected == 0.0 {
        return Err(MetricError::DegenerateMarginals);
    }
    Ok(1.0 - observed / expected)
}

/// Percentage of correct outcomes, 0..=100.
pub fn result_accuracy(outcomes: &[bool]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let correct = outcomes.iter().filter(|&&ok| ok).count();
    Ok(100.0 * correct as f64 / outcomes.len() as f64)
}

/// Unweighted mean of per-category means: every category counts once no
/// matter how many items it holds.
pub fn macro_average(per_category: &BTreeMap<String, Vec<f64>>) -> Result<f64, MetricError> {
    if per_category.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for (name, values) in per_category {
        if values.is_empty() {
            return Err(MetricError::EmptyCategory(name.clone()));
        }
        total += values.iter().sum::<f64>() / values.len() as f64;
    }
    Ok(total / per_category.len() as f64)
}

/// 1.0 when the normalized prediction equals the normalized reference.
pub fn exact_match_score(prediction: &str, reference: &str) -> f64 {
    if normalize_text_answer(prediction) == normalize_text_answer(reference) {
        1.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1 between normalized prediction and reference: token
/// overlap is counted with multiplicity.
pub fn token_f1_score(prediction: &str, reference: &str) -> f64 {
    let pred: Vec<String> = normalize_text_answer(prediction)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let gold: Vec<String> = normalize_text_answer(reference)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for token in &gold {
        *gold_counts.entry(token).or_default() += 1;
    }
    let mut common = 0usize;
    for token in &pred {
        if let Some(count) = gold_counts.get_mut(token.as_str()) {
            if *count > 0 {
                *count -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

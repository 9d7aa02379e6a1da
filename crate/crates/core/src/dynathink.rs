//! Consistency-based routing of problems into fast and slow sets.
//!
//! Problems are sampled repeatedly; a problem resolves "fast" when a clear
//! majority answer emerges whose reasoning is also the shortest observed.
//! Everything else either gets more samples next round or lands in the slow
//! set for a heavier method to handle.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::baseline::{majority_vote, VoteDistribution};

/// One sampled response, reduced to what routing needs: the extracted
/// answer key (`None` when extraction failed) and the step count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub answer: Option<String>,
    pub steps: usize,
}

/// Sampling schedule: start at `n0` samples per problem and add `n0` more
/// each round, up to `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub n0: usize,
    pub n_max: usize,
}

impl Default for RouteConfig {
    fn default() -> Self {
        RouteConfig { n0: 2, n_max: 16 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RouteError<E> {
    #[error("initial sample count must be at least 2, got {0}")]
    BadInitialSamples(usize),
    #[error("sample cap {n_max} is below the initial sample count {n0}")]
    CapBelowInitial { n0: usize, n_max: usize },
    #[error("duplicate problem id {0:?}")]
    DuplicateProblem(String),
    #[error("sampling failed")]
    Sampler(E),
}

/// A problem that resolved on the fast path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastDecision {
    pub problem_id: String,
    pub answer: String,
    pub votes: usize,
    /// Samples drawn per problem in the round that decided this problem.
    pub n_at_decision: usize,
    /// 1-based round index.
    pub round: usize,
}

/// Where every problem ended up, plus cost accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub fast: Vec<FastDecision>,
    pub slow: Vec<String>,
    /// The subset of `slow` that was still undecided when the sample cap
    /// hit.
    pub cap_terminated: Vec<String>,
    pub rounds: usize,
    pub total_samples: usize,
    pub samples_per_problem: BTreeMap<String, usize>,
}

/// Route `problems` by repeated sampling.
///
/// Per round, every pending problem draws `n` fresh samples. A problem
/// whose modal answer reaches `floor(n/2) + 1` votes *and* whose modal
/// answer's shortest reasoning matches the round's overall shortest
/// reasoning is decided fast. If a round decides nothing, all pending
/// problems go slow; otherwise the rest are retried with `n + n0` samples
/// until the cap would be exceeded, which sends the remainder slow as well.
pub fn dynathink_route<E>(
    problems: &[String],
    config: &RouteConfig,
    mut sample: impl FnMut(&str, usize) -> Result<Vec<ResponseSample>, E>,
) -> Result<RouteOutcome, RouteError<E>> {
    if config.n0 < 2 {
        return Err(RouteError::BadInitialSamples(config.n0));
    }
    if config.n_max < config.n0 {
        return Err(RouteError::CapBelowInitial {
            n0: config.n0,
            n_max: config.n_max,
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in problems {
        if !seen.insert(id) {
            return Err(RouteError::DuplicateProblem(id.clone()));
        }
    }

    let mut outcome = RouteOutcome::default();
    let mut pending: Vec<String> = problems.to_vec();
    let mut n = config.n0;

    while !pending.is_empty() {
        outcome.rounds += 1;
        let mut fast_this_round = Vec::new();
        let mut retry = Vec::new();

        for problem_id in &pending {
            let samples = sample(problem_id, n).map_err(RouteError::Sampler)?;
            outcome.total_samples += samples.len();
            *outcome.samples_per_problem.entry(problem_id.clone()).or_default() +=
                samples.len();

            if let Some(decision) = fast_decision(problem_id, &samples, outcome.rounds) {
                fast_this_round.push(decision);
            } else {
                retry.push(problem_id.clone());
            }
        }

        if fast_this_round.is_empty() {
            // No problem resolved at this sample size; more samples are not
            // expected to help the rest either.
            outcome.slow = retry;
            return Ok(outcome);
        }
        outcome.fast.extend(fast_this_round);
        pending = retry;
        n += config.n0;
        if n > config.n_max && !pending.is_empty() {
            outcome.cap_terminated = pending.clone();
            outcome.slow = std::mem::take(&mut pending);
            return Ok(outcome);
        }
    }
    Ok(outcome)
}

/// The per-problem fast test: majority consistency plus minimal reasoning.
fn fast_decision(problem_id: &str, samples: &[ResponseSample], round: usize) -> Option<FastDecision> {
    if samples.is_empty() {
        return None;
    }
    let dist = VoteDistribution::from_keys(samples.iter().map(|s| s.answer.as_deref()));
    let (answer, votes) = majority_vote(&dist)?;
    if votes < dist.n / 2 + 1 {
        return None;
    }
    let overall_min = samples.iter().map(|s| s.steps).min()?;
    let majority_min = samples
        .iter()
        .filter(|s| s.answer.as_deref() == Some(answer.as_str()))
        .map(|s| s.steps)
        .min()?;
    if majority_min != overall_min {
        return None;
    }
    Some(FastDecision {
        problem_id: problem_id.to_string(),
        answer,
        votes,
        n_at_decision: samples.len(),
        round,
    })
}

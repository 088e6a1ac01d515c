//! Held-out measurements: Avg@k accuracy, token usage, verification accuracy,
//! verification-weighted voting and recovery from corrupted reasoning.
//!
//! Every per-query stream is keyed by the query id, so results do not depend
//! on query order or on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{balance_and_sample, CandidateBuffer, VerificationTriplet};
use crate::policy::{DecodeConfig, TokenPolicy};
use crate::rng::{derived_rng, stream};
use crate::task_env::{
    corrupt_prefix, parse_output, render_verification_prompt, tok, CorruptionConfig, Judgment, Query, Task, Token,
};

/// Held-out query ids start here; training ids stay below it.
pub const EVAL_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub seed: u64,
    pub queries: Vec<Query>,
}

impl EvalSet {
    pub fn generate(task: &Task, seed: u64, size: usize) -> Result<Self> {
        let mut rng = derived_rng(seed, &[stream::EVAL_SET]);
        let queries = (0..size as u64)
            .map(|i| task.sample_query(&mut rng, EVAL_ID_BASE + i))
            .collect::<Result<_>>()?;
        Ok(EvalSet { seed, queries })
    }

    pub fn size(&self) -> usize {
        self.queries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub accuracy: f64,
    pub avg_tokens: f64,
    pub samples: usize,
}

/// Samples `k` outputs per query and reports the mean fraction correct
/// (Avg@k) and the mean output length.
pub fn generation_stats(
    policy: &impl TokenPolicy,
    task: &Task,
    set: &EvalSet,
    k: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<GenerationStats> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let decode = &task.generation_decode(decode);
    let per_query: Vec<Result<(usize, usize)>> = set
        .queries
        .par_iter()
        .map(|q| {
            let prompt = task.generation_prompt(q)?;
            let mut rng = derived_rng(seed, &[stream::EVAL, q.id]);
            let mut correct = 0;
            let mut tokens = 0;
            for _ in 0..k {
                let traj = policy.sample(&prompt, decode, task.stop_token(), &mut rng);
                tokens += traj.token_count();
                correct += task.score_generation(q, &traj.generated, decode.max_new_tokens).label as usize;
            }
            Ok((correct, tokens))
        })
        .collect();
    let (mut correct, mut tokens) = (0usize, 0usize);
    for r in per_query {
        let (c, t) = r?;
        correct += c;
        tokens += t;
    }
    let samples = k * set.size();
    Ok(GenerationStats {
        accuracy: correct as f64 / samples as f64,
        avg_tokens: tokens as f64 / samples as f64,
        samples,
    })
}

pub fn acc_at_k(
    policy: &impl TokenPolicy,
    task: &Task,
    set: &EvalSet,
    k: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<f64> {
    Ok(generation_stats(policy, task, set, k, decode, seed)?.accuracy)
}

pub fn avg_tokens(
    policy: &impl TokenPolicy,
    task: &Task,
    set: &EvalSet,
    k: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<f64> {
    Ok(generation_stats(policy, task, set, k, decode, seed)?.avg_tokens)
}

fn judge_config(decode: &DecodeConfig) -> DecodeConfig {
    DecodeConfig {
        max_new_tokens: 1,
        ..decode.clone()
    }
}

/// Mean over triplets of the fraction of `k` sampled judgments that agree
/// with the triplet label.
pub fn verification_accuracy(
    verifier: &impl TokenPolicy,
    triplets: &[VerificationTriplet],
    k: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<f64> {
    if triplets.is_empty() || k == 0 {
        return Err(Error::InvalidArgument("need at least one triplet and k >= 1".into()));
    }
    let judge = judge_config(decode);
    let hits: Vec<Result<usize>> = triplets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let prompt = render_verification_prompt(&t.prompt_tokens, &t.candidate_answer)?;
            let mut rng = derived_rng(seed, &[stream::VERIFY_SCORES, t.query_id, i as u64]);
            Ok((0..k)
                .filter(|_| {
                    let out = verifier.sample(&prompt, &judge, None, &mut rng);
                    match Judgment::from_output(&out.generated) {
                        Judgment::Yes => t.label,
                        Judgment::No => !t.label,
                        Judgment::Invalid => false,
                    }
                })
                .count())
        })
        .collect();
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / (k * triplets.len()) as f64)
}

/// A label-balanced, query-diverse set of the policy's own parseable answers
/// on the held-out queries.
pub fn own_candidate_set(
    policy: &impl TokenPolicy,
    set: &EvalSet,
    per_query: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Vec<VerificationTriplet>> {
    let raw: Vec<Result<Vec<VerificationTriplet>>> = set
        .queries
        .par_iter()
        .map(|q| {
            let prompt = crate::task_env::render_generation_prompt(q)?;
            let mut rng = derived_rng(seed, &[stream::CANDIDATES, q.id]);
            Ok((0..per_query)
                .map(|_| {
                    let traj = policy.sample(&prompt, decode, Some(tok::EOS), &mut rng);
                    VerificationTriplet::from_output(q, &traj.generated, decode.max_new_tokens, 0)
                })
                .filter(|t| t.parse.is_ok())
                .collect())
        })
        .collect();
    let mut buffer = CandidateBuffer::new(usize::MAX);
    for r in raw {
        buffer.insert(r?);
    }
    let size = 2 * buffer.count_label(true).min(buffer.count_label(false));
    balance_and_sample(&mut buffer, size, &mut derived_rng(seed, &[stream::BALANCE]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    pub num_candidates: usize,
    pub verify_passes: usize,
    pub combine_lambda: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            num_candidates: 16,
            verify_passes: 4,
            combine_lambda: 1.0,
        }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 {
            return Err(Error::config("vote.num_candidates", "must be at least 1"));
        }
        if self.combine_lambda.is_nan() || self.combine_lambda < 0.0 {
            return Err(Error::config("vote.combine_lambda", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScore {
    pub answer: Vec<Token>,
    pub votes: usize,
    /// Sum over this answer's candidates of their YES fraction.
    pub verify_sum: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub answer: Option<Vec<Token>>,
    pub scores: Vec<AnswerScore>,
    pub unparseable: usize,
}

/// Highest score wins; ties go to the larger raw vote count, then to the
/// smaller answer sequence.
pub fn pick_answer(scores: &[AnswerScore]) -> Option<&AnswerScore> {
    scores.iter().max_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.votes.cmp(&b.votes))
            .then_with(|| b.answer.cmp(&a.answer))
    })
}

fn sample_answers(
    policy: &impl TokenPolicy,
    task: &Task,
    query: &Query,
    n: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Vec<Option<Vec<Token>>>> {
    let prompt = task.generation_prompt(query)?;
    let mut rng = derived_rng(seed, &[stream::EVAL, query.id]);
    Ok((0..n)
        .map(|_| {
            let traj = policy.sample(&prompt, decode, task.stop_token(), &mut rng);
            parse_output(&traj.generated, decode.max_new_tokens).answer
        })
        .collect())
}

fn tally(answers: &[Option<Vec<Token>>], verify_scores: &[f64], lambda: f64) -> VoteOutcome {
    let mut classes: BTreeMap<Vec<Token>, (usize, f64)> = BTreeMap::new();
    let mut unparseable = 0;
    for (answer, &v) in answers.iter().zip(verify_scores) {
        match answer {
            Some(a) => {
                let e = classes.entry(a.clone()).or_default();
                e.0 += 1;
                e.1 += v;
            }
            None => unparseable += 1,
        }
    }
    let scores: Vec<AnswerScore> = classes
        .into_iter()
        .map(|(answer, (votes, verify_sum))| AnswerScore {
            score: votes as f64 + lambda * verify_sum,
            answer,
            votes,
            verify_sum,
        })
        .collect();
    VoteOutcome {
        answer: pick_answer(&scores).map(|s| s.answer.clone()),
        scores,
        unparseable,
    }
}

pub fn majority_vote(
    policy: &impl TokenPolicy,
    task: &Task,
    query: &Query,
    n: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<VoteOutcome> {
    let answers = sample_answers(policy, task, query, n, decode, seed)?;
    Ok(tally(&answers, &vec![0.0; answers.len()], 0.0))
}

/// Majority voting where each answer class also collects `λ` times the sum of
/// its candidates' self-verification YES rates. Candidates are sampled from
/// the same stream as [`majority_vote`].
pub fn vote_with_verify(
    policy: &impl TokenPolicy,
    task: &Task,
    query: &Query,
    cfg: &VoteConfig,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<VoteOutcome> {
    cfg.validate()?;
    let answers = sample_answers(policy, task, query, cfg.num_candidates, decode, seed)?;
    let judge = judge_config(decode);
    let mut rng = derived_rng(seed, &[stream::VERIFY_SCORES, query.id]);
    let mut scores = Vec::with_capacity(answers.len());
    for answer in &answers {
        let score = match answer {
            Some(a) if cfg.verify_passes > 0 => {
                let prompt = render_verification_prompt(&query.prompt_tokens, a)?;
                let yes = (0..cfg.verify_passes)
                    .filter(|_| {
                        let out = policy.sample(&prompt, &judge, None, &mut rng);
                        Judgment::from_output(&out.generated) == Judgment::Yes
                    })
                    .count();
                yes as f64 / cfg.verify_passes as f64
            }
            _ => 0.0,
        };
        scores.push(score);
    }
    Ok(tally(&answers, &scores, cfg.combine_lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingAccuracy {
    pub majority: f64,
    pub with_verify: f64,
    /// Queries where the two rules picked the same answer.
    pub agreement: f64,
}

/// Accuracy of plain majority voting and of verification-weighted voting on
/// the same candidate samples.
pub fn voting_accuracy(
    policy: &impl TokenPolicy,
    task: &Task,
    set: &EvalSet,
    cfg: &VoteConfig,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<VotingAccuracy> {
    let rows: Vec<Result<(bool, bool, bool)>> = set
        .queries
        .par_iter()
        .map(|q| {
            let plain = majority_vote(policy, task, q, cfg.num_candidates, decode, seed)?;
            let weighted = vote_with_verify(policy, task, q, cfg, decode, seed)?;
            let right = |o: &VoteOutcome| o.answer.as_deref() == Some(q.reference_answer.as_slice());
            Ok((right(&plain), right(&weighted), plain.answer == weighted.answer))
        })
        .collect();
    let (mut a, mut b, mut same) = (0, 0, 0);
    for r in rows {
        let (x, y, z) = r?;
        a += x as usize;
        b += y as usize;
        same += z as usize;
    }
    let n = set.size() as f64;
    Ok(VotingAccuracy {
        majority: a as f64 / n,
        with_verify: b as f64 / n,
        agreement: same as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub corrupt_count: usize,
    pub success_rate: f64,
    pub evaluated: usize,
    /// Queries whose greedy reference did not parse or was too short.
    pub skipped: usize,
}

/// Decodes a greedy reference per query, corrupts its reasoning prefix and
/// lets the policy continue from there. Success means the continued output
/// still reaches the reference answer.
pub fn corrupted_prefix_eval(
    policy: &impl TokenPolicy,
    set: &EvalSet,
    corruption: &CorruptionConfig,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<CorruptionReport> {
    let greedy = DecodeConfig::greedy(decode.max_new_tokens);
    let rows: Vec<Result<Option<bool>>> = set
        .queries
        .par_iter()
        .map(|q| {
            let prompt = crate::task_env::render_generation_prompt(q)?;
            let mut rng = derived_rng(seed, &[stream::EVAL, q.id, corruption.corrupt_count as u64]);
            let reference = policy.sample(&prompt, &greedy, Some(tok::EOS), &mut rng);
            if !parse_output(&reference.generated, decode.max_new_tokens).is_ok() {
                return Ok(None);
            }
            let prefix = match corrupt_prefix(&reference.generated, &mut rng, corruption) {
                Ok(p) => p,
                Err(Error::TrajectoryTooShort { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let budget = decode.max_new_tokens.saturating_sub(prefix.len()).max(1);
            let mut context = prompt.clone();
            context.extend(&prefix);
            let cont = policy.sample(
                &context,
                &DecodeConfig {
                    max_new_tokens: budget,
                    ..decode.clone()
                },
                Some(tok::EOS),
                &mut rng,
            );
            let mut output = prefix;
            output.extend(cont.generated);
            let parsed = parse_output(&output, decode.max_new_tokens);
            Ok(Some(parsed.answer.as_deref() == Some(q.reference_answer.as_slice())))
        })
        .collect();
    let (mut ok, mut evaluated, mut skipped) = (0, 0, 0);
    for r in rows {
        match r? {
            Some(hit) => {
                evaluated += 1;
                ok += hit as usize;
            }
            None => skipped += 1,
        }
    }
    Ok(CorruptionReport {
        corrupt_count: corruption.corrupt_count,
        success_rate: if evaluated == 0 { 0.0 } else { ok as f64 / evaluated as f64 },
        evaluated,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(answer: Vec<Token>, votes: usize, verify_sum: f64, lambda: f64) -> AnswerScore {
        AnswerScore {
            score: votes as f64 + lambda * verify_sum,
            answer,
            votes,
            verify_sum,
        }
    }

    #[test]
    fn verification_mass_breaks_vote_ties() {
        let scores = vec![score(vec![4], 3, 2.4, 1.0), score(vec![1], 3, 0.6, 1.0)];
        assert_eq!(pick_answer(&scores).unwrap().answer, vec![4]);
    }

    #[test]
    fn ties_fall_back_to_votes_then_smallest_answer() {
        let scores = vec![score(vec![2], 3, 0.0, 0.0), score(vec![1], 3, 0.0, 0.0), score(vec![0], 2, 1.0, 1.0)];
        assert_eq!(pick_answer(&scores).unwrap().answer, vec![1]);
        assert!(pick_answer(&[]).is_none());
    }

    #[test]
    fn tally_counts_unparseable_separately() {
        let out = tally(&[Some(vec![1]), None, Some(vec![1]), Some(vec![2])], &[0.0; 4], 0.0);
        assert_eq!(out.unparseable, 1);
        assert_eq!(out.answer, Some(vec![1]));
        let none = tally(&[None, None], &[0.0; 2], 1.0);
        assert_eq!(none.answer, None);
    }
}

//! On-policy verification data: candidate collection, filtering, a bounded
//! candidate buffer, and label-balanced, query-diverse batch selection.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{collect_group, rollouts, RewardedGroup, TaskKind};
use crate::policy::{DecodeConfig, PolicyParams, Trajectory};
use crate::rng::Rng;
use crate::task_env::{
    render_generation_prompt, render_verification_prompt, tok, verify_generation, verify_judgment, Judgment,
    ParseOutcome, Query, Token,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationTriplet {
    pub query_id: u64,
    pub prompt_tokens: Vec<Token>,
    /// Empty when the output did not parse.
    pub candidate_answer: Vec<Token>,
    pub label: bool,
    pub source_step: u64,
    pub parse: ParseOutcome,
    pub output_len: usize,
}

impl VerificationTriplet {
    pub fn from_output(query: &Query, output: &[Token], max_len: usize, source_step: u64) -> Self {
        let verdict = verify_generation(query, output, max_len);
        VerificationTriplet {
            query_id: query.id,
            prompt_tokens: query.prompt_tokens.clone(),
            candidate_answer: verdict.parse.answer.clone().unwrap_or_default(),
            label: verdict.label,
            source_step,
            parse: verdict.parse,
            output_len: output.len(),
        }
    }
}

pub fn triplets_from_trajectories(
    query: &Query,
    trajectories: &[Trajectory],
    max_len: usize,
    source_step: u64,
) -> Vec<VerificationTriplet> {
    trajectories
        .iter()
        .map(|t| VerificationTriplet::from_output(query, &t.generated, max_len, source_step))
        .collect()
}

/// Samples `group_size` answers per query and labels each with the rule-based
/// verifier. Parse failures are kept so that filtering can see them.
pub fn collect_candidates(
    params: &PolicyParams,
    queries: &[Query],
    group_size: usize,
    decode: &DecodeConfig,
    rng: &mut Rng,
    source_step: u64,
) -> Result<Vec<VerificationTriplet>> {
    let mut out = Vec::with_capacity(queries.len() * group_size);
    for q in queries {
        let prompt = render_generation_prompt(q)?;
        let trajs = rollouts(params, &prompt, group_size, decode, Some(tok::EOS), rng);
        out.extend(triplets_from_trajectories(q, &trajs, decode.max_new_tokens, source_step));
    }
    Ok(out)
}

/// Drops unparseable or over-long candidates, then every query left without
/// a single correct candidate.
pub fn filter_samples(raw: Vec<VerificationTriplet>, max_len: usize) -> Vec<VerificationTriplet> {
    let valid: Vec<VerificationTriplet> = raw
        .into_iter()
        .filter(|t| t.parse.is_ok() && t.output_len <= max_len)
        .collect();
    let solved: BTreeSet<u64> = valid.iter().filter(|t| t.label).map(|t| t.query_id).collect();
    valid.into_iter().filter(|t| solved.contains(&t.query_id)).collect()
}

/// Triplets retained across steps, evicting the oldest `source_step` first
/// (insertion order breaks ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateBuffer {
    capacity: usize,
    next_seq: u64,
    entries: BTreeMap<u64, VerificationTriplet>,
}

impl CandidateBuffer {
    pub fn new(capacity: usize) -> Self {
        CandidateBuffer {
            capacity,
            next_seq: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &VerificationTriplet> {
        self.entries.values()
    }

    pub fn insert(&mut self, triplets: impl IntoIterator<Item = VerificationTriplet>) {
        for t in triplets {
            self.entries.insert(self.next_seq, t);
            self.next_seq += 1;
        }
        if self.entries.len() > self.capacity {
            let mut order: Vec<(u64, u64)> = self.entries.iter().map(|(&seq, t)| (t.source_step, seq)).collect();
            order.sort_unstable();
            let excess = self.entries.len() - self.capacity;
            for &(_, seq) in &order[..excess] {
                self.entries.remove(&seq);
            }
        }
    }

    /// Insertion sequence numbers grouped by query, then by label.
    pub fn index(&self) -> BTreeMap<u64, [Vec<u64>; 2]> {
        let mut idx: BTreeMap<u64, [Vec<u64>; 2]> = BTreeMap::new();
        for (&seq, t) in &self.entries {
            idx.entry(t.query_id).or_default()[t.label as usize].push(seq);
        }
        idx
    }

    pub fn count_label(&self, label: bool) -> usize {
        self.entries.values().filter(|t| t.label == label).count()
    }

    /// One line per triplet: `query_id<TAB>answer tokens<TAB>label<TAB>step`.
    pub fn dump(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in self.entries.values() {
            let answer: Vec<String> = t.candidate_answer.iter().map(|d| d.to_string()).collect();
            writeln!(out, "{}\t{}\t{}\t{}", t.query_id, answer.join(" "), t.label as u8, t.source_step)?;
        }
        Ok(())
    }
}

/// A row of a buffer dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRow {
    pub query_id: u64,
    pub answer_tokens: Vec<Token>,
    pub label: bool,
    pub step: u64,
}

pub fn read_dump(input: impl BufRead) -> Result<Vec<DumpRow>> {
    let bad = |line: &str| Error::Serde(format!("bad buffer dump line: {line:?}"));
    input
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::Serde(e.to_string()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, answer, label, step] = fields.as_slice() else {
                return Err(bad(&line));
            };
            Ok(DumpRow {
                query_id: qid.parse().map_err(|_| bad(&line))?,
                answer_tokens: answer
                    .split_whitespace()
                    .map(|d| d.parse().map_err(|_| bad(&line)))
                    .collect::<Result<_>>()?,
                label: match *label {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad(&line)),
                },
                step: step.parse().map_err(|_| bad(&line))?,
            })
        })
        .collect()
}

/// Removes and returns a label-balanced batch of at most `batch_size`
/// triplets.
///
/// Within each label, queries are visited round-robin in a seeded order and
/// each visit takes one uniformly chosen unused triplet, so no query gives a
/// second triplet of a label while another query still has one to give. If
/// either label is absent the batch is empty.
pub fn balance_and_sample(
    buffer: &mut CandidateBuffer,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<VerificationTriplet>> {
    if !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("verification batch size {batch_size} is odd")));
    }
    let index = buffer.index();
    let per_label = (batch_size / 2)
        .min(buffer.count_label(true))
        .min(buffer.count_label(false));
    if per_label == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::with_capacity(2 * per_label);
    for label in [true, false] {
        let mut pools: Vec<Vec<u64>> = index
            .values()
            .map(|by_label| by_label[label as usize].clone())
            .filter(|p| !p.is_empty())
            .collect();
        pools.shuffle(rng);
        let mut taken = 0;
        'rounds: while taken < per_label {
            for pool in pools.iter_mut().filter(|p| !p.is_empty()) {
                let pick = rng.random_range(0..pool.len());
                chosen.push(pool.swap_remove(pick));
                taken += 1;
                if taken == per_label {
                    break 'rounds;
                }
            }
        }
    }
    Ok(chosen
        .into_iter()
        .map(|seq| buffer.entries.remove(&seq).expect("indexed entry"))
        .collect())
}

/// Renders each triplet as a verification prompt, samples `group_size`
/// single-token judgments and rewards them against the triplet label.
/// `constant_reward` replaces the judgment reward when set.
pub fn build_verification_groups(
    params: &PolicyParams,
    batch: &[VerificationTriplet],
    group_size: usize,
    decode: &DecodeConfig,
    rng: &mut Rng,
    eps_norm: f64,
    constant_reward: Option<f64>,
) -> Result<Vec<RewardedGroup>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty verification batch".into()));
    }
    let judge = DecodeConfig {
        max_new_tokens: 1,
        ..decode.clone()
    };
    batch
        .iter()
        .map(|t| {
            let prompt = render_verification_prompt(&t.prompt_tokens, &t.candidate_answer)?;
            collect_group(
                params,
                t.query_id,
                &prompt,
                group_size,
                &judge,
                None,
                |traj| constant_reward.unwrap_or_else(|| verify_judgment(Judgment::from_output(&traj.generated), t.label)),
                rng,
                eps_norm,
                TaskKind::Verification,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::compute_advantages;
    use crate::policy::{init_policy, PolicyShape};
    use crate::rng::rng_from_seed;
    use crate::task_env::ParseStatus;

    fn triplet(query_id: u64, label: bool, step: u64) -> VerificationTriplet {
        VerificationTriplet {
            query_id,
            prompt_tokens: vec![1, tok::PLUS, 1, tok::MOD, 3, tok::EQ],
            candidate_answer: vec![if label { 2 } else { 0 }],
            label,
            source_step: step,
            parse: ParseOutcome {
                status: ParseStatus::Ok,
                answer: Some(vec![if label { 2 } else { 0 }]),
            },
            output_len: 3,
        }
    }

    fn broken(query_id: u64) -> VerificationTriplet {
        VerificationTriplet {
            candidate_answer: vec![],
            parse: ParseOutcome {
                status: ParseStatus::NoAnswerDelimiter,
                answer: None,
            },
            ..triplet(query_id, false, 0)
        }
    }

    #[test]
    fn filtering_rules() {
        let raw = vec![
            triplet(1, false, 0),
            triplet(1, false, 0),
            triplet(1, false, 0),
            triplet(1, false, 0),
            triplet(2, true, 0),
            triplet(2, false, 0),
            broken(2),
            broken(3),
        ];
        let kept = filter_samples(raw, 64);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|t| t.query_id == 2 && t.parse.is_ok()));
        let mut long = triplet(4, true, 0);
        long.output_len = 65;
        assert!(filter_samples(vec![long, triplet(4, false, 0)], 64).is_empty());
    }

    #[test]
    fn balanced_batch_spans_both_queries() {
        let mut buf = CandidateBuffer::new(100);
        buf.insert([
            triplet(1, true, 0),
            triplet(1, true, 0),
            triplet(1, false, 0),
            triplet(2, true, 0),
            triplet(2, false, 0),
            triplet(2, false, 0),
        ]);
        let batch = balance_and_sample(&mut buf, 4, &mut rng_from_seed(0)).unwrap();
        assert_eq!(batch.len(), 4);
        assert_eq!(batch.iter().filter(|t| t.label).count(), 2);
        for label in [true, false] {
            let queries: BTreeSet<u64> = batch.iter().filter(|t| t.label == label).map(|t| t.query_id).collect();
            assert_eq!(queries.len(), 2);
        }
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn single_class_buffer_yields_nothing() {
        let mut buf = CandidateBuffer::new(10);
        buf.insert([triplet(1, true, 0), triplet(2, true, 0)]);
        assert!(balance_and_sample(&mut buf, 4, &mut rng_from_seed(0)).unwrap().is_empty());
        assert_eq!(buf.len(), 2);
        assert!(balance_and_sample(&mut buf, 3, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn many_queries_give_distinct_picks() {
        let mut buf = CandidateBuffer::new(100);
        for q in 0..10 {
            buf.insert([triplet(q, true, 0), triplet(q, false, 0)]);
        }
        let batch = balance_and_sample(&mut buf, 8, &mut rng_from_seed(3)).unwrap();
        assert_eq!(batch.len(), 8);
        for label in [true, false] {
            let queries: BTreeSet<u64> = batch.iter().filter(|t| t.label == label).map(|t| t.query_id).collect();
            assert_eq!(queries.len(), 4);
        }
    }

    #[test]
    fn shortfall_shrinks_batch_but_stays_balanced() {
        let mut buf = CandidateBuffer::new(100);
        buf.insert([triplet(1, true, 0), triplet(1, false, 0), triplet(2, false, 0), triplet(3, false, 0)]);
        let batch = balance_and_sample(&mut buf, 8, &mut rng_from_seed(3)).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn eviction_drops_oldest_steps_first() {
        let mut buf = CandidateBuffer::new(3);
        buf.insert([triplet(1, true, 5), triplet(2, true, 1), triplet(3, true, 1)]);
        buf.insert([triplet(4, true, 6)]);
        let ids: BTreeSet<u64> = buf.iter().map(|t| t.query_id).collect();
        assert_eq!(ids, BTreeSet::from([1, 3, 4]));
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn dump_round_trips() {
        let mut buf = CandidateBuffer::new(10);
        buf.insert([triplet(7, true, 3), triplet(8, false, 4)]);
        let mut bytes = Vec::new();
        buf.dump(&mut bytes).unwrap();
        let rows = read_dump(bytes.as_slice()).unwrap();
        assert_eq!(
            rows[0],
            DumpRow {
                query_id: 7,
                answer_tokens: vec![2],
                label: true,
                step: 3
            }
        );
        assert_eq!(rows.len(), 2);
        assert!(read_dump("1\t2\tx\t0\n".as_bytes()).is_err());
    }

    fn judge_policy(first: Token) -> PolicyParams {
        let shape = PolicyShape {
            vocab_size: tok::SIZE,
            embed_dim: 2,
            context: 4,
            hidden_dim: 2,
            pad_token: tok::BOS,
        };
        let mut p = init_policy(shape, &mut rng_from_seed(0)).unwrap();
        p.output_bias_mut()[first] = 50.0;
        p
    }

    #[test]
    fn judgment_groups_reward_against_labels() {
        let batch = vec![triplet(1, true, 0)];
        let decode = DecodeConfig::default();
        let yes = build_verification_groups(&judge_policy(tok::YES), &batch, 4, &decode, &mut rng_from_seed(0), 1e-6, None)
            .unwrap();
        assert_eq!(yes[0].rewards, vec![1.0; 4]);
        assert_eq!(yes[0].advantages, vec![0.0; 4]);
        assert!(yes[0].trajectories.iter().all(|t| t.generated.len() == 1));
        let invalid =
            build_verification_groups(&judge_policy(3), &batch, 4, &decode, &mut rng_from_seed(0), 1e-6, None).unwrap();
        assert_eq!(invalid[0].rewards, vec![0.0; 4]);
        let forced =
            build_verification_groups(&judge_policy(3), &batch, 4, &decode, &mut rng_from_seed(0), 1e-6, Some(0.5))
                .unwrap();
        assert_eq!(forced[0].rewards, vec![0.5; 4]);
    }

    #[test]
    fn mixed_judgments_produce_signed_advantages() {
        let rewards = [verify_judgment(Judgment::Yes, true), verify_judgment(Judgment::No, true)];
        assert_eq!(rewards, [1.0, 0.0]);
        let a = compute_advantages(&rewards, 1e-6);
        assert!((a[0] - 1.0).abs() < 1e-5 && (a[1] + 1.0).abs() < 1e-5);
    }
}

mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng as _;
use selfverify::evaluator::{
    acc_at_k, avg_tokens, corrupted_prefix_eval, majority_vote, own_candidate_set, verification_accuracy,
    vote_with_verify, EvalSet, VoteConfig,
};
use selfverify::pipeline::VerificationTriplet;
use selfverify::policy::{init_policy, DecodeConfig, TokenPolicy, Trajectory};
use selfverify::rng::Rng;
use selfverify::task_env::{digits_of, parse_prompt, tok, CorruptionConfig, Task, Token};
use selfverify::TrainConfig;

/// Answers correctly with probability `skill`, otherwise emits a random
/// residue; judges candidates by `judge`.
struct ScriptedPolicy {
    skill: f64,
    judge: Judge,
}

#[derive(Clone, Copy)]
enum Judge {
    Truthful,
    Contrary,
    AlwaysYes,
}

impl ScriptedPolicy {
    fn truth(prompt: &[Token]) -> (Vec<Token>, Option<Vec<Token>>) {
        // Generation: BOS expr. Verification: BOS VERIFY expr SEP answer JUDGE.
        if prompt.get(1) == Some(&tok::VERIFY) {
            let sep = prompt.iter().position(|&t| t == tok::SEP).unwrap();
            let expr = parse_prompt(&prompt[2..sep]).unwrap();
            (digits_of(expr.residue()), Some(prompt[sep + 1..prompt.len() - 1].to_vec()))
        } else {
            let eq = prompt.iter().position(|&t| t == tok::EQ).unwrap();
            (digits_of(parse_prompt(&prompt[1..=eq]).unwrap().residue()), None)
        }
    }
}

impl TokenPolicy for ScriptedPolicy {
    fn sample(&self, prompt: &[Token], cfg: &DecodeConfig, _stop: Option<Token>, rng: &mut Rng) -> Trajectory {
        let (answer, candidate) = Self::truth(prompt);
        let generated = match candidate {
            Some(c) => {
                let yes = match self.judge {
                    Judge::Truthful => c == answer,
                    Judge::Contrary => c != answer,
                    Judge::AlwaysYes => true,
                };
                vec![if yes { tok::YES } else { tok::NO }]
            }
            None => {
                let ans = if rng.random::<f64>() < self.skill { answer } else { digits_of(rng.random_range(0..10)) };
                let filler = rng.random_range(0..4);
                [vec![tok::SEP; filler], vec![tok::ANSWER], ans, vec![tok::EOS]].concat()
            }
        };
        let generated: Vec<Token> = generated.into_iter().take(cfg.max_new_tokens).collect();
        Trajectory {
            prompt: prompt.to_vec(),
            logprobs: vec![0.0; generated.len()],
            generated,
        }
    }
}

fn eval_set(seed: u64, size: usize) -> (Task, EvalSet) {
    let task = Task::default();
    let set = EvalSet::generate(&task, seed, size).unwrap();
    (task, set)
}

fn candidates(set: &EvalSet, seed: u64) -> Vec<VerificationTriplet> {
    let decode = DecodeConfig::default();
    own_candidate_set(&ScriptedPolicy { skill: 0.5, judge: Judge::Truthful }, set, 4, &decode, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn acc_at_k_ignores_query_order(seed in any::<u64>(), skill in 0.0f64..1.0, k in 1usize..6) {
        let (task, set) = eval_set(seed, 30);
        let mut shuffled = set.clone();
        shuffled.queries.reverse();
        let mut r = rng(seed);
        for i in 0..shuffled.queries.len() {
            let j = r.random_range(0..=i);
            shuffled.queries.swap(i, j);
        }
        let policy = ScriptedPolicy { skill, judge: Judge::Truthful };
        let decode = DecodeConfig::default();
        prop_assert_eq!(
            acc_at_k(&policy, &task, &set, k, &decode, seed).unwrap().to_bits(),
            acc_at_k(&policy, &task, &shuffled, k, &decode, seed).unwrap().to_bits()
        );
        prop_assert_eq!(
            avg_tokens(&policy, &task, &set, k, &decode, seed).unwrap().to_bits(),
            avg_tokens(&policy, &task, &shuffled, k, &decode, seed).unwrap().to_bits()
        );
    }

    #[test]
    fn zero_lambda_vote_equals_majority(seed in any::<u64>(), init_seed in any::<u64>(), scripted in any::<bool>(), n in 1usize..12) {
        let (task, set) = eval_set(seed, 8);
        let cfg = VoteConfig { num_candidates: n, verify_passes: 3, combine_lambda: 0.0 };
        let decode = DecodeConfig { max_new_tokens: 12, ..DecodeConfig::default() };
        let neural = init_policy(TrainConfig::default().policy_shape(), &mut rng(init_seed)).unwrap();
        let scripted_policy = ScriptedPolicy { skill: 0.4, judge: Judge::Truthful };
        for q in &set.queries {
            let (plain, weighted) = if scripted {
                (majority_vote(&scripted_policy, &task, q, n, &decode, seed).unwrap(),
                 vote_with_verify(&scripted_policy, &task, q, &cfg, &decode, seed).unwrap())
            } else {
                (majority_vote(&neural, &task, q, n, &decode, seed).unwrap(),
                 vote_with_verify(&neural, &task, q, &cfg, &decode, seed).unwrap())
            };
            prop_assert_eq!(&plain.answer, &weighted.answer);
            prop_assert_eq!(plain.unparseable, weighted.unparseable);
            prop_assert_eq!(plain.scores.len(), weighted.scores.len());
            for (a, b) in plain.scores.iter().zip(&weighted.scores) {
                prop_assert_eq!(&a.answer, &b.answer);
                prop_assert_eq!(a.votes, b.votes);
                prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
            }
        }
    }
}

#[test]
fn oracle_anti_oracle_and_always_yes_verifiers() {
    let (_, set) = eval_set(5, 40);
    let triplets = candidates(&set, 5);
    assert!(triplets.iter().any(|t| t.label) && triplets.iter().any(|t| !t.label));
    let decode = DecodeConfig::default();
    let oracle = ScriptedPolicy { skill: 0.0, judge: Judge::Truthful };
    let anti = ScriptedPolicy { skill: 0.0, judge: Judge::Contrary };
    assert_eq!(verification_accuracy(&oracle, &triplets, 4, &decode, 9).unwrap(), 1.0);
    assert_eq!(verification_accuracy(&anti, &triplets, 4, &decode, 9).unwrap(), 0.0);
    let yes_man = ScriptedPolicy { skill: 0.0, judge: Judge::AlwaysYes };
    assert_eq!(verification_accuracy(&yes_man, &triplets, 4, &decode, 9).unwrap(), 0.5);
}

#[test]
fn own_candidate_set_is_label_balanced() {
    let (_, set) = eval_set(6, 40);
    let triplets = candidates(&set, 6);
    let yes = triplets.iter().filter(|t| t.label).count();
    assert!(yes > 0);
    assert_eq!(2 * yes, triplets.len());
}

#[test]
fn perfect_verifier_lifts_voting_to_oracle_accuracy() {
    let (task, set) = eval_set(7, 60);
    let policy = ScriptedPolicy { skill: 0.3, judge: Judge::Truthful };
    let decode = DecodeConfig::default();
    let cfg = VoteConfig { num_candidates: 16, verify_passes: 1, combine_lambda: 100.0 };
    let (mut plain, mut weighted, mut reachable) = (0, 0, 0);
    for q in &set.queries {
        let m = majority_vote(&policy, &task, q, 16, &decode, 1).unwrap();
        let v = vote_with_verify(&policy, &task, q, &cfg, &decode, 1).unwrap();
        plain += (m.answer.as_ref() == Some(&q.reference_answer)) as usize;
        weighted += (v.answer.as_ref() == Some(&q.reference_answer)) as usize;
        reachable += m.scores.iter().any(|s| s.answer == q.reference_answer) as usize;
    }
    assert_eq!(weighted, reachable);
    assert!(weighted >= plain);
}

#[test]
fn corruption_success_is_bounded_and_reported() {
    let (_, set) = eval_set(8, 30);
    let policy = ScriptedPolicy { skill: 1.0, judge: Judge::Truthful };
    let decode = DecodeConfig::default();
    for count in 0..3 {
        let report = corrupted_prefix_eval(&policy, &set, &CorruptionConfig::new(count), &decode, 4).unwrap();
        assert_eq!(report.evaluated + report.skipped, set.size());
        assert!((0.0..=1.0).contains(&report.success_rate));
    }
}

#[test]
fn evaluation_is_pure_given_seed() {
    let (task, set) = eval_set(9, 20);
    let params = init_policy(TrainConfig::default().policy_shape(), &mut rng(2)).unwrap();
    let decode = DecodeConfig::default();
    let a = acc_at_k(&params, &task, &set, 4, &decode, 3).unwrap();
    let b = acc_at_k(&params, &task, &set, 4, &decode, 3).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(
        avg_tokens(&params, &task, &set, 4, &decode, 3).unwrap().to_bits(),
        avg_tokens(&params, &task, &set, 4, &decode, 3).unwrap().to_bits()
    );
}

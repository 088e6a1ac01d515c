//! The acceptance suite: numerical identities of the optimizer, pipeline
//! invariants, and seeded directional comparisons between training regimes.
//!
//! Every criterion reports pass/fail with a one-line detail. An error inside
//! a criterion counts as a failure of that criterion only.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng as _;

use crate::config::{Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{majority_vote, vote_with_verify, voting_accuracy, VoteConfig};
use crate::grpo::{
    clipped_term, compute_advantages, grpo_objective_and_grad, train_step, Aggregation, ClipConfig, Learner,
    RewardedGroup, TaskKind,
};
use crate::pipeline::{balance_and_sample, filter_samples, CandidateBuffer, VerificationTriplet};
use crate::policy::{
    init_policy, sample_sequence, sequence_logprobs, softmax, weighted_logprob_grad, AdamConfig, DecodeConfig,
    OptimizerState, PolicyParams, PolicyShape, Trajectory,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scheduler::{base_policy, Checkpoint, StepRecord, TrainReport, Trainer};
use crate::task_env::{bandit, tok, verify_generation, ArithmeticParams, Task};

pub const GRADIENT_INSTANCES: usize = 24;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const PIPELINE_TRIALS: usize = 100;
pub const SUITE_BUDGET_SECS: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2}. {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct AcceptanceOptions {
    /// Normalization constant handed to the advantage checks.
    pub eps_norm: f64,
    pub seeds: Vec<u64>,
    /// Runs only these criteria when set.
    pub only: Option<BTreeSet<usize>>,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        AcceptanceOptions {
            eps_norm: ClipConfig::default().eps_norm,
            seeds: vec![0, 1, 2],
            only: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
    pub total_seconds: f64,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

/// The desk configuration shared by the seeded regime comparisons.
pub fn desk_config(seed: u64) -> TrainConfig {
    let base = TrainConfig::default();
    TrainConfig {
        seed,
        total_steps: 300,
        batch_b: 16,
        group_g: 8,
        eval_every: 300,
        task: Task::Arithmetic(ArithmeticParams {
            difficulty: 2,
            ..ArithmeticParams::default()
        }),
        ..base
    }
}

fn relative_error(a: &PolicyParams, b: &PolicyParams) -> f64 {
    let mut diff = a.clone();
    diff.scale(-1.0);
    diff.add_assign(b);
    diff.norm() / b.norm().max(a.norm()).max(1e-12)
}

/// Central finite differences of `f` at `params`.
pub fn finite_difference(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> Result<f64>) -> Result<PolicyParams> {
    let mut grad = PolicyParams::zeros(*params.shape());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.as_slice()[i];
        probe.as_mut_slice()[i] = x + h;
        let up = f(&probe)?;
        probe.as_mut_slice()[i] = x - h;
        let down = f(&probe)?;
        probe.as_mut_slice()[i] = x;
        grad.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn small_shape(rng: &mut Rng) -> PolicyShape {
    PolicyShape {
        vocab_size: rng.random_range(3..7),
        embed_dim: rng.random_range(2..4),
        context: rng.random_range(1..4),
        hidden_dim: rng.random_range(2..6),
        pad_token: 0,
    }
}

fn random_params(shape: PolicyShape, rng: &mut Rng) -> Result<PolicyParams> {
    let mut p = init_policy(shape, rng)?;
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    Ok(p)
}

fn random_tokens(rng: &mut Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// Random GRPO batch whose ratios all stay clear of the clip boundaries, so
/// the surrogate is smooth around `params`.
fn smooth_grpo_instance(
    rng: &mut Rng,
    clip: &ClipConfig,
) -> Result<(PolicyParams, PolicyParams, Vec<RewardedGroup>)> {
    loop {
        let shape = small_shape(rng);
        let params = random_params(shape, rng)?;
        let mut old = params.clone();
        for v in old.as_mut_slice() {
            *v += rng.random_range(-0.15..0.15);
        }
        let mut groups = Vec::new();
        for q in 0..2 {
            let len = rng.random_range(1..4);
            let prompt = random_tokens(rng, shape.vocab_size, len);
            let decode = DecodeConfig::ancestral(rng.random_range(1..5));
            let trajectories: Vec<Trajectory> = (0..3)
                .map(|_| sample_sequence(&old, &prompt, &decode, None, rng))
                .collect();
            let rewards = vec![1.0, 0.0, rng.random_range(0.0..1.0)];
            groups.push(RewardedGroup::new(q, trajectories, rewards, clip.eps_norm, TaskKind::Generation)?);
        }
        let mut smooth = true;
        for g in &groups {
            for t in &g.trajectories {
                let new_lp = sequence_logprobs(&params, &t.prompt, &t.generated)?;
                let old_lp = sequence_logprobs(&old, &t.prompt, &t.generated)?;
                for (n, o) in new_lp.iter().zip(&old_lp) {
                    let ratio = (n - o).exp();
                    let margin = (ratio - (1.0 - clip.eps_low))
                        .abs()
                        .min((ratio - (1.0 + clip.eps_high)).abs());
                    smooth &= margin > 1e-3;
                }
            }
        }
        if smooth {
            return Ok((params, old, groups));
        }
    }
}

pub fn gradient_correctness() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(derive_seed(0xACC, &[1]));
    let clip = ClipConfig::default();
    let mut worst_lik: f64 = 0.0;
    let mut worst_grpo: f64 = 0.0;
    for i in 0..GRADIENT_INSTANCES {
        let shape = small_shape(&mut rng);
        let params = random_params(shape, &mut rng)?;
        let (prompt_len, len) = (rng.random_range(0..4), rng.random_range(1..6));
        let prompt = random_tokens(&mut rng, shape.vocab_size, prompt_len);
        let tokens = random_tokens(&mut rng, shape.vocab_size, len);
        let weights: Vec<f64> = tokens.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = weighted_logprob_grad(&params, &prompt, &tokens, &weights)?;
        let numeric = finite_difference(&params, FD_STEP, |p| {
            Ok(sequence_logprobs(p, &prompt, &tokens)?
                .iter()
                .zip(&weights)
                .map(|(l, w)| l * w)
                .sum())
        })?;
        worst_lik = worst_lik.max(relative_error(&analytic, &numeric));

        let (params, old, groups) = smooth_grpo_instance(&mut rng, &clip)?;
        let aggregation = if i % 2 == 0 {
            Aggregation::PerTrajectory
        } else {
            Aggregation::BatchTokenMean
        };
        let analytic = grpo_objective_and_grad(&params, &old, &groups, &clip, aggregation)?.gradient;
        let numeric = finite_difference(&params, FD_STEP, |p| {
            Ok(grpo_objective_and_grad(p, &old, &groups, &clip, aggregation)?.objective)
        })?;
        worst_grpo = worst_grpo.max(relative_error(&analytic, &numeric));
    }
    let passed = worst_lik < FD_TOLERANCE && worst_grpo < FD_TOLERANCE;
    Ok((
        passed,
        format!(
            "{GRADIENT_INSTANCES} instances; worst relative error {worst_lik:.2e} (log-likelihood), {worst_grpo:.2e} (surrogate)"
        ),
    ))
}

pub fn advantage_invariants(eps_norm: f64) -> Result<(bool, String)> {
    let mut rng = rng_from_seed(derive_seed(0xACC, &[2]));
    let mut worst_sum: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..17);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let adv = compute_advantages(&rewards, eps_norm);
        worst_sum = worst_sum.max(adv.iter().sum::<f64>().abs());
    }
    let sums_ok = worst_sum < 1e-9;

    let shape = PolicyShape {
        vocab_size: 4,
        embed_dim: 2,
        context: 2,
        hidden_dim: 3,
        pad_token: 0,
    };
    let params = init_policy(shape, &mut rng)?;
    let trajectories: Vec<Trajectory> = (0..4)
        .map(|_| sample_sequence(&params, &[0], &DecodeConfig::ancestral(3), None, &mut rng))
        .collect();
    let mut degenerate_ok = true;
    for value in [0.0, 1.0] {
        let group = RewardedGroup::new(7, trajectories.clone(), vec![value; 4], eps_norm, TaskKind::Generation)?;
        degenerate_ok &= group.advantages.iter().all(|&a| a == 0.0);
        let mut learner = Learner {
            optimizer: OptimizerState::new(AdamConfig::default(), &shape),
            params: params.clone(),
        };
        let stepped = train_step(
            &mut learner,
            &[group],
            1,
            &ClipConfig {
                eps_norm,
                ..ClipConfig::default()
            },
            Aggregation::PerTrajectory,
        );
        degenerate_ok &= stepped.is_ok() && learner.params == params;
    }

    // Rewards for [right, wrong, wrong, right, wrong x4] from the task verifier.
    let query = crate::task_env::sample_query(&mut rng, 0, &ArithmeticParams::default())?;
    let right = [vec![tok::ANSWER], query.reference_answer.clone(), vec![tok::EOS]].concat();
    let wrong_digit = (query.reference_answer[0] + 1) % 10;
    let wrong = vec![tok::ANSWER, wrong_digit, tok::EOS];
    let rewards: Vec<f64> = [1, 0, 0, 1, 0, 0, 0, 0]
        .iter()
        .map(|&c| verify_generation(&query, if c == 1 { &right } else { &wrong }, 64).reward)
        .collect();
    let adv = compute_advantages(&rewards, eps_norm);
    let expected_hi = 0.75 / 0.1875f64.sqrt();
    let expected_lo = -0.25 / 0.1875f64.sqrt();
    let example_ok = adv
        .iter()
        .zip(&rewards)
        .all(|(a, r)| (a - if *r == 1.0 { expected_hi } else { expected_lo }).abs() < 1e-3);
    Ok((
        sums_ok && degenerate_ok && example_ok,
        format!(
            "max |sum A| {worst_sum:.1e}; degenerate groups zero with no update: {degenerate_ok}; \
             [1,0,0,1,0,0,0,0] -> {:.4}/{:.4}",
            adv[0], adv[1]
        ),
    ))
}

pub fn ratio_one_identity() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(derive_seed(0xACC, &[3]));
    let clip = ClipConfig::default();
    let (mut worst_obj, mut worst_grad): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let shape = small_shape(&mut rng);
        let params = random_params(shape, &mut rng)?;
        let mut groups = Vec::new();
        for q in 0..3 {
            let prompt = random_tokens(&mut rng, shape.vocab_size, 2);
            let trajectories: Vec<Trajectory> = (0..4)
                .map(|_| sample_sequence(&params, &prompt, &DecodeConfig::ancestral(rng.random_range(1..5)), None, &mut rng))
                .collect();
            let rewards = (0..4).map(|_| rng.random_range(0..2) as f64).collect();
            groups.push(RewardedGroup::new(q, trajectories, rewards, clip.eps_norm, TaskKind::Generation)?);
        }
        let eval = grpo_objective_and_grad(&params, &params, &groups, &clip, Aggregation::PerTrajectory)?;
        let mut expected = PolicyParams::zeros(shape);
        for g in &groups {
            for (t, a) in g.trajectories.iter().zip(&g.advantages) {
                let w = a / (groups.len() * g.size() * t.token_count()) as f64;
                expected.add_assign(&weighted_logprob_grad(&params, &t.prompt, &t.generated, &vec![w; t.token_count()])?);
            }
        }
        worst_obj = worst_obj.max(eval.objective.abs());
        worst_grad = worst_grad.max(eval.gradient.max_abs_diff(&expected));
    }
    Ok((
        worst_obj < 1e-9 && worst_grad < 1e-8,
        format!("max |objective| {worst_obj:.1e}; max gradient deviation {worst_grad:.1e}"),
    ))
}

/// Single-token instance with ratio `ratio` and advantage `advantage`:
/// returns the surrogate value and the norm of its gradient.
fn single_token_instance(ratio: f64, advantage: f64, clip: &ClipConfig) -> Result<(f64, f64)> {
    let shape = PolicyShape {
        vocab_size: 2,
        embed_dim: 1,
        context: 1,
        hidden_dim: 1,
        pad_token: 0,
    };
    // Token 1 has probability 1/2 under the old policy and ratio/2 under the new.
    let old = PolicyParams::zeros(shape);
    let mut params = PolicyParams::zeros(shape);
    let p = ratio / 2.0;
    params.output_bias_mut()[1] = (p / (1.0 - p)).ln();
    let trajectory = Trajectory {
        prompt: vec![0],
        generated: vec![1],
        logprobs: vec![0.5f64.ln()],
    };
    let group = RewardedGroup {
        query_id: 0,
        trajectories: vec![trajectory],
        rewards: vec![0.0],
        mean: 0.0,
        std: 1.0,
        advantages: vec![advantage],
        task_kind: TaskKind::Generation,
    };
    let eval = grpo_objective_and_grad(&params, &old, &[group], clip, Aggregation::PerTrajectory)?;
    Ok((eval.objective, eval.gradient.norm()))
}

pub fn clip_higher_semantics() -> Result<(bool, String)> {
    let clip = ClipConfig::default();
    let cases = [
        // (ratio, advantage, expected term, expects a live gradient)
        (1.5, 1.0, 1.28, false),
        (0.5, -1.0, -0.8, true),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (ratio, adv, want, want_live) in cases {
        let (term, slope) = clipped_term(ratio, adv, &clip);
        let (objective, grad_norm) = single_token_instance(ratio, adv, &clip)?;
        let live = slope != 0.0 || grad_norm > 1e-12;
        let ok = (term - want).abs() < 1e-12 && (objective - want).abs() < 1e-12 && live == want_live;
        passed &= ok;
        parts.push(format!(
            "A={adv:+}, rho={ratio}: term {objective:.4} (want {want}), gradient {} (want {})",
            if live { "live" } else { "zero" },
            if want_live { "live" } else { "zero" }
        ));
    }
    Ok((passed, parts.join("; ")))
}

fn random_triplet(rng: &mut Rng, query_id: u64, step: u64) -> VerificationTriplet {
    let params = ArithmeticParams::default();
    let query = crate::task_env::sample_query(rng, query_id, &params).expect("default task params are valid");
    let output = match rng.random_range(0..10) {
        0 => vec![tok::SEP, tok::EOS],
        1 => vec![tok::ANSWER, 1, tok::ANSWER, 1, tok::EOS],
        2..=4 => [vec![tok::ANSWER], query.reference_answer.clone(), vec![tok::EOS]].concat(),
        _ => vec![tok::ANSWER, rng.random_range(0..10), tok::EOS],
    };
    VerificationTriplet::from_output(&query, &output, 64, step)
}

/// After `round` full round-robin passes, a query may give a further triplet
/// of a label only once every other query is out of that label.
fn diversity_holds(before: &CandidateBuffer, batch: &[VerificationTriplet]) -> bool {
    for label in [true, false] {
        let mut available: BTreeMap<u64, usize> = BTreeMap::new();
        for t in before.iter().filter(|t| t.label == label) {
            *available.entry(t.query_id).or_default() += 1;
        }
        let mut taken: BTreeMap<u64, usize> = BTreeMap::new();
        for t in batch.iter().filter(|t| t.label == label) {
            *taken.entry(t.query_id).or_default() += 1;
        }
        for (&q, &c) in &taken {
            for (&q2, &avail) in &available {
                let c2 = taken.get(&q2).copied().unwrap_or(0);
                if q2 != q && c >= c2 + 2 && c2 < avail {
                    return false;
                }
            }
        }
    }
    true
}

pub fn pipeline_invariants() -> Result<(bool, String)> {
    let mut rng = rng_from_seed(derive_seed(0xACC, &[5]));
    let mut failures = Vec::new();
    let mut emitted = 0;
    for trial in 0..PIPELINE_TRIALS {
        let mut buffer = CandidateBuffer::new(rng.random_range(8..200));
        for step in 0..rng.random_range(1..4) {
            let queries = rng.random_range(1..12);
            let raw: Vec<VerificationTriplet> = (0..queries)
                .flat_map(|q| {
                    let per = rng.random_range(1..9);
                    (0..per).map(|_| random_triplet(&mut rng, step * 100 + q, step)).collect::<Vec<_>>()
                })
                .collect();
            let kept = filter_samples(raw, 64);
            let solved: BTreeSet<u64> = kept.iter().filter(|t| t.label).map(|t| t.query_id).collect();
            if kept.iter().any(|t| !t.parse.is_ok() || !solved.contains(&t.query_id)) {
                failures.push(format!("trial {trial}: filter kept a malformed or unsolved candidate"));
            }
            buffer.insert(kept);
        }
        if buffer.iter().any(|t| !t.parse.is_ok() || t.candidate_answer.is_empty()) {
            failures.push(format!("trial {trial}: malformed triplet in buffer"));
        }
        let before = buffer.clone();
        let size = 2 * rng.random_range(1..16);
        let (ones, zeros) = (buffer.count_label(true), buffer.count_label(false));
        let batch = balance_and_sample(&mut buffer, size, &mut rng)?;
        let per_label = (size / 2).min(ones).min(zeros);
        let batch_ones = batch.iter().filter(|t| t.label).count();
        if batch_ones != per_label || batch.len() != 2 * per_label {
            failures.push(format!("trial {trial}: batch of {} with {batch_ones} positives", batch.len()));
        }
        if buffer.len() + batch.len() != before.len() {
            failures.push(format!("trial {trial}: selected triplets not removed"));
        }
        if !diversity_holds(&before, &batch) {
            failures.push(format!("trial {trial}: diversity rule violated"));
        }
        emitted += batch.len();
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{PIPELINE_TRIALS} buffer states, {emitted} triplets emitted, all balanced and diverse")
        } else {
            failures.join("; ")
        },
    ))
}

/// Probability of the rewarded arm under the untruncated policy.
pub fn bandit_correct_probability(params: &PolicyParams) -> f64 {
    let window = vec![bandit::BOS; params.shape().context];
    softmax(&crate::policy::next_token_logits(params, &window))[bandit::ARM_A]
}

pub fn bandit_config() -> TrainConfig {
    TrainConfig {
        task: Task::Bandit,
        regime: Regime::Generate,
        total_steps: 200,
        seed: 0,
        eval_every: 200,
        ..TrainConfig::default()
    }
}

pub fn bandit_sanity() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(bandit_config())?;
    trainer.run_steps(200, &mut ())?;
    let p = bandit_correct_probability(trainer.params());
    let secs = start.elapsed().as_secs_f64();
    Ok((p > 0.95 && secs < 10.0, format!("P(correct arm) = {p:.4} after 200 steps in {secs:.1}s")))
}

/// The three regime runs of one seed, all started from the same base policy.
#[derive(Debug, Clone)]
pub struct SeedRuns {
    pub seed: u64,
    pub generate: TrainReport,
    pub self_verify: TrainReport,
    pub verify_alter: TrainReport,
    pub self_verify_params: PolicyParams,
    pub self_verify_seconds: f64,
}

fn run_from(base: &PolicyParams, config: TrainConfig) -> Result<(TrainReport, PolicyParams, f64)> {
    let start = Instant::now();
    let mut trainer = Trainer::with_params(config, base.clone())?;
    let report = trainer.run(&mut ())?;
    Ok((report, trainer.params().clone(), start.elapsed().as_secs_f64()))
}

pub fn seed_runs(seed: u64) -> Result<SeedRuns> {
    let config = desk_config(seed);
    let base = base_policy(&config)?;
    let with = |regime| TrainConfig {
        regime,
        ..config.clone()
    };
    let (generate, _, _) = run_from(&base, with(Regime::Generate))?;
    let (self_verify, self_verify_params, self_verify_seconds) = run_from(&base, with(Regime::SelfVerify))?;
    let (verify_alter, _, _) = run_from(&base, with(Regime::VerifyAlter))?;
    Ok(SeedRuns {
        seed,
        generate,
        self_verify,
        verify_alter,
        self_verify_params,
        self_verify_seconds,
    })
}

fn endpoints(report: &TrainReport) -> Result<(f64, f64, Option<f64>, Option<f64>)> {
    let (first, last) = report
        .first_eval()
        .zip(report.last_eval())
        .ok_or_else(|| Error::InvalidArgument("run produced no evaluations".into()))?;
    Ok((first.accuracy, last.accuracy, first.verification_accuracy, last.verification_accuracy))
}

fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&f| f).count() > flags.len()
}

pub fn self_verify_improves_generation(runs: &[SeedRuns]) -> Result<(bool, String)> {
    let mut flags = Vec::new();
    let mut parts = Vec::new();
    let mut seconds = 0.0;
    for r in runs {
        let (a0, a1, _, _) = endpoints(&r.self_verify)?;
        flags.push(a1 - a0 >= 0.05);
        parts.push(format!("seed {}: {a0:.3} -> {a1:.3}", r.seed));
        seconds += r.self_verify_seconds;
    }
    let within = seconds < 180.0;
    Ok((
        majority(&flags) && within,
        format!("{} ({seconds:.0}s of training)", parts.join(", ")),
    ))
}

pub fn generation_training_asymmetry(runs: &[SeedRuns]) -> Result<(bool, String)> {
    let mut flags = Vec::new();
    let mut parts = Vec::new();
    for r in runs {
        let (a0, a1, v0, v1) = endpoints(&r.generate)?;
        let (v0, v1) = v0
            .zip(v1)
            .ok_or_else(|| Error::InvalidArgument("missing verification accuracy".into()))?;
        flags.push(v1 - v0 < a1 - a0);
        parts.push(format!("seed {}: gen {:+.3}, verify {:+.3}", r.seed, a1 - a0, v1 - v0));
    }
    Ok((majority(&flags), parts.join(", ")))
}

pub fn verification_assisted_voting(runs: &[SeedRuns]) -> Result<(bool, String)> {
    let mut flags = Vec::new();
    let mut identical = true;
    let mut parts = Vec::new();
    for r in runs {
        let config = desk_config(r.seed);
        let trainer = Trainer::with_params(config.clone(), r.self_verify_params.clone())?;
        let set = trainer.eval_set();
        let vote = VoteConfig {
            num_candidates: 16,
            verify_passes: 4,
            combine_lambda: 1.0,
        };
        let seed = derive_seed(r.seed, &[crate::rng::stream::EVAL]);
        let params = &r.self_verify_params;
        let acc = voting_accuracy(params, &config.task, set, &vote, &config.eval.decode, seed)?;
        flags.push(acc.with_verify >= acc.majority);
        let zero = VoteConfig {
            combine_lambda: 0.0,
            ..vote.clone()
        };
        for q in &set.queries {
            let plain = majority_vote(params, &config.task, q, 16, &config.eval.decode, seed)?;
            let weighted = vote_with_verify(params, &config.task, q, &zero, &config.eval.decode, seed)?;
            identical &= plain.answer == weighted.answer
                && plain
                    .scores
                    .iter()
                    .zip(&weighted.scores)
                    .all(|(a, b)| a.answer == b.answer && a.votes == b.votes && a.score.to_bits() == b.score.to_bits());
        }
        let acc0 = voting_accuracy(params, &config.task, set, &zero, &config.eval.decode, seed)?;
        identical &= acc0.with_verify.to_bits() == acc0.majority.to_bits();
        parts.push(format!("seed {}: majority {:.3}, with verify {:.3}", r.seed, acc.majority, acc.with_verify));
    }
    Ok((
        majority(&flags) && identical,
        format!("{}; lambda=0 identical to majority: {identical}", parts.join(", ")),
    ))
}

pub fn alternation_matches_generation(runs: &[SeedRuns]) -> Result<(bool, String)> {
    let mut flags = Vec::new();
    let mut parts = Vec::new();
    for r in runs {
        let (_, g, _, _) = endpoints(&r.generate)?;
        let (_, a, _, _) = endpoints(&r.verify_alter)?;
        flags.push(a >= g);
        parts.push(format!("seed {}: alternating {a:.3} vs generate {g:.3}", r.seed));
    }
    Ok((majority(&flags), parts.join(", ")))
}

/// Small configuration that exercises every moving part of a run.
pub fn reproducibility_config() -> TrainConfig {
    TrainConfig {
        regime: Regime::VerifyAlter,
        total_steps: 8,
        alternation_period_n: 3,
        batch_b: 8,
        seed: 11,
        eval_every: 4,
        warm_start: crate::warmstart::WarmStartConfig {
            steps: 60,
            ..Default::default()
        },
        eval: crate::config::EvalConfig {
            size: 16,
            k: 2,
            ..Default::default()
        },
        ..TrainConfig::default()
    }
}

fn metrics_bytes(records: &[StepRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).map_err(|e| Error::Serde(e.to_string()))?);
        out.push(b'\n');
    }
    Ok(out)
}

pub fn reproducibility() -> Result<(bool, String)> {
    let config = reproducibility_config();
    let root_a = tempfile_dir("a")?;
    let root_b = tempfile_dir("b")?;
    let dir_a = crate::cli::train_in(&root_a, &config, &[])?;
    let dir_b = crate::cli::train_in(&root_b, &config, &[])?;
    let read = |d: &std::path::Path| std::fs::read(d.join("metrics.jsonl")).map_err(|e| Error::io(d, e));
    let same_files = read(&dir_a)? == read(&dir_b)?;

    let mut full = Trainer::new(config.clone())?;
    let total = full.plan().len();
    let uninterrupted = full.run_steps(total, &mut ())?;
    let mut first = Trainer::new(config.clone())?;
    let mut resumed_records = first.run_steps(total / 2, &mut ())?;
    let ckpt_path = root_a.join("resume.json");
    first.checkpoint()?.save(&ckpt_path)?;
    let mut second = Trainer::from_checkpoint(Checkpoint::load(&ckpt_path)?)?;
    resumed_records.extend(second.run_steps(total, &mut ())?);
    let same_resume = metrics_bytes(&uninterrupted)? == metrics_bytes(&resumed_records)?
        && second.params() == full.params()
        && second.checkpoint()?.learner == full.checkpoint()?.learner;
    let _ = std::fs::remove_dir_all(&root_a);
    let _ = std::fs::remove_dir_all(&root_b);
    Ok((
        same_files && same_resume,
        format!("identical metrics JSONL: {same_files}; resume matches uninterrupted run: {same_resume}"),
    ))
}

fn tempfile_dir(tag: &str) -> Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("svrl-acceptance-{}-{tag}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub const CRITERIA: [(usize, &str); 12] = [
    (1, "gradient correctness"),
    (2, "advantage invariants"),
    (3, "ratio-one identity"),
    (4, "clip-higher semantics"),
    (5, "pipeline invariants"),
    (6, "bandit sanity"),
    (7, "self-verification improves generation"),
    (8, "generation training leaves verification behind"),
    (9, "verification-assisted voting"),
    (10, "alternating schedule vs generation only"),
    (11, "reproducibility"),
    (12, "suite wall clock"),
];

/// Runs the suite, calling `on_result` as each criterion finishes.
pub fn run_suite(options: &AcceptanceOptions, mut on_result: impl FnMut(&CriterionResult)) -> AcceptanceReport {
    let suite_start = Instant::now();
    let selected = |id: usize| options.only.as_ref().is_none_or(|s| s.contains(&id));
    let mut results = Vec::new();
    let mut record = |id: usize, start: Instant, outcome: Result<(bool, String)>| {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        let result = CriterionResult {
            id,
            name: CRITERIA[id - 1].1,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_result(&result);
        results.push(result);
    };

    type Check<'a> = Box<dyn Fn() -> Result<(bool, String)> + 'a>;
    let quick: [(usize, Check); 6] = [
        (1, Box::new(gradient_correctness)),
        (2, Box::new(|| advantage_invariants(options.eps_norm))),
        (3, Box::new(ratio_one_identity)),
        (4, Box::new(clip_higher_semantics)),
        (5, Box::new(pipeline_invariants)),
        (6, Box::new(bandit_sanity)),
    ];
    for (id, check) in quick {
        if selected(id) {
            let start = Instant::now();
            let outcome = check();
            if id == 1 && start.elapsed().as_secs_f64() >= 30.0 {
                record(id, start, outcome.map(|(_, d)| (false, format!("{d}; exceeded 30s"))));
            } else {
                record(id, start, outcome);
            }
        }
    }

    if (7..=10).any(selected) {
        let start = Instant::now();
        let runs: Result<Vec<SeedRuns>> = options.seeds.iter().map(|&s| seed_runs(s)).collect();
        let shared = start.elapsed().as_secs_f64();
        type SeededCheck = fn(&[SeedRuns]) -> Result<(bool, String)>;
        let checks: [(usize, SeededCheck); 4] = [
            (7, self_verify_improves_generation),
            (8, generation_training_asymmetry),
            (9, verification_assisted_voting),
            (10, alternation_matches_generation),
        ];
        for (id, check) in checks {
            if selected(id) {
                let t = Instant::now();
                let outcome = match &runs {
                    Ok(r) => check(r).map(|(p, d)| (p, format!("{d} [shared runs {shared:.0}s]"))),
                    Err(e) => Err(Error::InvalidArgument(format!("seeded runs failed: {e}"))),
                };
                record(id, t, outcome);
            }
        }
    }

    if selected(11) {
        let start = Instant::now();
        record(11, start, reproducibility());
    }
    if selected(12) {
        let total = suite_start.elapsed().as_secs_f64();
        record(
            12,
            Instant::now(),
            Ok((total < SUITE_BUDGET_SECS, format!("{total:.1}s against a {SUITE_BUDGET_SECS:.0}s budget"))),
        );
    }
    AcceptanceReport {
        results,
        total_seconds: suite_start.elapsed().as_secs_f64(),
    }
}

mod common;

use common::{central_differences, population_stats, random_params, random_tokens, relative_error, rng};
use proptest::prelude::*;
use rand::Rng as _;
use selfverify::grpo::{
    clipped_term, compute_advantages, grpo_objective_and_grad, train_step, Aggregation, ClipConfig, Learner,
    RewardedGroup, TaskKind,
};
use selfverify::policy::{
    sample_sequence, sequence_logprobs, weighted_logprob_grad, AdamConfig, DecodeConfig, OptimizerState,
    PolicyParams, PolicyShape, Trajectory,
};
use selfverify::rng::Rng;

const EPS_NORM: f64 = 1e-6;

fn tiny_shape() -> PolicyShape {
    // 3·2 + 2·2·2 + 2 + 2·3 + 3 = 25 parameters
    PolicyShape {
        vocab_size: 3,
        embed_dim: 2,
        context: 2,
        hidden_dim: 2,
        pad_token: 0,
    }
}

fn random_batch(r: &mut Rng, sampler: &PolicyParams, groups: usize, group_size: usize) -> Vec<RewardedGroup> {
    let shape = *sampler.shape();
    (0..groups as u64)
        .map(|q| {
            let prompt = random_tokens(r, shape.vocab_size, 2);
            let trajectories: Vec<Trajectory> = (0..group_size)
                .map(|_| {
                    let len = r.random_range(1..5);
                    sample_sequence(sampler, &prompt, &DecodeConfig::ancestral(len), None, r)
                })
                .collect();
            let rewards = (0..group_size).map(|_| r.random_range(0..2) as f64).collect();
            RewardedGroup::new(q, trajectories, rewards, EPS_NORM, TaskKind::Generation).unwrap()
        })
        .collect()
}

/// The clipped surrogate written out directly from token ratios.
fn surrogate(params: &PolicyParams, old: &PolicyParams, groups: &[RewardedGroup], clip: &ClipConfig, agg: Aggregation) -> f64 {
    let total_tokens: usize = groups.iter().flat_map(|g| &g.trajectories).map(|t| t.generated.len()).sum();
    let mut value = 0.0;
    for g in groups {
        for (t, &a) in g.trajectories.iter().zip(&g.advantages) {
            let new = sequence_logprobs(params, &t.prompt, &t.generated).unwrap();
            let prev = sequence_logprobs(old, &t.prompt, &t.generated).unwrap();
            let sum: f64 = new
                .iter()
                .zip(&prev)
                .map(|(n, o)| {
                    let rho = (n - o).exp();
                    (rho * a).min(rho.clamp(1.0 - clip.eps_low, 1.0 + clip.eps_high) * a)
                })
                .sum();
            value += match agg {
                Aggregation::PerTrajectory => sum / (groups.len() * g.size() * t.generated.len()) as f64,
                Aggregation::BatchTokenMean => sum / total_tokens as f64,
            };
        }
    }
    value
}

fn near_clip_boundary(params: &PolicyParams, old: &PolicyParams, groups: &[RewardedGroup], clip: &ClipConfig) -> bool {
    groups.iter().flat_map(|g| &g.trajectories).any(|t| {
        let new = sequence_logprobs(params, &t.prompt, &t.generated).unwrap();
        let prev = sequence_logprobs(old, &t.prompt, &t.generated).unwrap();
        new.iter().zip(&prev).any(|(n, o)| {
            let rho = (n - o).exp();
            (rho - 1.0 + clip.eps_low).abs() < 1e-3 || (rho - 1.0 - clip.eps_high).abs() < 1e-3
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advantages_are_zero_mean_with_near_unit_scale(rewards in prop::collection::vec(0u8..2, 2..16)) {
        let rewards: Vec<f64> = rewards.into_iter().map(f64::from).collect();
        let adv = compute_advantages(&rewards, EPS_NORM);
        let (_, sigma) = population_stats(&rewards);
        if sigma == 0.0 {
            prop_assert!(adv.iter().all(|&a| a == 0.0));
        } else {
            prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9);
            let (_, adv_std) = population_stats(&adv);
            prop_assert!((adv_std - sigma / (sigma + EPS_NORM)).abs() < 1e-9);
        }
    }

    #[test]
    fn real_valued_rewards_keep_the_invariants(rewards in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let adv = compute_advantages(&rewards, EPS_NORM);
        let (mean, sigma) = population_stats(&rewards);
        prop_assert!(adv.iter().sum::<f64>().abs() < 1e-9);
        for (a, r) in adv.iter().zip(&rewards) {
            prop_assert!((a - (r - mean) / (sigma + EPS_NORM)).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences(seed in any::<u64>(), batch_mean in any::<bool>()) {
        let mut r = rng(seed);
        let clip = ClipConfig::default();
        let agg = if batch_mean { Aggregation::BatchTokenMean } else { Aggregation::PerTrajectory };
        let old = random_params(tiny_shape(), &mut r);
        let mut params = old.clone();
        for v in params.as_mut_slice() {
            *v += r.random_range(-0.3..0.3);
        }
        let groups = random_batch(&mut r, &old, 2, 3);
        prop_assume!(!near_clip_boundary(&params, &old, &groups, &clip));

        let eval = grpo_objective_and_grad(&params, &old, &groups, &clip, agg).unwrap();
        prop_assert!((eval.objective - surrogate(&params, &old, &groups, &clip, agg)).abs() < 1e-12);
        let numeric = central_differences(&params, 1e-5, |p| surrogate(p, &old, &groups, &clip, agg));
        prop_assert!(relative_error(eval.gradient.as_slice(), &numeric) < 1e-4);
    }

    #[test]
    fn ratio_one_reduces_to_advantage_weighted_likelihood(seed in any::<u64>()) {
        let mut r = rng(seed);
        let params = random_params(tiny_shape(), &mut r);
        let groups = random_batch(&mut r, &params, 3, 4);
        let eval = grpo_objective_and_grad(&params, &params, &groups, &ClipConfig::default(), Aggregation::PerTrajectory).unwrap();
        prop_assert!(eval.objective.abs() < 1e-9);

        let mut expected = PolicyParams::zeros(*params.shape());
        for g in &groups {
            for (t, a) in g.trajectories.iter().zip(&g.advantages) {
                let w = a / (groups.len() * g.size() * t.generated.len()) as f64;
                expected.add_assign(&weighted_logprob_grad(&params, &t.prompt, &t.generated, &vec![w; t.generated.len()]).unwrap());
            }
        }
        prop_assert!(eval.gradient.max_abs_diff(&expected) < 1e-8);
    }

    #[test]
    fn clipped_term_is_the_pessimistic_bound(ratio in 0.01f64..3.0, adv in -3.0f64..3.0) {
        let clip = ClipConfig::default();
        let (term, slope) = clipped_term(ratio, adv, &clip);
        let clamped = ratio.clamp(0.8, 1.28);
        prop_assert_eq!(term, (ratio * adv).min(clamped * adv));
        prop_assert!(slope == 0.0 || slope == ratio * adv);
    }
}

/// One token whose new/old probability ratio is `ratio`, with advantage
/// `adv`. Returns the gradient norm of the surrogate.
fn single_token_gradient(ratio: f64, adv: f64, clip: &ClipConfig) -> f64 {
    let shape = PolicyShape {
        vocab_size: 2,
        embed_dim: 1,
        context: 1,
        hidden_dim: 1,
        pad_token: 0,
    };
    let old = PolicyParams::zeros(shape);
    let mut params = PolicyParams::zeros(shape);
    let p = ratio / 2.0;
    params.output_bias_mut()[1] = (p / (1.0 - p)).ln();
    let group = RewardedGroup {
        query_id: 0,
        trajectories: vec![Trajectory {
            prompt: vec![0],
            generated: vec![1],
            logprobs: vec![0.5f64.ln()],
        }],
        rewards: vec![0.0],
        mean: 0.0,
        std: 1.0,
        advantages: vec![adv],
        task_kind: TaskKind::Generation,
    };
    grpo_objective_and_grad(&params, &old, &[group], clip, Aggregation::PerTrajectory)
        .unwrap()
        .gradient
        .norm()
}

#[test]
fn raised_upper_clip_keeps_gradient_for_moderately_favoured_tokens() {
    let asymmetric = ClipConfig::default();
    let symmetric = ClipConfig {
        eps_high: asymmetric.eps_low,
        ..asymmetric.clone()
    };
    for ratio in [1.21, 1.25, 1.279] {
        assert!(single_token_gradient(ratio, 1.0, &asymmetric) > 1e-6, "ratio {ratio}");
        assert_eq!(single_token_gradient(ratio, 1.0, &symmetric), 0.0, "ratio {ratio}");
    }
    assert_eq!(single_token_gradient(1.3, 1.0, &asymmetric), 0.0);
}

#[test]
fn hand_derived_clip_values() {
    let clip = ClipConfig::default();
    let (term, slope) = clipped_term(1.5, 1.0, &clip);
    assert!((term - 1.28).abs() < 1e-12);
    assert_eq!(slope, 0.0);
    // The min picks 0.8·(−1) over 0.5·(−1); that branch does not depend on θ.
    let (term, slope) = clipped_term(0.5, -1.0, &clip);
    assert!((term + 0.8).abs() < 1e-12);
    assert_eq!(slope, 0.0);
    assert_eq!(single_token_gradient(0.5, -1.0, &clip), 0.0);
    // A ratio below 1 − eps_low with positive advantage stays live.
    assert!(single_token_gradient(0.5, 1.0, &clip) > 0.0);
}

#[test]
fn degenerate_batch_leaves_params_and_optimizer_untouched() {
    let mut r = rng(11);
    let params = random_params(tiny_shape(), &mut r);
    let mut groups = random_batch(&mut r, &params, 2, 4);
    for g in &mut groups {
        *g = RewardedGroup::new(g.query_id, g.trajectories.clone(), vec![1.0; 4], EPS_NORM, TaskKind::Generation).unwrap();
        assert!(g.advantages.iter().all(|&a| a == 0.0));
    }
    let mut learner = Learner {
        optimizer: OptimizerState::new(AdamConfig::default(), params.shape()),
        params: params.clone(),
    };
    let stats = train_step(&mut learner, &groups, 2, &ClipConfig::default(), Aggregation::PerTrajectory).unwrap();
    assert_eq!(stats.grad_norm, 0.0);
    assert_eq!(learner.params, params);
}

#[test]
fn verifier_driven_group_reproduces_known_advantages() {
    let adv = compute_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], EPS_NORM);
    // mean 1/4, population std √3/4
    let sd = 3f64.sqrt() / 4.0;
    let (pos, neg) = (0.75 / (sd + EPS_NORM), -0.25 / (sd + EPS_NORM));
    for (i, a) in adv.iter().enumerate() {
        let want = if i == 0 || i == 3 { pos } else { neg };
        assert!((a - want).abs() < 1e-12);
    }
    assert!((pos - 1.7320).abs() < 1e-3 && (neg + 0.5773).abs() < 1e-3);
}

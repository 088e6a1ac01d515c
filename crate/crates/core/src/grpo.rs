//! Group rollouts, group-normalized advantages and the clipped surrogate.
//!
//! For trajectory `j` of a group with advantage `A_j`, every token `t`
//! contributes `min(ρ_t A_j, clip(ρ_t, 1 - eps_low, 1 + eps_high) A_j)`,
//! where `ρ_t = π_θ(o_t | ·) / π_old(o_t | ·)`. Token terms are averaged over
//! the trajectory, trajectories over the group, and groups over the batch.
//! The objective is maximized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    apply_update, backward_sequence, forward_sequence, sample_sequence, sequence_logprobs, DecodeConfig,
    OptimizerState, PolicyParams, Trajectory,
};
use crate::rng::{rng_from_seed, Rng};
use crate::task_env::Token;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub eps_norm: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            eps_low: 0.2,
            eps_high: 0.28,
            eps_norm: 1e-6,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_low.is_nan() || self.eps_low <= 0.0 {
            return Err(Error::config("clip.eps_low", "must be positive"));
        }
        if self.eps_high.is_nan() || self.eps_high < self.eps_low {
            return Err(Error::config("clip.eps_high", "must be at least eps_low"));
        }
        if self.eps_norm.is_nan() || self.eps_norm <= 0.0 {
            return Err(Error::config("clip.eps_norm", "must be positive"));
        }
        Ok(())
    }
}

/// How token terms are reduced into the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over each trajectory's tokens, then over the group, then groups.
    #[default]
    PerTrajectory,
    /// Sum of every token term in the batch divided by the batch token count.
    BatchTokenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Generation,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardedGroup {
    pub query_id: u64,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
    pub task_kind: TaskKind,
}

impl RewardedGroup {
    pub fn new(
        query_id: u64,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        eps_norm: f64,
        task_kind: TaskKind,
    ) -> Result<Self> {
        if trajectories.len() != rewards.len() || rewards.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "group needs matching trajectories and rewards, at least 2 (got {} and {})",
                trajectories.len(),
                rewards.len()
            )));
        }
        let (mean, std) = group_statistics(&rewards);
        let advantages = compute_advantages(&rewards, eps_norm);
        Ok(RewardedGroup {
            query_id,
            trajectories,
            rewards,
            mean,
            std,
            advantages,
            task_kind,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.std == 0.0
    }
}

/// Population mean and standard deviation.
pub fn group_statistics(rewards: &[f64]) -> (f64, f64) {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn compute_advantages(rewards: &[f64], eps_norm: f64) -> Vec<f64> {
    let (mean, std) = group_statistics(rewards);
    rewards.iter().map(|r| (r - mean) / (std + eps_norm)).collect()
}

/// Samples `n` continuations of `prompt`. Each sample gets its own stream
/// seeded from `rng`, so the result does not depend on the thread count.
pub fn rollouts(
    params: &PolicyParams,
    prompt: &[Token],
    n: usize,
    decode: &DecodeConfig,
    stop: Option<Token>,
    rng: &mut Rng,
) -> Vec<Trajectory> {
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    seeds
        .into_par_iter()
        .map(|seed| sample_sequence(params, prompt, decode, stop, &mut rng_from_seed(seed)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn collect_group(
    params: &PolicyParams,
    query_id: u64,
    prompt: &[Token],
    group_size: usize,
    decode: &DecodeConfig,
    stop: Option<Token>,
    reward_fn: impl Fn(&Trajectory) -> f64,
    rng: &mut Rng,
    eps_norm: f64,
    task_kind: TaskKind,
) -> Result<RewardedGroup> {
    if group_size < 2 {
        return Err(Error::InvalidArgument("group size must be at least 2".into()));
    }
    let trajectories = rollouts(params, prompt, group_size, decode, stop, rng);
    let rewards = trajectories.iter().map(&reward_fn).collect();
    RewardedGroup::new(query_id, trajectories, rewards, eps_norm, task_kind)
}

/// Value of one token's clipped term and its derivative with respect to
/// `log π_θ` of that token. The derivative vanishes whenever the min picks
/// the clipped branch strictly, since that branch is constant in θ.
pub fn clipped_term(ratio: f64, advantage: f64, clip: &ClipConfig) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip.eps_low, 1.0 + clip.eps_high) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEvaluation {
    pub objective: f64,
    pub gradient: PolicyParams,
    /// Fraction of tokens whose gradient was cut by clipping.
    pub clip_fraction: f64,
    pub tokens: usize,
}

const REDUCTION_CHUNK: usize = 8;

pub fn grpo_objective_and_grad(
    params: &PolicyParams,
    old_params: &PolicyParams,
    groups: &[RewardedGroup],
    clip: &ClipConfig,
    aggregation: Aggregation,
) -> Result<SurrogateEvaluation> {
    if params.shape() != old_params.shape() {
        return Err(Error::ShapeMismatch("current and old policy shapes differ".into()));
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let total_tokens: usize = groups
        .iter()
        .flat_map(|g| &g.trajectories)
        .map(Trajectory::token_count)
        .sum();
    let num_groups = groups.len() as f64;
    // (trajectory, advantage, coefficient on the token sum)
    let mut items = Vec::new();
    for g in groups {
        for (traj, &adv) in g.trajectories.iter().zip(&g.advantages) {
            if traj.generated.is_empty() {
                return Err(Error::InvalidArgument(format!("empty trajectory in group {}", g.query_id)));
            }
            let coef = match aggregation {
                Aggregation::PerTrajectory => 1.0 / (num_groups * g.size() as f64 * traj.token_count() as f64),
                Aggregation::BatchTokenMean => 1.0 / total_tokens as f64,
            };
            items.push((traj, adv, coef));
        }
    }

    let partials: Vec<Result<(f64, usize, PolicyParams)>> = items
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut grad = PolicyParams::zeros(*params.shape());
            let mut value = 0.0;
            let mut clipped = 0;
            for &(traj, adv, coef) in chunk {
                let old = sequence_logprobs(old_params, &traj.prompt, &traj.generated)?;
                let cache = forward_sequence(params, &traj.prompt, &traj.generated);
                let mut weights = Vec::with_capacity(old.len());
                let mut traj_value = 0.0;
                for (&new_lp, &old_lp) in cache.logprobs().iter().zip(&old) {
                    let (term, slope) = clipped_term((new_lp - old_lp).exp(), adv, clip);
                    traj_value += term;
                    if slope == 0.0 && adv != 0.0 {
                        clipped += 1;
                    }
                    weights.push(coef * slope);
                }
                value += coef * traj_value;
                backward_sequence(params, &cache, &weights, &mut grad);
            }
            Ok((value, clipped, grad))
        })
        .collect();

    let mut objective = 0.0;
    let mut clipped = 0;
    let mut gradient = PolicyParams::zeros(*params.shape());
    for partial in partials {
        let (v, c, g) = partial?;
        objective += v;
        clipped += c;
        gradient.add_assign(&g);
    }
    Ok(SurrogateEvaluation {
        objective,
        gradient,
        clip_fraction: clipped as f64 / total_tokens as f64,
        tokens: total_tokens,
    })
}

/// Parameters plus optimizer state: everything an update mutates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub params: PolicyParams,
    pub optimizer: OptimizerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Surrogate value at the start of the first inner epoch.
    pub objective: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub mean_reward: f64,
    pub mean_tokens: f64,
    pub generation_groups: usize,
    pub verification_groups: usize,
}

/// Snapshots the policy, then runs `inner_epochs` surrogate ascent steps
/// against that snapshot.
pub fn train_step(
    learner: &mut Learner,
    groups: &[RewardedGroup],
    inner_epochs: usize,
    clip: &ClipConfig,
    aggregation: Aggregation,
) -> Result<UpdateStats> {
    if inner_epochs == 0 {
        return Err(Error::InvalidArgument("inner_epochs must be at least 1".into()));
    }
    let old = learner.params.clone();
    let mut first = None;
    let mut clip_sum = 0.0;
    for _ in 0..inner_epochs {
        let eval = grpo_objective_and_grad(&learner.params, &old, groups, clip, aggregation)?;
        apply_update(&mut learner.params, &mut learner.optimizer, &eval.gradient)?;
        clip_sum += eval.clip_fraction;
        if first.is_none() {
            first = Some((eval.objective, eval.gradient.norm()));
        }
    }
    let (objective, grad_norm) = first.expect("at least one epoch");
    let trajectories: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
    let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    Ok(UpdateStats {
        objective,
        clip_fraction: clip_sum / inner_epochs as f64,
        grad_norm,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        mean_tokens: trajectories.iter().map(|t| t.token_count() as f64).sum::<f64>() / trajectories.len() as f64,
        generation_groups: groups.iter().filter(|g| g.task_kind == TaskKind::Generation).count(),
        verification_groups: groups.iter().filter(|g| g.task_kind == TaskKind::Verification).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_policy, AdamConfig, PolicyShape};
    use crate::rng::rng_from_seed;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn advantages_half_split() {
        let a = compute_advantages(&[1.0, 1.0, 0.0, 0.0], 1e-6);
        let v = 0.5 / (0.5 + 1e-6);
        assert!(close(&a, &[v, v, -v, -v], 1e-15));
        assert!((a[0] - 0.999998).abs() < 1e-6);
    }

    #[test]
    fn advantages_degenerate_group_is_zero() {
        assert_eq!(compute_advantages(&[1.0; 4], 1e-6), vec![0.0; 4]);
        assert_eq!(compute_advantages(&[0.0; 3], 1e-6), vec![0.0; 3]);
    }

    #[test]
    fn advantages_quarter_group() {
        // mean 0.25, population std sqrt(0.1875)
        let a = compute_advantages(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1e-6);
        let std = 0.1875f64.sqrt();
        assert!((std - 0.43301).abs() < 1e-5);
        let hi = 0.75 / (std + 1e-6);
        let lo = -0.25 / (std + 1e-6);
        assert!(close(&a, &[hi, lo, lo, hi, lo, lo, lo, lo], 1e-12));
        assert!((hi - 1.7320).abs() < 1e-3 && (lo + 0.5773).abs() < 1e-3);
    }

    #[test]
    fn clipped_term_cases() {
        let clip = ClipConfig::default();
        assert_eq!(clipped_term(1.5, 1.0, &clip), (1.28, 0.0));
        let (term, slope) = clipped_term(0.5, -1.0, &clip);
        assert_eq!(term, -0.8);
        // The min selects the constant clipped branch.
        assert_eq!(slope, 0.0);
        assert_eq!(clipped_term(1.0, 0.7, &clip), (0.7, 0.7));
        // Within the widened upper band the positive token keeps its gradient.
        let (_, slope) = clipped_term(1.25, 1.0, &clip);
        assert_eq!(slope, 1.25);
        let symmetric = ClipConfig {
            eps_high: 0.2,
            ..clip
        };
        assert_eq!(clipped_term(1.25, 1.0, &symmetric).1, 0.0);
    }

    fn tiny() -> PolicyParams {
        init_policy(
            PolicyShape {
                vocab_size: 4,
                embed_dim: 2,
                context: 2,
                hidden_dim: 3,
                pad_token: 0,
            },
            &mut rng_from_seed(4),
        )
        .unwrap()
    }

    #[test]
    fn constant_reward_gives_zero_advantages() {
        let p = tiny();
        let g = collect_group(
            &p,
            0,
            &[0],
            8,
            &DecodeConfig::ancestral(3),
            None,
            |_| 1.0,
            &mut rng_from_seed(1),
            1e-6,
            TaskKind::Generation,
        )
        .unwrap();
        assert_eq!(g.size(), 8);
        assert!(g.is_degenerate());
        assert!(g.advantages.iter().all(|&a| a == 0.0));
        let again = collect_group(
            &p,
            0,
            &[0],
            8,
            &DecodeConfig::ancestral(3),
            None,
            |_| 1.0,
            &mut rng_from_seed(1),
            1e-6,
            TaskKind::Generation,
        )
        .unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn degenerate_batch_leaves_fresh_learner_unchanged() {
        let p = tiny();
        let traj = sample_sequence(&p, &[0], &DecodeConfig::ancestral(3), None, &mut rng_from_seed(0));
        let group = RewardedGroup::new(0, vec![traj.clone(), traj], vec![0.0, 0.0], 1e-6, TaskKind::Generation).unwrap();
        let mut learner = Learner {
            optimizer: OptimizerState::new(AdamConfig::default(), p.shape()),
            params: p.clone(),
        };
        let stats = train_step(&mut learner, &[group], 1, &ClipConfig::default(), Aggregation::PerTrajectory).unwrap();
        assert_eq!(learner.params, p);
        assert_eq!(stats.grad_norm, 0.0);
        assert_eq!(stats.objective, 0.0);
    }

    #[test]
    fn group_needs_two_members() {
        let p = tiny();
        let traj = sample_sequence(&p, &[0], &DecodeConfig::ancestral(1), None, &mut rng_from_seed(0));
        assert!(RewardedGroup::new(0, vec![traj], vec![1.0], 1e-6, TaskKind::Generation).is_err());
    }
}

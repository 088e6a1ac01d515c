// Checks the clipped surrogate gradient against central finite differences
// on a tiny network, with the old policy perturbed so ratios differ from 1.
//
// cargo run --release --example gradient_check

use rand::Rng as _;
use selfverify::acceptance::finite_difference;
use selfverify::grpo::{grpo_objective_and_grad, Aggregation, ClipConfig, RewardedGroup, TaskKind};
use selfverify::policy::{init_policy, sample_sequence, DecodeConfig, PolicyShape};
use selfverify::rng::rng_from_seed;

fn main() -> selfverify::Result<()> {
    let shape = PolicyShape {
        vocab_size: 4,
        embed_dim: 2,
        context: 2,
        hidden_dim: 3,
        pad_token: 0,
    };
    let clip = ClipConfig::default();
    let mut rng = rng_from_seed(1);
    let old = init_policy(shape, &mut rng)?;
    let mut params = old.clone();
    for v in params.as_mut_slice() {
        *v += rng.random_range(-0.1..0.1);
    }

    let mut groups = Vec::new();
    for q in 0..3 {
        let trajectories = (0..4)
            .map(|_| sample_sequence(&old, &[0, q as usize + 1], &DecodeConfig::ancestral(3), None, &mut rng))
            .collect();
        let rewards = (0..4).map(|j| ((j + q) % 2) as f64).collect();
        groups.push(RewardedGroup::new(q, trajectories, rewards, clip.eps_norm, TaskKind::Generation)?);
    }

    for aggregation in [Aggregation::PerTrajectory, Aggregation::BatchTokenMean] {
        let eval = grpo_objective_and_grad(&params, &old, &groups, &clip, aggregation)?;
        let numeric = finite_difference(&params, 1e-5, |p| {
            Ok(grpo_objective_and_grad(p, &old, &groups, &clip, aggregation)?.objective)
        })?;
        let mut diff = numeric.clone();
        diff.scale(-1.0);
        diff.add_assign(&eval.gradient);
        println!(
            "{aggregation:?}: objective {:.6}, {} params, relative error {:.2e}, clipped tokens {:.1}%",
            eval.objective,
            params.len(),
            diff.norm() / numeric.norm(),
            100.0 * eval.clip_fraction
        );
    }
    Ok(())
}

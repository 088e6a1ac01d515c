//! Supervised warm start that gives a freshly initialized policy the output
//! format before any reinforcement learning.
//!
//! Demonstrations follow a propose-and-check pattern: the trace is a run of
//! attempts `SEP d JUDGE {YES|NO}`, a `YES` is followed by `ANSWER d EOS`, and
//! after `max_attempts` rejections the last proposal is submitted anyway.
//! Proposals are uniform over the residues of the query's modulus and
//! judgments are coin flips, so the warm-started policy knows the format but
//! neither how to solve nor how to check. Verification prompts are
//! demonstrated with the same uninformed judgments.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::Learner;
use crate::policy::{apply_update, backward_sequence, forward_sequence, AdamConfig, OptimizerState, PolicyParams};
use crate::rng::{derived_rng, stream, Rng};
use crate::task_env::{
    digits_of, parse_prompt, render_generation_prompt, render_verification_prompt, sample_query, tok,
    ArithmeticParams, Query, Token,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub max_attempts: usize,
    pub accept_prob: f64,
    /// Share of each batch spent on verification-prompt demonstrations.
    pub verify_fraction: f64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig {
            steps: 400,
            batch: 32,
            lr: 1e-2,
            max_attempts: 3,
            accept_prob: 0.5,
            verify_fraction: 0.25,
        }
    }
}

impl WarmStartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps > 0 && self.batch == 0 {
            return Err(Error::config("warm_start.batch", "must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("warm_start.max_attempts", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.accept_prob) {
            return Err(Error::config("warm_start.accept_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.verify_fraction) {
            return Err(Error::config("warm_start.verify_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A generation demonstration for `query`.
pub fn demonstration(query: &Query, rng: &mut Rng, cfg: &WarmStartConfig) -> Result<Vec<Token>> {
    let modulus = parse_prompt(&query.prompt_tokens)?.modulus;
    let mut out = Vec::new();
    for attempt in 1..=cfg.max_attempts {
        let guess = digits_of(rng.random_range(0..modulus));
        out.push(tok::SEP);
        out.extend(&guess);
        out.push(tok::JUDGE);
        if attempt == cfg.max_attempts || rng.random::<f64>() < cfg.accept_prob {
            out.push(tok::YES);
            out.push(tok::ANSWER);
            out.extend(&guess);
            out.push(tok::EOS);
            return Ok(out);
        }
        out.push(tok::NO);
    }
    unreachable!("the last attempt always submits")
}

fn verification_demonstration(query: &Query, rng: &mut Rng, cfg: &WarmStartConfig) -> Result<(Vec<Token>, Vec<Token>)> {
    let modulus = parse_prompt(&query.prompt_tokens)?.modulus;
    let candidate = digits_of(rng.random_range(0..modulus));
    let prompt = render_verification_prompt(&query.prompt_tokens, &candidate)?;
    let judgment = if rng.random::<f64>() < cfg.accept_prob { tok::YES } else { tok::NO };
    Ok((prompt, vec![judgment]))
}

/// Gradient of the mean per-token log-likelihood of `examples`.
pub fn likelihood_gradient(params: &PolicyParams, examples: &[(Vec<Token>, Vec<Token>)]) -> PolicyParams {
    let n = examples.len() as f64;
    let partials: Vec<PolicyParams> = examples
        .par_chunks(8)
        .map(|chunk| {
            let mut grad = PolicyParams::zeros(*params.shape());
            for (prompt, target) in chunk {
                let cache = forward_sequence(params, prompt, target);
                let w = vec![1.0 / (n * target.len() as f64); target.len()];
                backward_sequence(params, &cache, &w, &mut grad);
            }
            grad
        })
        .collect();
    let mut total = PolicyParams::zeros(*params.shape());
    for p in &partials {
        total.add_assign(p);
    }
    total
}

/// Fits `params` to freshly sampled demonstrations with a linearly decaying
/// learning rate; returns the mean token log-likelihood of each step's batch.
pub fn warm_start(
    params: &mut PolicyParams,
    task: &ArithmeticParams,
    cfg: &WarmStartConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut learner = Learner {
        optimizer: OptimizerState::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            params.shape(),
        ),
        params: params.clone(),
    };
    let verify_count = (cfg.batch as f64 * cfg.verify_fraction).round() as usize;
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = derived_rng(seed, &[stream::WARM_START, step as u64]);
        let mut examples = Vec::with_capacity(cfg.batch);
        for i in 0..cfg.batch {
            let query = sample_query(&mut rng, i as u64, task)?;
            if i < verify_count {
                examples.push(verification_demonstration(&query, &mut rng, cfg)?);
            } else {
                let target = demonstration(&query, &mut rng, cfg)?;
                examples.push((render_generation_prompt(&query)?, target));
            }
        }
        let loglik: f64 = examples
            .iter()
            .map(|(p, t)| {
                let cache = forward_sequence(&learner.params, p, t);
                cache.logprobs().iter().sum::<f64>() / t.len() as f64
            })
            .sum::<f64>()
            / examples.len() as f64;
        curve.push(loglik);
        learner.optimizer.config.lr = cfg.lr * (1.0 - step as f64 / cfg.steps as f64);
        let grad = likelihood_gradient(&learner.params, &examples);
        apply_update(&mut learner.params, &mut learner.optimizer, &grad)?;
    }
    *params = learner.params;
    Ok(curve)
}

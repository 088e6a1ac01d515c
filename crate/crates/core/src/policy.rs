//! A small autoregressive token policy.
//!
//! The next-token distribution is computed from the last `context` tokens
//! (left-padded with `pad_token`): their embeddings are concatenated, passed
//! through one tanh hidden layer, and projected to vocabulary logits. All
//! parameters live in one flat buffer so the optimizer and gradient code can
//! treat them uniformly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task_env::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context: usize,
    pub hidden_dim: usize,
    pub pad_token: Token,
}

impl PolicyShape {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("context", self.context),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{name}"), "must be at least 1"));
            }
        }
        if self.pad_token >= self.vocab_size {
            return Err(Error::config("model.pad_token", "outside the vocabulary"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.context * self.embed_dim
    }

    fn offsets(&self) -> [usize; 6] {
        let emb = self.vocab_size * self.embed_dim;
        let hw = self.hidden_dim * self.input_dim();
        let hb = self.hidden_dim;
        let ow = self.hidden_dim * self.vocab_size;
        let ob = self.vocab_size;
        [0, emb, emb + hw, emb + hw + hb, emb + hw + hb + ow, emb + hw + hb + ow + ob]
    }

    pub fn num_params(&self) -> usize {
        self.offsets()[5]
    }
}

/// Policy parameters; also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    shape: PolicyShape,
    data: Vec<f64>,
}

macro_rules! block {
    ($(#[$doc:meta])* $get:ident, $get_mut:ident, $i:expr) => {
        $(#[$doc])*
        pub fn $get(&self) -> &[f64] {
            let o = self.shape.offsets();
            &self.data[o[$i]..o[$i + 1]]
        }

        pub fn $get_mut(&mut self) -> &mut [f64] {
            let o = self.shape.offsets();
            &mut self.data[o[$i]..o[$i + 1]]
        }
    };
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            data: vec![0.0; shape.num_params()],
            shape,
        }
    }

    pub fn from_flat(shape: PolicyShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                shape.num_params(),
                data.len()
            )));
        }
        Ok(PolicyParams { shape, data })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    block!(
        /// `vocab_size × embed_dim`, row per token.
        embedding, embedding_mut, 0);
    block!(
        /// `hidden_dim × (context · embed_dim)`.
        hidden_weights, hidden_weights_mut, 1);
    block!(hidden_bias, hidden_bias_mut, 2);
    block!(
        /// `hidden_dim × vocab_size`.
        output_weights, output_weights_mut, 3);
    block!(output_bias, output_bias_mut, 4);

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &PolicyParams) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &PolicyParams) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Draws parameters uniformly from symmetric ranges scaled by fan-in.
/// Biases start at zero.
pub fn init_policy(shape: PolicyShape, rng: &mut Rng) -> Result<PolicyParams> {
    shape.validate()?;
    let mut p = PolicyParams::zeros(shape);
    let hidden_scale = 1.0 / (shape.input_dim() as f64).sqrt();
    let out_scale = 0.5 / (shape.hidden_dim as f64).sqrt();
    for v in p.embedding_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in p.hidden_weights_mut() {
        *v = rng.random_range(-hidden_scale..hidden_scale);
    }
    for v in p.output_weights_mut() {
        *v = rng.random_range(-out_scale..out_scale);
    }
    Ok(p)
}

/// Last `k` tokens of `prefix`, left-padded with `pad`.
pub fn context_window(prefix: &[Token], k: usize, pad: Token) -> Vec<Token> {
    let take = prefix.len().min(k);
    let mut out = vec![pad; k - take];
    out.extend_from_slice(&prefix[prefix.len() - take..]);
    out
}

struct Activation {
    window: Vec<Token>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_window(params: &PolicyParams, window: &[Token]) -> Activation {
    let s = &params.shape;
    let (e, h_dim, v_dim) = (s.embed_dim, s.hidden_dim, s.vocab_size);
    let emb = params.embedding();
    let mut x = Vec::with_capacity(s.input_dim());
    for &t in window {
        x.extend_from_slice(&emb[t * e..(t + 1) * e]);
    }
    let hw = params.hidden_weights();
    let hidden: Vec<f64> = params
        .hidden_bias()
        .iter()
        .enumerate()
        .map(|(h, b)| {
            let row = &hw[h * x.len()..(h + 1) * x.len()];
            (b + row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>()).tanh()
        })
        .collect();
    let ow = params.output_weights();
    let mut logits = params.output_bias().to_vec();
    for (h, &act) in hidden.iter().enumerate() {
        for (l, w) in logits.iter_mut().zip(&ow[h * v_dim..(h + 1) * v_dim]) {
            *l += w * act;
        }
    }
    debug_assert_eq!(hidden.len(), h_dim);
    Activation {
        window: window.to_vec(),
        hidden,
        logits,
    }
}

pub fn next_token_logits(params: &PolicyParams, window: &[Token]) -> Vec<f64> {
    forward_window(params, window).logits
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    /// Argmax decoding; temperature and top_p are ignored.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            temperature: 0.6,
            top_p: 0.95,
            max_new_tokens: 64,
            greedy: false,
        }
    }
}

impl DecodeConfig {
    pub fn ancestral(max_new_tokens: usize) -> Self {
        DecodeConfig {
            temperature: 1.0,
            top_p: 1.0,
            max_new_tokens,
            greedy: false,
        }
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        DecodeConfig {
            greedy: true,
            ..Self::ancestral(max_new_tokens)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("decode.temperature", "must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("decode.top_p", "must lie in (0, 1]"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::config("decode.max_new_tokens", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<Token>,
    pub generated: Vec<Token>,
    /// Log-probability of each generated token under the untruncated,
    /// temperature-1 distribution of the sampling policy.
    pub logprobs: Vec<f64>,
}

impl Trajectory {
    pub fn token_count(&self) -> usize {
        self.generated.len()
    }
}

fn draw_token(logits: &[f64], cfg: &DecodeConfig, rng: &mut Rng) -> Token {
    if cfg.greedy {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
    let probs = softmax(&scaled);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let mut mass = 1.0;
    if cfg.top_p < 1.0 {
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut keep = 0;
        for &i in &order {
            cum += probs[i];
            keep += 1;
            if cum >= cfg.top_p {
                break;
            }
        }
        order.truncate(keep);
        mass = cum;
    }
    let u = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &order {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *order.last().expect("nonempty vocabulary")
}

/// Samples a continuation of `prompt` until `stop` or `max_new_tokens`.
pub fn sample_sequence(
    params: &PolicyParams,
    prompt: &[Token],
    cfg: &DecodeConfig,
    stop: Option<Token>,
    rng: &mut Rng,
) -> Trajectory {
    let s = params.shape;
    let mut context = prompt.to_vec();
    let mut generated = Vec::new();
    let mut logprobs = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let window = context_window(&context, s.context, s.pad_token);
        let logits = next_token_logits(params, &window);
        let token = draw_token(&logits, cfg, rng);
        logprobs.push(log_softmax(&logits)[token]);
        generated.push(token);
        context.push(token);
        if Some(token) == stop {
            break;
        }
    }
    Trajectory {
        prompt: prompt.to_vec(),
        generated,
        logprobs,
    }
}

/// Anything that can produce token sequences for the evaluator.
pub trait TokenPolicy: Sync {
    fn sample(&self, prompt: &[Token], cfg: &DecodeConfig, stop: Option<Token>, rng: &mut Rng) -> Trajectory;
}

impl TokenPolicy for PolicyParams {
    fn sample(&self, prompt: &[Token], cfg: &DecodeConfig, stop: Option<Token>, rng: &mut Rng) -> Trajectory {
        sample_sequence(self, prompt, cfg, stop, rng)
    }
}

/// Per-position activations of a teacher-forced pass over `tokens`.
pub struct SequenceCache {
    tokens: Vec<Token>,
    steps: Vec<Activation>,
    logprobs: Vec<f64>,
}

impl SequenceCache {
    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }
}

pub fn forward_sequence(params: &PolicyParams, prompt: &[Token], tokens: &[Token]) -> SequenceCache {
    let s = params.shape;
    let mut context = prompt.to_vec();
    let mut steps = Vec::with_capacity(tokens.len());
    let mut logprobs = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let act = forward_window(params, &context_window(&context, s.context, s.pad_token));
        logprobs.push(log_softmax(&act.logits)[t]);
        steps.push(act);
        context.push(t);
    }
    SequenceCache {
        tokens: tokens.to_vec(),
        steps,
        logprobs,
    }
}

pub fn sequence_logprobs(params: &PolicyParams, prompt: &[Token], tokens: &[Token]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("no tokens to score".into()));
    }
    Ok(forward_sequence(params, prompt, tokens).logprobs)
}

/// Accumulates `∇ Σ_t weights[t] · log π(token_t | prefix_t)` into `grad`.
pub fn backward_sequence(params: &PolicyParams, cache: &SequenceCache, weights: &[f64], grad: &mut PolicyParams) {
    let s = params.shape;
    let (e, v_dim, in_dim) = (s.embed_dim, s.vocab_size, s.input_dim());
    let emb = params.embedding();
    let hw = params.hidden_weights();
    let ow = params.output_weights();
    let o = s.offsets();
    let g = grad.data.as_mut_slice();
    let mut dlogits = vec![0.0; v_dim];
    let mut dpre = vec![0.0; s.hidden_dim];
    let mut x = Vec::with_capacity(in_dim);
    let mut dx = vec![0.0; in_dim];
    for ((step, &token), &w) in cache.steps.iter().zip(&cache.tokens).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (d, p) in dlogits.iter_mut().zip(softmax(&step.logits)) {
            *d = -w * p;
        }
        dlogits[token] += w;

        for (v, d) in dlogits.iter().enumerate() {
            g[o[4] + v] += d;
        }
        for (h, &act) in step.hidden.iter().enumerate() {
            let row = &ow[h * v_dim..(h + 1) * v_dim];
            let grow = &mut g[o[3] + h * v_dim..o[3] + (h + 1) * v_dim];
            let mut dh = 0.0;
            for ((gw, w_out), d) in grow.iter_mut().zip(row).zip(&dlogits) {
                *gw += act * d;
                dh += w_out * d;
            }
            dpre[h] = dh * (1.0 - act * act);
        }

        x.clear();
        for &t in &step.window {
            x.extend_from_slice(&emb[t * e..(t + 1) * e]);
        }
        dx.iter_mut().for_each(|v| *v = 0.0);
        for (h, &dp) in dpre.iter().enumerate() {
            g[o[2] + h] += dp;
            if dp == 0.0 {
                continue;
            }
            let row = &hw[h * in_dim..(h + 1) * in_dim];
            let grow = &mut g[o[1] + h * in_dim..o[1] + (h + 1) * in_dim];
            for (((gw, w_in), xi), dxi) in grow.iter_mut().zip(row).zip(&x).zip(dx.iter_mut()) {
                *gw += dp * xi;
                *dxi += w_in * dp;
            }
        }
        for (slot, &t) in step.window.iter().enumerate() {
            let dst = &mut g[o[0] + t * e..o[0] + (t + 1) * e];
            for (d, src) in dst.iter_mut().zip(&dx[slot * e..(slot + 1) * e]) {
                *d += src;
            }
        }
    }
}

/// Exact gradient of `Σ_t weights[t] · log π(tokens[t] | prompt ++ tokens[..t])`.
pub fn weighted_logprob_grad(
    params: &PolicyParams,
    prompt: &[Token],
    tokens: &[Token],
    weights: &[f64],
) -> Result<PolicyParams> {
    if weights.len() != tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} tokens",
            weights.len(),
            tokens.len()
        )));
    }
    let cache = forward_sequence(params, prompt, tokens);
    let mut grad = PolicyParams::zeros(params.shape);
    backward_sequence(params, &cache, weights, &mut grad);
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, shape: &PolicyShape) -> Self {
        OptimizerState {
            config,
            step: 0,
            first_moment: vec![0.0; shape.num_params()],
            second_moment: vec![0.0; shape.num_params()],
        }
    }
}

/// One bias-corrected Adam step that ascends along `grad`.
pub fn apply_update(params: &mut PolicyParams, state: &mut OptimizerState, grad: &PolicyParams) -> Result<()> {
    if params.shape != grad.shape || state.first_moment.len() != params.len() {
        return Err(Error::ShapeMismatch("gradient/optimizer shape differs from parameters".into()));
    }
    if let Some(index) = grad.data.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .data
        .iter_mut()
        .zip(&grad.data)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p += lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    }
    Ok(())
}

pub fn snapshot(params: &PolicyParams) -> PolicyParams {
    params.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn shape(vocab: usize, k: usize) -> PolicyShape {
        PolicyShape {
            vocab_size: vocab,
            embed_dim: 3,
            context: k,
            hidden_dim: 4,
            pad_token: 0,
        }
    }

    #[test]
    fn init_is_deterministic_with_documented_shapes() {
        let s = PolicyShape {
            vocab_size: 24,
            embed_dim: 16,
            context: 8,
            hidden_dim: 8,
            pad_token: 0,
        };
        let a = init_policy(s, &mut rng_from_seed(3)).unwrap();
        let b = init_policy(s, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.output_weights().len(), 8 * 24);
        assert_eq!(a.hidden_weights().len(), 8 * 8 * 16);
        assert_eq!(a.embedding().len(), 24 * 16);
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let p = PolicyParams::zeros(shape(7, 2));
        assert!(next_token_logits(&p, &[0, 1]).iter().all(|&l| l == 0.0));
        let lp = sequence_logprobs(&p, &[1], &[2, 3, 4]).unwrap();
        for v in lp {
            assert!((v + (7f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn window_pads_on_the_left() {
        assert_eq!(context_window(&[5, 6], 4, 0), vec![0, 0, 5, 6]);
        assert_eq!(context_window(&[1, 2, 3, 4, 5], 3, 0), vec![3, 4, 5]);
    }

    #[test]
    fn recorded_logprobs_match_rescoring_at_unit_temperature() {
        let p = init_policy(shape(6, 3), &mut rng_from_seed(1)).unwrap();
        let traj = sample_sequence(&p, &[1, 2], &DecodeConfig::ancestral(10), None, &mut rng_from_seed(9));
        assert_eq!(traj.generated.len(), 10);
        let rescored = sequence_logprobs(&p, &traj.prompt, &traj.generated).unwrap();
        assert_eq!(rescored, traj.logprobs);
        assert!(traj.logprobs.iter().all(|&l| l <= 0.0));
    }

    #[test]
    fn stop_token_and_length_cap() {
        let p = init_policy(shape(6, 3), &mut rng_from_seed(1)).unwrap();
        let one = sample_sequence(&p, &[1], &DecodeConfig::ancestral(1), None, &mut rng_from_seed(0));
        assert_eq!(one.token_count(), 1);
        let greedy = DecodeConfig::greedy(5);
        let a = sample_sequence(&p, &[1], &greedy, None, &mut rng_from_seed(0));
        let b = sample_sequence(&p, &[1], &greedy, None, &mut rng_from_seed(77));
        assert_eq!(a, b);
        let stop = a.generated[0];
        let stopped = sample_sequence(&p, &[1], &greedy, Some(stop), &mut rng_from_seed(0));
        assert_eq!(stopped.generated, vec![stop]);
    }

    #[test]
    fn top_p_restricts_support_to_nucleus() {
        let mut p = PolicyParams::zeros(shape(4, 1));
        p.output_bias_mut().copy_from_slice(&[3.0, 2.0, 0.0, -1.0]);
        let probs = softmax(p.output_bias());
        let cfg = DecodeConfig {
            temperature: 1.0,
            top_p: probs[0] + 1e-6,
            max_new_tokens: 1,
            greedy: false,
        };
        let mut rng = rng_from_seed(5);
        let mut seen = [false; 4];
        for _ in 0..2000 {
            seen[sample_sequence(&p, &[0], &cfg, None, &mut rng).generated[0]] = true;
        }
        assert_eq!(seen, [true, true, false, false]);
    }

    #[test]
    fn weight_length_mismatch_is_rejected() {
        let p = PolicyParams::zeros(shape(5, 2));
        assert!(matches!(
            weighted_logprob_grad(&p, &[0], &[1, 2], &[1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let p = init_policy(shape(5, 2), &mut rng_from_seed(2)).unwrap();
        let g = weighted_logprob_grad(&p, &[0], &[1, 2, 3], &[0.0; 3]).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let s = shape(5, 2);
        let mut p = init_policy(s, &mut rng_from_seed(2)).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::new(
            AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
            &s,
        );
        let mut g = PolicyParams::zeros(s);
        g.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        apply_update(&mut p, &mut opt, &g).unwrap();
        assert_eq!(opt.step, 1);
        for (a, b) in p.as_slice().iter().zip(before.as_slice()) {
            assert!((a - b - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_nan_is_rejected() {
        let s = shape(5, 2);
        let mut p = init_policy(s, &mut rng_from_seed(2)).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::new(AdamConfig::default(), &s);
        apply_update(&mut p, &mut opt, &PolicyParams::zeros(s)).unwrap();
        assert_eq!(p, before);
        let mut bad = PolicyParams::zeros(s);
        bad.as_mut_slice()[3] = f64::NAN;
        assert!(matches!(
            apply_update(&mut p, &mut opt, &bad),
            Err(Error::NonFiniteGradient { index: 3 })
        ));
        assert_eq!(p, before);
    }

    #[test]
    fn snapshot_is_independent() {
        let s = shape(5, 2);
        let mut p = init_policy(s, &mut rng_from_seed(2)).unwrap();
        let snap = snapshot(&p);
        assert_eq!(snap, p);
        assert_eq!(snapshot(&snap), snap);
        p.as_mut_slice()[0] += 1.0;
        assert_ne!(snap, p);
    }
}

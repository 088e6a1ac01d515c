#![allow(dead_code)]

use rand::Rng as _;
use selfverify::policy::{init_policy, PolicyParams, PolicyShape};
use selfverify::rng::{rng_from_seed, Rng};

pub fn rng(seed: u64) -> Rng {
    rng_from_seed(seed)
}

pub fn small_shape(rng: &mut Rng) -> PolicyShape {
    PolicyShape {
        vocab_size: rng.random_range(3..6),
        embed_dim: rng.random_range(1..3),
        context: rng.random_range(1..3),
        hidden_dim: rng.random_range(2..4),
        pad_token: 0,
    }
}

/// Initialized parameters pushed away from the init scale so that no
/// coordinate sits at a trivial value.
pub fn random_params(shape: PolicyShape, rng: &mut Rng) -> PolicyParams {
    let mut p = init_policy(shape, rng).unwrap();
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.4..0.4);
    }
    p
}

pub fn random_tokens(rng: &mut Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// Central differences, coordinate by coordinate.
pub fn central_differences(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let x = probe.as_slice()[i];
            probe.as_mut_slice()[i] = x + h;
            let up = f(&probe);
            probe.as_mut_slice()[i] = x - h;
            let down = f(&probe);
            probe.as_mut_slice()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(analytic).max(scale(numeric)).max(1e-12)
}

/// Population mean and standard deviation computed the long way.
pub fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

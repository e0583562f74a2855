//! Independent oracles shared by the integration tests: central finite
//! differences for gradients and textbook implementations of the metrics.
#![allow(dead_code)]

use gstvqa::autograd::{Graph, Matrix, Reduce, Var};
use gstvqa::features::FeatureSequence;
use gstvqa::params::FEATURE_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Matrix::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform magnitude in `[lo, hi)` with a random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Matrix {
    Matrix::from_shape_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn weighted_loss(g: &mut Graph, out: Var, weights: &Matrix) -> Var {
    let w = g.constant(weights.clone()).unwrap();
    let p = g.mul(out, w).unwrap();
    g.sum(p, Reduce::All).unwrap()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `Σ w ⊙ f(inputs)` over every input element, with random
/// weights `w` drawn from `seed`.
pub fn gradient_error(
    seed: u64,
    inputs: &[Matrix],
    f: &dyn Fn(&mut Graph, &[Var]) -> gstvqa::Result<Var>,
) -> f64 {
    gradient_error_sampled(seed, inputs, f, usize::MAX)
}

/// [`gradient_error`] probing at most `per_input` random elements of each
/// input.
pub fn gradient_error_sampled(
    seed: u64,
    inputs: &[Matrix],
    f: &dyn Fn(&mut Graph, &[Var]) -> gstvqa::Result<Var>,
    per_input: usize,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.variable(m.clone()).unwrap()).collect();
    let out = f(&mut g, &vars).unwrap();
    let weights = uniform(&mut rng(seed ^ 0x5eed), g.shape(out), -1.0, 1.0);
    let loss = weighted_loss(&mut g, out, &weights);
    let grads = g.backward(loss).unwrap();

    let eval = |inputs: &[Matrix]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.constant(m.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        let loss = weighted_loss(&mut g, out, &weights);
        g.scalar(loss)
    };

    let mut pick = rng(seed ^ 0xc0de);
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap();
        let len = inputs[i].len();
        let indices: Vec<usize> = if len <= per_input {
            (0..len).collect()
        } else {
            (0..per_input).map(|_| pick.random_range(0..len)).collect()
        };
        for idx in indices {
            let (r, c) = (idx / inputs[i].ncols(), idx % inputs[i].ncols());
            let x = inputs[i][[r, c]];
            probe[i][[r, c]] = x + FD_STEP;
            let up = eval(&probe);
            probe[i][[r, c]] = x - FD_STEP;
            let down = eval(&probe);
            probe[i][[r, c]] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[[r, c]], numeric));
        }
    }
    worst
}

/// A random feature sequence with `t` frames.
pub fn random_video(t: usize, seed: u64) -> FeatureSequence {
    let mut r = rng(seed);
    let mean = uniform(&mut r, (t, FEATURE_DIM), -1.0, 1.0);
    let std = uniform(&mut r, (t, FEATURE_DIM), 0.0, 1.0);
    FeatureSequence::new(format!("v{seed}"), mean, std).unwrap()
}

/// Ranks by counting: `1 + #smaller + (#equal − 1)/2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let smaller = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation straight from its definition; `None` when either
/// side has zero variance.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

pub fn brute_srocc(x: &[f64], y: &[f64]) -> Option<f64> {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Kendall tau-b by visiting every pair.
pub fn brute_krocc(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let (a, b) = (pairs - tied_x, pairs - tied_y);
    if a == 0 || b == 0 {
        return None;
    }
    Some((concordant - discordant) as f64 / ((a as f64) * (b as f64)).sqrt())
}

/// `β1·(1/2 − 1/(1 + exp(β2·(s − β3)))) + β4·s + β5`.
pub fn brute_logistic(beta: &[f64; 5], s: f64) -> f64 {
    beta[0] * (0.5 - 1.0 / (1.0 + (beta[1] * (s - beta[2])).exp())) + beta[3] * s + beta[4]
}

pub fn brute_rmse(x: &[f64], y: &[f64]) -> f64 {
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (sse / x.len() as f64).sqrt()
}

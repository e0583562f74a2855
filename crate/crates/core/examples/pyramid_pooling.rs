//! Temporal pyramid pooling of variable-length sequences into a fixed
//! 127-slot descriptor.
//!
//! cargo run --example pyramid_pooling

use gstvqa::autograd::{Graph, Matrix};
use gstvqa::params::{Layout, ModelParams, PYRAMID_LEVELS};
use gstvqa::pyramid::{aggregate_pyramid, pyramid_segments};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gstvqa::Result<()> {
    for t in [4, 5] {
        let segments = pyramid_segments(t, 3);
        println!("T = {t}, three levels: {segments:?}");
    }

    let mut g = Graph::new();
    let frames = g.constant(Matrix::from_shape_fn((6, 2), |(t, c)| (t * 10 + c) as f64))?;
    let pooled = aggregate_pyramid(&mut g, frames, PYRAMID_LEVELS)?;
    let v = g.value(pooled);
    println!("6 frames pool to {} slots; level 1 = {}, level 2 = {} | {}", v.nrows(), v.row(0), v.row(1), v.row(2));

    let head = ModelParams::init(Layout::default(), &mut ChaCha8Rng::seed_from_u64(0)).pyramid;
    for t in [1, 8, 64, 1000] {
        let f_gru = Matrix::from_shape_fn((t, 32), |(i, c)| (i as f64 * 0.1 + c as f64).sin());
        let (weights, feature, q) = head.evaluate(&f_gru, PYRAMID_LEVELS)?;
        println!(
            "T = {t:>4}: frame weights in [{:+.3}, {:+.3}], descriptor {:?}, Q^vid {q:+.4}",
            weights.iter().copied().fold(f64::INFINITY, f64::min),
            weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            feature.as_columns().dim(),
        );
    }
    Ok(())
}

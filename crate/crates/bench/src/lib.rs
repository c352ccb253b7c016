//! Shared fixtures for the criterion benches.

use moore_core::moore::MooreConfig;
use moore_core::{Matrix, MooreLayer};

/// A seeded `d_out × d` layer with every learnable tensor filled, so `H` and
/// the router are far from their identity initialization.
pub fn trained_like_layer(d_out: usize, d: usize, config: MooreConfig, seed: u64) -> MooreLayer {
    let w = Matrix::from_fn(d_out, d, |i, j| {
        let h = (i as u64 * 2654435761 + j as u64 * 40503 + seed) % 1000;
        h as f64 / 500.0 - 1.0 + if i == j { 2.0 } else { 0.0 }
    });
    let mut layer = MooreLayer::moeize(&w, config, seed).expect("full-rank fixture");
    for (n, m) in layer.learnable_mut().into_iter().enumerate() {
        for (i, v) in m.data_mut().iter_mut().enumerate() {
            *v += ((i * 31 + n * 7) % 13) as f64 / 26.0 - 0.25;
        }
    }
    layer.sync().expect("valid chain");
    layer
}

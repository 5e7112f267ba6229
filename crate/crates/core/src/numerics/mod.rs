//! Dense linear algebra, a small feed-forward network with hand-written
//! backpropagation, the Adam optimizer and a finite-difference checker.
//!
//! Everything is `f64`. Embedding files store `f32` and are widened on load.

mod adam;
mod ffnn;
mod gradcheck;
mod matrix;
mod vector;

pub use adam::{Adam, AdamConfig};
pub use ffnn::{Activation, DenseLayer, Ffnn, FfnnGrads, ForwardCache};
pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use vector::{cosine, Vector};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used for every random initialization in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot-uniform matrix of shape `rows x cols`, `fan_in = cols`, `fan_out = rows`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent by construction")
}

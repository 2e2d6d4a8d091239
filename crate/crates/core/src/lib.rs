//! Few-shot semi-supervised node classification with a meta-learned label
//! propagator and a decoupled MLP target model.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem (graph bundles, checkpoints, the benchmark CLI) lives in the
//! `metapn` companion crate.
//!
//! Layout:
//! - [`sparse`]: CSR adjacency, symmetric normalization and sparse-dense products.
//! - [`propagation`]: power iteration, personalized PageRank and the adaptive
//!   attention propagator together with its gradient.
//! - [`mlp`] and [`adam`]: the feature-label transformer, soft cross-entropy,
//!   manual backprop and the Adam optimizer.
//! - [`split`]: k-shot split sampling.
//! - [`meta`] and [`trainer`]: the bi-level meta-training loop, the
//!   finite-difference hypergradient, fine-tuning and the non-meta training
//!   loops used by the baselines.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod adam;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod mlp;
pub mod propagation;
pub mod sparse;
pub mod split;
pub mod trainer;

pub use error::{Error, Result};
pub use sparse::{CsrMatrix, DenseMatrix};

/// Dense `n × c` matrix of hard (one-hot) or soft labels.
pub type LabelMatrix = DenseMatrix;

/// Deterministic generator used everywhere a seed is accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a `u64` seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

//! Allocation-only core of a multi-agent self-play training framework.
//!
//! Everything here is pure computation over `alloc` collections: the
//! differentiable network engine, the environments, the joint-ratio policy
//! optimiser, the opponent-pool samplers and self-play controller, and the
//! rating/diversity evaluation. File formats, threads and the command line
//! live in the `spf` companion crate.
//!
//! The crate builds without `std` (`default-features = false`); all floating
//! point transcendentals go through `libm` so results are identical across
//! platforms and feature sets.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod arena;
pub mod env;
mod error;
pub mod gradcheck;
pub mod jrpo;
pub mod math;
pub mod nn;
pub mod rollout;
pub mod selfplay;
pub mod train;

pub use error::{Error, Result};

/// The random number generator used everywhere a seeded stream is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a parent seed and a stream label.
///
/// SplitMix64 finalisation over `seed ^ label`; used to give every actor,
/// evaluation and environment its own stream without sharing generator state.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Seeded randomness.
//!
//! Every random draw descends from one 64-bit seed. Independent consumers take
//! separate ChaCha streams of that seed, so adding draws to one consumer never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::TsfStack;
use crate::error::{Result, TsfError};

/// Stream ids handed out from a run seed.
pub mod streams {
    pub const NOISE: u64 = 1;
    pub const MLP_INIT: u64 = 2;
    pub const GRADCHECK: u64 = 3;
    pub const FIXTURES: u64 = 4;
}

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Adds i.i.d. Gaussian noise of `sigma_k` kelvin to every pixel of every frame.
pub fn add_gaussian_noise(stack: &mut TsfStack, sigma_k: f64, seed: u64) -> Result<()> {
    if !(sigma_k.is_finite() && sigma_k >= 0.0) {
        return Err(TsfError::invalid(format!("noise sigma must be >= 0, got {sigma_k}")));
    }
    if sigma_k == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma_k).map_err(|e| TsfError::invalid(e.to_string()))?;
    let mut rng = stream(seed, streams::NOISE);
    for frame in &mut stack.frames {
        for v in &mut frame.data {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(())
}

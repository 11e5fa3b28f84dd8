//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 256-bit
//! key is derived from `(master seed, path id, purpose, lane)`. Draws are
//! therefore reproducible bit for bit and independent of the order in which
//! paths, modes or samples are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Brownian increments of one noise mode at the base resolution.
    Increments,
    /// Brownian-bridge midpoints produced when refining to `steps` intervals.
    Bridge { steps: u64 },
    /// Conditional residual of the exact Ornstein-Uhlenbeck transition.
    OuResidual { steps: u64 },
    /// Gaussian coefficients of one gamma-norm Monte Carlo sample.
    Gamma,
    /// Random integrand construction.
    Integrand,
    /// Bootstrap resampling.
    Bootstrap,
    /// Anything else; the tag keeps user streams apart.
    Other(u64),
}

impl Purpose {
    fn code(self) -> (u64, u64) {
        match self {
            Purpose::Increments => (1, 0),
            Purpose::Bridge { steps } => (2, steps),
            Purpose::OuResidual { steps } => (3, steps),
            Purpose::Gamma => (4, 0),
            Purpose::Integrand => (5, 0),
            Purpose::Bootstrap => (6, 0),
            Purpose::Other(tag) => (7, tag),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, path, purpose, lane)`.
pub fn stream(seed: u64, path: u64, purpose: Purpose, lane: u64) -> ChaCha8Rng {
    let (kind, extra) = purpose.code();
    let mut state = seed;
    let mut key = [0u8; 32];
    // absorb each word before squeezing so that every input affects every byte
    for word in [path, kind, extra, lane] {
        state ^= splitmix64(&mut state.wrapping_add(word));
        state = state.wrapping_add(word.rotate_left(17));
        splitmix64(&mut state);
    }
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw.
#[inline]
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

//! Seed derivation for reproducible, schedule-independent random streams.
//!
//! Every Monte Carlo trial gets its own sub-seed `trial_seed(seed, t)`.
//! Inside a trial, each kind of randomness (design rows, response noise,
//! projections, ...) is drawn from a separate ChaCha stream keyed by that
//! sub-seed and a fixed [`Purpose`] number. Consequences:
//!
//! * a trial's draws never depend on which thread ran it or in what order;
//! * design rows are generated row-major from their own stream, so the
//!   first `n` rows of an `(n + 1)`-row draw are exactly the `n`-row draw.
//!   This is the common-random-number coupling used for all sweeps over `n`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for trial `trial` of an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ trial.wrapping_mul(GOLDEN_GAMMA).rotate_left(17))
}

/// Independent stream families drawn from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Design = 1,
    Noise = 2,
    Projection = 3,
    Features = 4,
    Subsample = 5,
    Instance = 6,
    Simulation = 7,
}

pub fn rng_for(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

//! Counter-based random streams.
//!
//! Every random draw made by a particle is taken from a generator keyed by
//! `(seed, t, particle index, purpose)`. Results therefore do not depend on
//! how the particle loop is scheduled across threads, and the position of a
//! run in its random sequence is fully described by the seed and the time
//! index.

use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

/// Generator handed to per-particle sampling code.
pub type ParticleRng = Pcg64;

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Initial = 1,
    Mutation = 2,
    Backward = 3,
    Simulation = 4,
    Auxiliary = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Root seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        StreamSeed(seed)
    }

    /// Independent generator for `(t, index, purpose)`.
    pub fn substream(&self, t: u64, index: u64, purpose: Purpose) -> ParticleRng {
        let a = splitmix64(self.0 ^ splitmix64(purpose as u64));
        let b = splitmix64(a ^ splitmix64(t.wrapping_mul(0xd6e8_feb8_6659_fd93)));
        let c = splitmix64(b ^ index);
        let state = ((b as u128) << 64) | c as u128;
        let stream = ((index as u128) << 8) | purpose as u128;
        Pcg64::new(state, stream)
    }

    /// Sequential generator for whole-run use (data simulation, start points).
    pub fn sequential(&self, purpose: Purpose) -> ParticleRng {
        Pcg64::seed_from_u64(splitmix64(self.0 ^ splitmix64(purpose as u64 + 0x51)))
    }

    /// Seed of replicate `r`, derived as `seed + r`.
    pub fn replicate(&self, r: u64) -> StreamSeed {
        StreamSeed(self.0.wrapping_add(r))
    }
}

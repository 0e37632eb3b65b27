//! Deterministic seed derivation.
//!
//! All randomness flows from one master seed. Sub-seeds are derived by
//! hashing the master seed with a stage tag and indices through SplitMix64,
//! so a stage's stream does not depend on how many draws other stages made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stage tags used by the pipeline.
pub mod stage {
    pub const TRAIN: u64 = 0x7472_6169_6e00;
    pub const TRANSFER: u64 = 0x7872_6672_0000;
    pub const PAIRS: u64 = 0x7061_6972_7300;
    pub const CLUSTER: u64 = 0x636c_7573_7400;
    pub const OBSERVE: u64 = 0x6f62_7365_7276;
    pub const SWEEP: u64 = 0x7377_6565_7000;
    pub const LEARN: u64 = 0x6c65_6172_6e00;
    pub const SYNTH: u64 = 0x7379_6e74_6800;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

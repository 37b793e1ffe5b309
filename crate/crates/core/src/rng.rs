//! Deterministic stream derivation.
//!
//! Every random draw in the crate comes from a generator seeded by a
//! 64-bit stream key. Keys are derived by hashing `(parent key, index)`
//! pairs with [`mix`], so a sample depends only on the master seed and the
//! path used to reach it, never on processing order.
//!
//! `mix(a, b) = splitmix64(splitmix64(a) ^ (b · 0xD1B54A32D192ED03))`,
//! where `splitmix64` is the SplitMix64 output function.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed 64-bit mixing function for deriving child stream keys.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for a stream key.
#[inline]
pub fn stream(key: u64) -> StreamRng {
    StreamRng::seed_from_u64(key)
}

/// Domain-separation salts.
pub(crate) mod salt {
    pub const ANCESTOR_TYPE: u64 = 0xA11C_E5E5_0000_0001;
    pub const ROOT: u64 = 0x0000_0000_0000_0002;
    pub const ENTRY: u64 = 0xE17E_0000_0000_0003;
    pub const MOMENT: u64 = 0x3031_0000_0000_0004;
}

//! Counter-based seed derivation.
//!
//! Every unit of random work (a replicate, a chain, an EM restart) gets its
//! own generator seeded from a parent seed and a counter, so results do not
//! depend on scheduling.

pub(crate) const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a sequence of counters.
pub fn derive_seed(parent: u64, counters: &[u64]) -> u64 {
    counters.iter().fold(splitmix64(parent), |acc, &c| {
        splitmix64(acc ^ splitmix64(c.wrapping_add(GOLDEN)))
    })
}

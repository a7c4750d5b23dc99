//! Counter-based seed expansion.
//!
//! Every random stream in the crate is derived from one root seed:
//!
//! ```text
//! stream_seed = splitmix64(splitmix64(root ^ fnv1a64(tag)) ^ counter)
//! ```
//!
//! `tag` names the consumer (`"corpus"`, `"weights"`, `"kmeans"`, ...) and
//! `counter` is an item index within it, so regenerating item 17 never requires
//! drawing items 0..16 first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(root: u64, tag: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a64(tag)) ^ counter)
}

pub fn rng_for(root: u64, tag: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, counter))
}

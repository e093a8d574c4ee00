use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a tag so that independent streams (restarts,
/// hidden sizes, group counts) never share a generator state.
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

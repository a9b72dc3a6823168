use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream label into an independent 64-bit seed
/// (splitmix64 finaliser applied to each word).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x5851_F42D_4C95_7F2D);
    for &w in stream {
        h = splitmix(h ^ splitmix(w));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

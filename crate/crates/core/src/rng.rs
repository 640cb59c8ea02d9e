//! Seeded, splittable random source.
//!
//! Every stochastic operation takes an explicit 64-bit seed. Draws come from a
//! ChaCha20 keystream, which is counter based: a generator can be positioned at
//! any word offset, so row `i` of a sample always consumes the same slice of
//! the keystream no matter how rows are split across threads.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Keystream words consumed by one open-interval `f64` draw.
pub const WORDS_PER_UNIFORM: u128 = 2;

/// Stream identifiers keep unrelated consumers of one seed apart.
pub mod streams {
    pub const MLD_SAMPLE: u64 = 1;
    pub const MIXTURE_SAMPLE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const IDENTIFIABILITY: u64 = 4;
    pub const OFFSETS: u64 = 5;
    pub const PROBE: u64 = 6;
}

/// Generator for `(seed, stream)` positioned at keystream word `word`.
pub fn generator_at(seed: u64, stream: u64, word: u128) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word);
    rng
}

/// Generator for `(seed, stream)` at the start of its keystream.
pub fn generator(seed: u64, stream: u64) -> ChaCha20Rng {
    generator_at(seed, stream, 0)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Deterministically derives a child seed from a parent seed and a path of tags
/// (SplitMix64 finalizer applied per tag).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

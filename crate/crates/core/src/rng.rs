//! Counter-based seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived from the run's master seed, a per-purpose stream tag and an index
//! (utterance id, epoch, step ...):
//!
//! ```text
//! seed = mix(mix(master + GOLDEN * (tag + 1)) ^ mix(index + GOLDEN))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer. Streams for distinct
//! `(tag, index)` pairs are statistically independent, and no stream depends
//! on how many numbers another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: Stream, index: u64) -> u64 {
    let base = mix(master.wrapping_add(GOLDEN.wrapping_mul(tag as u64 + 1)));
    mix(base ^ mix(index.wrapping_add(GOLDEN)))
}

pub fn stream(master: u64, tag: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Mixing = 0,
    Speaker = 1,
    Utterance = 2,
    Trials = 3,
    Augment = 4,
    Crop = 5,
    LocalCrop = 6,
    Init = 7,
    HeadInit = 8,
    Shuffle = 9,
    QueueFill = 10,
    KMeans = 11,
    ProtoSample = 12,
    PfnDropout = 13,
    EvalAugment = 14,
    Backend = 15,
}

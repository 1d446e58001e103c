//! Per-component random streams derived from one master seed.
//!
//! Each stream is a pure function of `(master, stream, index)`, so changing
//! how much randomness one component consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    World = 1,
    Dataset = 2,
    Split = 3,
    ModelInit = 4,
    AnswerHeadInit = 5,
    Sampler = 6,
    Contextual = 7,
    Shuffle = 8,
    PretrainCorpus = 9,
    HeldOut = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(((stream as u64) << 40) ^ index))
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, index))
}

//! Named, independent random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed and selected by a
//! fixed stream id, so drawing from one stream never shifts another. A
//! generator's position can be captured and restored exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    InitTheta,
    InitScore,
    DataShuffle,
    Randomize,
    BernoulliR,
    Augment,
    Split,
}

impl Stream {
    pub const ALL: [Stream; 7] = [
        Stream::InitTheta,
        Stream::InitScore,
        Stream::DataShuffle,
        Stream::Randomize,
        Stream::BernoulliR,
        Stream::Augment,
        Stream::Split,
    ];

    pub fn id(self) -> u64 {
        match self {
            Stream::InitTheta => 1,
            Stream::InitScore => 2,
            Stream::DataShuffle => 3,
            Stream::Randomize => 4,
            Stream::BernoulliR => 5,
            Stream::Augment => 6,
            Stream::Split => 7,
        }
    }
}

/// Expands a 64-bit seed into a ChaCha key (splitmix64 finalizer per word).
fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Generator for `stream` of the run keyed by `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_rng(seed, stream.id())
}

/// Generator for an arbitrary numbered sub-stream, e.g. one Monte Carlo trial.
pub fn substream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    rng.set_stream(index);
    rng
}

/// Serializable position of a stream generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = substream_rng(self.seed, self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

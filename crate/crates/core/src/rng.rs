//! Named random substreams expanded from one top-level seed.
//!
//! Every component draws from its own ChaCha8 stream selected by
//! `(tag, index)`, so adding or removing draws in one component never shifts
//! the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Arrivals and task features of one user.
    Workload(u32),
    /// Per-task channel gains of one user.
    Gains(u32),
    /// Weight initialization of one agent.
    AgentInit(u32),
    /// Epsilon-greedy exploration of one agent.
    Exploration(u32),
    /// Replay minibatch sampling of one agent.
    Minibatch(u32),
    /// Actions of the dataset logging policy.
    Logging,
    /// Record sampling for training episodes in dataset mode.
    TrainEpisodes,
    /// Record sampling for evaluation episodes in dataset mode.
    EvalEpisodes,
    /// Actions of the uniform-random control policy.
    RandomPolicy,
}

impl Stream {
    fn id(self) -> u64 {
        let (tag, index) = match self {
            Stream::Workload(i) => (1u64, i),
            Stream::Gains(i) => (2, i),
            Stream::AgentInit(i) => (3, i),
            Stream::Exploration(i) => (4, i),
            Stream::Minibatch(i) => (5, i),
            Stream::Logging => (6, 0),
            Stream::TrainEpisodes => (7, 0),
            Stream::EvalEpisodes => (8, 0),
            Stream::RandomPolicy => (9, 0),
        };
        (tag << 32) | u64::from(index)
    }
}

/// Derives an independent top-level seed for a named run phase (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one episode of `stream`; episodes occupy disjoint blocks of
/// the keystream so any episode can be regenerated on its own.
pub fn episode_rng(seed: u64, stream: Stream, episode: u64) -> SimRng {
    let mut rng = substream(seed, stream);
    rng.set_word_pos(u128::from(episode) << 32);
    rng
}

/// Returns the generator for `stream` under the top-level `seed`.
pub fn substream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Serializable position of a ChaCha8 generator, used by model checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &SimRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> SimRng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! seed and a `(purpose, agent)` pair, so results do not depend on how
//! agents are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    PolicyInit,
    CriticInit,
    Sampler,
    Critic,
    Evaluation,
    Rollout,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::PolicyInit => 0,
            Purpose::CriticInit => 1,
            Purpose::Sampler => 2,
            Purpose::Critic => 3,
            Purpose::Evaluation => 4,
            Purpose::Rollout => 5,
        }
    }
}

/// Independent stream for `purpose` owned by `agent`.
pub fn stream(seed: u64, purpose: Purpose, agent: usize) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((agent as u64) << 8) | purpose.tag());
    rng
}

/// Plain seeded stream, for tests and one-off fixtures.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

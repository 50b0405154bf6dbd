//! Seeded random streams.
//!
//! Every replication draws from its own ChaCha8 stream: the key comes from the
//! base seed and the stream id from the replication index, so replications are
//! independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const ANALYSIS_STREAM_BIT: u64 = 1 << 63;

/// Stream used to simulate replication `index`.
pub fn replication_rng(base_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index & !ANALYSIS_STREAM_BIT);
    rng
}

/// Stream used for Monte Carlo analysis attached to replication `index`.
///
/// Disjoint from [`replication_rng`] so that turning analysis on or off does
/// not perturb the simulated trajectories.
pub fn analysis_rng(base_seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index | ANALYSIS_STREAM_BIT);
    rng
}

/// Stream used to draw the candidate pool of a continuous net.
pub fn net_rng(base_seed: u64) -> SimRng {
    analysis_rng(base_seed, !ANALYSIS_STREAM_BIT)
}

//! Seed splitting.
//!
//! Every random draw in the crate descends from a 64-bit master seed. A
//! consumer that needs an independent generator asks for a numbered stream:
//! the generator is ChaCha8 keyed by `seed_from_u64(master)` with its stream
//! word set to the stream number. Replication `r` of a simulation campaign
//! uses stream `r`, so every replication owns its generator and results do not
//! depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for stream `stream` under `master`.
pub fn stream_rng(master: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

//! Random streams.
//!
//! Every stochastic routine takes a master `seed`. Replica `r` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` with its stream set to `r`, so
//! replicas never overlap and adding replicas leaves existing ones
//! untouched. This rule is part of the output contract.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for replica `replica` of master seed `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

//! Seeded randomness helpers.
//!
//! Everything random in this crate goes through a ChaCha generator seeded
//! explicitly, so any run is reproducible from its `--seed`. Independent
//! work items (candidates, batch items, dataset entries) get their own
//! substream derived from the master seed, which keeps results identical
//! no matter how the work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent substream seed. `stream` tags the purpose
/// (a small fixed constant per call site), `index` the work item.
pub fn substream(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the mixed words; cheap and well dispersed
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

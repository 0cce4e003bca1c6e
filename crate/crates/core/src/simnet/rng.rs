//! Seeded random streams.
//!
//! One root seed drives a whole run. Each entity (a link, a host, the clone
//! manager) draws from its own ChaCha8 stream selected by a stable numeric
//! id, so adding or removing an entity never shifts another entity's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream ids. Links use ids derived from `LINK_BASE`.
pub mod stream {
    pub const ATTACKER: u64 = 1;
    pub const VICTIM: u64 = 2;
    pub const HONEY: u64 = 3;
    pub const CLONE_MANAGER: u64 = 4;
    pub const BACKGROUND: u64 = 5;
    pub const ATTACKER_PAYLOAD: u64 = 6;
    pub const LINK_BASE: u64 = 1 << 16;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    root: u64,
}

impl RngStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(id);
        rng
    }

    /// Root seed for repetition `rep` of an experiment seeded with `root`.
    pub fn derive_seed(root: u64, rep: u64) -> u64 {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(root);
        rng.set_stream(u64::MAX - rep);
        rng.next_u64()
    }
}

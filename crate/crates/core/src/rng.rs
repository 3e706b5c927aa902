//! Per-path random streams.
//!
//! Every path draws from its own ChaCha8 stream selected by
//! `(seed, path_index)`, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type PathRng = ChaCha8Rng;

/// The `(seed, path_index)` pair that identifies a path's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSeed {
    pub seed: u64,
    pub path_index: u64,
}

impl PathSeed {
    pub fn rng(&self) -> PathRng {
        path_rng(self.seed, self.path_index)
    }
}

pub fn path_rng(seed: u64, path_index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = path_rng(5, 3).random();
        let b: u64 = path_rng(5, 3).random();
        let c: u64 = path_rng(5, 4).random();
        let d: u64 = path_rng(6, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}

//! Seeded random streams.
//!
//! Every stochastic draw goes through ChaCha8 keyed only by the 64-bit seed;
//! the stream id separates independent purposes (scalar parameters vs. dense
//! per-pixel fields) so the number of pixels never shifts parameter draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Stream carrying geometry and other scalar parameters.
pub const PARAMS: u64 = 0;
/// Stream carrying per-pixel noise fields.
pub const FIELD: u64 = 1;

pub struct SeededStream(ChaCha8Rng);

impl SeededStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// `+1.0` or `-1.0` with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.0.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn coin(&mut self) -> bool {
        self.0.random::<bool>()
    }
}

/// Per-application seed: a stable hash of the identifiers, independent of
/// image content and of which other samples exist.
pub fn derive_seed(master_seed: u64, dataset_id: &str, sample_id: &str, perturbation_id: &str, level: u8) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for part in [dataset_id, sample_id, perturbation_id] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    h.update([level]);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

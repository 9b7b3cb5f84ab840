//! Counter-based random streams.
//!
//! Every independent unit of Monte Carlo work (a photon, a fading draw, a
//! waveform frame) gets its own ChaCha stream addressed by `(domain, index)`.
//! Results therefore never depend on how work is partitioned across
//! threads or batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains keep unrelated consumers of the same seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Photon = 1,
    Fading = 2,
    Frame = 3,
    History = 4,
    Oracle = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    seed: u64,
}

impl StreamFactory {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `index` within `domain`.
    pub fn stream(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(domain as u64)));
        rng.set_stream(index);
        rng
    }

    /// Child factory, e.g. one per power point of a sweep.
    pub fn child(&self, index: u64) -> StreamFactory {
        StreamFactory::new(splitmix(self.seed.wrapping_add(splitmix(index.wrapping_add(0x5851_f42d)))))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

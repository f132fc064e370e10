//! Named, reproducible random streams.
//!
//! Every stochastic concern (deployment, mobility, provider selection, copy
//! movement, queries) draws from its own stream so that changing one concern
//! leaves the others untouched. A stream is keyed by `(seed, label,
//! run_index)` and may be split further into numbered substreams, one per
//! information copy.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEPLOYMENT: &str = "deployment";
pub const MOBILITY: &str = "mobility";
pub const PROVIDERS: &str = "providers";
pub const POLICY: &str = "policy";
pub const QUERIES: &str = "queries";

#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derives the stream for one stochastic concern of one run.
pub fn derive_stream(seed: u64, label: &str, run_index: u32) -> RngStream {
    let mut key = splitmix64(seed);
    key = splitmix64(key ^ fnv1a(label));
    key = splitmix64(key ^ u64::from(run_index).wrapping_mul(0xd6e8_feb8_6659_fd93));
    RngStream::from_key(key)
}

impl RngStream {
    fn from_key(key: u64) -> Self {
        Self {
            key,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// An independent child stream; the parent's position is irrelevant.
    pub fn substream(&self, id: u64) -> RngStream {
        RngStream::from_key(splitmix64(self.key ^ splitmix64(id.wrapping_add(1))))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draws(mut s: RngStream) -> Vec<u64> {
        (0..16).map(|_| s.random()).collect()
    }

    #[test]
    fn same_key_same_sequence() {
        assert_eq!(
            draws(derive_stream(42, MOBILITY, 0)),
            draws(derive_stream(42, MOBILITY, 0))
        );
    }

    #[test]
    fn labels_separate_streams() {
        assert_ne!(
            draws(derive_stream(42, MOBILITY, 0)),
            draws(derive_stream(42, QUERIES, 0))
        );
    }

    #[test]
    fn runs_separate_streams() {
        assert_ne!(
            draws(derive_stream(42, MOBILITY, 0)),
            draws(derive_stream(42, MOBILITY, 1))
        );
    }

    #[test]
    fn substreams_ignore_parent_progress() {
        let base = derive_stream(7, POLICY, 3);
        let mut advanced = base.clone();
        let _: u64 = advanced.random();
        assert_eq!(draws(base.substream(5)), draws(advanced.substream(5)));
        assert_ne!(draws(base.substream(5)), draws(base.substream(6)));
    }

    #[test]
    fn frozen_first_draw() {
        // Pins the derivation so accidental changes to the mixing show up.
        const FROZEN: u64 = 924_267_277_228_902_571;
        let a: u64 = derive_stream(42, MOBILITY, 0).random();
        assert_eq!(a, FROZEN);
    }
}

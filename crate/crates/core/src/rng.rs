//! Seeded random streams.
//!
//! Every random decision flows from one root seed. Independent consumers
//! (scene generation, posterior sampling, community detection) draw from
//! separate ChaCha streams so that parallel work stays reproducible no matter
//! how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-stream of a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Scene,
    Sample,
    Community,
    Other(u16),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Scene => 1,
            Stream::Sample => 2,
            Stream::Community => 3,
            Stream::Other(t) => 0x100 + t as u64,
        }
    }
}

/// Generator for `stream`, item `index` under `root`.
pub fn stream_rng(root: u64, stream: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    // 16 bits of tag, 48 bits of item index
    rng.set_stream((stream.tag() << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}

/// Plain generator from a seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a child 64-bit seed, e.g. to hand to a component that takes a seed.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(root, stream, index).next_u64()
}

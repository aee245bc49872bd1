//! One master seed fans out to independent ChaCha streams so that features,
//! splits, sampling and initialization can be varied in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Features,
    Split,
    Sampler,
    Init,
    Opnorm,
    Structure,
    Validation,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Features => 1,
            Stream::Split => 2,
            Stream::Sampler => 3,
            Stream::Init => 4,
            Stream::Opnorm => 5,
            Stream::Structure => 6,
            Stream::Validation => 7,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Deterministic 64-bit seed for a stream, for APIs that take a plain seed.
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream).next_u64()
}

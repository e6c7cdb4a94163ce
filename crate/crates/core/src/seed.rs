//! Named, independent random substreams derived from one user seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Synth = 3,
    Split = 4,
}

/// Seed of substream `stream` under `seed`.
pub fn substream(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let all = [Stream::Init, Stream::Shuffle, Stream::Synth, Stream::Split].map(|s| substream(7, s));
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(substream(7, Stream::Init), substream(7, Stream::Init));
        assert_ne!(substream(7, Stream::Init), substream(8, Stream::Init));
    }
}

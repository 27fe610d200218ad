use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic streams derived from one user seed, so that
/// changing how many draws one consumer makes never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stream {
    WordInit = 1,
    TopicInit = 2,
    EncoderInit = 3,
    Shuffle = 4,
    Noise = 5,
    Split = 6,
    Svm = 7,
    Synthetic = 8,
}

pub(crate) fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

//! Seed plumbing. Every random consumer draws from its own ChaCha stream
//! derived from one root seed, so adding draws in one module never shifts
//! another module's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Synth = 1,
    Corruption = 2,
    Split = 3,
    Balance = 4,
    Init = 5,
    Shuffle = 6,
    Dropout = 7,
    Stage1 = 8,
    Stage2 = 9,
}

/// Independent generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Child seed for nested components (e.g. the stage-1 trainer inside a pipeline).
pub fn child_seed(seed: u64, stream: Stream) -> u64 {
    use rand::RngCore;
    self::stream(seed, stream).next_u64()
}

//! Independent random streams derived from one experiment seed.
//!
//! Every consumer gets its own ChaCha stream, so diagnostics, head growth
//! and rehearsal selection never shift the training draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Head(usize),
    Train(usize),
    Rehearsal(usize),
    /// New-class sets of the controlled study.
    Controlled,
    /// Bootstrap resampling during analysis.
    Bootstrap,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Controlled => 2,
            Stream::Bootstrap => 3,
            Stream::Head(m) => 100 + m as u64,
            Stream::Train(m) => 200 + m as u64,
            Stream::Rehearsal(m) => 300 + m as u64,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

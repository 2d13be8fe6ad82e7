//! Seeded random streams.
//!
//! A run has one master seed. Every consumer asks for a stream by a fixed
//! purpose and counter (for example, dropout at epoch 17), so the values a
//! consumer sees depend only on the seed and on the order of its own calls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Dropout,
    Synthetic,
    GradCheck,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Dropout => 2,
            Purpose::Synthetic => 3,
            Purpose::GradCheck => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent ChaCha stream for `(purpose, counter)`.
    pub fn stream(&self, purpose: Purpose, counter: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(purpose.tag() << 48 | (counter & 0xFFFF_FFFF_FFFF));
        rng
    }
}

/// Uniform draw from `[-bound, bound]`.
pub fn uniform_symmetric<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * bound
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = SeedStreams::new(7);
        let a: u64 = s.stream(Purpose::Dropout, 3).random();
        let b: u64 = s.stream(Purpose::Dropout, 3).random();
        let c: u64 = s.stream(Purpose::Dropout, 4).random();
        let d: u64 = s.stream(Purpose::Init, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let e: u64 = SeedStreams::new(8).stream(Purpose::Dropout, 3).random();
        assert_ne!(a, e);
    }
}

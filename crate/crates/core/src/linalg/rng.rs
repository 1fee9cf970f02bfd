use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named RNG streams. Each purpose draws from its own ChaCha stream so that
/// adding draws in one place never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Rollout = 2,
    Omega = 3,
    Subsample = 4,
    Eval = 5,
    ValueInit = 6,
}

/// Reproducible counter-based generator keyed by `(seed, stream)`.
///
/// Not `Sync`-shared: each consumer owns its stream.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        Self::new(seed, stream as u64)
    }

    /// A fresh generator on another stream of the same seed.
    pub fn split(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = SeededRng::new(42, 7);
        let mut b = SeededRng::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = SeededRng::new(42, 1);
        let mut b = SeededRng::new(42, 2);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    // Pinned output: catches silent changes in the generator stack.
    #[test]
    fn first_draw_is_pinned() {
        // Guards against silent changes in the generator or its seeding,
        // which would invalidate recorded runs.
        let mut a = SeededRng::new(0, 0);
        assert_eq!(a.next_u64(), 13_080_132_717_333_068_652);
    }
}

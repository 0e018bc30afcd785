//! Reproducible random substreams.
//!
//! A stream is a ChaCha8 generator keyed by a master seed and selected by a
//! 64-bit stream id, so every path owns an independent sequence no matter how
//! paths are scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Lanes separate independent uses of the same path index.
pub mod lane {
    pub const PATH: u16 = 0;
    pub const COUPLING_SHARED: u16 = 1;
    pub const COUPLING_OWN_X: u16 = 2;
    pub const COUPLING_OWN_Y: u16 = 3;
    pub const BOOTSTRAP: u16 = 4;
    pub const PROBES: u16 = 5;
    pub const DIRECTIONS: u16 = 6;
    pub const AUX: u16 = 7;
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    /// Stream for path `index` within `lane`.
    pub fn for_path(seed: u64, lane: u16, index: u64) -> Self {
        debug_assert!(index < (1u64 << 48));
        Self::new(seed, ((lane as u64) << 48) | index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Uniform point on the unit sphere of dimension `out.len()`.
    pub fn unit_vector(&mut self, out: &mut [f64]) {
        loop {
            self.fill_normal(out);
            let n2: f64 = out.iter().map(|v| v * v).sum();
            if n2 > 1e-300 {
                let inv = 1.0 / libm::sqrt(n2);
                out.iter_mut().for_each(|v| *v *= inv);
                return;
            }
        }
    }
}

impl RngCore for RngStream {
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
    use alloc::vec::Vec;

    #[test]
    fn same_key_same_draws() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::for_path(7, lane::PATH, 0);
        let mut b = RngStream::for_path(7, lane::PATH, 1);
        let mut c = RngStream::for_path(7, lane::BOOTSTRAP, 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && x != z && y != z);
    }

    #[test]
    fn unit_vectors_are_unit() {
        let mut r = RngStream::new(1, 0);
        let mut v = [0.0; 5];
        for _ in 0..100 {
            r.unit_vector(&mut v);
            let n: f64 = v.iter().map(|a| a * a).sum();
            assert!((n - 1.0).abs() < 1e-14);
        }
    }
}

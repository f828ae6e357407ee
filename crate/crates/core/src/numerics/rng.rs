use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Matrix, SequenceBatch};

/// Seeded, platform-independent random stream (ChaCha8).
///
/// Equal seeds give bit-identical `u64` streams on every platform; the float
/// helpers are derived from that stream with fixed arithmetic.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` by rejection, so no modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, self.normal_vec(rows * cols, std)).expect("shape")
    }

    pub fn uniform_batch(&mut self, batch: usize, len: usize, dim: usize, lo: f64, hi: f64) -> SequenceBatch<f64> {
        let data = (0..batch * len * dim)
            .map(|_| self.uniform_range(lo, hi))
            .collect();
        SequenceBatch::from_vec(batch, len, dim, data).expect("shape")
    }

    pub fn normal_batch(&mut self, batch: usize, len: usize, dim: usize, std: f64) -> SequenceBatch<f64> {
        SequenceBatch::from_vec(batch, len, dim, self.normal_vec(batch * len * dim, std))
            .expect("shape")
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child stream, e.g. one per experiment in a sweep.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Rng::new(1).next_u64(), Rng::new(2).next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen from the first run; catches any change in generator or seeding.
        let mut r = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
        let mut again = Rng::new(0);
        assert_eq!(first, (0..3).map(|_| again.next_u64()).collect::<Vec<_>>());
        assert_eq!(first, PINNED_SEED0.to_vec());
    }

    const PINNED_SEED0: [u64; 3] = [13080132717333068652, 8594738769458413623, 12896916468484187878];

    #[test]
    fn uniform_and_below_ranges() {
        let mut r = Rng::new(5);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(9);
        let xs = r.normal_vec(200_000, 1.0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }
}

use rand::{seq::SliceRandom, Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded deterministic generator.
///
/// Backed by ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
/// `SeedableRng::seed_from_u64`. ChaCha output is defined by its algorithm,
/// not by the platform, so a seed reproduces the same stream everywhere.
/// Normal deviates use `rand_distr::StandardNormal` (ziggurat).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Independent child stream, e.g. one per sweep worker.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_prefixes() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen from ChaCha8 seeded with 1; catches accidental algorithm swaps.
        let mut r = Rng::new(1);
        assert_eq!(r.next_u64(), 7424550030962593201);
        assert_eq!(r.uniform(), 0.08038370892978197);
    }

    #[test]
    fn uniform_range_bounds() {
        let mut r = Rng::new(3);
        for _ in 0..1000 {
            let x = r.uniform_range(-2.0, 5.0);
            assert!((-2.0..5.0).contains(&x));
        }
    }
}

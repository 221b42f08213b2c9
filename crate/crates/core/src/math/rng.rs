use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Label separating independent random consumers that share one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Env,
    Init,
    Exploration,
    Sampler,
    TargetNoise,
    Evaluation,
    Custom(u64),
}

impl StreamId {
    fn word(self) -> u64 {
        match self {
            StreamId::Env => 1,
            StreamId::Init => 2,
            StreamId::Exploration => 3,
            StreamId::Sampler => 4,
            StreamId::TargetNoise => 5,
            StreamId::Evaluation => 6,
            StreamId::Custom(x) => 0x1000_0000_0000_0000 ^ x,
        }
    }
}

/// Seeded, counter-based random stream (ChaCha8 keyed by the seed, with the
/// stream id selecting the ChaCha stream). Output is platform independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.word());
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_first_draws() {
        let mut rng = RngStream::new(42, StreamId::Init);
        let draws: Vec<u64> = (0..8).map(|_| rng.next_u64()).collect();
        assert_eq!(draws, GOLDEN_SEED42_INIT);
    }

    // Frozen from the first run of this generator; any change means a
    // reproducibility break across builds or platforms.
    const GOLDEN_SEED42_INIT: [u64; 8] = [
        3387013202841124863,
        5429970460375864106,
        9489484665486938265,
        2226375321719851060,
        5055033038776883702,
        8685647084334100899,
        10122840431666066356,
        5515816376222791339,
    ];

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = RngStream::new(7, StreamId::Env);
        let mut b = RngStream::new(7, StreamId::Env);
        let mut c = RngStream::new(7, StreamId::Sampler);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn ranges() {
        let mut rng = RngStream::new(1, StreamId::Custom(9));
        for _ in 0..1000 {
            let u = rng.uniform_range(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&u));
            assert!(rng.below(5) < 5);
        }
    }
}

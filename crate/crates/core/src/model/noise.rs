use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform draws are clamped to `[UNIFORM_CLAMP, 1 − UNIFORM_CLAMP]` before the double log.
pub const UNIFORM_CLAMP: f64 = 1e-10;

/// `−ln(−ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// Supplies standard Gumbel noise for train-mode quantization.
pub trait NoiseSource {
    fn gumbel(&mut self, n: usize) -> Vec<f64>;
}

/// Fresh Gumbel noise from an RNG.
pub struct GumbelSampler<R> {
    rng: R,
}

impl<R: Rng> GumbelSampler<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

impl<R: Rng> NoiseSource for GumbelSampler<R> {
    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| gumbel_from_uniform(self.rng.random::<f64>()))
            .collect()
    }
}

impl<N: NoiseSource + ?Sized> NoiseSource for &mut N {
    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        (**self).gumbel(n)
    }
}

/// Replayable noise: after [`FrozenNoise::rewind`] the same sequence of
/// requests receives the same values. Used to differentiate through a
/// train-mode forward pass with the noise held fixed.
pub struct FrozenNoise {
    rng: ChaCha8Rng,
    buf: Vec<f64>,
    pos: usize,
}

impl FrozenNoise {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            buf: Vec::new(),
            pos: 0,
        }
    }

    pub fn rewind(&mut self) {
        self.pos = 0;
    }
}

impl NoiseSource for FrozenNoise {
    fn gumbel(&mut self, n: usize) -> Vec<f64> {
        while self.buf.len() < self.pos + n {
            let u = self.rng.random::<f64>();
            self.buf.push(gumbel_from_uniform(u));
        }
        let out = self.buf[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_extremes_are_finite() {
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
        assert!((gumbel_from_uniform(0.0) - (-(-(1e-10f64).ln()).ln())).abs() < 1e-12);
    }

    #[test]
    fn frozen_noise_replays() {
        let mut n = FrozenNoise::new(9);
        let a = n.gumbel(5);
        let b = n.gumbel(3);
        n.rewind();
        assert_eq!(n.gumbel(5), a);
        assert_eq!(n.gumbel(3), b);
        assert_ne!(a[..3], b[..]);
    }

    #[test]
    fn gumbel_mean_is_euler_gamma() {
        let mut s = GumbelSampler::new(ChaCha8Rng::seed_from_u64(2));
        let v = s.gumbel(200_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "{mean}");
    }
}

//! Portable counter-based random number generator.
//!
//! Every stochastic piece of the crate (data synthesis, weight init,
//! shuffling) draws from this generator so that a master seed produces
//! bit-identical streams on any platform: the core is SplitMix64 applied
//! to a 64-bit counter, pure integer arithmetic plus IEEE-754 doubles.

/// Counter-based RNG: `value(i) = mix(key + i * GOLDEN)`.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { key: mix(seed ^ GOLDEN), counter: 0 }
    }

    /// Independent stream derived from this generator's seed and a tag.
    /// Derivation is position-independent: it does not disturb or depend on
    /// `self`'s counter.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng { key: mix(self.key ^ tag.wrapping_mul(GOLDEN)), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` (n > 0), by rejection-free scaling.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box-Muller (consumes two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn fill_uniform(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.range(lo, hi)).collect()
    }

    pub fn fill_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

//! Deterministic random number generation with explicitly serializable state.
//!
//! Every stochastic component of the crate draws from this generator so that
//! checkpoints can capture and restore the exact stream position. The core is
//! xoshiro256++ seeded through splitmix64; distribution transforms (normal,
//! Cauchy) are stateless functions of the uniform stream, so the four state
//! words are the entire RNG state.

/// xoshiro256++ generator with helpers for the distributions used here.
#[derive(Clone, Debug, PartialEq)]
pub struct Rng {
    state: [u64; 4],
}

fn splitmix64(seed: &mut u64) -> u64 {
    *seed = seed.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *seed;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    /// Seed deterministically from a single word.
    pub fn seeded(seed: u64) -> Self {
        let mut s = seed;
        let mut state = [0u64; 4];
        for word in &mut state {
            *word = splitmix64(&mut s);
        }
        // splitmix64 cannot produce four zero words from any seed, but keep
        // the generator total anyway.
        if state == [0; 4] {
            state[0] = 1;
        }
        Rng { state }
    }

    /// Derive an independent child stream, advancing this stream by one draw.
    pub fn fork(&mut self) -> Rng {
        Rng::seeded(self.next_u64())
    }

    /// Raw state words, for checkpointing.
    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    /// Rebuild a generator at an exact stream position.
    pub fn from_state(state: [u64; 4]) -> Self {
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_usize: empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// One standard normal draw (Box-Muller, second value discarded).
    pub fn normal(&mut self) -> f64 {
        let (z0, _z1) = self.normal_pair();
        z0
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fill a buffer with standard normal draws, consuming whole pairs.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.normal_pair();
            out[i] = a;
            out[i + 1] = b;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.normal();
        }
    }

    /// One standard Cauchy(0, 1) draw via the inverse CDF.
    pub fn cauchy(&mut self) -> f64 {
        let u = self.uniform();
        (std::f64::consts::PI * (u - 0.5)).tan()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.uniform_usize(i + 1);
            slice.swap(i, j);
        }
    }
}

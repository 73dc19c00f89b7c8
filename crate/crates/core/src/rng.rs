//! Counter-based pseudo-random generator used by every sampler in the crate.
//!
//! The stream is fully specified here so that it can be reproduced bit-for-bit
//! in any language:
//!
//! ```text
//! GAMMA = 0x9E3779B97F4A7C15
//! mix(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9     (wrapping)
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB     (wrapping)
//!     return z ^ (z >> 31)
//!
//! new(seed):   key = mix(seed + 0x243F6A8885A308D3), counter = 0
//! next_u64():  counter += 1; return mix(key + counter * GAMMA)
//! uniform():   (next_u64() >> 11) * 2^-53                 in [0, 1)
//! open01():    ((next_u64() >> 11) + 1) * 2^-53           in (0, 1]
//! normal():    Box–Muller on (u1 = open01(), u2 = uniform()):
//!                  r = sqrt(-2 ln u1), θ = 2π u2
//!                  return r cos θ, cache r sin θ for the next call
//! substream(seed, i) = mix(seed ^ mix(i + GAMMA))     seed of the i-th shard
//! ```
//!
//! All arithmetic on u64 is wrapping.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x243F_6A88_85A3_08D3;
const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th independent substream of `seed`.
#[inline]
pub fn substream(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(GAMMA)))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed.wrapping_add(SEED_SALT)),
            counter: 0,
            spare_normal: None,
        }
    }

    /// Number of 64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    #[inline]
    pub fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.open01();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}

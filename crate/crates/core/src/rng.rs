//! Counter-based, splittable random stream.
//!
//! Output `i` of a stream is `mix(key + (i + 1) * GAMMA)`, so any draw can be
//! located without replaying earlier ones, and `split(n)` derives an
//! independent child key. Per-record streams make parallel generation
//! produce exactly the serial output.

use rand_core::{impls, RngCore};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix(seed ^ 0x5EED_0F0E_C0DE_D47A),
            counter: 0,
        }
    }

    /// The seed of the root stream this one descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream number `stream`.
    pub fn split(&self, stream: u64) -> Self {
        Self {
            seed: self.seed,
            key: mix(self.key
                ^ mix(stream
                    .wrapping_mul(GAMMA)
                    .wrapping_add(0xD1B5_4A32_D192_ED03))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_raw(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_raw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_raw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_raw()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        impls::fill_bytes_via_next(self, dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

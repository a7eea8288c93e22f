//! Counter-based random streams.
//!
//! Every random decision in the renderer draws from a stream keyed by
//! `(seed, sequence id)`; the sequence id is built by folding in the pixel,
//! frame, depth, path lineage and purpose. Output depends only on the key
//! and the draw index, so the order in which wavefront stages or workers
//! visit paths never changes the sample sequence.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold `value` into a running hash.
#[inline]
pub fn hash_combine(h: u64, value: u64) -> u64 {
    mix64(h ^ mix64(value.wrapping_add(GOLDEN)))
}

/// Purpose tags keep streams for different decisions at the same vertex apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Camera = 1,
    Rrs = 2,
    Bsdf = 3,
    Light = 4,
    Training = 5,
    Simulation = 6,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, sequence: u64) -> Self {
        Self {
            key: hash_combine(mix64(seed ^ 0x5851_F42D_4C95_7F2D), sequence),
            counter: 0,
        }
    }

    /// Stream for one decision on one path vertex.
    pub fn for_path(seed: u64, lineage: u64, depth: u32, purpose: Purpose) -> Self {
        let seq = hash_combine(hash_combine(lineage, depth as u64), purpose as u64);
        Self::new(seed, seq)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 24 bits of precision.
    #[inline]
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_2d(&mut self) -> [f32; 2] {
        [self.next_f32(), self.next_f32()]
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Lineage id of the `index`-th child spawned from `parent`.
pub fn child_lineage(parent: u64, index: u32) -> u64 {
    hash_combine(parent, index as u64 + 1)
}

/// Lineage id of a camera path.
pub fn camera_lineage(frame: u64, pixel: u32) -> u64 {
    hash_combine(hash_combine(0xC0FFEE, frame), pixel as u64)
}

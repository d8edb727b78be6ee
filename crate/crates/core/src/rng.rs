//! Named deterministic random streams.
//!
//! Every episode owns one [`Streams`] value. Each stream is a ChaCha8
//! generator whose 64-bit seed is `splitmix64(episode_seed ^ fnv1a64(name))`,
//! so adding draws to one stream never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over the bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for one stream of one episode.
pub fn stream_seed(episode_seed: u64, name: &str) -> u64 {
    splitmix64(episode_seed ^ fnv1a64(name))
}

/// Episode seed used by the experiment harness.
///
/// Keyed by the cell (task family + disturbance levels), the base seed and
/// the episode index. The policy is deliberately not part of the key, so all
/// policies in a cell face the same layouts and disturbance draws.
pub fn episode_seed(base_seed: u64, cell_key: &str, episode_index: u64) -> u64 {
    let a = splitmix64(base_seed ^ fnv1a64(cell_key));
    splitmix64(a.wrapping_add(episode_index))
}

#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(episode_seed: u64, name: &str) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(stream_seed(episode_seed, name)),
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        p > 0.0 && self.uniform() < p
    }

    /// Unit vector with uniformly distributed direction, via rejection in
    /// the unit disk (no trigonometry).
    pub fn unit_direction(&mut self) -> (f64, f64) {
        loop {
            let x = self.uniform_in(-1.0, 1.0);
            let y = self.uniform_in(-1.0, 1.0);
            let r2 = x * x + y * y;
            if r2 > 1e-6 && r2 <= 1.0 {
                let r = r2.sqrt();
                return (x / r, y / r);
            }
        }
    }
}

/// The world-side streams of one episode. The detector draws from its own
/// `"detector"` stream, owned by the executive.
#[derive(Clone, Debug)]
pub struct Streams {
    pub layout: Stream,
    pub drop: Stream,
    pub pick: Stream,
    pub place_noise: Stream,
    pub injection: Stream,
}

impl Streams {
    pub fn new(episode_seed: u64) -> Self {
        Self {
            layout: Stream::new(episode_seed, "layout"),
            drop: Stream::new(episode_seed, "drop"),
            pick: Stream::new(episode_seed, "pick"),
            place_noise: Stream::new(episode_seed, "place_noise"),
            injection: Stream::new(episode_seed, "injection"),
        }
    }
}

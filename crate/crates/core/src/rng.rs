//! Seeded random streams. Each logical unit of work (a sample block, a
//! path) draws from its own ChaCha stream so results do not depend on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_standard_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

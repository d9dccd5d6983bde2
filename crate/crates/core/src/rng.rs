use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream for `(seed, stream)`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const WINDOWS: u64 = 2;
    pub const SYNTH_FEATURES: u64 = 3;
    pub const SYNTH_PARAMS: u64 = 4;
    pub const SYNTH_NOISE: u64 = 5;
    pub const SWEEP: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator for `(seed, stream)`. Distinct streams under one
/// seed are independent and each is reproducible on its own.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}

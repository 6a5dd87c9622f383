use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        seed ^ splitmix64(stream.wrapping_add(0x9e37_79b9_7f4a_7c15)),
    ))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) mod streams {
    pub const DATASET: u64 = 1;
    pub const TRAIN_ARRIVALS: u64 = 2;
    pub const INFER_ARRIVALS: u64 = 3;
    pub const INFER_SAMPLES: u64 = 4;
    pub const NET_INIT: u64 = 5;
}

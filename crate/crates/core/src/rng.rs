//! Named random streams derived from one base seed.
//!
//! Every consumer of randomness gets its own ChaCha8 stream: the generator is
//! keyed by the 64-bit base seed and the stream id selects an independent
//! keystream (`ChaCha8Rng::set_stream`). Grid cells first derive a cell seed
//! with [`cell_seed`] (SplitMix64 over `base ^ cell-constant`) and then split
//! that seed into the same named streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Training data generation.
    Data,
    /// Validation data generation.
    ValData,
    /// Test data generation.
    TestData,
    /// Train/val/test split shuffling.
    Split,
    /// Parameter initialization.
    Init,
    /// Biased batch sampler.
    SamplerBiased,
    /// Less biased batch sampler.
    SamplerLessBiased,
    /// Auxiliary (biased) model initialization and sampling.
    Auxiliary,
    /// Monte-Carlo probes.
    Probe,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::ValData => 2,
            Stream::TestData => 3,
            Stream::Split => 4,
            Stream::Init => 5,
            Stream::SamplerBiased => 6,
            Stream::SamplerLessBiased => 7,
            Stream::Auxiliary => 8,
            Stream::Probe => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::ValData => "val-data",
            Stream::TestData => "test-data",
            Stream::Split => "split",
            Stream::Init => "init",
            Stream::SamplerBiased => "sampler-b",
            Stream::SamplerLessBiased => "sampler-lb",
            Stream::Auxiliary => "auxiliary",
            Stream::Probe => "probe",
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of grid cell `index` under `base`.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ splitmix64(0xC0FF_EE00 ^ index as u64))
}

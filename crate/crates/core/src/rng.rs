//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! master seed plus a purpose tag and coordinates (round, client, ...), so
//! results do not depend on the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrainData = 1,
    TestData = 2,
    Partition = 3,
    Noise = 4,
    Init = 5,
    ClientSelection = 6,
    LocalUpdate = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a purpose and coordinates into a 64-bit seed.
pub fn derive_seed(master: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, purpose, coords))
}

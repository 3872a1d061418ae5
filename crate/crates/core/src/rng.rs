//! Counter-based random streams.
//!
//! Every Monte Carlo routine draws replica `r` from the ChaCha stream selected
//! by `(master_seed, tag)` as key and `r` as stream id. A replica's draws are a
//! pure function of that triple, so results never depend on how replicas are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Operation tags. Distinct tags give statistically independent stream families
/// under one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Tag {
    Tail = 1,
    Ladder = 2,
    Renewal = 3,
    Spitzer = 4,
    RenewalFunction = 5,
    Harmonic = 6,
    Theta = 7,
    Environment = 8,
    LadderWeights = 9,
    Misc = 10,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Factory for the replica streams of one (seed, tag) pair.
#[derive(Clone, Debug)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(master_seed: u64, tag: Tag) -> Self {
        Self::with_salt(master_seed, tag, 0)
    }

    /// Like [`Streams::new`] with an extra salt, for operations that need several
    /// independent families (e.g. one per grid point).
    pub fn with_salt(master_seed: u64, tag: Tag, salt: u64) -> Self {
        let mut state = master_seed ^ (tag as u64).rotate_left(32) ^ salt.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Streams { key }
    }

    pub fn stream(&self, index: u64) -> SimRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}

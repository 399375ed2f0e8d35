//! Counter-based seed derivation.
//!
//! Every random draw in a simulation is keyed by `(master, purpose, round,
//! index)` and mixed through SplitMix64, so results do not depend on the
//! order in which independent work items execute.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialDecoder = 1,
    WarmupTraining = 2,
    LocalTraining = 3,
    Exchange = 4,
    Backbone = 5,
    Concept = 6,
    DomainData = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, round: u64, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for word in [purpose as u64, round, index] {
        h = splitmix64(h ^ word);
    }
    h
}

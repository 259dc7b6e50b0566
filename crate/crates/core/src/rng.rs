//! Deterministic, purpose-keyed random streams.
//!
//! Every random quantity in a simulation is drawn from a stream keyed by
//! `(seed, snapshot_id, purpose)`. Streams are independent of each other and
//! of evaluation order, so snapshots can be generated in parallel and still
//! reproduce bit-exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Each purpose gets its own generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// User drop positions.
    UserPositions,
    /// Shadow fading draws, one per AP-user pair.
    Shadowing,
    /// Small-scale channel realization `r`.
    Channel(u64),
    /// Pilot-phase receiver noise for realization `r`.
    PilotNoise(u64),
    /// Task sizes and compute budgets.
    Tasks,
    /// Shuffling of the user processing order in cluster formation.
    ClusterOrder,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::UserPositions => 0x55,
            StreamKind::Shadowing => 0x5d,
            StreamKind::Channel(r) => 0xc0 ^ (r << 8),
            StreamKind::PilotNoise(r) => 0xb1 ^ (r << 8),
            StreamKind::Tasks => 0x7a,
            StreamKind::ClusterOrder => 0xe3,
        }
    }
}

/// SplitMix64 finalizer; decorrelates nearby keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Build the generator for `(seed, snapshot_id, kind)`.
pub fn stream(seed: u64, snapshot_id: u64, kind: StreamKind) -> ChaCha8Rng {
    let key = mix(mix(seed) ^ mix(snapshot_id.wrapping_mul(0x9e37_79b9)) ^ mix(kind.tag()));
    ChaCha8Rng::seed_from_u64(key)
}

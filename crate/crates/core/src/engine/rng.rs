use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::NodeId;

/// Keys for independent random substreams forked from one run seed.
///
/// Each key maps to a distinct ChaCha stream, so extra draws on one stream
/// never shift another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKey {
    Backoff(NodeId),
    Reception(NodeId),
    Fading { from: NodeId, to: NodeId },
    Topology { attempt: u32 },
    MonteCarlo { block: u64 },
}

impl StreamKey {
    fn stream_id(self) -> u64 {
        const SHIFT: u32 = 56;
        let pack = |a: NodeId, b: NodeId| ((a.0 as u64) << 28) | b.0 as u64;
        match self {
            StreamKey::Backoff(n) => (1 << SHIFT) | n.0 as u64,
            StreamKey::Reception(n) => (2 << SHIFT) | n.0 as u64,
            StreamKey::Fading { from, to } => (3 << SHIFT) | pack(from, to),
            StreamKey::Topology { attempt } => (4 << SHIFT) | attempt as u64,
            StreamKey::MonteCarlo { block } => (5 << SHIFT) | (block & ((1 << SHIFT) - 1)),
        }
    }
}

/// Derives keyed substreams from a single run seed.
#[derive(Clone, Copy, Debug)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory { seed }
    }

    pub fn stream(&self, key: StreamKey) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key.stream_id());
        rng
    }
}

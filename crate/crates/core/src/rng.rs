//! Named random sub-streams derived from one root seed.
//!
//! Every consumer of randomness asks for a stream by purpose and a path of
//! indices (epoch, step, record, ...). Streams never share state, so any
//! component can be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Init,
    Gumbel,
    GtSampling,
    Shuffle,
    Augment,
    Eval,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Init => 0x696e_6974,
            Stream::Gumbel => 0x6775_6d62,
            Stream::GtSampling => 0x6774_736d,
            Stream::Shuffle => 0x7368_7566,
            Stream::Augment => 0x6175_676d,
            Stream::Eval => 0x6576_616c,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub root: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn derive(&self, stream: Stream, path: &[u64]) -> u64 {
        let mut h = splitmix(self.root ^ splitmix(stream.tag()));
        for &p in path {
            h = splitmix(h ^ p.wrapping_mul(0x2545_f491_4f6c_dd1d));
        }
        h
    }

    pub fn rng(&self, stream: Stream, path: &[u64]) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(stream, path))
    }
}

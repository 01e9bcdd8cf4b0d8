//! Splittable deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A `(seed, stream)` pair naming an independent ChaCha8 sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SplitRng {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    /// Child stream derived from this one; distinct ids give distinct streams.
    pub fn child(self, id: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix(self.stream ^ splitmix(id.wrapping_add(1))),
        }
    }

    /// Child stream keyed by a label, e.g. a pipeline stage name.
    pub fn named(self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        self.child(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_pair_same_sequence() {
        let a: Vec<u64> = (0..8).map({
            let mut r = SplitRng::new(7).child(3).rng();
            move |_| r.next_u64()
        }).collect();
        let mut r = SplitRng::new(7).child(3).rng();
        let b: Vec<u64> = (0..8).map(|_| r.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn children_differ() {
        let base = SplitRng::new(1);
        assert_ne!(base.child(0).rng().next_u64(), base.child(1).rng().next_u64());
        assert_ne!(base.named("data").stream, base.named("train").stream);
    }

    #[test]
    fn thread_count_does_not_matter() {
        use rayon::prelude::*;
        let serial: Vec<u64> = (0..64).map(|i| SplitRng::new(5).child(i).rng().next_u64()).collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let parallel: Vec<u64> =
            pool.install(|| (0..64u64).into_par_iter().map(|i| SplitRng::new(5).child(i).rng().next_u64()).collect());
        assert_eq!(serial, parallel);
    }
}

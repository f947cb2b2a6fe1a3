//! Splittable, counter-based random streams.
//!
//! A [`RandomSource`] is identified by a master seed and a path of split
//! labels. The pair is hashed into a ChaCha key, so the same `(seed, path)`
//! always yields the same stream and sibling paths yield unrelated streams.
//! Because ChaCha is a counter-mode generator, any fixed-width slice of a
//! stream can be regenerated in isolation by seeking the word position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream type handed out by [`RandomSource::stream`].
pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn a textual label into a split label.
pub fn label(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RandomSource {
    seed: u64,
    path: Vec<u64>,
    // Two independent 64-bit chains, absorbed label by label.
    state: [u64; 2],
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            path: Vec::new(),
            state: [splitmix(seed), splitmix(seed ^ 0x5851_f42d_4c95_7f2d)],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream for `label`. Children of distinct labels are independent.
    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        RandomSource {
            seed: self.seed,
            path,
            state: [
                splitmix(self.state[0] ^ splitmix(label)),
                splitmix(self.state[1].rotate_left(17) ^ splitmix(!label)),
            ],
        }
    }

    pub fn child_named(&self, name: &str) -> Self {
        self.child(label(name))
    }

    /// Follows a whole path of labels from this source.
    pub fn derive(&self, labels: &[u64]) -> Self {
        labels.iter().fold(self.clone(), |src, &l| src.child(l))
    }

    /// A fresh generator positioned at the start of this source's stream.
    pub fn stream(&self) -> Stream {
        let mut key = [0u8; 32];
        let words = [
            self.state[0],
            self.state[1],
            splitmix(self.state[0] ^ self.state[1]),
            splitmix(self.state[1].wrapping_add(self.state[0].rotate_left(32))),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// The stream seeked to the `block`-th slice of `words_per_block` 32-bit
    /// words. Consumers that draw a fixed number of words per item can
    /// regenerate item `block` without replaying the items before it.
    pub fn stream_at(&self, block: u64, words_per_block: u64) -> Stream {
        let mut rng = self.stream();
        rng.set_word_pos(u128::from(block) * u128::from(words_per_block));
        rng
    }
}

/// Uniform index in `0..n` from one 64-bit word (multiply-high reduction).
/// The bias is at most `n / 2^64`, far below anything the statistical
/// checks in this crate can resolve, and it keeps word consumption fixed.
#[inline]
pub fn index_from_word(word: u64, n: usize) -> usize {
    ((u128::from(word) * n as u128) >> 64) as usize
}

/// Uniform `f64` in `[0, 1)` from one 64-bit word.
#[inline]
pub fn unit_from_word(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_path_same_stream() {
        let a = RandomSource::new(7).child(1).child(2);
        let b = RandomSource::new(7).derive(&[1, 2]);
        assert_eq!(a, b);
        let (mut ra, mut rb) = (a.stream(), b.stream());
        for _ in 0..8 {
            assert_eq!(ra.next_u64(), rb.next_u64());
        }
    }

    #[test]
    fn distinct_paths_differ() {
        let root = RandomSource::new(7);
        let mut a = root.child(1).stream();
        let mut b = root.child(2).stream();
        let mut c = RandomSource::new(8).child(1).stream();
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        // Order of labels matters.
        assert_ne!(root.derive(&[1, 2]), root.derive(&[2, 1]));
    }

    #[test]
    fn seeking_reproduces_a_block() {
        let src = RandomSource::new(3).child_named("votes");
        let mut seq = src.stream();
        let all: Vec<u64> = (0..20).map(|_| seq.next_u64()).collect();
        // four 32-bit words per block = two u64 draws
        let mut at = src.stream_at(5, 4);
        assert_eq!(at.next_u64(), all[10]);
        assert_eq!(at.next_u64(), all[11]);
    }

    #[test]
    fn word_reductions_stay_in_range() {
        assert_eq!(index_from_word(u64::MAX, 10), 9);
        assert_eq!(index_from_word(0, 10), 0);
        assert!(unit_from_word(u64::MAX) < 1.0);
        assert_eq!(unit_from_word(0), 0.0);
    }
}

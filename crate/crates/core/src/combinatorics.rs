//! Exhaustive enumeration of subsets and tuples, used by every exact oracle.

/// `C(n, k)` as `u128`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// `base^exp` as `u128`, saturating.
pub fn power(base: usize, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
    }
    acc
}

/// Calls `f` on every `w`-subset of `0..n`, each listed in increasing order,
/// in lexicographic order.
pub fn for_each_subset(n: usize, w: usize, mut f: impl FnMut(&[usize])) {
    if w > n {
        return;
    }
    let mut idx: Vec<usize> = (0..w).collect();
    loop {
        f(&idx);
        // rightmost position that can still advance
        let mut i = w;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - w + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..w {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Calls `f` on every ordered tuple in `(0..m)^w`.
pub fn for_each_tuple(m: usize, w: usize, mut f: impl FnMut(&[usize])) {
    if m == 0 && w > 0 {
        return;
    }
    let mut idx = vec![0usize; w];
    loop {
        f(&idx);
        let mut i = w;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < m {
                break;
            }
            idx[i] = 0;
        }
    }
}


/// Repeated uniform draws of `w` distinct positions out of `0..n` by partial
/// Fisher-Yates. The permutation buffer is never reset: after a partial
/// shuffle it is still a permutation, so each draw costs O(w) once the O(n)
/// buffer exists.
#[derive(Clone, Debug)]
pub struct Subsampler {
    perm: Vec<usize>,
}

impl Subsampler {
    pub fn new(n: usize) -> Self {
        Subsampler {
            perm: (0..n).collect(),
        }
    }

    pub fn population(&self) -> usize {
        self.perm.len()
    }

    /// Draws a uniform `w`-subset; the returned slice is in random order.
    pub fn draw<R: rand::Rng + ?Sized>(&mut self, w: usize, rng: &mut R) -> &[usize] {
        let n = self.perm.len();
        assert!(w <= n, "subset size {w} exceeds population {n}");
        for i in 0..w {
            let j = rng.gen_range(i..n);
            self.perm.swap(i, j);
        }
        &self.perm[..w]
    }

    /// Like [`Subsampler::draw`] but copies the subset into `out` sorted
    /// increasingly, which is the order evaluators see subsets in.
    pub fn draw_sorted<R: rand::Rng + ?Sized>(&mut self, w: usize, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        out.extend_from_slice(self.draw(w, rng));
        out.sort_unstable();
    }
}

//! Antisymmetric p-tuple bases: strictly increasing orbital tuples in
//! lexicographic order, as used for the rows and columns of RDMs.

use std::collections::HashMap;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Strictly increasing p-tuples of orbitals in `0..r`, lexicographically ordered.
#[derive(Debug, Clone)]
pub struct TupleBasis {
    r: usize,
    p: usize,
    tuples: Vec<Vec<usize>>,
    index: HashMap<u32, usize>,
}

impl TupleBasis {
    pub fn new(r: usize, p: usize) -> Self {
        let mut tuples = Vec::with_capacity(binomial(r, p));
        let mut current = Vec::with_capacity(p);
        push_tuples(r, p, 0, &mut current, &mut tuples);
        let index = tuples
            .iter()
            .enumerate()
            .map(|(i, t)| (mask_of(t), i))
            .collect();
        TupleBasis { r, p, tuples, index }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuple(&self, i: usize) -> &[usize] {
        &self.tuples[i]
    }

    pub fn tuples(&self) -> &[Vec<usize>] {
        &self.tuples
    }

    /// Index of the tuple whose orbitals are the set bits of `mask`.
    pub fn index_of_mask(&self, mask: u32) -> Option<usize> {
        self.index.get(&mask).copied()
    }

    /// Index of an increasing tuple.
    pub fn index_of(&self, tuple: &[usize]) -> Option<usize> {
        if tuple.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        self.index_of_mask(mask_of(tuple))
    }

    /// Index and permutation sign of an arbitrary (unsorted) tuple of distinct
    /// orbitals; `None` when an orbital repeats.
    pub fn signed_index(&self, tuple: &[usize]) -> Option<(usize, f64)> {
        let mut sorted = tuple.to_vec();
        let mut sign = 1.0;
        // insertion sort, counting transpositions
        for i in 1..sorted.len() {
            let mut j = i;
            while j > 0 && sorted[j - 1] > sorted[j] {
                sorted.swap(j - 1, j);
                sign = -sign;
                j -= 1;
            }
        }
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        self.index_of_mask(mask_of(&sorted)).map(|i| (i, sign))
    }
}

fn push_tuples(r: usize, p: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == p {
        out.push(current.clone());
        return;
    }
    for j in start..r {
        current.push(j);
        push_tuples(r, p, j + 1, current, out);
        current.pop();
    }
}

pub fn mask_of(tuple: &[usize]) -> u32 {
    tuple.iter().fold(0u32, |m, &j| m | (1 << j))
}

/// Lexicographic index of the pair `j < k` among all pairs of `r` orbitals.
pub fn pair_index(r: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < r);
    j * r - j * (j + 1) / 2 + (k - j - 1)
}

/// Pair index and sign for an ordered pair of distinct orbitals.
pub fn signed_pair(r: usize, j: usize, k: usize) -> Option<(usize, f64)> {
    match j.cmp(&k) {
        std::cmp::Ordering::Less => Some((pair_index(r, j, k), 1.0)),
        std::cmp::Ordering::Greater => Some((pair_index(r, k, j), -1.0)),
        std::cmp::Ordering::Equal => None,
    }
}

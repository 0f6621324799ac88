//! Cross-fitting fold assignment.
//!
//! Data indices are shuffled with a seeded Fisher–Yates permutation; the
//! element at permuted position `p` (0-based) goes to fold `⌊p·K/n⌋`.
//! Folds are 0-based in this crate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    n: usize,
    k: usize,
    permutation: Vec<usize>,
    fold_of: Vec<usize>,
}

/// Random `K`-fold split of `0..n`; deterministic given `seed`.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    check(n, k)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::root(seed));
    FoldAssignment::from_permutation(perm, k)
}

fn check(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { k, n });
    }
    Ok(())
}

impl FoldAssignment {
    /// Applies the floor rule to an explicit permutation of `0..n`.
    pub fn from_permutation(permutation: Vec<usize>, k: usize) -> Result<Self> {
        let n = permutation.len();
        check(n, k)?;
        let mut fold_of = vec![usize::MAX; n];
        for (p, &i) in permutation.iter().enumerate() {
            if i >= n || fold_of[i] != usize::MAX {
                return Err(Error::invalid("fold permutation is not a bijection"));
            }
            fold_of[i] = p * k / n;
        }
        Ok(FoldAssignment {
            n,
            k,
            permutation,
            fold_of,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    /// Members of fold `j`, in increasing index order.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == j).collect()
    }

    /// Indices outside fold `j`, in increasing order (the training set for fold `j`).
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != j).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

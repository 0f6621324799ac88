//! Per-step least squares shared by the q and μ regressions.
//!
//! Several fits over different row subsets (the cross-fitting complements and
//! the full sample) are solved together: rows are grouped by which fits contain
//! them, each group's Gram matrix is formed once, and each fit sums the Gram
//! matrices of its groups. Features are encoded once per row and step.

use std::collections::BTreeMap;

use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{add_gram, solve_ridge};
use crate::ratios::Prepared;

/// Largest number of simultaneous fits.
pub(crate) const MAX_FITS: usize = 64;

/// Which fits each row belongs to.
pub(crate) struct Membership {
    pub sets: Vec<Vec<usize>>,
    groups: Vec<(u64, Vec<usize>)>,
}

impl Membership {
    pub fn new(n: usize, sets: &[Vec<usize>]) -> Result<Self> {
        if sets.is_empty() || sets.len() > MAX_FITS {
            return Err(Error::invalid(format!("between 1 and {MAX_FITS} training sets required")));
        }
        let mut masks = vec![0u64; n];
        for (f, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::invalid("empty training set"));
            }
            for &i in set {
                if i >= n {
                    return Err(Error::invalid(format!("training row {i} out of range")));
                }
                if masks[i] & (1 << f) != 0 {
                    return Err(Error::invalid(format!("row {i} listed twice in training set {f}")));
                }
                masks[i] |= 1 << f;
            }
        }
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, &m) in masks.iter().enumerate() {
            if m != 0 {
                groups.entry(m).or_default().push(i);
            }
        }
        Ok(Membership {
            sets: sets.to_vec(),
            groups: groups.into_iter().collect(),
        })
    }

    pub fn n_fits(&self) -> usize {
        self.sets.len()
    }
}

/// Features of every row and action at one step.
pub(crate) enum Encoded {
    /// Row-major `(n·A) × d`; row `i·A + a` is `φ(s_t^{(i)}, a)`.
    Dense { d: usize, phi: Vec<f64> },
    /// Active index per `(i, a)`.
    OneHot { d: usize, idx: Vec<usize> },
}

pub(crate) fn encode_step(prep: &Prepared<'_>, features: &FeatureMap, t: usize) -> Encoded {
    let na = prep.n_actions();
    let d = features.dim(na);
    let data = prep.data;
    if features.is_one_hot() {
        let mut idx = vec![0; prep.n() * na];
        for (i, chunk) in idx.chunks_mut(na).enumerate() {
            let s = data.trajectory(i).state(t);
            for (a, slot) in chunk.iter_mut().enumerate() {
                *slot = features.one_hot_index(s, a).expect("one-hot map");
            }
        }
        Encoded::OneHot { d, idx }
    } else {
        let mut phi = vec![0.0; prep.n() * na * d];
        phi.par_chunks_mut(na * d)
            .enumerate()
            .for_each(|(i, chunk)| features.encode_all(data.trajectory(i).state(t), na, chunk));
        Encoded::Dense { d, phi }
    }
}

/// Solves every fit's ridge regression at step `t`. `targets[f][i]` is read only
/// for rows `i` in training set `f`; the regressor is `φ(s_t, a_t)` of the logged action.
pub(crate) fn solve_step(
    enc: &Encoded,
    prep: &Prepared<'_>,
    t: usize,
    mem: &Membership,
    targets: &[Vec<f64>],
    ridge: f64,
) -> Result<Vec<Vec<f64>>> {
    let na = prep.n_actions();
    let nf = mem.n_fits();
    let action = |i: usize| prep.data.trajectory(i).action(t);
    match enc {
        Encoded::OneHot { d, idx } => {
            let mut out = Vec::with_capacity(nf);
            for (f, set) in mem.sets.iter().enumerate() {
                let mut counts = vec![0.0; *d];
                let mut sums = vec![0.0; *d];
                for &i in set {
                    let j = idx[i * na + action(i)];
                    counts[j] += 1.0;
                    sums[j] += targets[f][i];
                }
                let mut beta = vec![0.0; *d];
                for j in 0..*d {
                    if counts[j] == 0.0 && ridge == 0.0 {
                        return Err(Error::SingularDesign { t });
                    }
                    beta[j] = sums[j] / (counts[j] + ridge);
                }
                out.push(beta);
            }
            Ok(out)
        }
        Encoded::Dense { d, phi } => {
            let d = *d;
            let mut grams = vec![Mat::<f64>::zeros(d, d); nf];
            let mut rhs = vec![vec![0.0; d]; nf];
            for (mask, rows) in &mem.groups {
                let m = rows.len();
                let mut x = Vec::with_capacity(m * d);
                for &i in rows {
                    let r = i * na + action(i);
                    x.extend_from_slice(&phi[r * d..(r + 1) * d]);
                }
                let xg = MatRef::from_row_major_slice(&x, m, d);
                let mut g = Mat::<f64>::zeros(d, d);
                add_gram(&mut g, xg);
                for f in 0..nf {
                    if mask & (1 << f) == 0 {
                        continue;
                    }
                    grams[f] += &g;
                    let b = &mut rhs[f];
                    for (k, &i) in rows.iter().enumerate() {
                        let y = targets[f][i];
                        if y != 0.0 {
                            for (bj, xj) in b.iter_mut().zip(&x[k * d..(k + 1) * d]) {
                                *bj += y * xj;
                            }
                        }
                    }
                }
            }
            (0..nf)
                .map(|f| solve_ridge(&grams[f], &rhs[f], ridge, t))
                .collect()
        }
    }
}

/// Raw (unclipped) predictions `φ(s_t^{(i)}, a)·β_f` for all fits, rows and actions;
/// `out[f][i·A + a]`.
pub(crate) fn predict_step(enc: &Encoded, coefs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    match enc {
        Encoded::OneHot { idx, .. } => coefs
            .iter()
            .map(|beta| idx.iter().map(|&j| beta[j]).collect())
            .collect(),
        Encoded::Dense { d, phi } => {
            let d = *d;
            let rows = phi.len() / d;
            let nf = coefs.len();
            let x = MatRef::from_row_major_slice(phi, rows, d);
            let b = Mat::from_fn(d, nf, |j, f| coefs[f][j]);
            let mut p = Mat::<f64>::zeros(rows, nf);
            faer::linalg::matmul::matmul(p.as_mut(), Accum::Replace, x, b.as_ref(), 1.0, Par::Seq);
            (0..nf)
                .map(|f| (0..rows).map(|r| p[(r, f)]).collect())
                .collect()
        }
    }
}

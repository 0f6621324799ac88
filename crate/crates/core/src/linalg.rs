//! Ridge least squares on top of faer.

use faer::linalg::matmul::triangular::{matmul as triangular_matmul, BlockStructure};
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Relative pivot size below which an unregularized Gram matrix is treated as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Adds the lower triangle of `XᵀX` into `gram`.
pub(crate) fn add_gram(gram: &mut Mat<f64>, x: MatRef<'_, f64>) {
    triangular_matmul(
        gram.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Add,
        x.transpose(),
        BlockStructure::Rectangular,
        x,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
}

/// Solves `(G + ridge·I) β = b` where only the lower triangle of `G` is read.
///
/// With `ridge = 0` a rank-deficient `G` yields `SingularDesign { t }`.
pub(crate) fn solve_ridge(gram: &Mat<f64>, rhs: &[f64], ridge: f64, t: usize) -> Result<Vec<f64>> {
    let d = rhs.len();
    debug_assert_eq!(gram.nrows(), d);
    let mut g = gram.clone();
    let mut max_diag: f64 = 0.0;
    for j in 0..d {
        max_diag = max_diag.max(g[(j, j)]);
        g[(j, j)] += ridge;
    }
    if ridge == 0.0 && max_diag <= 0.0 {
        return Err(Error::SingularDesign { t });
    }
    let llt = g.llt(Side::Lower).map_err(|_| Error::SingularDesign { t })?;
    if ridge == 0.0 {
        let l = llt.L();
        let min_pivot = (0..d).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
        if min_pivot < SINGULAR_PIVOT * max_diag {
            return Err(Error::SingularDesign { t });
        }
    }
    let b = Mat::from_fn(d, 1, |i, _| rhs[i]);
    let sol = llt.solve(&b);
    let out: Vec<f64> = (0..d).map(|i| sol[(i, 0)]).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularDesign { t });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_system() {
        let x = Mat::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let mut g = Mat::zeros(2, 2);
        add_gram(&mut g, x.as_ref());
        // y = 1 + 2i
        let b = [4.0 + 12.0, 2.0 * 14.0 + 6.0];
        let beta = solve_ridge(&g, &b, 0.0, 0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_rank_deficiency() {
        let x = Mat::from_fn(5, 2, |i, _| i as f64);
        let mut g = Mat::zeros(2, 2);
        add_gram(&mut g, x.as_ref());
        assert!(matches!(
            solve_ridge(&g, &[1.0, 1.0], 0.0, 3),
            Err(Error::SingularDesign { t: 3 })
        ));
        assert!(solve_ridge(&g, &[1.0, 1.0], 1e-8, 3).is_ok());
        assert!(solve_ridge(&Mat::zeros(2, 2), &[0.0, 0.0], 0.0, 0).is_err());
    }
}

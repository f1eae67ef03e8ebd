//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// Sorting is stable, so equal eigenvalues keep the solver's order. Each
/// eigenvector is sign-normalized (see [`fix_signs`]).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    fix_signs(&mut vecs);
    (vals, vecs)
}

/// Flip each column so its largest-magnitude entry is positive.
/// Ties go to the smallest row index.
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if best_abs > 0.0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// ‖M − Mᵀ‖_F
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Apply `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * mapped[j]);
    symmetrize(&(scaled * v.transpose()))
}

/// Matrix logarithm of an SPD matrix, clamping eigenvalues at `floor`.
pub fn spd_log(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    sym_fn(m, |l| l.max(floor).ln())
}

pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::exp)
}

pub fn mean_abs_diag(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    if n == 0 {
        return 0.0;
    }
    m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64
}

/// Solve `S X = B` for square `S`: Cholesky when possible, LU otherwise.
pub fn solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = s.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let lu = s.clone().lu();
    lu.solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Error-free sum: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// Compensated dot product, accurate as if computed in twice the working
/// precision and then rounded.
pub fn dot2(x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for (a, b) in x.zip(y) {
        let p = a * b;
        let ep = a.mul_add(b, -p);
        let (t, es) = two_sum(s, p);
        s = t;
        c += ep + es;
    }
    s + c
}

/// `A X` with every entry computed by [`dot2`].
pub fn mul_accurate(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), x.ncols(), |i, j| {
        dot2(a.row(i).iter().copied(), x.column(j).iter().copied())
    })
}

/// Pairwise Euclidean distances between the columns of `a` and `b`.
pub fn euclidean_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| (a.column(i) - b.column(j)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_dot_survives_cancellation() {
        let x = [1e16, 1.0, -1e16];
        let y = [1.0, 1.0, 1.0];
        assert_eq!(x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>(), 0.0);
        assert_eq!(dot2(x.into_iter(), y.into_iter()), 1.0);
        let a = DMatrix::from_row_slice(2, 3, &[1e16, 1.0, -1e16, 1.0, 2.0, 3.0]);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        assert_eq!(mul_accurate(&a, &v).as_slice(), &[1.0, 6.0]);
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[5.0, 3.0, 1.0]);
        assert!(close(vecs[(1, 0)], 1.0, 1e-12));
        assert!(close(vecs[(2, 1)], 1.0, 1e-12));
    }

    #[test]
    fn signs_make_largest_entry_positive() {
        let mut m = DMatrix::from_row_slice(2, 2, &[-0.6, 0.8, -0.8, -0.6]);
        fix_signs(&mut m);
        assert_eq!(m[(1, 0)], 0.8);
        assert_eq!(m[(0, 1)], 0.8);
    }

    #[test]
    fn log_exp_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let back = sym_exp(&spd_log(&m, 1e-12));
        assert!((back - &m).norm() < 1e-12);
    }

    #[test]
    fn solve_falls_back_to_lu() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 3.0]);
        let x = solve(&s, &b).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 2.0]);
        let sing = DMatrix::zeros(2, 2);
        assert!(solve(&sing, &b).is_err());
    }
}

//! Signed affinities between and within views, with degrees and Laplacians.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};

pub const DEFAULT_K1: usize = 1;
pub const DEFAULT_K2: usize = 20;

/// A(i,j) = +1/S for same-label pairs and −1/T otherwise, where S and T
/// count the similar and dissimilar pairs.
pub fn cross_affinity(labels_x: &[i64], labels_y: &[i64]) -> Result<DMatrix<f64>> {
    let same = |i: usize, j: usize| labels_x[i] == labels_y[j];
    let (m, n) = (labels_x.len(), labels_y.len());
    let s = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| same(i, j)).count();
    let t = m * n - s;
    if s == 0 {
        return Err(Error::Degenerate("no similar pairs across views".into()));
    }
    if t == 0 {
        return Err(Error::Degenerate("no dissimilar pairs across views".into()));
    }
    let (p, q) = (1.0 / s as f64, -1.0 / t as f64);
    Ok(DMatrix::from_fn(m, n, |i, j| if same(i, j) { p } else { q }))
}

fn clamp_k(k: usize, n: usize, name: &str) -> usize {
    let limit = n.saturating_sub(1);
    if k > limit {
        log::warn!("{name}={k} clamped to {limit} (only {n} points)");
        limit
    } else {
        k
    }
}

/// Symmetric kNN relation: R(i,j) holds if j is among the k nearest
/// neighbours of i or i among those of j. Self is excluded and ties at equal
/// distance go to the smaller index.
pub fn knn_relation(dists: &DMatrix<f64>, k: usize) -> Vec<Vec<bool>> {
    let n = dists.nrows();
    let mut rel = vec![vec![false; n]; n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dists[(i, a)].total_cmp(&dists[(i, b)]).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            rel[i][j] = true;
            rel[j][i] = true;
        }
    }
    rel
}

/// Signed intra-view affinity with heat-kernel weights exp(−d²/σ²).
///
/// Same-label pairs linked by the k1-NN relation get +a_ij, different-label
/// pairs linked by the k2-NN relation get −a_ij; all else is zero.
pub fn intra_affinity(
    dists: &DMatrix<f64>,
    labels: &[i64],
    k1: usize,
    k2: usize,
    sigma: f64,
) -> Result<DMatrix<f64>> {
    if !dists.is_square() {
        return Err(Error::Dimension("distance matrix must be square".into()));
    }
    let n = dists.nrows();
    dim_check("labels", n, labels.len())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let near = knn_relation(dists, clamp_k(k1, n, "k1"));
    let far = knn_relation(dists, clamp_k(k2, n, "k2"));
    let s2 = sigma * sigma;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        // symmetric average so A(i,j) == A(j,i) bit for bit
        let d = 0.5 * (dists[(i, j)] + dists[(j, i)]);
        let a = (-(d * d) / s2).exp();
        if labels[i] == labels[j] {
            if near[i][j] {
                a
            } else {
                0.0
            }
        } else if far[i][j] {
            -a
        } else {
            0.0
        }
    }))
}

/// Divide positive entries by their count and negative entries by theirs,
/// the same averaging applied to the cross affinity.
pub fn normalize_signed(a: &DMatrix<f64>) -> DMatrix<f64> {
    let pos = a.iter().filter(|&&v| v > 0.0).count().max(1) as f64;
    let neg = a.iter().filter(|&&v| v < 0.0).count().max(1) as f64;
    a.map(|v| if v > 0.0 { v / pos } else if v < 0.0 { v / neg } else { 0.0 })
}

/// (within, between) with `signed = within − between`.
pub fn split_templates(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|v| v.max(0.0)), a.map(|v| (-v).max(0.0)))
}

pub fn row_degrees(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum()))
}

pub fn column_degrees(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum()))
}

/// Row-degree diagonal B and Laplacian L = B − A.
pub fn degree_and_laplacian(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !a.is_square() {
        return Err(Error::Dimension("Laplacian needs a square affinity".into()));
    }
    let b = row_degrees(a);
    let mut l = -a;
    for i in 0..a.nrows() {
        l[(i, i)] += b[i];
    }
    Ok((b, l))
}

/// Intra-view affinity of one view with its Laplacians.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    pub affinity: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub laplacian_within: DMatrix<f64>,
    pub laplacian_between: DMatrix<f64>,
}

impl ViewGraph {
    pub fn from_affinity(affinity: DMatrix<f64>) -> Result<Self> {
        let (within, between) = split_templates(&affinity);
        let (_, laplacian) = degree_and_laplacian(&affinity)?;
        let (_, laplacian_within) = degree_and_laplacian(&within)?;
        let (_, laplacian_between) = degree_and_laplacian(&between)?;
        Ok(Self { affinity, laplacian, laplacian_within, laplacian_between })
    }

    pub fn build(
        dists: &DMatrix<f64>,
        labels: &[i64],
        k1: usize,
        k2: usize,
        sigma: f64,
        normalize: bool,
    ) -> Result<Self> {
        let mut a = intra_affinity(dists, labels, k1, k2, sigma)?;
        if normalize {
            a = normalize_signed(&a);
        }
        Self::from_affinity(a)
    }

    pub fn len(&self) -> usize {
        self.affinity.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.affinity.nrows() == 0
    }
}

/// Cross affinity between view `a` (rows) and view `b` (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub affinity: DMatrix<f64>,
}

impl Coupling {
    pub fn new(a: usize, b: usize, labels_a: &[i64], labels_b: &[i64]) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidInput("a coupling must join two different views".into()));
        }
        Ok(Self { a, b, affinity: cross_affinity(labels_a, labels_b)? })
    }

    pub fn templates(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        split_templates(&self.affinity)
    }
}

/// All graph structure feeding the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub views: Vec<ViewGraph>,
    pub couplings: Vec<Coupling>,
}

impl AffinityGraph {
    pub fn validate(&self) -> Result<()> {
        for c in &self.couplings {
            let (na, nb) = match (self.views.get(c.a), self.views.get(c.b)) {
                (Some(a), Some(b)) => (a.len(), b.len()),
                _ => return Err(Error::InvalidInput("coupling refers to a missing view".into())),
            };
            if c.affinity.shape() != (na, nb) {
                return Err(Error::Dimension(format!(
                    "coupling {}-{} is {:?}, views have {na} and {nb} samples",
                    c.a,
                    c.b,
                    c.affinity.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_affinity_example() {
        let a = cross_affinity(&[1, 1, 2], &[1, 2]).unwrap();
        let t = 1.0 / 3.0;
        let expect = DMatrix::from_row_slice(3, 2, &[t, -t, t, -t, -t, t]);
        assert_eq!(a, expect);
        let rows = row_degrees(&a);
        for i in 0..3 {
            assert_eq!(rows[i], a[(i, 0)] + a[(i, 1)]);
        }
        assert!(cross_affinity(&[3, 3], &[3]).is_err());
        assert!(cross_affinity(&[1], &[2]).is_err());
    }

    #[test]
    fn cross_affinity_normalization_identity() {
        let lx = [0, 1, 2, 0, 1, 1, 2];
        let ly = [2, 0, 1, 1];
        let a = cross_affinity(&lx, &ly).unwrap();
        let pos: f64 = a.iter().filter(|&&v| v > 0.0).sum();
        let neg: f64 = a.iter().filter(|&&v| v < 0.0).sum();
        assert!((pos - 1.0).abs() < 1e-12);
        assert!((neg + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_same_class_points() {
        let d = DMatrix::zeros(2, 2);
        let a = intra_affinity(&d, &[4, 4], 1, 20, 1.0).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn far_different_class_points_unlinked() {
        // points 0,1 (class 0) close together, 2,3 (class 1) close together,
        // the two pairs far apart; with k2 = 1 the classes never meet
        let pos: [f64; 4] = [0.0, 0.1, 10.0, 10.1];
        let d = DMatrix::from_fn(4, 4, |i, j| (pos[i] - pos[j]).abs());
        let a = intra_affinity(&d, &[0, 0, 1, 1], 1, 1, 1.0).unwrap();
        assert_eq!(a[(0, 2)], 0.0);
        assert_eq!(a[(1, 3)], 0.0);
        assert!(a[(0, 1)] > 0.0);
    }

    /// Brute-force rule application on a 5-point configuration.
    #[test]
    fn five_point_configuration() {
        let pos: [f64; 5] = [0.0, 1.0, 1.5, 4.0, 4.2];
        let labels = [0, 0, 1, 1, 0];
        let d = DMatrix::from_fn(5, 5, |i, j| (pos[i] - pos[j]).abs());
        let sigma = 2.0;
        let (k1, k2) = (1, 2);
        let a = intra_affinity(&d, &labels, k1, k2, sigma).unwrap();
        // neighbour lists by hand
        let nn1: [&[usize]; 5] = [&[1], &[2], &[1], &[4], &[3]];
        let nn2: [&[usize]; 5] = [&[1, 2], &[2, 0], &[1, 0], &[4, 2], &[3, 2]];
        for i in 0..5 {
            for j in 0..5 {
                let w = (-(pos[i] - pos[j]).powi(2) / (sigma * sigma)).exp();
                let r1 = nn1[i].contains(&j) || nn1[j].contains(&i);
                let r2 = nn2[i].contains(&j) || nn2[j].contains(&i);
                let expect = if i == j {
                    0.0
                } else if labels[i] == labels[j] && r1 {
                    w
                } else if labels[i] != labels[j] && r2 {
                    -w
                } else {
                    0.0
                };
                assert!((a[(i, j)] - expect).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1.0, 2.0, 0.0]);
        let r = knn_relation(&d, 1);
        // 0 is equidistant from 1 and 2 and picks 1; 2 links back to 0 on its own
        assert!(r[0][1] && r[0][2]);
        assert!(!r[1][2]);
        let r = knn_relation(&DMatrix::from_element(4, 4, 1.0), 1);
        assert!(r[0][1] && r[1][0] && r[2][0] && r[3][0]);
        assert!(!r[2][3]);
    }

    #[test]
    fn oversized_k_is_clamped() {
        let d = DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64).abs());
        let a = intra_affinity(&d, &[0, 1, 0], 50, 50, 1.0).unwrap();
        assert!(a[(0, 1)] < 0.0 && a[(0, 2)] > 0.0);
    }

    #[test]
    fn template_examples() {
        let t = 1.0 / 3.0;
        let (w, b) = split_templates(&DMatrix::from_row_slice(1, 2, &[t, -t]));
        assert_eq!(w, DMatrix::from_row_slice(1, 2, &[t, 0.0]));
        assert_eq!(b, DMatrix::from_row_slice(1, 2, &[0.0, t]));
        let (_, b) = split_templates(&DMatrix::from_element(2, 2, 0.5));
        assert_eq!(b, DMatrix::zeros(2, 2));
    }

    #[test]
    fn laplacian_examples() {
        let (b, l) = degree_and_laplacian(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(b.as_slice(), &[1.0; 3]);
        assert_eq!(l, DMatrix::zeros(3, 3));
        let complete = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let (b, l) = degree_and_laplacian(&complete).unwrap();
        assert_eq!(b.as_slice(), &[2.0; 3]);
        assert_eq!(l, DMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { -1.0 }));
    }

    #[test]
    fn normalized_intra_affinity_sums() {
        let pos: [f64; 6] = [0.0, 0.5, 1.0, 3.0, 3.2, 3.9];
        let d = DMatrix::from_fn(6, 6, |i, j| (pos[i] - pos[j]).abs());
        let a = intra_affinity(&d, &[0, 0, 1, 1, 0, 1], 1, 3, 1.0).unwrap();
        let n = normalize_signed(&a);
        let pos_count = a.iter().filter(|&&v| v > 0.0).count() as f64;
        for (x, y) in a.iter().zip(n.iter()) {
            if *x > 0.0 {
                assert_eq!(*y, x / pos_count);
            }
        }
        assert_eq!(n, n.transpose());
    }

    fn signed_matrix() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-2.0f64..2.0, r * c)
                .prop_map(move |v| DMatrix::from_vec(r, c, v))
        })
    }

    proptest! {
        #[test]
        fn split_reconstructs_exactly(a in signed_matrix()) {
            let (w, b) = split_templates(&a);
            prop_assert_eq!(&w - &b, a);
        }

        #[test]
        fn laplacian_rows_vanish_for_symmetric(v in proptest::collection::vec(-2.0f64..2.0, 25)) {
            let m = DMatrix::from_vec(5, 5, v);
            let sym = &m + m.transpose();
            let (_, l) = degree_and_laplacian(&sym).unwrap();
            prop_assert_eq!(&l, &l.transpose());
            for r in row_degrees(&l).iter() {
                prop_assert!(r.abs() < 1e-12);
            }
        }

        #[test]
        fn intra_affinity_symmetric(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..9),
            k1 in 0usize..4, k2 in 0usize..6
        ) {
            let n = pts.len();
            let d = DMatrix::from_fn(n, n, |i, j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt());
            let labels: Vec<i64> = (0..n as i64).map(|i| i % 3).collect();
            let a = intra_affinity(&d, &labels, k1, k2, 1.3).unwrap();
            prop_assert_eq!(&a, &a.transpose());
            prop_assert!(a.diagonal().iter().all(|&v| v == 0.0));
        }
    }
}

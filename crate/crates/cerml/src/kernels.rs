//! Gaussian and linear kernels over Euclidean points and variation models.
//!
//! Sample collections are matrices with one sample per column. Kernel
//! matrices have one row per left-hand sample and one column per right-hand
//! sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::geometry;
use crate::linalg;
use crate::repr::{SetRepresentation, Variation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
    Linear,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Linear => "linear",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" | "gaussian" => Ok(Self::Rbf),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidInput(format!("unknown kernel '{other}'"))),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("bandwidth must be positive and finite, got {sigma}")))
    }
}

/// exp(−d²/(2σ²)) applied entrywise.
pub fn gaussian_from_distances(d: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let s2 = 2.0 * sigma * sigma;
    Ok(d.map(|v| (-(v * v) / s2).exp()))
}

pub fn rbf_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    dim_check("feature dimension", a.nrows(), b.nrows())?;
    gaussian_from_distances(&linalg::euclidean_distances(a, b), sigma)
}

fn check_homogeneous(points: &[&Variation]) -> Result<()> {
    if let Some(first) = points.first() {
        if let Some(bad) = points.iter().find(|p| p.kind() != first.kind()) {
            return Err(Error::InvalidInput(format!(
                "mixed variation models: {} and {}",
                first.kind().name(),
                bad.kind().name()
            )));
        }
    }
    Ok(())
}

/// Gaussian kernel on the manifold distance of each model type.
pub fn riemann_kernel(points: &[&Variation], sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    check_homogeneous(points)?;
    let mut k = gaussian_from_distances(&geometry::variation_self_distances(points)?, sigma)?;
    k.fill_diagonal(1.0);
    Ok(k)
}

pub fn riemann_cross_kernel(a: &[&Variation], b: &[&Variation], sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    check_homogeneous(a)?;
    check_homogeneous(b)?;
    gaussian_from_distances(&geometry::variation_distances(a, b)?, sigma)
}

/// Gaussian kernel on point-to-model distances, rows = points, columns = sets.
pub fn cross_kernel(x: &DMatrix<f64>, sets: &[&SetRepresentation], sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let vars: Vec<&Variation> = sets.iter().map(|s| &s.variation).collect();
    check_homogeneous(&vars)?;
    gaussian_from_distances(&geometry::point_model_distances(x, sets)?, sigma)
}

pub fn bandwidth_from_mean_distance(dists: &[f64]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::Degenerate("no distances to derive a bandwidth from".into()));
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Degenerate(format!("mean distance is {mean}; bandwidth undefined")));
    }
    Ok(mean)
}

/// Bandwidth from the off-diagonal entries of a square distance matrix.
pub fn bandwidth_square(d: &DMatrix<f64>) -> Result<f64> {
    let n = d.nrows();
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| d[(i, j)])
        .collect();
    bandwidth_from_mean_distance(&vals)
}

/// Bandwidth from all entries of a rectangular distance matrix.
pub fn bandwidth_all(d: &DMatrix<f64>) -> Result<f64> {
    bandwidth_from_mean_distance(d.as_slice())
}

/// K̂_x = [K_x | K_xy] and K̂_y = [K_y | K_xyᵀ].
pub fn augment_kernels(
    k_x: &DMatrix<f64>,
    k_y: &DMatrix<f64>,
    k_xy: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = k_xy.shape();
    if k_x.shape() != (m, m) || k_y.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "augmentation expects K_x {m}x{m} and K_y {n}x{n}, got {:?} and {:?}",
            k_x.shape(),
            k_y.shape()
        )));
    }
    let mut hx = DMatrix::zeros(m, m + n);
    hx.columns_mut(0, m).copy_from(k_x);
    hx.columns_mut(m, n).copy_from(k_xy);
    let mut hy = DMatrix::zeros(n, n + m);
    hy.columns_mut(0, n).copy_from(k_y);
    hy.columns_mut(n, m).copy_from(&k_xy.transpose());
    Ok((hx, hy))
}

/// Inverse of [`augment_kernels`]: returns (K_x, K_y, K_xy).
pub fn split_augmented(
    hx: &DMatrix<f64>,
    hy: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (m, n) = (hx.nrows(), hy.nrows());
    if hx.ncols() != m + n || hy.ncols() != m + n {
        return Err(Error::Dimension("augmented kernels must both have m+n columns".into()));
    }
    Ok((
        hx.columns(0, m).into_owned(),
        hy.columns(0, n).into_owned(),
        hx.columns(m, n).into_owned(),
    ))
}

pub fn linear_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dim_check("feature dimension", a.nrows(), b.nrows())?;
    Ok(a.transpose() * b)
}

/// Flattened coordinates used by the linear kernel on variation models.
pub fn flatten(v: &Variation) -> DVector<f64> {
    match v {
        Variation::Grassmann(g) => {
            let p = g.projector();
            DVector::from_column_slice(p.as_slice())
        }
        Variation::Affine(a) => {
            let p = &a.basis * a.basis.transpose();
            let r = a.residual_offset();
            DVector::from_iterator(p.len() + r.len(), p.iter().chain(r.iter()).cloned())
        }
        Variation::Spd(s) => DVector::from_column_slice(s.log.as_slice()),
    }
}

pub fn flatten_all(points: &[&Variation]) -> Result<DMatrix<f64>> {
    check_homogeneous(points)?;
    let cols: Vec<DVector<f64>> = points.iter().map(|p| flatten(p)).collect();
    if cols.is_empty() {
        return Err(Error::InvalidInput("no models to flatten".into()));
    }
    let len = cols[0].len();
    for c in &cols {
        dim_check("flattened model length", len, c.len())?;
    }
    Ok(DMatrix::from_columns(&cols))
}

pub fn linear_riemann_kernel(a: &[&Variation], b: &[&Variation]) -> Result<DMatrix<f64>> {
    linear_kernel(&flatten_all(a)?, &flatten_all(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub min_eig: f64,
    pub max_eig: f64,
    pub tol: f64,
    pub pass: bool,
}

impl PsdReport {
    /// λ_min / λ_max, the quantity compared against −tol.
    pub fn ratio(&self) -> f64 {
        if self.max_eig > 0.0 {
            self.min_eig / self.max_eig
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn check_psd(k: &DMatrix<f64>, tol: f64) -> Result<PsdReport> {
    if !k.is_square() || k.nrows() == 0 {
        return Err(Error::Dimension("PSD check needs a nonempty square matrix".into()));
    }
    let (vals, _) = linalg::sym_eigen_desc(k);
    let max_eig = vals[0];
    let min_eig = vals[vals.len() - 1];
    Ok(PsdReport { min_eig, max_eig, tol, pass: min_eig >= -tol * max_eig })
}

/// Check a kernel and, on failure, shift its diagonal once by (−λ_min + 1e-10).
/// Returns the (possibly repaired) kernel and the jitter applied.
pub fn repair_psd(k: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, f64)> {
    let report = check_psd(k, tol)?;
    if report.pass {
        return Ok((k.clone(), 0.0));
    }
    let jitter = -report.min_eig + 1e-10;
    let mut fixed = k.clone();
    for i in 0..fixed.nrows() {
        fixed[(i, i)] += jitter;
    }
    let again = check_psd(&fixed, tol)?;
    if !again.pass {
        return Err(Error::Numerical(format!(
            "kernel not PSD after jitter: lambda_min={:.3e}, lambda_max={:.3e}",
            again.min_eig, again.max_eig
        )));
    }
    log::warn!("kernel repaired with diagonal jitter {jitter:.3e}");
    Ok((fixed, jitter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{AffinePoint, GrassmannPoint, SpdPoint};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn line(x: f64, y: f64) -> Variation {
        Variation::Grassmann(GrassmannPoint { basis: DMatrix::from_column_slice(2, 1, &[x, y]) })
    }

    #[test]
    fn rbf_examples() {
        let a = DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let k = rbf_kernel(&a, &a, 0.7).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        let flat = rbf_kernel(&a, &a, 1e9).unwrap();
        assert!(flat.iter().all(|v| (v - 1.0).abs() < 1e-6));
        // ‖a − b‖ = σ√2 gives exp(−1)
        let sigma = 2f64.sqrt() / 2f64.sqrt();
        let k = rbf_kernel(&a, &a, sigma).unwrap();
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rbf_kernel(&a, &a, 0.0).is_err());
        assert!(rbf_kernel(&a, &a, -1.0).is_err());
    }

    #[test]
    fn riemann_kernel_examples() {
        let pts = [line(1.0, 0.0), line(0.0, 1.0), line(1.0, 0.0)];
        let refs: Vec<&Variation> = pts.iter().collect();
        let k = riemann_kernel(&refs, 1.0).unwrap();
        assert!(k.diagonal().iter().all(|&v| v == 1.0));
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(k.row(0), k.row(2));
        let spd = Variation::Spd(SpdPoint::from_matrix(DMatrix::identity(2, 2)).unwrap());
        assert!(riemann_kernel(&[&pts[0], &spd], 1.0).is_err());
    }

    #[test]
    fn cross_kernel_examples() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let set = SetRepresentation {
            mean: DVector::zeros(2),
            variation: Variation::Grassmann(GrassmannPoint { basis: u }),
            label: 0,
        };
        let x = DMatrix::from_column_slice(2, 2, &[3.0, 0.0, 0.0, 2f64.sqrt()]);
        let k = cross_kernel(&x, &[&set], 1.0).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(1, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        let zeros = DMatrix::zeros(2, 3);
        let k = cross_kernel(&zeros, &[&set, &set], 0.5).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(bandwidth_from_mean_distance(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(bandwidth_from_mean_distance(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(bandwidth_from_mean_distance(&[0.0, 0.0]).is_err());
        assert!(bandwidth_from_mean_distance(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian(3, 12, &mut rng);
        let d = linalg::euclidean_distances(&x, &x);
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..12 {
            for j in 0..12 {
                if i != j {
                    let mut s = 0.0;
                    for r in 0..3 {
                        s += (x[(r, i)] - x[(r, j)]).powi(2);
                    }
                    acc += s.sqrt();
                    count += 1;
                }
            }
        }
        let sigma = bandwidth_square(&d).unwrap();
        assert!(sigma.is_finite() && sigma > 0.0);
        assert!((sigma - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn augmentation_shapes_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let kx = gaussian(3, 3, &mut rng);
        let ky = gaussian(2, 2, &mut rng);
        let kxy = gaussian(3, 2, &mut rng);
        let (hx, hy) = augment_kernels(&kx, &ky, &kxy).unwrap();
        assert_eq!(hx.shape(), (3, 5));
        assert_eq!(hy.shape(), (2, 5));
        let (a, b, c) = split_augmented(&hx, &hy).unwrap();
        assert_eq!((a, b, c), (kx.clone(), ky.clone(), kxy));
        assert!(augment_kernels(&kx, &ky, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_cross_block_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kx = gaussian(3, 3, &mut rng);
        let ky = gaussian(2, 2, &mut rng);
        let (hx, _) = augment_kernels(&kx, &ky, &DMatrix::zeros(3, 2)).unwrap();
        let mut w = gaussian(5, 2, &mut rng);
        w.rows_mut(3, 2).fill(0.0);
        let plain = w.rows(0, 3).transpose() * kx.transpose();
        assert_eq!(w.transpose() * hx.transpose(), plain);
    }

    #[test]
    fn linear_kernel_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(linear_kernel(&eye, &eye).unwrap(), eye);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = gaussian(4, 3, &mut rng);
        let b = gaussian(4, 2, &mut rng);
        let k = linear_kernel(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let dot: f64 = (0..4).map(|r| a[(r, i)] * b[(r, j)]).sum();
                assert!((k[(i, j)] - dot).abs() < 1e-14);
            }
        }
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = Variation::Spd(SpdPoint::from_matrix(c).unwrap());
        let k = linear_riemann_kernel(&[&s], &[&s]).unwrap();
        let log_norm = match &s {
            Variation::Spd(p) => p.log.norm_squared(),
            _ => unreachable!(),
        };
        assert!((k[(0, 0)] - log_norm).abs() < 1e-12);
        let af = Variation::Affine(AffinePoint {
            basis: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            offset: DVector::from_column_slice(&[5.0, 2.0]),
        });
        // vec(P) has norm 1, residual offset is (0, 2)
        assert_eq!(linear_riemann_kernel(&[&af], &[&af]).unwrap()[(0, 0)], 5.0);
    }

    #[test]
    fn psd_examples() {
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!(check_psd(&eye, 1e-8).unwrap().pass);
        let bad = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        let r = check_psd(&bad, 1e-8).unwrap();
        assert!(!r.pass);
        assert_eq!((r.min_eig, r.max_eig), (-1.0, 1.0));
    }

    #[test]
    fn psd_repair() {
        let slightly = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1e-6]));
        let (fixed, jitter) = repair_psd(&slightly, 1e-8).unwrap();
        assert!(jitter > 1e-6);
        assert!(check_psd(&fixed, 1e-8).unwrap().pass);
        let (same, none) = repair_psd(&DMatrix::identity(2, 2), 1e-8).unwrap();
        assert_eq!(none, 0.0);
        assert_eq!(same, DMatrix::identity(2, 2));
    }

    #[test]
    fn projection_kernel_on_random_subspaces_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Variation> = (0..50)
            .map(|_| {
                let q = gaussian(8, 3, &mut rng).qr().q().columns(0, 3).into_owned();
                Variation::Grassmann(GrassmannPoint { basis: q })
            })
            .collect();
        let refs: Vec<&Variation> = pts.iter().collect();
        let d = geometry::variation_self_distances(&refs).unwrap();
        let k = riemann_kernel(&refs, bandwidth_square(&d).unwrap()).unwrap();
        assert!(check_psd(&k, 1e-8).unwrap().pass);
        assert_eq!(k, k.transpose());
    }

    proptest! {
        #[test]
        fn kernel_monotone_in_distance_and_sigma(
            d1 in 0.0f64..5.0, gap in 1e-3f64..5.0, sigma in 0.1f64..5.0
        ) {
            // beyond this ratio both values underflow to zero
            prop_assume!((d1 + gap) / sigma < 30.0);
            let d = DMatrix::from_row_slice(1, 2, &[d1, d1 + gap]);
            let k = gaussian_from_distances(&d, sigma).unwrap();
            prop_assert!(k[(0, 0)] > k[(0, 1)]);
            let wider = gaussian_from_distances(&d, 2.0 * sigma).unwrap();
            prop_assert!(wider[(0, 0)] >= k[(0, 0)] && wider[(0, 1)] >= k[(0, 1)]);
        }
    }
}

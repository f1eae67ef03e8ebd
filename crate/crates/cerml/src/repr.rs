//! Set representations: a Euclidean mean plus one Riemannian variation model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues below this fraction of the largest one count as zero rank.
const RANK_RTOL: f64 = 1e-10;
/// Guards a zero-trace covariance in the SPD ridge.
pub const RIDGE_EPS: f64 = 1e-12;
/// Eigenvalue floor used by the matrix logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub const DEFAULT_SUBSPACE_DIM: usize = 10;
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Raw features of one set, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    labels: Option<Vec<i64>>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("feature matrix is empty".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature matrix has non-finite entries".into()));
        }
        Ok(Self { data, labels: None })
    }

    pub fn with_labels(data: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        let mut fm = Self::new(data)?;
        crate::error::dim_check("label count", fm.data.ncols(), labels.len())?;
        fm.labels = Some(labels);
        Ok(fm)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// Feature dimension D.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Sample count m.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    pub basis: DMatrix<f64>,
}

impl GrassmannPoint {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoint {
    pub basis: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffinePoint {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// (I − UUᵀ)μ, the part of the offset orthogonal to the span.
    pub fn residual_offset(&self) -> DVector<f64> {
        &self.offset - &self.basis * (self.basis.transpose() * &self.offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdPoint {
    pub cov: DMatrix<f64>,
    pub log: DMatrix<f64>,
}

impl SpdPoint {
    /// Build from a symmetric positive-definite matrix, caching its logarithm.
    pub fn from_matrix(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::Dimension("SPD matrix must be square and nonempty".into()));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::Degenerate("matrix is not positive definite".into()));
        }
        let log = linalg::spd_log(&cov, LOG_FLOOR);
        Ok(Self { cov, log })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariationKind {
    Subspace,
    Affine,
    Spd,
}

impl VariationKind {
    pub fn name(self) -> &'static str {
        match self {
            VariationKind::Subspace => "subspace",
            VariationKind::Affine => "affine",
            VariationKind::Spd => "spd",
        }
    }
}

impl std::str::FromStr for VariationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subspace" | "grassmann" => Ok(Self::Subspace),
            "affine" => Ok(Self::Affine),
            "spd" => Ok(Self::Spd),
            other => Err(Error::InvalidInput(format!("unknown variation model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variation {
    Grassmann(GrassmannPoint),
    Affine(AffinePoint),
    Spd(SpdPoint),
}

impl Variation {
    pub fn kind(&self) -> VariationKind {
        match self {
            Variation::Grassmann(_) => VariationKind::Subspace,
            Variation::Affine(_) => VariationKind::Affine,
            Variation::Spd(_) => VariationKind::Spd,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Variation::Grassmann(g) => g.dim(),
            Variation::Affine(a) => a.dim(),
            Variation::Spd(s) => s.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetRepresentation {
    pub mean: DVector<f64>,
    pub variation: Variation,
    pub label: i64,
}

pub fn compute_mean(x: &FeatureMatrix) -> DVector<f64> {
    x.data().column_mean()
}

/// Population (1/m) covariance about the mean.
pub fn covariance(x: &FeatureMatrix) -> DMatrix<f64> {
    let mean = compute_mean(x);
    let mut centered = x.data().clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let m = x.len() as f64;
    linalg::symmetrize(&(&centered * centered.transpose() / m))
}

/// Numerical rank of the sample covariance.
pub fn covariance_rank(x: &FeatureMatrix) -> usize {
    let (vals, _) = linalg::sym_eigen_desc(&covariance(x));
    numeric_rank(&vals)
}

fn numeric_rank(vals: &DVector<f64>) -> usize {
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > RANK_RTOL * top).count()
}

pub fn fit_subspace(x: &FeatureMatrix, d: usize) -> Result<GrassmannPoint> {
    let limit = x.dim().min(x.len());
    if d == 0 || d > limit {
        return Err(Error::InvalidInput(format!(
            "subspace dim {d} outside 1..={limit} (D={}, m={})",
            x.dim(),
            x.len()
        )));
    }
    let (vals, vecs) = linalg::sym_eigen_desc(&covariance(x));
    let rank = numeric_rank(&vals);
    if rank < d {
        return Err(Error::Degenerate(format!(
            "covariance rank {rank} is below requested subspace dim {d}"
        )));
    }
    Ok(GrassmannPoint { basis: vecs.columns(0, d).into_owned() })
}

pub fn fit_affine(x: &FeatureMatrix, d: usize) -> Result<AffinePoint> {
    let g = fit_subspace(x, d)?;
    Ok(AffinePoint { basis: g.basis, offset: compute_mean(x) })
}

pub fn fit_spd(x: &FeatureMatrix, ridge: f64) -> Result<SpdPoint> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be >= 0, got {ridge}")));
    }
    let mut cov = covariance(x);
    let dim = x.dim();
    let shift = ridge * (cov.trace() / dim as f64 + RIDGE_EPS);
    for i in 0..dim {
        cov[(i, i)] += shift;
    }
    let log = linalg::spd_log(&cov, LOG_FLOOR);
    Ok(SpdPoint { cov, log })
}

/// Settings for turning raw sets into [`SetRepresentation`]s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprConfig {
    pub kind: VariationKind,
    pub subspace_dim: usize,
    pub ridge: f64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self { kind: VariationKind::Subspace, subspace_dim: DEFAULT_SUBSPACE_DIM, ridge: DEFAULT_RIDGE }
    }
}

/// Subspace dimension usable for every set: `requested` clamped to the
/// smallest covariance rank. Logs a warning when clamping happens.
pub fn clamp_subspace_dim(sets: &[FeatureMatrix], requested: usize) -> Result<usize> {
    let min_rank = sets.iter().map(covariance_rank).min().unwrap_or(0);
    if min_rank == 0 {
        return Err(Error::Degenerate("a set has zero covariance; no subspace can be fitted".into()));
    }
    if requested > min_rank {
        log::warn!("subspace dim {requested} clamped to {min_rank} (smallest set covariance rank)");
        Ok(min_rank)
    } else {
        Ok(requested)
    }
}

/// Represent each labelled set with the same model type and dimension.
pub fn represent_sets(
    sets: &[FeatureMatrix],
    labels: &[i64],
    cfg: &ReprConfig,
) -> Result<Vec<SetRepresentation>> {
    crate::error::dim_check("set labels", sets.len(), labels.len())?;
    if sets.is_empty() {
        return Err(Error::InvalidInput("no sets to represent".into()));
    }
    let dim = sets[0].dim();
    for s in sets {
        crate::error::dim_check("set feature dimension", dim, s.dim())?;
    }
    let d = match cfg.kind {
        VariationKind::Spd => 0,
        _ => clamp_subspace_dim(sets, cfg.subspace_dim)?,
    };
    sets.iter()
        .zip(labels)
        .map(|(x, &label)| {
            let variation = match cfg.kind {
                VariationKind::Subspace => Variation::Grassmann(fit_subspace(x, d)?),
                VariationKind::Affine => Variation::Affine(fit_affine(x, d)?),
                VariationKind::Spd => Variation::Spd(fit_spd(x, cfg.ridge)?),
            };
            Ok(SetRepresentation { mean: compute_mean(x), variation, label })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fm(rows: usize, cols: usize, vals: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(DMatrix::from_column_slice(rows, cols, vals)).unwrap()
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
        (u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols())).norm()
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(FeatureMatrix::new(DMatrix::zeros(3, 0)).is_err());
        assert!(FeatureMatrix::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn mean_of_two_columns() {
        let x = fm(2, 2, &[1.0, 1.0, 3.0, 3.0]);
        assert_eq!(compute_mean(&x).as_slice(), &[2.0, 2.0]);
        let v = fm(3, 1, &[1.5, -2.0, 7.0]);
        assert_eq!(compute_mean(&v).as_slice(), &[1.5, -2.0, 7.0]);
    }

    #[test]
    fn mean_of_normal_cloud_matches_summation() {
        let data = gaussian(4, 100, 3);
        let x = FeatureMatrix::new(data.clone()).unwrap();
        let mean = compute_mean(&x);
        let mut oracle = [0.0; 4];
        for j in 0..100 {
            for (i, o) in oracle.iter_mut().enumerate() {
                *o += data[(i, j)];
            }
        }
        for i in 0..4 {
            assert!((mean[i] - oracle[i] / 100.0).abs() < 1e-14);
        }
        assert!(mean.norm() < 0.5);
    }

    #[test]
    fn subspace_along_e1_is_positive_e1() {
        let x = fm(2, 3, &[1.0, 0.0, -2.0, 0.0, 4.0, 0.0]);
        let g = fit_subspace(&x, 1).unwrap();
        assert!((g.basis[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(g.basis[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn isotropic_cloud_full_span() {
        let x = FeatureMatrix::new(gaussian(2, 50, 5)).unwrap();
        let g = fit_subspace(&x, 2).unwrap();
        assert!(orthonormality_error(&g.basis) < 1e-10);
        assert!((g.projector() - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn anisotropic_cloud_recovers_dominant_axes() {
        let mut data = gaussian(3, 10_000, 7);
        let scales = [10f64.sqrt(), 1.0, 0.1f64.sqrt()];
        for (i, s) in scales.iter().enumerate() {
            data.row_mut(i).scale_mut(*s);
        }
        let x = FeatureMatrix::new(data.clone()).unwrap();
        let g = fit_subspace(&x, 2).unwrap();
        // oracle: explicitly formed covariance, dense eigensolver
        let mean = data.column_mean();
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for j in 0..data.ncols() {
            let c = data.column(j) - &mean;
            cov += &c * c.transpose();
        }
        cov /= data.ncols() as f64;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let truth = DMatrix::from_columns(&[eig.eigenvectors.column(idx[0]), eig.eigenvectors.column(idx[1])]);
        let sv = (truth.transpose() * &g.basis).singular_values();
        let min_cos = sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
        assert!(min_cos.acos() < 1e-6);
        // and those axes are the first two coordinates
        assert!(g.basis.row(2).norm() < 0.05);
    }

    #[test]
    fn subspace_dimension_errors() {
        let x = fm(2, 3, &[1.0, 0.0, -2.0, 0.0, 4.0, 0.0]);
        assert!(matches!(fit_subspace(&x, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(fit_subspace(&x, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(fit_subspace(&x, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn affine_simple_case() {
        let x = fm(2, 2, &[1.0, 0.0, 3.0, 0.0]);
        let a = fit_affine(&x, 1).unwrap();
        assert_eq!(a.offset.as_slice(), &[2.0, 0.0]);
        assert!((a.basis[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_translation_equivariance() {
        let data = gaussian(4, 12, 11);
        let shift = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0]);
        let mut moved = data.clone();
        for mut c in moved.column_iter_mut() {
            c += &shift;
        }
        let a = fit_affine(&FeatureMatrix::new(data).unwrap(), 2).unwrap();
        let b = fit_affine(&FeatureMatrix::new(moved).unwrap(), 2).unwrap();
        assert!((&a.basis - &b.basis).norm() < 1e-10);
        assert!((&b.offset - &a.offset - shift).norm() < 1e-12);
    }

    #[test]
    fn affine_basis_equals_subspace_basis() {
        let x = FeatureMatrix::new(gaussian(5, 20, 13)).unwrap();
        let a = fit_affine(&x, 3).unwrap();
        let g = fit_subspace(&x, 3).unwrap();
        assert_eq!(a.basis, g.basis);
        assert_eq!(a.offset, compute_mean(&x));
    }

    #[test]
    fn spd_identity_covariance() {
        // four points (±√2, 0), (0, ±√2): covariance I
        let r = 2f64.sqrt();
        let x = fm(2, 4, &[r, 0.0, -r, 0.0, 0.0, r, 0.0, -r]);
        let s = fit_spd(&x, 0.0).unwrap();
        assert!((&s.cov - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!(s.log.norm() < 1e-12);
    }

    #[test]
    fn spd_single_sample_is_ridged() {
        let x = fm(3, 1, &[1.0, 2.0, 3.0]);
        let s = fit_spd(&x, 1e-3).unwrap();
        let expect = DMatrix::<f64>::identity(3, 3) * (1e-3 * RIDGE_EPS);
        assert!((&s.cov - expect).norm() < 1e-30);
        assert!(s.cov.clone().cholesky().is_some());
    }

    #[test]
    fn spd_matches_two_pass_oracle() {
        let data = gaussian(5, 50, 17);
        let s = fit_spd(&FeatureMatrix::new(data.clone()).unwrap(), 0.0).unwrap();
        let mut mean = [0.0; 5];
        for i in 0..5 {
            for j in 0..50 {
                mean[i] += data[(i, j)];
            }
            mean[i] /= 50.0;
        }
        for a in 0..5 {
            for b in 0..5 {
                let mut acc = 0.0;
                for j in 0..50 {
                    acc += (data[(a, j)] - mean[a]) * (data[(b, j)] - mean[b]);
                }
                assert!((s.cov[(a, b)] - acc / 50.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clamping_warns_down_to_min_rank() {
        let small = fm(3, 2, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let big = FeatureMatrix::new(gaussian(3, 10, 1)).unwrap();
        assert_eq!(clamp_subspace_dim(&[big.clone(), small.clone()], 2).unwrap(), 1);
        assert_eq!(clamp_subspace_dim(&[big], 2).unwrap(), 2);
        let reps = represent_sets(
            &[small.clone(), small],
            &[1, 2],
            &ReprConfig { kind: VariationKind::Affine, subspace_dim: 10, ridge: 1e-6 },
        )
        .unwrap();
        assert_eq!(reps.len(), 2);
        match &reps[0].variation {
            Variation::Affine(a) => assert_eq!(a.subspace_dim(), 1),
            _ => panic!("wrong kind"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn subspace_is_orthonormal_and_permutation_invariant(
            seed in 0u64..10_000, d in 1usize..4, shift in 0usize..11
        ) {
            let data = gaussian(6, 12, seed);
            let x = FeatureMatrix::new(data.clone()).unwrap();
            let g = fit_subspace(&x, d).unwrap();
            prop_assert!(orthonormality_error(&g.basis) <= 1e-8);
            let cols: Vec<_> = (0..12).map(|j| data.column((j + shift) % 12).into_owned()).collect();
            let permuted = FeatureMatrix::new(DMatrix::from_columns(&cols)).unwrap();
            let h = fit_subspace(&permuted, d).unwrap();
            prop_assert!((g.projector() - h.projector()).norm() < 1e-8);
        }

        #[test]
        fn spd_is_certified_and_log_roundtrips(seed in 0u64..10_000, m in 2usize..12, ridge in 1e-4f64..1.0) {
            let x = FeatureMatrix::new(gaussian(4, m, seed)).unwrap();
            let s = fit_spd(&x, ridge).unwrap();
            prop_assert!(s.cov.clone().cholesky().is_some());
            let back = linalg::sym_exp(&s.log);
            prop_assert!((&back - &s.cov).norm() <= 1e-8 * s.cov.norm());
        }
    }
}

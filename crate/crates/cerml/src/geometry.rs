//! Distances between variation models, and from a Euclidean point to a model.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::repr::{AffinePoint, GrassmannPoint, SetRepresentation, SpdPoint, Variation};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn check_pair(a_dim: usize, a_d: usize, b_dim: usize, b_d: usize) -> Result<()> {
    dim_check("ambient dimension", a_dim, b_dim)?;
    dim_check("subspace dimension", a_d, b_d)
}

/// ‖P_a − P_b‖_F for equal-dimension subspaces, as √2‖(I − P_a)U_b‖_F.
/// The residual form keeps small distances accurate where the trace
/// identity 2d − 2‖U_aᵀU_b‖² cancels.
fn projector_gap(ua: &DMatrix<f64>, ub: &DMatrix<f64>) -> f64 {
    let residual = ub - ua * (ua.transpose() * ub);
    std::f64::consts::SQRT_2 * residual.norm()
}

/// Projection metric 2^{-1/2}‖U_aU_aᵀ − U_bU_bᵀ‖_F.
pub fn d_projection(a: &GrassmannPoint, b: &GrassmannPoint) -> Result<f64> {
    check_pair(a.dim(), a.subspace_dim(), b.dim(), b.subspace_dim())?;
    Ok(INV_SQRT2 * projector_gap(&a.basis, &b.basis))
}

/// 2^{-1/2}(‖P_a − P_b‖_F + ‖(I−P_a)μ_a − (I−P_b)μ_b‖).
pub fn d_affine(a: &AffinePoint, b: &AffinePoint) -> Result<f64> {
    check_pair(a.dim(), a.subspace_dim(), b.dim(), b.subspace_dim())?;
    let offset_gap = (a.residual_offset() - b.residual_offset()).norm();
    Ok(INV_SQRT2 * (projector_gap(&a.basis, &b.basis) + offset_gap))
}

/// Log-Euclidean distance ‖log C_a − log C_b‖_F.
pub fn d_logeuclidean(a: &SpdPoint, b: &SpdPoint) -> Result<f64> {
    dim_check("SPD dimension", a.dim(), b.dim())?;
    Ok((&a.log - &b.log).norm())
}

/// Distance between two variation models of the same kind.
pub fn d_variation(a: &Variation, b: &Variation) -> Result<f64> {
    match (a, b) {
        (Variation::Grassmann(a), Variation::Grassmann(b)) => d_projection(a, b),
        (Variation::Affine(a), Variation::Affine(b)) => d_affine(a, b),
        (Variation::Spd(a), Variation::Spd(b)) => d_logeuclidean(a, b),
        _ => Err(Error::InvalidInput(format!(
            "cannot compare {} with {}",
            a.kind().name(),
            b.kind().name()
        ))),
    }
}

/// Nearest-feature-subspace distance ‖x − UUᵀx‖.
pub fn d_point_subspace(x: &DVector<f64>, g: &GrassmannPoint) -> Result<f64> {
    dim_check("point dimension", g.dim(), x.len())?;
    Ok((x - &g.basis * (g.basis.transpose() * x)).norm())
}

/// Point to affine hull distance ‖(I − UUᵀ)(x − μ)‖.
pub fn d_point_affine(x: &DVector<f64>, a: &AffinePoint) -> Result<f64> {
    dim_check("point dimension", a.dim(), x.len())?;
    let r = x - &a.offset;
    Ok((&r - &a.basis * (a.basis.transpose() * &r)).norm())
}

/// Mahalanobis distance sqrt((x−μ)ᵀC⁻¹(x−μ)) through a Cholesky solve.
pub fn d_point_spd(x: &DVector<f64>, mean: &DVector<f64>, s: &SpdPoint) -> Result<f64> {
    dim_check("point dimension", s.dim(), x.len())?;
    dim_check("mean dimension", s.dim(), mean.len())?;
    let chol = s
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("SPD model lost positive definiteness".into()))?;
    let r = x - mean;
    // ‖L⁻¹r‖² = rᵀC⁻¹r
    let mut z = r;
    chol.l_dirty().solve_lower_triangular_mut(&mut z);
    Ok(z.norm())
}

/// Distance from a Euclidean point to a set's variation model.
pub fn d_point_model(x: &DVector<f64>, set: &SetRepresentation) -> Result<f64> {
    match &set.variation {
        Variation::Grassmann(g) => d_point_subspace(x, g),
        Variation::Affine(a) => d_point_affine(x, a),
        Variation::Spd(s) => d_point_spd(x, &set.mean, s),
    }
}

/// Pairwise model distances, rows indexed by `a`, columns by `b`.
pub fn variation_distances(a: &[&Variation], b: &[&Variation]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            out[(i, j)] = d_variation(p, q)?;
        }
    }
    Ok(out)
}

/// Symmetric pairwise distances within one collection of models.
pub fn variation_self_distances(points: &[&Variation]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = d_variation(points[i], points[j])?;
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Point-to-model distances: rows are the columns of `x`, columns the sets.
pub fn point_model_distances(x: &DMatrix<f64>, sets: &[&SetRepresentation]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.ncols(), sets.len());
    for (j, s) in sets.iter().enumerate() {
        for i in 0..x.ncols() {
            out[(i, j)] = d_point_model(&x.column(i).into_owned(), s)?;
        }
    }
    Ok(out)
}

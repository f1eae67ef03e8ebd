use nalgebra::{DMatrix, DVector};

use super::Problem;
use crate::error::{Error, Result};
use crate::graph::split_templates;
use crate::linalg;

/// Between- and within-class scatter of the stacked projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherSystem {
    pub between: DMatrix<f64>,
    /// Within-class matrix including the diagonal jitter.
    pub within: DMatrix<f64>,
    /// ‖M − Mᵀ‖_F of each matrix before symmetrization.
    pub asymmetry_between: f64,
    pub asymmetry_within: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherSolution {
    /// Stacked generalized eigenvectors, one column per output dimension.
    pub stacked: DMatrix<f64>,
    /// Per-view row blocks of `stacked`.
    pub weights: Vec<DMatrix<f64>>,
    pub eigenvalues: DVector<f64>,
    /// ‖M^bW − M^wWΛ‖_F / ‖M^bW‖_F
    pub residual: f64,
    pub system: FisherSystem,
}

#[derive(Clone, Copy)]
enum Template {
    Within,
    Between,
}

fn pick(t: Template, a: &DMatrix<f64>) -> DMatrix<f64> {
    let (w, b) = split_templates(a);
    match t {
        Template::Within => w,
        Template::Between => b,
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

/// Block matrix whose quadratic form is 2(D^t + λ1·G^t) for template t.
fn assemble(problem: &Problem, lambda1: f64, t: Template) -> DMatrix<f64> {
    let off = offsets(&problem.view_sizes());
    let total = *off.last().unwrap();
    let mut m = DMatrix::zeros(total, total);
    for (v, f) in problem.features.iter().enumerate() {
        let g = &problem.graph.views[v];
        let lap = match t {
            Template::Within => &g.laplacian_within,
            Template::Between => &g.laplacian_between,
        };
        let mut inner = lap * (2.0 * lambda1);
        let deg = problem.template_degrees(v, |a| pick(t, a));
        for i in 0..deg.len() {
            inner[(i, i)] += deg[i];
        }
        let blk = f * inner * f.transpose();
        let mut view = m.view_mut((off[v], off[v]), (f.nrows(), f.nrows()));
        view += blk;
    }
    for c in &problem.graph.couplings {
        let (fa, fb) = (&problem.features[c.a], &problem.features[c.b]);
        let blk = -(fa * pick(t, &c.affinity) * fb.transpose());
        let mut ab = m.view_mut((off[c.a], off[c.b]), (fa.nrows(), fb.nrows()));
        ab += &blk;
        let mut ba = m.view_mut((off[c.b], off[c.a]), (fb.nrows(), fa.nrows()));
        ba += blk.transpose();
    }
    m
}

impl FisherSystem {
    pub fn assemble(problem: &Problem, lambda1: f64, jitter: f64) -> Self {
        let mb = assemble(problem, lambda1, Template::Between);
        let mw = assemble(problem, lambda1, Template::Within);
        let asymmetry_between = linalg::asymmetry(&mb);
        let asymmetry_within = linalg::asymmetry(&mw);
        let between = linalg::symmetrize(&mb);
        let mut within = linalg::symmetrize(&mw);
        let n = within.nrows();
        let shift = jitter * within.trace() / n as f64;
        for i in 0..n {
            within[(i, i)] += shift;
        }
        Self { between, within, asymmetry_between, asymmetry_within }
    }

    /// ‖M^bW − M^wWΛ‖_F / ‖M^bW‖_F
    pub fn residual(&self, w: &DMatrix<f64>, lambda: &DVector<f64>) -> f64 {
        let bw = linalg::mul_accurate(&self.between, w);
        let ww = linalg::mul_accurate(&self.within, w);
        let scaled = DMatrix::from_fn(ww.nrows(), ww.ncols(), |i, j| ww[(i, j)] * lambda[j]);
        let denom = bw.norm();
        if denom == 0.0 {
            (bw - scaled).norm()
        } else {
            (bw - scaled).norm() / denom
        }
    }
}

/// Leading generalized eigenvectors of M^b w = λ M^w w, sorted by
/// descending λ and split into per-view blocks.
pub fn init_fisher(problem: &Problem, lambda1: f64, out_dim: usize, jitter: f64) -> Result<FisherSolution> {
    let system = FisherSystem::assemble(problem, lambda1, jitter);
    let total = system.within.nrows();
    if out_dim == 0 || out_dim > total {
        return Err(Error::InvalidInput(format!("out_dim {out_dim} outside 1..={total}")));
    }
    let (stacked, eigenvalues) = generalized_eigen(&system.between, &system.within, out_dim)?;
    let residual = system.residual(&stacked, &eigenvalues);
    let off = offsets(&problem.view_sizes());
    let weights = (0..problem.num_views())
        .map(|v| stacked.rows(off[v], off[v + 1] - off[v]).into_owned())
        .collect();
    Ok(FisherSolution { stacked, weights, eigenvalues, residual, system })
}

/// Top-k eigenpairs of the symmetric-definite pencil (a, b).
///
/// The pencil is reduced with the Cholesky factor of `b`.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class matrix is not positive definite after jitter".into()))?;
    let l = chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let left = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let (vals, vecs) = linalg::sym_eigen_desc(&linalg::symmetrize(&c));
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("generalized eigensolver produced non-finite values".into()));
    }
    let top = vecs.columns(0, k).into_owned();
    let lt = l.transpose();
    let w = lt
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let lambda = DVector::from_iterator(k, vals.iter().take(k).cloned());
    let (mut w, lambda) = refine(a, b, w, lambda)?;
    linalg::fix_signs(&mut w);
    Ok((w, lambda))
}

const REFINE_STEPS: usize = 3;

/// Newton refinement of each eigenpair against residuals evaluated with
/// compensated products. With an ill-conditioned `b` the reduced solve
/// leaves errors near the rounding floor of plain products; correcting
/// against an accurate residual removes them.
fn refine(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mut w: DMatrix<f64>,
    mut lambda: DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a.nrows();
    for j in 0..w.ncols() {
        let mut v = w.column(j).into_owned();
        let mut mu = lambda[j];
        for _ in 0..REFINE_STEPS {
            let vm = DMatrix::from_column_slice(n, 1, v.as_slice());
            let bv = linalg::mul_accurate(b, &vm);
            let av = linalg::mul_accurate(a, &vm);
            let vbv = linalg::dot2(v.iter().copied(), bv.iter().copied());
            // [A − μB, −Bv; −vᵀB, 0] [δ; δμ] = −[(A − μB)v; (1 − vᵀBv)/2]
            let mut jac = DMatrix::zeros(n + 1, n + 1);
            jac.view_mut((0, 0), (n, n)).copy_from(&(a - b * mu));
            for i in 0..n {
                jac[(i, n)] = -bv[i];
                jac[(n, i)] = -bv[i];
            }
            let mut rhs = DVector::zeros(n + 1);
            for i in 0..n {
                rhs[i] = mu.mul_add(bv[i], -av[i]);
            }
            rhs[n] = -(1.0 - vbv) / 2.0;
            let Some(step) = jac.lu().solve(&rhs) else { break };
            if step.iter().any(|x| !x.is_finite()) {
                break;
            }
            v += step.rows(0, n);
            mu += step[n];
        }
        w.set_column(j, &v);
        lambda[j] = mu;
    }
    Ok((w, lambda))
}

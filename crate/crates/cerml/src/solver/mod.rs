//! Objective, Fisher initialization, and alternating block updates.
//!
//! A [`Problem`] holds one kernel-feature matrix per view (rows = kernel
//! coordinates, columns = samples) and the graph tying the views together.
//! Each view v is projected by W_v, giving embeddings E_v = W_vᵀF_v.

mod fisher;
mod train;

pub use fisher::{init_fisher, FisherSolution, FisherSystem};
pub use train::{normalize_scale, solve, stationarity_report, SolveOptions, Solution};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{column_degrees, row_degrees, AffinityGraph};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub features: Vec<DMatrix<f64>>,
    pub graph: AffinityGraph,
}

impl Problem {
    pub fn new(features: Vec<DMatrix<f64>>, graph: AffinityGraph) -> Result<Self> {
        if features.len() != graph.views.len() {
            return Err(Error::Dimension(format!(
                "{} feature matrices for {} graph views",
                features.len(),
                graph.views.len()
            )));
        }
        for (v, (f, g)) in features.iter().zip(&graph.views).enumerate() {
            if f.ncols() != g.len() {
                return Err(Error::Dimension(format!(
                    "view {v}: {} samples in features, {} in graph",
                    f.ncols(),
                    g.len()
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("view {v}: non-finite kernel entries")));
            }
        }
        graph.validate()?;
        if graph.couplings.is_empty() {
            return Err(Error::InvalidInput("problem has no cross-view coupling".into()));
        }
        Ok(Self { features, graph })
    }

    pub fn num_views(&self) -> usize {
        self.features.len()
    }

    /// Kernel row counts per view, i.e. the row counts of each W_v.
    pub fn view_sizes(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.nrows()).collect()
    }

    /// Summed cross-affinity degrees of view `v` over every coupling it joins.
    pub fn cross_degrees(&self, v: usize) -> DVector<f64> {
        self.template_degrees(v, |a| a.clone())
    }

    pub(crate) fn template_degrees(
        &self,
        v: usize,
        template: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    ) -> DVector<f64> {
        let mut deg = DVector::zeros(self.features[v].ncols());
        for c in &self.graph.couplings {
            if c.a == v {
                deg += row_degrees(&template(&c.affinity));
            }
            if c.b == v {
                deg += column_degrees(&template(&c.affinity));
            }
        }
        deg
    }

    pub fn check_weights(&self, ws: &[DMatrix<f64>]) -> Result<()> {
        if ws.len() != self.num_views() {
            return Err(Error::Dimension(format!("{} weight blocks for {} views", ws.len(), self.num_views())));
        }
        let k = ws[0].ncols();
        for (v, (w, f)) in ws.iter().zip(&self.features).enumerate() {
            if w.nrows() != f.nrows() || w.ncols() != k {
                return Err(Error::Dimension(format!(
                    "view {v}: W is {:?}, expected ({}, {k})",
                    w.shape(),
                    f.nrows()
                )));
            }
        }
        Ok(())
    }
}

/// J and its three parts: J = distance + λ1·geometry + λ2·transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub distance: f64,
    pub geometry: f64,
    pub transform: f64,
}

pub fn embeddings(problem: &Problem, ws: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    ws.iter().zip(&problem.features).map(|(w, f)| w.transpose() * f).collect()
}

/// Σᵢ dᵢ‖eᵢ‖² for the columns eᵢ of `e`.
fn weighted_sq_norms(e: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    e.column_iter().zip(d.iter()).map(|(c, w)| w * c.norm_squared()).sum()
}

pub fn objective(problem: &Problem, ws: &[DMatrix<f64>], lambda1: f64, lambda2: f64) -> Result<ObjectiveTerms> {
    problem.check_weights(ws)?;
    let es = embeddings(problem, ws);
    let mut distance = 0.0;
    for c in &problem.graph.couplings {
        let (ea, eb) = (&es[c.a], &es[c.b]);
        let rows = weighted_sq_norms(ea, &row_degrees(&c.affinity));
        let cols = weighted_sq_norms(eb, &column_degrees(&c.affinity));
        let cross = (ea * &c.affinity).component_mul(eb).sum();
        distance += 0.5 * (rows + cols - 2.0 * cross);
    }
    let mut geometry = 0.0;
    let mut transform = 0.0;
    for (e, g) in es.iter().zip(&problem.graph.views) {
        geometry += (e * &g.laplacian).component_mul(e).sum();
        transform += 0.5 * e.norm_squared();
    }
    Ok(ObjectiveTerms {
        total: distance + lambda1 * geometry + lambda2 * transform,
        distance,
        geometry,
        transform,
    })
}

/// S_v without jitter and the right-hand side of the stationarity condition
/// S_v W_v = rhs.
fn block_system(
    problem: &Problem,
    ws: &[DMatrix<f64>],
    v: usize,
    lambda1: f64,
    lambda2: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let f = &problem.features[v];
    let n = f.ncols();
    let deg = problem.cross_degrees(v);
    let mut inner = &problem.graph.views[v].laplacian * (2.0 * lambda1);
    for i in 0..n {
        inner[(i, i)] += deg[i] + lambda2;
    }
    let s = linalg::symmetrize(&(f * inner * f.transpose()));
    let mut rhs = DMatrix::zeros(f.nrows(), ws[v].ncols());
    for c in &problem.graph.couplings {
        if c.a == v {
            rhs += f * (&c.affinity * (problem.features[c.b].transpose() * &ws[c.b]));
        }
        if c.b == v {
            rhs += f * (c.affinity.transpose() * (problem.features[c.a].transpose() * &ws[c.a]));
        }
    }
    (s, rhs)
}

/// Analytic ∂J/∂W_v.
pub fn block_gradient(
    problem: &Problem,
    ws: &[DMatrix<f64>],
    v: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<f64>> {
    problem.check_weights(ws)?;
    let (s, rhs) = block_system(problem, ws, v, lambda1, lambda2);
    Ok(s * &ws[v] - rhs)
}

/// Central finite-difference ∂J/∂W_v with step `h`.
pub fn finite_difference_gradient(
    problem: &Problem,
    ws: &[DMatrix<f64>],
    v: usize,
    lambda1: f64,
    lambda2: f64,
    h: f64,
) -> Result<DMatrix<f64>> {
    problem.check_weights(ws)?;
    let mut probe = ws.to_vec();
    let mut grad = DMatrix::zeros(ws[v].nrows(), ws[v].ncols());
    for j in 0..ws[v].ncols() {
        for i in 0..ws[v].nrows() {
            let orig = ws[v][(i, j)];
            probe[v][(i, j)] = orig + h;
            let up = objective(problem, &probe, lambda1, lambda2)?.total;
            probe[v][(i, j)] = orig - h;
            let down = objective(problem, &probe, lambda1, lambda2)?.total;
            probe[v][(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Closed-form minimizer of J over W_v with the other blocks fixed:
/// (S_v + jitter·mean|diag S_v|·I) W_v = rhs.
pub fn update_block(
    problem: &Problem,
    ws: &[DMatrix<f64>],
    v: usize,
    lambda1: f64,
    lambda2: f64,
    jitter: f64,
) -> Result<DMatrix<f64>> {
    problem.check_weights(ws)?;
    if v >= problem.num_views() {
        return Err(Error::InvalidInput(format!("no view {v}")));
    }
    let (mut s, rhs) = block_system(problem, ws, v, lambda1, lambda2);
    let shift = jitter * linalg::mean_abs_diag(&s);
    for i in 0..s.nrows() {
        s[(i, i)] += shift;
    }
    linalg::solve(&s, &rhs).map_err(|e| Error::Numerical(format!("block update of view {v}: {e}")))
}

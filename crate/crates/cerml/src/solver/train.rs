use nalgebra::DMatrix;

use super::{block_gradient, embeddings, init_fisher, objective, update_block, Problem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    pub out_dim: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub jitter: f64,
    /// Order in which views are updated within one sweep.
    pub order: Vec<usize>,
    /// Rebalance and whiten the embeddings after every sweep.
    pub rescale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub weights: Vec<DMatrix<f64>>,
    /// J after initialization, then after every sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub init_residual: f64,
    pub asymmetry: f64,
}

impl Solution {
    /// |J_t − J_{t−1}| / |J_t| for the last sweep.
    pub fn final_rel_change(&self) -> Option<f64> {
        let n = self.trace.len();
        (n >= 2).then(|| rel_change(self.trace[n - 2], self.trace[n - 1]))
    }
}

fn rel_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if cur == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / cur.abs()
    }
}

/// Rescale each view so ‖W_vᵀF_v‖_F² equals its sample count, then whiten
/// the pooled embedding covariance Σ_v E_vE_vᵀ / Σ_v N_v to the identity.
pub fn normalize_scale(problem: &Problem, ws: &mut [DMatrix<f64>]) -> Result<()> {
    let es = embeddings(problem, ws);
    for (v, (w, e)) in ws.iter_mut().zip(&es).enumerate() {
        let energy = e.norm_squared();
        if !(energy > 0.0 && energy.is_finite()) {
            return Err(Error::Numerical(format!("embedding of view {v} collapsed (energy {energy})")));
        }
        *w *= (e.ncols() as f64 / energy).sqrt();
    }
    let es = embeddings(problem, ws);
    let k = ws[0].ncols();
    let mut cov = DMatrix::zeros(k, k);
    let mut count = 0usize;
    for e in &es {
        cov += e * e.transpose();
        count += e.ncols();
    }
    cov /= count as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("embedding covariance is rank deficient; lower out_dim".into()))?;
    // W ← W L⁻ᵀ
    let l = chol.l();
    for w in ws.iter_mut() {
        let t = l
            .solve_lower_triangular(&w.transpose())
            .ok_or_else(|| Error::Numerical("whitening solve failed".into()))?;
        *w = t.transpose();
    }
    Ok(())
}

fn check_options(problem: &Problem, opts: &SolveOptions) -> Result<()> {
    if !(opts.lambda1 >= 0.0) || !(opts.lambda2 > 0.0) {
        return Err(Error::InvalidInput("need lambda1 >= 0 and lambda2 > 0".into()));
    }
    if opts.max_iters == 0 || !(opts.rel_tol > 0.0) || opts.out_dim == 0 {
        return Err(Error::InvalidInput("need max_iters >= 1, rel_tol > 0, out_dim >= 1".into()));
    }
    if !(opts.jitter >= 0.0) {
        return Err(Error::InvalidInput("jitter must be >= 0".into()));
    }
    let mut seen = vec![false; problem.num_views()];
    for &v in &opts.order {
        if v >= seen.len() || seen[v] {
            return Err(Error::InvalidInput(format!("bad update order {:?}", opts.order)));
        }
        seen[v] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidInput(format!("update order {:?} misses a view", opts.order)));
    }
    Ok(())
}

/// Fisher initialization followed by alternating block updates.
pub fn solve(problem: &Problem, opts: &SolveOptions) -> Result<Solution> {
    check_options(problem, opts)?;
    let init = init_fisher(problem, opts.lambda1, opts.out_dim, opts.jitter)?;
    log::debug!("fisher init residual {:.3e}", init.residual);
    let mut ws = init.weights;
    if opts.rescale {
        normalize_scale(problem, &mut ws)?;
    }
    let j0 = objective(problem, &ws, opts.lambda1, opts.lambda2)?.total;
    let mut trace = vec![j0];
    let mut converged = false;
    for it in 1..=opts.max_iters {
        for &v in &opts.order {
            ws[v] = update_block(problem, &ws, v, opts.lambda1, opts.lambda2, opts.jitter)?;
        }
        if opts.rescale {
            normalize_scale(problem, &mut ws)?;
        }
        let j = objective(problem, &ws, opts.lambda1, opts.lambda2)?.total;
        if !j.is_finite() {
            return Err(Error::Numerical(format!("objective became {j} at iteration {it}")));
        }
        let prev = *trace.last().unwrap();
        trace.push(j);
        log::debug!("iteration {it}: J = {j:.6e}");
        if rel_change(prev, j) < opts.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("stopped at max_iters={} before |dJ|/|J| < {}", opts.max_iters, opts.rel_tol);
    }
    Ok(Solution {
        weights: ws,
        trace,
        converged,
        init_residual: init.residual,
        asymmetry: init.system.asymmetry_between.max(init.system.asymmetry_within),
    })
}

/// For each view: ‖∂J/∂W_v‖ before and after one block update from `ws`.
pub fn stationarity_report(problem: &Problem, ws: &[DMatrix<f64>], opts: &SolveOptions) -> Result<Vec<(f64, f64)>> {
    (0..problem.num_views())
        .map(|v| {
            let before = block_gradient(problem, ws, v, opts.lambda1, opts.lambda2)?.norm();
            let mut next = ws.to_vec();
            next[v] = update_block(problem, ws, v, opts.lambda1, opts.lambda2, opts.jitter)?;
            let after = block_gradient(problem, &next, v, opts.lambda1, opts.lambda2)?.norm();
            Ok((before, after))
        })
        .collect()
}

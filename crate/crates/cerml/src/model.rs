//! Training pipeline: representations → kernels → graphs → solver, and the
//! resulting projection model with its test-time kernel columns.

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::config::{Mode, TrainConfig, ViewRole};
use crate::error::{dim_check, Error, Result};
use crate::geometry;
use crate::graph::{AffinityGraph, Coupling, ViewGraph};
use crate::kernels::{self, KernelKind};
use crate::linalg;
use crate::repr::{self, FeatureMatrix, ReprConfig, SetRepresentation, Variation, VariationKind};
use crate::solver::{self, Problem, SolveOptions};

const PSD_TOL: f64 = 1e-8;

/// Single feature vectors (columns) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: DMatrix<f64>,
    pub labels: Vec<i64>,
}

impl LabeledPoints {
    pub fn new(points: DMatrix<f64>, labels: Vec<i64>) -> Result<Self> {
        dim_check("still labels", points.ncols(), labels.len())?;
        if points.ncols() == 0 || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("stills must be nonempty and finite".into()));
        }
        Ok(Self { points, labels })
    }
}

/// Everything the model keeps from training to build test-time kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub stills: Option<LabeledPoints>,
    pub sets: Vec<SetRepresentation>,
}

impl TrainingData {
    /// Fit one variation model per raw set with the configured settings.
    pub fn from_sets(
        stills: Option<LabeledPoints>,
        sets: &[FeatureMatrix],
        labels: &[i64],
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let rc = ReprConfig { kind: cfg.variation, subspace_dim: cfg.subspace_dim, ridge: cfg.ridge };
        let reps = repr::represent_sets(sets, labels, &rc)?;
        Ok(Self { stills, sets: reps })
    }

    pub fn set_labels(&self) -> Vec<i64> {
        self.sets.iter().map(|s| s.label).collect()
    }

    pub fn dim(&self) -> usize {
        self.sets.first().map_or(0, |s| s.mean.len())
    }

    /// Subspace dimension shared by all variation models (0 for SPD).
    pub fn subspace_dim(&self) -> usize {
        match self.sets.first().map(|s| &s.variation) {
            Some(Variation::Grassmann(g)) => g.subspace_dim(),
            Some(Variation::Affine(a)) => a.subspace_dim(),
            _ => 0,
        }
    }

    pub fn variation_kind(&self) -> Option<VariationKind> {
        self.sets.first().map(|s| s.variation.kind())
    }

    fn means(&self) -> DMatrix<f64> {
        let cols: Vec<_> = self.sets.iter().map(|s| s.mean.clone()).collect();
        DMatrix::from_columns(&cols)
    }

    fn variations(&self) -> Vec<&Variation> {
        self.sets.iter().map(|s| &s.variation).collect()
    }

    fn validate(&self, mode: Mode) -> Result<()> {
        if self.sets.len() < 2 {
            return Err(Error::InvalidInput("need at least two training sets".into()));
        }
        let dim = self.dim();
        let kind = self.sets[0].variation.kind();
        for s in &self.sets {
            dim_check("set mean dimension", dim, s.mean.len())?;
            dim_check("variation dimension", dim, s.variation.dim())?;
            if s.variation.kind() != kind {
                return Err(Error::InvalidInput("training sets mix variation model types".into()));
            }
        }
        match (mode, &self.stills) {
            (Mode::ThreeView, None) => Err(Error::InvalidInput("three-view training needs stills".into())),
            (Mode::ThreeView, Some(st)) => dim_check("still dimension", dim, st.points.nrows()),
            (Mode::TwoView, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidths {
    pub still: Option<f64>,
    pub mean: f64,
    pub variation: f64,
    pub cross: Option<f64>,
}

/// Training kernels per view. `cross` is stills × sets.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBundle {
    pub still: Option<DMatrix<f64>>,
    pub mean: DMatrix<f64>,
    pub variation: DMatrix<f64>,
    pub cross: Option<DMatrix<f64>>,
    pub bandwidths: Bandwidths,
    pub augmented: bool,
    /// Diagonal jitter added by PSD repair, summed over views.
    pub psd_jitter: f64,
}

impl KernelBundle {
    /// Kernel-feature matrices (rows = kernel coordinates, columns = samples)
    /// in the view order of `mode`.
    pub fn features(&self, mode: Mode) -> Vec<DMatrix<f64>> {
        match mode {
            Mode::TwoView => vec![self.mean.clone(), self.variation.clone()],
            Mode::ThreeView => {
                let still = self.still.clone().expect("three-view bundle has a still kernel");
                match &self.cross {
                    Some(kxz) => vec![
                        stack_rows(&still, &kxz.transpose()),
                        self.mean.clone(),
                        stack_rows(&self.variation, kxz),
                    ],
                    None => vec![still, self.mean.clone(), self.variation.clone()],
                }
            }
        }
    }
}

struct Distances {
    still: Option<DMatrix<f64>>,
    mean: DMatrix<f64>,
    variation: DMatrix<f64>,
}

fn square_kernel(
    kind: KernelKind,
    dists: &DMatrix<f64>,
    sigma: f64,
    linear: impl FnOnce() -> Result<DMatrix<f64>>,
) -> Result<(DMatrix<f64>, f64)> {
    let k = match kind {
        KernelKind::Rbf => {
            let mut k = kernels::gaussian_from_distances(dists, sigma)?;
            k.fill_diagonal(1.0);
            k
        }
        KernelKind::Linear => linear()?,
    };
    kernels::repair_psd(&k, PSD_TOL)
}

fn build_kernels(data: &TrainingData, cfg: &TrainConfig) -> Result<(KernelBundle, Distances)> {
    let means = data.means();
    let vars = data.variations();
    let d_mean = linalg::euclidean_distances(&means, &means);
    let d_var = geometry::variation_self_distances(&vars)?;
    let s_mean = kernels::bandwidth_square(&d_mean)?;
    let s_var = kernels::bandwidth_square(&d_var)?;
    let (k_mean, j1) = square_kernel(cfg.kernel, &d_mean, s_mean, || kernels::linear_kernel(&means, &means))?;
    let (k_var, j2) = square_kernel(cfg.kernel, &d_var, s_var, || kernels::linear_riemann_kernel(&vars, &vars))?;
    let mut bundle = KernelBundle {
        still: None,
        mean: k_mean,
        variation: k_var,
        cross: None,
        bandwidths: Bandwidths { still: None, mean: s_mean, variation: s_var, cross: None },
        augmented: false,
        psd_jitter: j1 + j2,
    };
    let mut d_still = None;
    if cfg.mode == Mode::ThreeView {
        let st = data.stills.as_ref().expect("validated");
        let d = linalg::euclidean_distances(&st.points, &st.points);
        let s = kernels::bandwidth_square(&d)?;
        let (k, j) = square_kernel(cfg.kernel, &d, s, || kernels::linear_kernel(&st.points, &st.points))?;
        bundle.still = Some(k);
        bundle.bandwidths.still = Some(s);
        bundle.psd_jitter += j;
        d_still = Some(d);
        if cfg.cross_augment {
            let sets: Vec<&SetRepresentation> = data.sets.iter().collect();
            let dxz = geometry::point_model_distances(&st.points, &sets)?;
            let sxz = kernels::bandwidth_all(&dxz)?;
            bundle.cross = Some(kernels::gaussian_from_distances(&dxz, sxz)?);
            bundle.bandwidths.cross = Some(sxz);
            bundle.augmented = true;
        }
    } else if cfg.cross_augment {
        log::warn!("cross_augment has no effect in two-view mode");
    }
    Ok((bundle, Distances { still: d_still, mean: d_mean, variation: d_var }))
}

fn build_graph(data: &TrainingData, dists: &Distances, bw: &Bandwidths, cfg: &TrainConfig) -> Result<AffinityGraph> {
    let set_labels = data.set_labels();
    let view = |d: &DMatrix<f64>, labels: &[i64], sigma: f64| {
        ViewGraph::build(d, labels, cfg.k1, cfg.k2, sigma, cfg.intra_normalize)
    };
    let mean = view(&dists.mean, &set_labels, bw.mean)?;
    let variation = view(&dists.variation, &set_labels, bw.variation)?;
    match cfg.mode {
        Mode::TwoView => Ok(AffinityGraph {
            views: vec![mean, variation],
            couplings: vec![Coupling::new(0, 1, &set_labels, &set_labels)?],
        }),
        Mode::ThreeView => {
            let st = data.stills.as_ref().expect("validated");
            let d = dists.still.as_ref().expect("three-view distances");
            let still = view(d, &st.labels, bw.still.expect("three-view bandwidth"))?;
            Ok(AffinityGraph {
                views: vec![still, mean, variation],
                couplings: vec![
                    Coupling::new(0, 1, &st.labels, &set_labels)?,
                    Coupling::new(0, 2, &st.labels, &set_labels)?,
                ],
            })
        }
    }
}

/// Kernels, graph, and solver problem for the given training data.
pub fn build_problem(data: &TrainingData, cfg: &TrainConfig) -> Result<(Problem, KernelBundle)> {
    cfg.validate()?;
    data.validate(cfg.mode)?;
    let (bundle, dists) = build_kernels(data, cfg)?;
    let graph = build_graph(data, &dists, &bundle.bandwidths, cfg)?;
    let problem = Problem::new(bundle.features(cfg.mode), graph)?;
    Ok((problem, bundle))
}

fn class_count(data: &TrainingData) -> usize {
    let mut labels = data.set_labels();
    if let Some(st) = &data.stills {
        labels.extend_from_slice(&st.labels);
    }
    labels.sort_unstable();
    labels.dedup();
    labels.len()
}

/// Solver options implied by a config for a given problem.
pub fn solve_options(data: &TrainingData, problem: &Problem, cfg: &TrainConfig) -> SolveOptions {
    let roles = cfg.mode.roles();
    let order = match &cfg.update_order {
        Some(o) => o.iter().map(|r| roles.iter().position(|x| x == r).expect("validated")).collect(),
        None => (0..roles.len()).collect(),
    };
    let total: usize = problem.view_sizes().iter().sum();
    let out_dim = cfg.out_dim.unwrap_or_else(|| class_count(data).saturating_sub(1).max(1)).min(total);
    SolveOptions {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        out_dim,
        max_iters: cfg.max_iters,
        rel_tol: cfg.rel_tol,
        jitter: cfg.jitter,
        order,
        rescale: cfg.rescale,
    }
}

/// Learned projections plus what is needed to embed new data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub config: TrainConfig,
    pub data: TrainingData,
    pub bandwidths: Bandwidths,
    /// One block per view, in the order of `config.mode.roles()`.
    pub weights: Vec<DMatrix<f64>>,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub init_residual: f64,
    pub fingerprint: String,
}

pub fn train(data: TrainingData, cfg: &TrainConfig) -> Result<ProjectionModel> {
    let (problem, bundle) = build_problem(&data, cfg)?;
    let opts = solve_options(&data, &problem, cfg);
    let sol = solver::solve(&problem, &opts)?;
    let fingerprint = fingerprint(&data, cfg, &bundle.bandwidths);
    Ok(ProjectionModel {
        config: cfg.clone(),
        data,
        bandwidths: bundle.bandwidths,
        weights: sol.weights,
        trace: sol.trace,
        converged: sol.converged,
        init_residual: sol.init_residual,
        fingerprint,
    })
}

fn hash_matrix(h: &mut Sha256, m: &DMatrix<f64>) {
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
}

/// Digest of the training data and every setting that shapes kernel columns.
pub fn fingerprint(data: &TrainingData, cfg: &TrainConfig, bw: &Bandwidths) -> String {
    let mut h = Sha256::new();
    h.update(cfg.mode.name());
    h.update(cfg.kernel.name());
    h.update([cfg.cross_augment as u8]);
    for s in [bw.still, Some(bw.mean), Some(bw.variation), bw.cross].into_iter().flatten() {
        h.update(s.to_bits().to_le_bytes());
    }
    if let Some(st) = &data.stills {
        hash_matrix(&mut h, &st.points);
        for l in &st.labels {
            h.update(l.to_le_bytes());
        }
    }
    for s in &data.sets {
        h.update(s.label.to_le_bytes());
        hash_matrix(&mut h, &DMatrix::from_column_slice(s.mean.len(), 1, s.mean.as_slice()));
        match &s.variation {
            Variation::Grassmann(g) => hash_matrix(&mut h, &g.basis),
            Variation::Affine(a) => {
                hash_matrix(&mut h, &a.basis);
                hash_matrix(&mut h, &DMatrix::from_column_slice(a.offset.len(), 1, a.offset.as_slice()));
            }
            Variation::Spd(p) => hash_matrix(&mut h, &p.cov),
        }
    }
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Kernel columns of new samples against the training data of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelColumns {
    pub role: ViewRole,
    pub fingerprint: String,
    pub data: DMatrix<f64>,
}

impl ProjectionModel {
    pub fn out_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn role_index(&self, role: ViewRole) -> Result<usize> {
        self.config
            .mode
            .roles()
            .iter()
            .position(|r| *r == role)
            .ok_or_else(|| Error::InvalidInput(format!("{} model has no {} view", self.config.mode.name(), role.name())))
    }

    pub fn weights_for(&self, role: ViewRole) -> Result<&DMatrix<f64>> {
        Ok(&self.weights[self.role_index(role)?])
    }

    fn augmented(&self) -> bool {
        self.bandwidths.cross.is_some()
    }

    fn columns(&self, role: ViewRole, data: DMatrix<f64>) -> KernelColumns {
        KernelColumns { role, fingerprint: self.fingerprint.clone(), data }
    }

    fn training_stills(&self) -> Result<&LabeledPoints> {
        self.data.stills.as_ref().ok_or_else(|| Error::InvalidInput("model has no training stills".into()))
    }

    /// Fit variation models for new sets with the training settings.
    pub fn represent(&self, sets: &[FeatureMatrix], labels: &[i64]) -> Result<Vec<SetRepresentation>> {
        dim_check("set labels", sets.len(), labels.len())?;
        let d = self.data.subspace_dim();
        sets.iter()
            .zip(labels)
            .map(|(x, &label)| {
                dim_check("set feature dimension", self.data.dim(), x.dim())?;
                let variation = match self.config.variation {
                    VariationKind::Subspace => Variation::Grassmann(repr::fit_subspace(x, d)?),
                    VariationKind::Affine => Variation::Affine(repr::fit_affine(x, d)?),
                    VariationKind::Spd => Variation::Spd(repr::fit_spd(x, self.config.ridge)?),
                };
                Ok(SetRepresentation { mean: repr::compute_mean(x), variation, label })
            })
            .collect()
    }

    pub fn still_columns(&self, x: &DMatrix<f64>) -> Result<KernelColumns> {
        self.role_index(ViewRole::Still)?;
        let st = self.training_stills()?;
        dim_check("still dimension", st.points.nrows(), x.nrows())?;
        let k = match self.config.kernel {
            KernelKind::Rbf => kernels::rbf_kernel(&st.points, x, self.bandwidths.still.expect("still bandwidth"))?,
            KernelKind::Linear => kernels::linear_kernel(&st.points, x)?,
        };
        let data = match self.bandwidths.cross {
            Some(sxz) => {
                let sets: Vec<&SetRepresentation> = self.data.sets.iter().collect();
                let kxz = kernels::cross_kernel(x, &sets, sxz)?.transpose();
                stack_rows(&k, &kxz)
            }
            None => k,
        };
        Ok(self.columns(ViewRole::Still, data))
    }

    pub fn mean_columns(&self, means: &DMatrix<f64>) -> Result<KernelColumns> {
        let train = self.data.means();
        dim_check("mean dimension", train.nrows(), means.nrows())?;
        let k = match self.config.kernel {
            KernelKind::Rbf => kernels::rbf_kernel(&train, means, self.bandwidths.mean)?,
            KernelKind::Linear => kernels::linear_kernel(&train, means)?,
        };
        Ok(self.columns(ViewRole::Mean, k))
    }

    pub fn variation_columns(&self, sets: &[SetRepresentation]) -> Result<KernelColumns> {
        let train = self.data.variations();
        let new: Vec<&Variation> = sets.iter().map(|s| &s.variation).collect();
        let k = match self.config.kernel {
            KernelKind::Rbf => kernels::riemann_cross_kernel(&train, &new, self.bandwidths.variation)?,
            KernelKind::Linear => kernels::linear_riemann_kernel(&train, &new)?,
        };
        let data = match (self.augmented(), self.bandwidths.cross) {
            (true, Some(sxz)) => {
                let st = self.training_stills()?;
                let refs: Vec<&SetRepresentation> = sets.iter().collect();
                stack_rows(&k, &kernels::cross_kernel(&st.points, &refs, sxz)?)
            }
            _ => k,
        };
        Ok(self.columns(ViewRole::Variation, data))
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

//! Test-time embedding, protocol distances, and recognition metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::model::{KernelColumns, ProjectionModel};
use crate::repr::SetRepresentation;

/// ψ = Wᵀk for each kernel column k.
pub fn embed(model: &ProjectionModel, cols: &KernelColumns) -> Result<DMatrix<f64>> {
    if cols.fingerprint != model.fingerprint {
        return Err(Error::InvalidInput(format!(
            "kernel columns were built against training data {} but the model expects {}",
            cols.fingerprint, model.fingerprint
        )));
    }
    let w = model.weights_for(cols.role)?;
    dim_check("kernel column length", w.nrows(), cols.data.nrows())?;
    Ok(w.transpose() * &cols.data)
}

/// Embeddings of sets in the mean and variation views (one column per set).
#[derive(Debug, Clone, PartialEq)]
pub struct SetEmbeddings {
    pub mean: DMatrix<f64>,
    pub variation: DMatrix<f64>,
}

impl SetEmbeddings {
    pub fn len(&self) -> usize {
        self.mean.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.ncols() == 0
    }
}

pub fn embed_sets(model: &ProjectionModel, sets: &[SetRepresentation]) -> Result<SetEmbeddings> {
    let means: Vec<DVector<f64>> = sets.iter().map(|s| s.mean.clone()).collect();
    let means = DMatrix::from_columns(&means);
    Ok(SetEmbeddings {
        mean: embed(model, &model.mean_columns(&means)?)?,
        variation: embed(model, &model.variation_columns(sets)?)?,
    })
}

pub fn embed_stills(model: &ProjectionModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    embed(model, &model.still_columns(x)?)
}

/// w_m‖ψ_x − ψ_y‖ + w_v‖ψ_x − ψ_z‖; unit weights give the plain sum.
pub fn pair_distance_v2s(x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, weights: (f64, f64)) -> f64 {
    weights.0 * (x - y).norm() + weights.1 * (x - z).norm()
}

/// w_m‖y_i − y_j‖ + w_v‖z_i − z_j‖ for sets i = (y_i, z_i) and j = (y_j, z_j).
pub fn pair_distance_v2v(
    i: (&DVector<f64>, &DVector<f64>),
    j: (&DVector<f64>, &DVector<f64>),
    weights: (f64, f64),
) -> f64 {
    weights.0 * (i.0 - j.0).norm() + weights.1 * (i.1 - j.1).norm()
}

/// Distances from each probe set (rows) to each gallery still (columns).
pub fn v2s_distances(sets: &SetEmbeddings, stills: &DMatrix<f64>, weights: (f64, f64)) -> DMatrix<f64> {
    DMatrix::from_fn(sets.len(), stills.ncols(), |i, j| {
        pair_distance_v2s(
            &stills.column(j).into_owned(),
            &sets.mean.column(i).into_owned(),
            &sets.variation.column(i).into_owned(),
            weights,
        )
    })
}

/// Distances from each probe still (rows) to each gallery set (columns);
/// the exact transpose of [`v2s_distances`].
pub fn s2v_distances(stills: &DMatrix<f64>, sets: &SetEmbeddings, weights: (f64, f64)) -> DMatrix<f64> {
    v2s_distances(sets, stills, weights).transpose()
}

pub fn v2v_distances(probes: &SetEmbeddings, gallery: &SetEmbeddings, weights: (f64, f64)) -> DMatrix<f64> {
    DMatrix::from_fn(probes.len(), gallery.len(), |i, j| {
        pair_distance_v2v(
            (&probes.mean.column(i).into_owned(), &probes.variation.column(i).into_owned()),
            (&gallery.mean.column(j).into_owned(), &gallery.variation.column(j).into_owned()),
            weights,
        )
    })
}

/// Whether probe i may be matched with gallery item i (same underlying item).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfMatch {
    Allow,
    Exclude,
}

/// Fraction of probes whose nearest gallery item shares their label.
/// Ties go to the smaller gallery index.
pub fn rank1_identification(
    dists: &DMatrix<f64>,
    probe_labels: &[i64],
    gallery_labels: &[i64],
    self_match: SelfMatch,
) -> Result<f64> {
    dim_check("probe labels", dists.nrows(), probe_labels.len())?;
    dim_check("gallery labels", dists.ncols(), gallery_labels.len())?;
    if dists.nrows() == 0 {
        return Err(Error::InvalidInput("no probes".into()));
    }
    let mut hits = 0usize;
    for i in 0..dists.nrows() {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..dists.ncols() {
            if self_match == SelfMatch::Exclude && i == j {
                continue;
            }
            let d = dists[(i, j)];
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((j, d));
            }
        }
        let (j, _) = best.ok_or_else(|| Error::InvalidInput("gallery is empty after self-exclusion".into()))?;
        if gallery_labels[j] == probe_labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / dists.nrows() as f64)
}

/// True-accept rate at the most permissive score threshold whose empirical
/// false-accept rate does not exceed `far`. A pair is accepted when its
/// score is at least the threshold; scores are similarities.
pub fn verification_at_far(scores: &[f64], genuine: &[bool], far: f64) -> Result<f64> {
    dim_check("genuine flags", scores.len(), genuine.len())?;
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::InvalidInput(format!("far must lie in [0, 1], got {far}")));
    }
    let mut imp: Vec<f64> = scores.iter().zip(genuine).filter(|(_, g)| !**g).map(|(s, _)| *s).collect();
    let gen: Vec<f64> = scores.iter().zip(genuine).filter(|(_, g)| **g).map(|(s, _)| *s).collect();
    if imp.is_empty() {
        return Err(Error::InvalidInput("no impostor pairs".into()));
    }
    if gen.is_empty() {
        return Err(Error::InvalidInput("no genuine pairs".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    imp.sort_by(|a, b| b.total_cmp(a));
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| a.total_cmp(b));
    candidates.dedup();
    let n_imp = imp.len() as f64;
    // ascending thresholds: the first one that meets the budget is the most permissive
    for t in candidates {
        let accepted = imp.iter().take_while(|&&s| s >= t).count() as f64;
        if accepted / n_imp <= far {
            let tar = gen.iter().filter(|&&s| s >= t).count() as f64;
            return Ok(tar / gen.len() as f64);
        }
    }
    Ok(0.0)
}

/// VR@FAR over every probe–gallery pair, scoring by negated distance.
pub fn verification_from_distances(
    dists: &DMatrix<f64>,
    probe_labels: &[i64],
    gallery_labels: &[i64],
    far: f64,
    self_match: SelfMatch,
) -> Result<f64> {
    dim_check("probe labels", dists.nrows(), probe_labels.len())?;
    dim_check("gallery labels", dists.ncols(), gallery_labels.len())?;
    let mut scores = Vec::new();
    let mut genuine = Vec::new();
    for i in 0..dists.nrows() {
        for j in 0..dists.ncols() {
            if self_match == SelfMatch::Exclude && i == j {
                continue;
            }
            scores.push(-dists[(i, j)]);
            genuine.push(probe_labels[i] == gallery_labels[j]);
        }
    }
    verification_at_far(&scores, &genuine, far)
}

/// Rank-1 of a nearest-class-mean classifier on raw Euclidean features.
pub fn nearest_class_mean_rank1(
    probes: &DMatrix<f64>,
    probe_labels: &[i64],
    gallery: &DMatrix<f64>,
    gallery_labels: &[i64],
) -> Result<f64> {
    dim_check("feature dimension", gallery.nrows(), probes.nrows())?;
    dim_check("gallery labels", gallery.ncols(), gallery_labels.len())?;
    let mut classes: Vec<i64> = gallery_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let centers: Vec<DVector<f64>> = classes
        .iter()
        .map(|c| {
            let idx: Vec<usize> = (0..gallery.ncols()).filter(|&j| gallery_labels[j] == *c).collect();
            idx.iter().fold(DVector::zeros(gallery.nrows()), |acc, &j| acc + gallery.column(j)) / idx.len() as f64
        })
        .collect();
    let centers = DMatrix::from_columns(&centers);
    let dists = crate::linalg::euclidean_distances(probes, &centers);
    rank1_identification(&dists, probe_labels, &classes, SelfMatch::Allow)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    V2S,
    S2V,
    V2V,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::V2S => "v2s",
            Protocol::S2V => "s2v",
            Protocol::V2V => "v2v",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v2s" => Ok(Self::V2S),
            "s2v" => Ok(Self::S2V),
            "v2v" => Ok(Self::V2V),
            other => Err(Error::InvalidInput(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub rank1: f64,
    pub far: f64,
    pub vr_at_far: f64,
    pub probes: usize,
    pub gallery: usize,
}

impl EvalReport {
    pub fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("protocol".into(), self.protocol.name().into()),
            ("rank1".into(), self.rank1.to_string()),
            (format!("vr_at_far_{}", self.far), self.vr_at_far.to_string()),
            ("probes".into(), self.probes.to_string()),
            ("gallery".into(), self.gallery.to_string()),
        ]
    }
}

/// New data to score against the model's training gallery.
#[derive(Debug, Clone, Default)]
pub struct Probes {
    pub sets: Vec<SetRepresentation>,
    pub stills: Option<(DMatrix<f64>, Vec<i64>)>,
}

/// Distance matrix (probes × gallery) plus labels for a protocol, with the
/// model's training data as gallery.
pub fn protocol_distances(
    model: &ProjectionModel,
    probes: &Probes,
    protocol: Protocol,
) -> Result<(DMatrix<f64>, Vec<i64>, Vec<i64>)> {
    let w = (model.config.weight_mean, model.config.weight_variation);
    let set_labels = |s: &[SetRepresentation]| s.iter().map(|r| r.label).collect::<Vec<_>>();
    let need_sets = || {
        if probes.sets.is_empty() {
            Err(Error::InvalidInput(format!("{} needs probe sets", protocol.name())))
        } else {
            Ok(())
        }
    };
    match protocol {
        Protocol::V2S => {
            need_sets()?;
            let st = model.data.stills.as_ref().ok_or_else(|| Error::InvalidInput("model has no still gallery".into()))?;
            let g = embed_stills(model, &st.points)?;
            let p = embed_sets(model, &probes.sets)?;
            Ok((v2s_distances(&p, &g, w), set_labels(&probes.sets), st.labels.clone()))
        }
        Protocol::S2V => {
            let (x, labels) = probes.stills.as_ref().ok_or_else(|| Error::InvalidInput("s2v needs probe stills".into()))?;
            let p = embed_stills(model, x)?;
            let g = embed_sets(model, &model.data.sets)?;
            Ok((s2v_distances(&p, &g, w), labels.clone(), model.data.set_labels()))
        }
        Protocol::V2V => {
            need_sets()?;
            let p = embed_sets(model, &probes.sets)?;
            let g = embed_sets(model, &model.data.sets)?;
            Ok((v2v_distances(&p, &g, w), set_labels(&probes.sets), model.data.set_labels()))
        }
    }
}

pub fn evaluate(
    model: &ProjectionModel,
    probes: &Probes,
    protocol: Protocol,
    self_match: SelfMatch,
    far: f64,
) -> Result<EvalReport> {
    let (d, pl, gl) = protocol_distances(model, probes, protocol)?;
    Ok(EvalReport {
        protocol,
        rank1: rank1_identification(&d, &pl, &gl, self_match)?,
        far,
        vr_at_far: verification_from_distances(&d, &pl, &gl, far, self_match)?,
        probes: d.nrows(),
        gallery: d.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn v2s_pair_distance() {
        let a = v(&[1.0, 2.0]);
        assert_eq!(pair_distance_v2s(&a, &a, &a, (1.0, 1.0)), 0.0);
        let y = v(&[4.0, 6.0]);
        assert_eq!(pair_distance_v2s(&a, &y, &y, (1.0, 1.0)), 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<DVector<f64>> = (0..3)
            .map(|_| DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let hand: f64 = (0..4).map(|k| (r[0][k] - r[1][k]).powi(2)).sum::<f64>().sqrt()
            + (0..4).map(|k| (r[0][k] - r[2][k]).powi(2)).sum::<f64>().sqrt();
        assert!((pair_distance_v2s(&r[0], &r[1], &r[2], (1.0, 1.0)) - hand).abs() < 1e-12);
    }

    #[test]
    fn v2v_pair_distance() {
        let a = v(&[0.0, 0.0]);
        assert_eq!(pair_distance_v2v((&a, &a), (&a, &a), (1.0, 1.0)), 0.0);
        let b = v(&[3.0, 4.0]);
        assert_eq!(pair_distance_v2v((&a, &a), (&b, &a), (1.0, 1.0)), 5.0);
        assert_eq!(pair_distance_v2v((&a, &a), (&b, &b), (1.0, 1.0)), 10.0);
        assert_eq!(pair_distance_v2v((&a, &a), (&b, &b), (1.0, 0.5)), 7.5);
    }

    #[test]
    fn rank1_self_match_flag() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 1.5, 2.0, 1.5, 0.0]);
        let l = [1, 2, 3];
        assert_eq!(rank1_identification(&d, &l, &l, SelfMatch::Allow).unwrap(), 1.0);
        assert_eq!(rank1_identification(&d, &l, &l, SelfMatch::Exclude).unwrap(), 0.0);
    }

    #[test]
    fn rank1_tie_goes_to_smaller_index() {
        let d = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(rank1_identification(&d, &[7], &[7, 8], SelfMatch::Allow).unwrap(), 1.0);
        assert_eq!(rank1_identification(&d, &[8], &[7, 8], SelfMatch::Allow).unwrap(), 0.0);
    }

    #[test]
    fn rank1_hand_fixture() {
        // probe 0 → gallery 1 (label b, wrong), probe 1 → gallery 1 (b, right),
        // probe 2 → gallery 2 (c, right)
        let d = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, 0.5, 0.8, 0.1, 0.3, 0.7, 0.6, 0.4]);
        let r = rank1_identification(&d, &[0, 1, 2], &[0, 1, 2], SelfMatch::Allow).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn verification_separated() {
        let scores = [0.9, 0.8, 0.95, 0.1, 0.2, 0.3];
        let gen = [true, true, true, false, false, false];
        for far in [0.01, 0.1, 0.5] {
            assert_eq!(verification_at_far(&scores, &gen, far).unwrap(), 1.0);
        }
    }

    /// Six scores, three genuine and three impostor, enumerated by hand.
    #[test]
    fn verification_six_score_fixture() {
        let scores = [0.9, 0.6, 0.3, 0.7, 0.4, 0.2];
        let gen = [true, true, true, false, false, false];
        // t=0.9: FAR 0 → TAR 1/3; t=0.7: FAR 1/3; t=0.6: FAR 1/3 → TAR 2/3;
        // t=0.4: FAR 2/3; t=0.3: FAR 2/3 → TAR 1
        assert!((verification_at_far(&scores, &gen, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((verification_at_far(&scores, &gen, 0.34).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((verification_at_far(&scores, &gen, 0.67).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn verification_overlap_tracks_far() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Uniform::new(0.0, 1.0);
        let n = 10_000;
        let scores: Vec<f64> = (0..2 * n).map(|_| u.sample(&mut rng)).collect();
        let gen: Vec<bool> = (0..2 * n).map(|i| i < n).collect();
        for far in [0.01, 0.1, 0.3] {
            let vr = verification_at_far(&scores, &gen, far).unwrap();
            assert!((vr - far).abs() < 0.05, "far {far}: {vr}");
        }
    }

    #[test]
    fn verification_needs_impostors() {
        assert!(verification_at_far(&[0.1, 0.2], &[true, true], 0.01).is_err());
    }

    #[test]
    fn ncm_baseline() {
        let gallery = DMatrix::from_column_slice(1, 4, &[0.0, 1.0, 10.0, 11.0]);
        let probes = DMatrix::from_column_slice(1, 2, &[2.0, 8.0]);
        let r = nearest_class_mean_rank1(&probes, &[5, 6], &gallery, &[5, 5, 6, 6]).unwrap();
        assert_eq!(r, 1.0);
        let r = nearest_class_mean_rank1(&probes, &[6, 6], &gallery, &[5, 5, 6, 6]).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn s2v_is_exact_transpose_of_v2s() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let sets = SetEmbeddings { mean: g(3, 4), variation: g(3, 4) };
        let stills = g(3, 5);
        let a = v2s_distances(&sets, &stills, (1.0, 1.0));
        let b = s2v_distances(&stills, &sets, (1.0, 1.0));
        assert_eq!(a.transpose(), b);
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_monotone_transform(
            d in proptest::collection::vec(0.0f64..10.0, 12),
            shift in 0.0f64..5.0, scale in 0.1f64..5.0
        ) {
            let dm = DMatrix::from_vec(3, 4, d);
            let pl = [0, 1, 2];
            let gl = [0, 1, 2, 0];
            let warped = dm.map(|x| (scale * x + shift).exp());
            prop_assert_eq!(
                rank1_identification(&dm, &pl, &gl, SelfMatch::Allow).unwrap(),
                rank1_identification(&warped, &pl, &gl, SelfMatch::Allow).unwrap()
            );
            prop_assert_eq!(
                verification_from_distances(&dm, &pl, &gl, 0.2, SelfMatch::Allow).unwrap(),
                verification_from_distances(&warped, &pl, &gl, 0.2, SelfMatch::Allow).unwrap()
            );
        }
    }
}

//! Seeded synthetic image-set data.
//!
//! Each class has a random mean (scale `separation`) and a random low-rank
//! covariance. A set draws a random offset of its own and then samples around
//! the shifted mean; stills are single draws from the class distribution.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, SampleRole, SetEntry};
use crate::error::{Error, Result};

/// Variance along each class direction.
const CLASS_VARIANCE: f64 = 4.0;
const NOISE_STD: f64 = 0.3;
const SET_OFFSET_STD: f64 = 1.5;
const MAX_CLASS_RANK: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub sets_per_class: usize,
    pub samples_per_set: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
    /// The first this-many sets of each class go to the training split.
    pub train_sets_per_class: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            sets_per_class: 5,
            samples_per_set: 20,
            dim: 20,
            separation: 5.0,
            seed: 0,
            train_sets_per_class: 3,
        }
    }
}

/// One dataset holding every sample, plus the entries of each split.
/// Each set is followed by its still.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    pub class_means: DMatrix<f64>,
    pub train: Vec<SetEntry>,
    pub test: Vec<SetEntry>,
}

impl SynthData {
    pub fn train_split(&self) -> Result<Dataset> {
        Dataset::new(self.dataset.features.clone(), self.train.clone())
    }

    pub fn test_split(&self) -> Result<Dataset> {
        Dataset::new(self.dataset.features.clone(), self.test.clone())
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.classes == 0 || cfg.sets_per_class == 0 || cfg.samples_per_set == 0 || cfg.dim == 0 {
        return Err(Error::InvalidInput("classes, sets, samples, and dim must be positive".into()));
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::InvalidInput("separation must be finite and >= 0".into()));
    }
    if cfg.train_sets_per_class > cfg.sets_per_class {
        return Err(Error::InvalidInput("train_sets_per_class exceeds sets_per_class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rank = MAX_CLASS_RANK.min(cfg.dim / 2).max(1);
    let per_set = cfg.samples_per_set + 1;
    let total = cfg.classes * cfg.sets_per_class * per_set;
    let mut features = DMatrix::zeros(cfg.dim, total);
    let mut class_means = DMatrix::zeros(cfg.dim, cfg.classes);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut col = 0;
    for c in 0..cfg.classes {
        let mu: DVector<f64> = normal_matrix(cfg.dim, 1, &mut rng).column(0) * (cfg.separation / (cfg.dim as f64).sqrt());
        class_means.set_column(c, &mu);
        let q = normal_matrix(cfg.dim, cfg.dim, &mut rng).qr().q();
        let basis = q.columns(0, rank) * CLASS_VARIANCE.sqrt();
        for s in 0..cfg.sets_per_class {
            let offset: DVector<f64> = normal_matrix(cfg.dim, 1, &mut rng).column(0) * SET_OFFSET_STD;
            let n = cfg.samples_per_set;
            let mut x = &basis * normal_matrix(rank, n, &mut rng) + normal_matrix(cfg.dim, n, &mut rng) * NOISE_STD;
            let shift = &mu + &offset;
            for mut column in x.column_iter_mut() {
                column += &shift;
            }
            features.columns_mut(col, n).copy_from(&x);
            let still = &mu + &basis * normal_matrix(rank, 1, &mut rng) + normal_matrix(cfg.dim, 1, &mut rng) * NOISE_STD;
            features.set_column(col + n, &still.column(0));
            let label = c as i64;
            let split = if s < cfg.train_sets_per_class { &mut train } else { &mut test };
            split.push(SetEntry { start: col, len: n, label, role: SampleRole::Video });
            split.push(SetEntry { start: col + n, len: 1, label, role: SampleRole::Still });
            col += per_set;
        }
    }
    let mut entries = train.clone();
    entries.extend_from_slice(&test);
    entries.sort_by_key(|e| e.start);
    Ok(SynthData { dataset: Dataset::new(features, entries)?, class_means, train, test })
}

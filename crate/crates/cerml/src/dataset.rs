//! Labeled feature columns grouped into sets and stills.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::LabeledPoints;
use crate::repr::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRole {
    /// Every column in the range is a separate still image.
    Still,
    /// The columns in the range form one image set.
    Video,
}

impl SampleRole {
    pub fn name(self) -> &'static str {
        match self {
            SampleRole::Still => "still",
            SampleRole::Video => "video",
        }
    }
}

impl std::str::FromStr for SampleRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "still" => Ok(Self::Still),
            "video" | "set" => Ok(Self::Video),
            other => Err(Error::Parse(format!("unknown role '{other}'"))),
        }
    }
}

/// A contiguous range of feature columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetEntry {
    pub start: usize,
    pub len: usize,
    pub label: i64,
    pub role: SampleRole,
}

/// Feature columns (dim × samples) plus the ranges that group them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub entries: Vec<SetEntry>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, entries: Vec<SetEntry>) -> Result<Self> {
        validate_entries(&entries, features.ncols())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite values".into()));
        }
        Ok(Self { features, entries })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Video entries as feature matrices with their labels.
    pub fn sets(&self) -> Result<(Vec<FeatureMatrix>, Vec<i64>)> {
        let mut sets = Vec::new();
        let mut labels = Vec::new();
        for e in self.entries.iter().filter(|e| e.role == SampleRole::Video) {
            sets.push(FeatureMatrix::new(self.features.columns(e.start, e.len).into_owned())?);
            labels.push(e.label);
        }
        Ok((sets, labels))
    }

    /// All still columns, or `None` if there are none.
    pub fn stills(&self) -> Result<Option<LabeledPoints>> {
        let mut cols = Vec::new();
        let mut labels = Vec::new();
        for e in self.entries.iter().filter(|e| e.role == SampleRole::Still) {
            for c in e.start..e.start + e.len {
                cols.push(self.features.column(c).into_owned());
                labels.push(e.label);
            }
        }
        if cols.is_empty() {
            return Ok(None);
        }
        LabeledPoints::new(DMatrix::from_columns(&cols), labels).map(Some)
    }
}

/// Ranges must be nonempty, in bounds, and pairwise disjoint.
pub fn validate_entries(entries: &[SetEntry], columns: usize) -> Result<()> {
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        if e.len == 0 {
            return Err(Error::InvalidInput(format!("entry {i} is empty")));
        }
        match e.start.checked_add(e.len) {
            Some(end) if end <= columns => spans.push((e.start, end)),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "entry {i} [{}, +{}) exceeds {columns} samples",
                    e.start, e.len
                )))
            }
        }
    }
    spans.sort_unstable();
    if let Some(w) = spans.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(Error::InvalidInput(format!(
            "ranges [{}, {}) and [{}, {}) overlap",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(start: usize, len: usize) -> SetEntry {
        SetEntry { start, len, label: 0, role: SampleRole::Video }
    }

    #[test]
    fn entry_validation() {
        assert!(validate_entries(&[entry(0, 3), entry(3, 2)], 5).is_ok());
        assert!(validate_entries(&[entry(0, 3), entry(2, 2)], 5).is_err());
        assert!(validate_entries(&[entry(4, 2)], 5).is_err());
        assert!(validate_entries(&[entry(1, 0)], 5).is_err());
        assert!(validate_entries(&[entry(usize::MAX, 2)], 5).is_err());
    }

    #[test]
    fn sets_and_stills() {
        let f = DMatrix::from_fn(2, 6, |r, c| (r * 10 + c) as f64);
        let still = SetEntry { start: 4, len: 2, label: 9, role: SampleRole::Still };
        let ds = Dataset::new(f, vec![entry(0, 4), still]).unwrap();
        let (sets, labels) = ds.sets().unwrap();
        assert_eq!((sets.len(), sets[0].len(), labels), (1, 4, vec![0]));
        let st = ds.stills().unwrap().unwrap();
        assert_eq!(st.labels, vec![9, 9]);
        assert_eq!(st.points[(1, 1)], 15.0);
    }
}

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationState {
    Raw,
    Standardized,
}

/// Labeled feature matrix. Rows are instances; labels are dense class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    pub feature_names: Option<Vec<String>>,
    /// Original label strings, indexed by class id.
    pub class_names: Option<Vec<String>>,
    pub normalization: NormalizationState,
}

impl Dataset {
    /// Builds a dataset whose class ids must lie in `[0, n_classes)`.
    pub fn with_classes(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(ScmlError::InvalidDataset(format!("shape {n}x{d} is empty")));
        }
        if labels.len() != n {
            return Err(ScmlError::DimensionMismatch { expected: n, got: labels.len() });
        }
        if let Some((i, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ScmlError::InvalidDataset(format!("non-finite feature at {i:?}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(ScmlError::InvalidDataset(format!("label {bad} outside [0, {n_classes})")));
        }
        // rows must be contiguous for slice access
        let features = if features.is_standard_layout() { features } else { features.as_standard_layout().to_owned() };
        Ok(Dataset {
            features,
            labels,
            n_classes,
            feature_names: None,
            class_names: None,
            normalization: NormalizationState::Raw,
        })
    }

    /// Builds a dataset, taking the class count from the largest label.
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(features, labels, c)
    }

    /// Remaps arbitrary label strings onto `[0, C)`. Numeric labels are
    /// ordered numerically, anything else lexicographically.
    pub fn from_raw_labels<S: AsRef<str>>(features: Array2<f64>, raw: &[S]) -> Result<Self> {
        let distinct: Vec<String> = {
            let mut v: Vec<String> = raw.iter().map(|s| s.as_ref().to_string()).collect();
            v.sort();
            v.dedup();
            v
        };
        let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
        let mut ordered = distinct.clone();
        if let Some(vals) = numeric {
            let mut pairs: Vec<(f64, String)> = vals.into_iter().zip(distinct).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            ordered = pairs.into_iter().map(|p| p.1).collect();
        }
        let index: BTreeMap<&str, usize> = ordered.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let labels = raw.iter().map(|s| index[s.as_ref()]).collect();
        let mut ds = Self::with_classes(features, labels, ordered.len())?;
        ds.class_names = Some(ordered);
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i).to_slice().expect("standard layout")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of the members of each class, in ascending order.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            members[y].push(i);
        }
        members
    }

    /// Rows `indices` in the given order; class ids and names are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(ScmlError::IndexOutOfRange { index: bad, len: self.n() });
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Dataset::with_classes(features, labels, self.n_classes)?;
        out.feature_names = self.feature_names.clone();
        out.class_names = self.class_names.clone();
        out.normalization = self.normalization;
        Ok(out)
    }

    /// Renumbers classes to match `reference` by class name, so two files
    /// ingested separately agree on ids.
    pub fn align_classes(&self, reference: &Dataset) -> Result<Dataset> {
        let (Some(mine), Some(theirs)) = (&self.class_names, &reference.class_names) else {
            return Ok(self.clone());
        };
        let map: Vec<usize> = mine
            .iter()
            .map(|c| {
                theirs
                    .iter()
                    .position(|t| t == c)
                    .ok_or_else(|| ScmlError::InvalidDataset(format!("class `{c}` is unknown to the reference")))
            })
            .collect::<Result<_>>()?;
        let labels = self.labels.iter().map(|&y| map[y]).collect();
        let mut out = Dataset::with_classes(self.features.clone(), labels, reference.n_classes)?;
        out.feature_names = self.feature_names.clone();
        out.class_names = Some(theirs.clone());
        out.normalization = self.normalization;
        Ok(out)
    }

    /// Same labels and metadata, new feature matrix (e.g. after a projection).
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        let mut out = Dataset::with_classes(features, self.labels.clone(), self.n_classes)?;
        out.class_names = self.class_names.clone();
        out.normalization = self.normalization;
        if out.dim() == self.dim() {
            out.feature_names = self.feature_names.clone();
        }
        Ok(out)
    }
}

/// Per-feature z-scoring with statistics taken from one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance features get scale 1 so they map to 0.
    pub fn fit(ds: &Dataset) -> Standardizer {
        let n = ds.n() as f64;
        let mean: Array1<f64> = ds.features().mean_axis(Axis(0)).expect("n >= 1");
        let scale = ds
            .features()
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) { sd } else { 1.0 }
            })
            .collect();
        Standardizer { mean: mean.to_vec(), scale }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.mean.len(), ds.dim())?;
        let mut f = ds.features().clone();
        for mut row in f.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        let mut out = ds.with_features(f)?;
        out.normalization = NormalizationState::Standardized;
        Ok(out)
    }
}

//! Datasets, scaling, splits and minimization masks.

mod csv_io;
mod gaussian;
mod mask;

pub use csv_io::{load_csv, write_csv, LabelColumn};
pub use gaussian::{
    synth_gaussian, GaussianStats, LabelRule, SyntheticSample, DEFAULT_JITTER, MAX_JITTER,
};
pub use mask::{top_k_indices, MinimizationMask, MinimizedDataset};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    n_classes: usize,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(features, labels, n_classes, names, None)
    }

    pub fn with_names(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        feature_names: Vec<String>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 || p == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {p} columns",
                feature_names.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        if let Some(idx) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature value at row {}, column {}",
                idx % n,
                idx / n
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            n_classes,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Original class strings in first-appearance order, when the label
    /// column was not integer-valued.
    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Same labels and metadata, different feature values.
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::DimensionMismatch(format!(
                "replacement features are {:?}, dataset is {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        Self::with_names(
            features,
            self.labels.clone(),
            self.n_classes,
            self.feature_names.clone(),
            self.class_names.clone(),
        )
    }

    /// Rows `idx` in the given order; class count is preserved even if some
    /// class is absent from the subset.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidArgument(format!(
                "row index {bad} out of range for {} rows",
                self.n()
            )));
        }
        let features = self.features.select_rows(idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::with_names(
            features,
            labels,
            self.n_classes,
            self.feature_names.clone(),
            self.class_names.clone(),
        )
    }
}

/// Per-feature min/max fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn is_constant(&self, j: usize) -> bool {
        self.max[j] == self.min[j]
    }

    pub fn constant_features(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.is_constant(j)).collect()
    }
}

pub fn fit_minmax(dataset: &Dataset, fit_idx: &[usize]) -> Result<ScalerParams> {
    if fit_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a scaler on zero rows".into(),
        ));
    }
    let x = dataset.features();
    let p = dataset.p();
    let mut min = vec![f64::INFINITY; p];
    let mut max = vec![f64::NEG_INFINITY; p];
    for &i in fit_idx {
        if i >= dataset.n() {
            return Err(Error::InvalidArgument(format!(
                "row index {i} out of range for {} rows",
                dataset.n()
            )));
        }
        for j in 0..p {
            min[j] = min[j].min(x[(i, j)]);
            max[j] = max[j].max(x[(i, j)]);
        }
    }
    Ok(ScalerParams { min, max })
}

/// `(x − min)/(max − min)` clipped to `[0, 1]`; constant features map to 0.
pub fn apply_minmax(dataset: &Dataset, scaler: &ScalerParams) -> Result<Dataset> {
    let p = dataset.p();
    if scaler.min.len() != p || scaler.max.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "scaler has {} features, dataset has {p}",
            scaler.min.len()
        )));
    }
    let x = dataset.features();
    let scaled = DMatrix::from_fn(dataset.n(), p, |i, j| {
        if scaler.is_constant(j) {
            0.0
        } else {
            ((x[(i, j)] - scaler.min[j]) / (scaler.max[j] - scaler.min[j])).clamp(0.0, 1.0)
        }
    });
    dataset.with_features(scaled)
}

/// Disjoint public / member / non-member row partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub public: Vec<usize>,
    pub member: Vec<usize>,
    pub nonmember: Vec<usize>,
}

impl SplitSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Half the rows go public; the private remainder is split between members
/// and non-members, members taking the odd row.
pub fn make_splits(n: usize, seed: u64) -> Result<SplitSpec> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 rows to form public/member/non-member splits, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_public = n / 2;
    let n_private = n - n_public;
    let n_member = n_private.div_ceil(2);
    let mut public = order[..n_public].to_vec();
    let mut member = order[n_public..n_public + n_member].to_vec();
    let mut nonmember = order[n_public + n_member..].to_vec();
    public.sort_unstable();
    member.sort_unstable();
    nonmember.sort_unstable();
    Ok(SplitSpec {
        seed,
        public,
        member,
        nonmember,
    })
}

//! Feature-level privacy scores and privacy-aware re-selection of masks.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Uniqueness,
    Correlation,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniqueness" => Ok(ScoreKind::Uniqueness),
            "correlation" => Ok(ScoreKind::Correlation),
            other => Err(Error::InvalidArgument(format!("unknown score kind {other:?}"))),
        }
    }
}

/// Per-feature scores in `[0, 1]`, broadcast over rows. Higher means safer
/// to retain.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyScores {
    pub kind: ScoreKind,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    n: usize,
}

impl PrivacyScores {
    fn from_raw(kind: ScoreKind, raw: Vec<f64>, n: usize) -> Self {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let normalized = raw
            .iter()
            .map(|&r| if hi > lo { (r - lo) / (hi - lo) } else { 0.0 })
            .collect();
        Self {
            kind,
            raw,
            normalized,
            n,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.normalized.len()
    }

    /// Score of entry `(i, j)`; identical for every row.
    pub fn get(&self, _i: usize, j: usize) -> f64 {
        self.normalized[j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p(), |_, j| self.normalized[j])
    }

    /// `feature,raw,normalized` rows.
    pub fn to_csv(&self, feature_names: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["feature", "raw", "normalized"])?;
        for j in 0..self.p() {
            let name = feature_names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
            w.write_record([name, self.raw[j].to_string(), self.normalized[j].to_string()])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Distinct values after rounding to 6 decimals.
fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    values
        .map(|v| {
            let r = (v * 1e6).round();
            // fold -0.0 into 0.0
            (if r == 0.0 { 0.0 } else { r }).to_bits()
        })
        .collect::<HashSet<u64>>()
        .len()
}

/// Raw score `−(distinct values)` per feature.
pub fn uniqueness_scores(dataset: &Dataset) -> PrivacyScores {
    let raw = dataset
        .features()
        .column_iter()
        .map(|c| -(distinct_count(c.iter().copied()) as f64))
        .collect();
    PrivacyScores::from_raw(ScoreKind::Uniqueness, raw, dataset.n())
}

/// Raw score `−mean_{h≠j} |corr(x_j, x_h)|` per feature.
pub fn correlation_scores(dataset: &Dataset) -> Result<PrivacyScores> {
    let p = dataset.p();
    if p < 2 {
        return Err(Error::InvalidArgument(
            "correlation scores need at least 2 features".into(),
        ));
    }
    let cols: Vec<Vec<f64>> = dataset
        .features()
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut abs_corr = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in a + 1..p {
            let c = pearson(&cols[a], &cols[b]).abs();
            abs_corr[(a, b)] = c;
            abs_corr[(b, a)] = c;
        }
    }
    let raw = (0..p)
        .map(|j| -abs_corr.row(j).sum() / (p - 1) as f64)
        .collect();
    Ok(PrivacyScores::from_raw(ScoreKind::Correlation, raw, dataset.n()))
}

pub fn privacy_scores(dataset: &Dataset, kind: ScoreKind) -> Result<PrivacyScores> {
    match kind {
        ScoreKind::Uniqueness => Ok(uniqueness_scores(dataset)),
        ScoreKind::Correlation => correlation_scores(dataset),
    }
}

/// Retains the top-`k` entries of `C = B + β·V`.
pub fn apply_privacy_scores(
    base: &MinimizationMask,
    scores: &PrivacyScores,
    beta: f64,
    k: usize,
) -> Result<MinimizationMask> {
    let (n, p) = (base.n(), base.p());
    if scores.n() != n || scores.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "scores are {}x{}, mask is {n}x{p}",
            scores.n(),
            scores.p()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    let combined: Vec<f64> = (0..n * p)
        .map(|idx| {
            let b = if base.as_slice()[idx] { 1.0 } else { 0.0 };
            b + beta * scores.get(idx / p, idx % p)
        })
        .collect();
    MinimizationMask::from_top_k(n, p, &combined, k)
}

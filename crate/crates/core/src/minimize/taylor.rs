use nalgebra::DMatrix;

use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::learner::{ImplicitModel, TrainOptions};

/// Per-entry first-order cost of zeroing the entry: `X_ij · (L H⁻¹ G)_ij`.
///
/// Removing a set `R` changes the target loss by approximately
/// `Σ_{(i,j)∈R} score_ij`, so the best mask at sparsity `k` keeps the `k`
/// largest scores.
pub fn taylor_scores(dataset: &Dataset, lambda: f64, opts: TrainOptions) -> Result<DMatrix<f64>> {
    let sens = ImplicitModel::fit(dataset, lambda, opts)?.sensitivity();
    Ok(dataset.features().component_mul(&sens.entries) * -1.0)
}

/// First-order predicted change in target loss when `mask` is applied with
/// zero imputation.
pub fn linearized_delta(scores: &DMatrix<f64>, mask: &MinimizationMask) -> f64 {
    let (n, p) = scores.shape();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..p {
            if !mask.is_retained(i, j) {
                total += scores[(i, j)];
            }
        }
    }
    total
}

pub fn taylor_mask(
    dataset: &Dataset,
    lambda: f64,
    k: usize,
    opts: TrainOptions,
) -> Result<MinimizationMask> {
    let (n, p) = (dataset.n(), dataset.p());
    if k > n * p {
        return Err(Error::InvalidArgument(format!(
            "cannot retain {k} of {} entries",
            n * p
        )));
    }
    let scores = taylor_scores(dataset, lambda, opts)?;
    mask_from_scores(&scores, k)
}

pub fn mask_from_scores(scores: &DMatrix<f64>, k: usize) -> Result<MinimizationMask> {
    let (n, p) = scores.shape();
    let flat: Vec<f64> = (0..n * p).map(|idx| scores[(idx / p, idx % p)]).collect();
    MinimizationMask::from_top_k(n, p, &flat, k)
}

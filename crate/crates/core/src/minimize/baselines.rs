use rand::seq::index::sample;

use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::stats::pearson;

/// |Pearson correlation| of each feature with the label.
pub fn label_correlations(dataset: &Dataset) -> Vec<f64> {
    let y: Vec<f64> = dataset.labels().iter().map(|&c| c as f64).collect();
    dataset
        .features()
        .column_iter()
        .map(|col| pearson(col.as_slice(), &y).abs())
        .collect()
}

/// Removes whole columns for the `s` features least correlated with the
/// label; ties remove the lower column index first.
pub fn feature_selection_mask(dataset: &Dataset, s: usize) -> Result<MinimizationMask> {
    let (n, p) = (dataset.n(), dataset.p());
    if s > p {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {s} of {p} features"
        )));
    }
    let corr = label_correlations(dataset);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| corr[a].total_cmp(&corr[b]).then(a.cmp(&b)));
    let mut mask = MinimizationMask::full(n, p);
    for &j in &order[..s] {
        for i in 0..n {
            mask.set(i, j, false);
        }
    }
    Ok(mask)
}

/// Removes exactly `rows_to_remove` whole rows, uniformly without replacement.
pub fn random_row_mask(
    n: usize,
    p: usize,
    rows_to_remove: usize,
    seed: u64,
) -> Result<MinimizationMask> {
    if rows_to_remove > n {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {rows_to_remove} of {n} rows"
        )));
    }
    let mut mask = MinimizationMask::full(n, p);
    for i in sample(&mut rng_from_seed(seed), n, rows_to_remove) {
        for j in 0..p {
            mask.set(i, j, false);
        }
    }
    Ok(mask)
}

/// Retains exactly `k` entries chosen uniformly over all positions.
pub fn individualized_random_mask(
    n: usize,
    p: usize,
    k: usize,
    seed: u64,
) -> Result<MinimizationMask> {
    if k > n * p {
        return Err(Error::InvalidArgument(format!(
            "cannot retain {k} of {} entries",
            n * p
        )));
    }
    let mut mask = MinimizationMask::empty(n, p);
    for idx in sample(&mut rng_from_seed(seed), n * p, k) {
        mask.set_flat(idx, true);
    }
    Ok(mask)
}

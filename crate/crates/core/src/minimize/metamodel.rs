use nalgebra::DMatrix;
use rayon::prelude::*;

use super::baselines::individualized_random_mask;
use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::impute::Imputer;
use crate::learner::{target_utility, TrainOptions};
use crate::rng::derive_seed;

/// Per-entry mean target loss over sampled masks, split by whether the entry
/// was retained (`i_one`) or removed (`i_bot`).
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTable {
    pub i_one: DMatrix<f64>,
    pub i_bot: DMatrix<f64>,
    pub count_one: DMatrix<usize>,
    pub count_bot: DMatrix<usize>,
}

/// What to do with entries that were never observed on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnestimatedPolicy {
    /// Substitute the mean of that side's estimated entries.
    #[default]
    GlobalMean,
    Strict,
}

impl InfluenceTable {
    /// Accumulates `(mask, target loss)` pairs.
    pub fn from_samples(n: usize, p: usize, samples: &[(MinimizationMask, f64)]) -> Result<Self> {
        let mut sum_one = DMatrix::<f64>::zeros(n, p);
        let mut sum_bot = DMatrix::<f64>::zeros(n, p);
        let mut count_one = DMatrix::<usize>::zeros(n, p);
        let mut count_bot = DMatrix::<usize>::zeros(n, p);
        for (mask, loss) in samples {
            mask.check_dims(n, p)?;
            for i in 0..n {
                for j in 0..p {
                    if mask.is_retained(i, j) {
                        sum_one[(i, j)] += loss;
                        count_one[(i, j)] += 1;
                    } else {
                        sum_bot[(i, j)] += loss;
                        count_bot[(i, j)] += 1;
                    }
                }
            }
        }
        let mean = |s: &DMatrix<f64>, c: &DMatrix<usize>| {
            DMatrix::from_fn(n, p, |i, j| {
                if c[(i, j)] == 0 {
                    f64::NAN
                } else {
                    s[(i, j)] / c[(i, j)] as f64
                }
            })
        };
        Ok(Self {
            i_one: mean(&sum_one, &count_one),
            i_bot: mean(&sum_bot, &count_bot),
            count_one,
            count_bot,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.count_one.get((0, 0)).copied().unwrap_or(0)
            + self.count_bot.get((0, 0)).copied().unwrap_or(0)
    }

    /// Entries with a zero count on either side.
    pub fn unestimated(&self) -> usize {
        self.count_one
            .iter()
            .zip(self.count_bot.iter())
            .filter(|(&a, &b)| a == 0 || b == 0)
            .count()
    }

    /// `I^⊥ − I¹` with the policy applied to unestimated entries.
    pub fn deltas(&self, policy: UnestimatedPolicy) -> Result<DMatrix<f64>> {
        let missing = self.unestimated();
        if missing > 0 && policy == UnestimatedPolicy::Strict {
            return Err(Error::Unestimated { count: missing });
        }
        let fill = |m: &DMatrix<f64>| {
            let known: Vec<f64> = m.iter().copied().filter(|v| !v.is_nan()).collect();
            let g = if known.is_empty() {
                0.0
            } else {
                known.iter().sum::<f64>() / known.len() as f64
            };
            m.map(|v| if v.is_nan() { g } else { v })
        };
        Ok(fill(&self.i_bot) - fill(&self.i_one))
    }
}

/// Samples `n_models` uniform masks with `k_sample` retained entries and
/// records their target losses.
pub fn fit_influence(
    dataset: &Dataset,
    lambda: f64,
    k_sample: usize,
    n_models: usize,
    imputer: &Imputer,
    seed: u64,
    opts: TrainOptions,
) -> Result<InfluenceTable> {
    if n_models < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sampled models, got {n_models}"
        )));
    }
    let (n, p) = (dataset.n(), dataset.p());
    let samples: Vec<(MinimizationMask, f64)> = (0..n_models)
        .into_par_iter()
        .map(|m| {
            let mask = individualized_random_mask(n, p, k_sample, derive_seed(seed, &[m as u64]))?;
            let loss = target_utility(dataset, &mask, lambda, imputer, opts)?.loss;
            Ok((mask, loss))
        })
        .collect::<Result<_>>()?;
    InfluenceTable::from_samples(n, p, &samples)
}

/// Keeps the `k` entries whose removal is predicted to hurt the most.
pub fn metamodel_mask(
    influence: &InfluenceTable,
    k: usize,
    policy: UnestimatedPolicy,
) -> Result<MinimizationMask> {
    super::taylor::mask_from_scores(&influence.deltas(policy)?, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_accumulation_over_two_masks() {
        let a = MinimizationMask::from_retained(2, 1, vec![true, false]).unwrap();
        let b = MinimizationMask::from_retained(2, 1, vec![true, true]).unwrap();
        let t = InfluenceTable::from_samples(2, 1, &[(a, 0.4), (b, 0.2)]).unwrap();
        assert!((t.i_one[(0, 0)] - 0.3).abs() < 1e-15);
        assert_eq!(t.count_bot[(0, 0)], 0);
        assert!(t.i_bot[(0, 0)].is_nan());
        assert_eq!(t.i_one[(1, 0)], 0.2);
        assert_eq!(t.i_bot[(1, 0)], 0.4);
        assert_eq!(t.unestimated(), 1);
        assert!(matches!(
            metamodel_mask(&t, 1, UnestimatedPolicy::Strict),
            Err(Error::Unestimated { count: 1 })
        ));
        // global-mean fill: i_bot(0,0) <- 0.4
        let d = t.deltas(UnestimatedPolicy::GlobalMean).unwrap();
        assert!((d[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((d[(1, 0)] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn uniform_deltas_keep_first_entries() {
        let m = MinimizationMask::full(2, 2);
        let e = MinimizationMask::empty(2, 2);
        let t = InfluenceTable::from_samples(2, 2, &[(m, 0.5), (e, 0.7)]).unwrap();
        let mask = metamodel_mask(&t, 3, UnestimatedPolicy::Strict).unwrap();
        assert_eq!(mask.as_slice(), &[true, true, true, false]);
        assert_eq!(metamodel_mask(&t, 0, UnestimatedPolicy::Strict).unwrap().k(), 0);
    }

    #[test]
    fn counts_sum_to_models_and_identical_masks_degenerate() {
        let x = DMatrix::from_fn(6, 2, |i, j| ((i + j) % 3) as f64 / 2.0);
        let d = Dataset::new(x, vec![0, 1, 0, 1, 1, 0], 2).unwrap();
        let t = fit_influence(&d, 1.0, 5, 7, &Imputer::Zero, 3, TrainOptions::default()).unwrap();
        for (a, b) in t.count_one.iter().zip(t.count_bot.iter()) {
            assert_eq!(a + b, 7);
        }
        let mask = individualized_random_mask(6, 2, 5, 1).unwrap();
        let samples = vec![(mask.clone(), 0.61); 3];
        let t = InfluenceTable::from_samples(6, 2, &samples).unwrap();
        for idx in mask.retained_indices() {
            assert_eq!(t.i_one[(idx / 2, idx % 2)], 0.61);
        }
    }
}

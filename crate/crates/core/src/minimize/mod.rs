//! Mask-producing algorithms, the sparsity sweep / dual search, and
//! multiplicity overlap.

mod baselines;
mod evolutionary;
mod metamodel;
mod taylor;

pub use baselines::{
    feature_selection_mask, individualized_random_mask, label_correlations, random_row_mask,
};
pub use evolutionary::{breed, evolutionary_mask, evolve_from, mutate, EvoConfig, EvoResult};
pub use metamodel::{fit_influence, metamodel_mask, InfluenceTable, UnestimatedPolicy};
pub use taylor::{linearized_delta, mask_from_scores, taylor_mask, taylor_scores};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::impute::Imputer;
use crate::learner::{accuracy, loss, target_utility, train, TrainOptions};

/// The lower-level setup shared by every algorithm: data, ridge strength,
/// the imputer used to train on minimized data, and solver options.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub dataset: &'a Dataset,
    pub lambda: f64,
    pub imputer: Imputer,
    pub opts: TrainOptions,
}

impl Problem<'_> {
    pub fn full_utility(&self) -> Result<(f64, f64)> {
        let theta = train(self.dataset, self.lambda, self.opts)?;
        Ok((loss(&theta, self.dataset)?, accuracy(&theta, self.dataset)?))
    }

    pub fn evaluate(&self, mask: &MinimizationMask) -> Result<(f64, f64)> {
        let t = target_utility(self.dataset, mask, self.lambda, &self.imputer, self.opts)?;
        Ok((t.loss, t.accuracy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    FeatureSelection,
    RandomRows {
        seed: u64,
    },
    IndividualizedRandom {
        seed: u64,
    },
    Taylor,
    Metamodel {
        n_models: usize,
        /// Sparsity of the sampled masks; `None` uses the target `k`.
        #[serde(default)]
        k_sample: Option<usize>,
        seed: u64,
    },
    Evolutionary(EvoConfig),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FeatureSelection => "feature_selection",
            Algorithm::RandomRows { .. } => "random_rows",
            Algorithm::IndividualizedRandom { .. } => "individualized_random",
            Algorithm::Taylor => "taylor",
            Algorithm::Metamodel { .. } => "metamodel",
            Algorithm::Evolutionary(_) => "evolutionary",
        }
    }

    /// Produces a mask with `k` retained entries. Feature selection and row
    /// subsampling operate on whole columns / rows, so they retain
    /// `n·⌊k/n⌋` and `p·⌊k/p⌋` entries respectively.
    pub fn run(&self, problem: &Problem<'_>, k: usize) -> Result<MinimizationMask> {
        let d = problem.dataset;
        let (n, p) = (d.n(), d.p());
        if k > n * p {
            return Err(Error::InvalidArgument(format!(
                "cannot retain {k} of {} entries",
                n * p
            )));
        }
        match self {
            Algorithm::FeatureSelection => feature_selection_mask(d, p - k / n),
            Algorithm::RandomRows { seed } => random_row_mask(n, p, n - k / p, *seed),
            Algorithm::IndividualizedRandom { seed } => individualized_random_mask(n, p, k, *seed),
            Algorithm::Taylor => taylor_mask(d, problem.lambda, k, problem.opts),
            Algorithm::Metamodel {
                n_models,
                k_sample,
                seed,
            } => {
                let table = fit_influence(
                    d,
                    problem.lambda,
                    k_sample.unwrap_or(k),
                    *n_models,
                    &problem.imputer,
                    *seed,
                    problem.opts,
                )?;
                metamodel_mask(&table, k, UnestimatedPolicy::GlobalMean)
            }
            Algorithm::Evolutionary(cfg) => Ok(evolutionary_mask(
                d,
                problem.lambda,
                k,
                &problem.imputer,
                cfg,
                problem.opts,
            )?
            .mask),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: String,
    pub k: usize,
    pub retained_fraction: f64,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn sweep(
    algorithm: &Algorithm,
    problem: &Problem<'_>,
    grid: &[usize],
) -> Result<Vec<(SweepRow, MinimizationMask)>> {
    grid.iter()
        .map(|&k| {
            let mask = algorithm.run(problem, k)?;
            let (loss, accuracy) = problem.evaluate(&mask)?;
            Ok((
                SweepRow {
                    algorithm: algorithm.name().to_string(),
                    k: mask.k(),
                    retained_fraction: mask.retained_fraction(),
                    loss,
                    accuracy,
                },
                mask,
            ))
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSearchResult {
    pub k: usize,
    pub mask: MinimizationMask,
    pub full_loss: f64,
    pub full_accuracy: f64,
    pub table: Vec<SweepRow>,
}

/// Smallest grid sparsity whose target accuracy stays within `alpha` of the
/// full-data accuracy.
pub fn dual_search(
    algorithm: &Algorithm,
    problem: &Problem<'_>,
    alpha: f64,
    grid: &[usize],
) -> Result<DualSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sparsity grid".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("sparsity grid must be ascending".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let (full_loss, full_accuracy) = problem.full_utility()?;
    let results = sweep(algorithm, problem, grid)?;
    let table: Vec<SweepRow> = results.iter().map(|(r, _)| r.clone()).collect();
    let threshold = full_accuracy - alpha - 1e-12;
    match results.into_iter().find(|(r, _)| r.accuracy >= threshold) {
        Some((row, mask)) => Ok(DualSearchResult {
            k: row.k,
            mask,
            full_loss,
            full_accuracy,
            table,
        }),
        None => Err(Error::NoFeasibleSparsity { alpha, table }),
    }
}

/// Percentage of retained entries shared by two masks, normalized by the
/// smaller sparsity.
pub fn overlap(a: &MinimizationMask, b: &MinimizationMask) -> Result<f64> {
    a.check_dims(b.n(), b.p())?;
    let shared = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, y)| **x && **y)
        .count();
    let denom = a.k().min(b.k());
    Ok(if denom == 0 {
        if a == b {
            100.0
        } else {
            0.0
        }
    } else {
        100.0 * shared as f64 / denom as f64
    })
}

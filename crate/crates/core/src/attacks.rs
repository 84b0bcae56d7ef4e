//! Privacy leakage of minimized data: re-identification (RIR),
//! reconstruction (RCR) and membership inference (MIR).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinimizedDataset};
use crate::error::{Error, Result};
use crate::impute::{impute, Imputer};
use crate::learner::{per_row_loss, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub rir: f64,
    pub rcr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mir: Option<f64>,
    pub algorithm: String,
    pub k: usize,
    pub seed: u64,
}

/// Euclidean distance over the entries observed in `min_row`, scaled by
/// `p/|O|`. A row with nothing observed is infinitely far away.
pub fn masked_distance(aux_row: &[f64], min_row: &[Option<f64>]) -> f64 {
    assert_eq!(aux_row.len(), min_row.len(), "row arity");
    let mut sum = 0.0;
    let mut observed = 0usize;
    for (a, m) in aux_row.iter().zip(min_row) {
        if let Some(v) = m {
            sum += (a - v) * (a - v);
            observed += 1;
        }
    }
    if observed == 0 {
        f64::INFINITY
    } else {
        (aux_row.len() as f64 / observed as f64 * sum).sqrt()
    }
}

fn minimized_rows(minimized: &MinimizedDataset) -> Vec<Vec<Option<f64>>> {
    (0..minimized.n())
        .map(|i| (0..minimized.p()).map(|j| minimized.get(i, j)).collect())
        .collect()
}

/// 1-based rank of each auxiliary row's true match (row `i` ↔ row `i`).
/// Candidates are ordered by masked distance, ties by row index.
pub fn match_ranks(aux: &DMatrix<f64>, minimized: &MinimizedDataset) -> Result<Vec<usize>> {
    if aux.shape() != (minimized.n(), minimized.p()) {
        return Err(Error::DimensionMismatch(format!(
            "auxiliary data is {:?}, minimized data is {}x{}",
            aux.shape(),
            minimized.n(),
            minimized.p()
        )));
    }
    let rows = minimized_rows(minimized);
    Ok((0..aux.nrows())
        .into_par_iter()
        .map(|i| {
            let a: Vec<f64> = aux.row(i).iter().copied().collect();
            let d_true = masked_distance(&a, &rows[i]);
            let mut rank = 1;
            for (q, row) in rows.iter().enumerate() {
                if q == i {
                    continue;
                }
                let d = masked_distance(&a, row);
                if d < d_true || (d == d_true && q < i) {
                    rank += 1;
                }
            }
            rank
        })
        .collect())
}

/// Mean reciprocal rank of the true matches.
pub fn reidentification_risk(aux: &DMatrix<f64>, minimized: &MinimizedDataset) -> Result<f64> {
    let ranks = match_ranks(aux, minimized)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Mean `exp(−‖x_i − x_i^R‖₂)` between original rows and their imputed
/// reconstructions.
pub fn reconstruction_risk(
    original: &DMatrix<f64>,
    minimized: &MinimizedDataset,
    imputer: &Imputer,
) -> Result<f64> {
    if original.shape() != (minimized.n(), minimized.p()) {
        return Err(Error::DimensionMismatch(format!(
            "original data is {:?}, minimized data is {}x{}",
            original.shape(),
            minimized.n(),
            minimized.p()
        )));
    }
    let recon = impute(minimized, imputer)?;
    Ok(kernel_similarity(original, &recon))
}

pub(crate) fn kernel_similarity(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (0..n)
        .map(|i| (-(a.row(i) - b.row(i)).norm()).exp())
        .sum::<f64>()
        / n as f64
}

/// Exact AUC: `P(member > nonmember) + ½·P(tie)` over all score pairs.
pub fn mir_auc(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "AUC needs at least one member and one non-member score".into(),
        ));
    }
    let mut non = nonmember_scores.to_vec();
    non.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in member_scores {
        let below = non.partition_point(|&v| v < s);
        let not_above = non.partition_point(|&v| v <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (member_scores.len() as f64 * non.len() as f64))
}

/// Scores each row by its negated cross-entropy under `theta`.
pub fn loss_score_mia(
    theta: &ModelParams,
    members: &Dataset,
    nonmembers: &Dataset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let neg = |d: &Dataset| -> Result<Vec<f64>> {
        Ok(per_row_loss(theta, d)?.into_iter().map(|l| -l).collect())
    };
    Ok((neg(members)?, neg(nonmembers)?))
}

//! Filling removed entries: zero, public-mean, and conditional-Gaussian
//! imputation.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, GaussianStats, MinimizedDataset, MAX_JITTER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Imputer {
    Zero,
    Mean(DVector<f64>),
    /// Conditional mean `μ_m + Σ_mo Σ_oo⁻¹ (x_o − μ_o)`.
    Gaussian(GaussianStats),
}

impl Imputer {
    pub fn name(&self) -> &'static str {
        match self {
            Imputer::Zero => "zero",
            Imputer::Mean(_) => "mean",
            Imputer::Gaussian(_) => "gaussian",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Imputer::Zero => None,
            Imputer::Mean(mu) => Some(mu.len()),
            Imputer::Gaussian(s) => Some(s.dim()),
        }
    }
}

/// Sample mean and unbiased covariance of the rows `public_idx`.
pub fn fit_gaussian_stats(
    dataset: &Dataset,
    public_idx: &[usize],
    jitter: f64,
) -> Result<GaussianStats> {
    if public_idx.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 rows to estimate a covariance, got {}",
            public_idx.len()
        )));
    }
    let x = dataset.subset(public_idx)?.features().clone();
    let m = x.nrows() as f64;
    let mean = x.row_sum().transpose() / m;
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (m - 1.0);
    // exact symmetry, whatever the GEMM rounding did
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianStats::new(mean, cov, jitter)
}

pub fn fit_mean(dataset: &Dataset, idx: &[usize]) -> Result<DVector<f64>> {
    let x = dataset.subset(idx)?.features().clone();
    Ok(x.row_sum().transpose() / x.nrows() as f64)
}

/// Completes `minimized`. Retained entries are copied untouched; rows with
/// every entry removed fall back to `μ` (mean, Gaussian) or 0 (zero).
pub fn impute(minimized: &MinimizedDataset, imputer: &Imputer) -> Result<DMatrix<f64>> {
    let (n, p) = (minimized.n(), minimized.p());
    if let Some(a) = imputer.arity() {
        if a != p {
            return Err(Error::DimensionMismatch(format!(
                "imputer has arity {a}, data has {p} features"
            )));
        }
    }
    let mut out = minimized.zero_filled().clone();
    match imputer {
        Imputer::Zero => {}
        Imputer::Mean(mu) => {
            for i in 0..n {
                for j in 0..p {
                    if minimized.is_missing(i, j) {
                        out[(i, j)] = mu[j];
                    }
                }
            }
        }
        Imputer::Gaussian(stats) => {
            let mut groups: BTreeMap<&[bool], Vec<usize>> = BTreeMap::new();
            for i in 0..n {
                let pattern = minimized.mask().row(i);
                if pattern.iter().any(|&b| !b) {
                    groups.entry(pattern).or_default().push(i);
                }
            }
            let filled: Vec<Vec<(usize, Vec<f64>)>> = groups
                .into_par_iter()
                .map(|(pattern, rows)| conditional_fill(minimized, stats, pattern, &rows))
                .collect::<Result<_>>()?;
            for (i, values) in filled.into_iter().flatten() {
                let mut it = values.into_iter();
                for j in 0..p {
                    if minimized.is_missing(i, j) {
                        out[(i, j)] = it.next().expect("one value per missing entry");
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fills every row sharing one missing pattern from a single factorization.
fn conditional_fill(
    minimized: &MinimizedDataset,
    stats: &GaussianStats,
    pattern: &[bool],
    rows: &[usize],
) -> Result<Vec<(usize, Vec<f64>)>> {
    let obs: Vec<usize> = (0..pattern.len()).filter(|&j| pattern[j]).collect();
    let mis: Vec<usize> = (0..pattern.len()).filter(|&j| !pattern[j]).collect();
    let mu = stats.mean();
    if obs.is_empty() {
        let fill: Vec<f64> = mis.iter().map(|&j| mu[j]).collect();
        return Ok(rows.iter().map(|&i| (i, fill.clone())).collect());
    }
    let cov = stats.cov();
    let s_mo = DMatrix::from_fn(mis.len(), obs.len(), |a, b| cov[(mis[a], obs[b])]);
    let chol = factor_block(cov, &obs, stats.jitter()).ok_or_else(|| Error::Imputation {
        row: rows[0],
        message: format!(
            "observed covariance block is singular even with jitter {MAX_JITTER:e}"
        ),
    })?;
    Ok(rows
        .iter()
        .map(|&i| {
            let resid = DVector::from_fn(obs.len(), |b, _| {
                minimized.get(i, obs[b]).expect("observed") - mu[obs[b]]
            });
            let shift = &s_mo * chol.solve(&resid);
            let values = mis
                .iter()
                .enumerate()
                .map(|(a, &j)| mu[j] + shift[a])
                .collect();
            (i, values)
        })
        .collect())
}

fn factor_block(
    cov: &DMatrix<f64>,
    idx: &[usize],
    start_jitter: f64,
) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let block = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])]);
    let mut jitter = start_jitter;
    while jitter <= MAX_JITTER {
        let mut c = block.clone();
        for a in 0..idx.len() {
            c[(a, a)] += jitter;
        }
        if let Some(ch) = Cholesky::new(c) {
            return Some(ch);
        }
        jitter = (2.0 * jitter).max(crate::data::DEFAULT_JITTER);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MinimizationMask;
    use approx::assert_relative_eq;

    fn stats(mean: &[f64], cov: &[f64]) -> GaussianStats {
        let p = mean.len();
        GaussianStats::new(
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(p, p, cov),
            0.0,
        )
        .unwrap()
    }

    fn minimized(x: &[f64], p: usize, keep: &[bool]) -> MinimizedDataset {
        let n = x.len() / p;
        let m = MinimizationMask::from_retained(n, p, keep.to_vec()).unwrap();
        MinimizedDataset::new(&DMatrix::from_row_slice(n, p, x), &m).unwrap()
    }

    #[test]
    fn bivariate_conditional_mean() {
        let rho = 0.6;
        let s = stats(&[0.0, 0.0], &[1.0, rho, rho, 1.0]);
        let md = minimized(&[1.0, 9.0], 2, &[true, false]);
        let out = impute(&md, &Imputer::Gaussian(s)).unwrap();
        assert_relative_eq!(out[(0, 1)], rho, epsilon = 1e-15);
        assert_eq!(out[(0, 0)], 1.0);
    }

    #[test]
    fn independent_features_fall_back_to_marginal_mean() {
        let s = stats(&[0.3, -2.0], &[1.0, 0.0, 0.0, 4.0]);
        let md = minimized(&[1.0, 9.0, 5.0, 5.0], 2, &[true, false, false, false]);
        let g = impute(&md, &Imputer::Gaussian(s.clone())).unwrap();
        let m = impute(&md, &Imputer::Mean(s.mean().clone())).unwrap();
        assert_eq!(g, m);
        assert_eq!(g[(0, 1)], -2.0);
        assert_eq!(g[(1, 0)], 0.3);
    }

    #[test]
    fn three_features_two_missing_match_dense_solve() {
        let mu = [0.5, -1.0, 2.0];
        let cov = [2.0, 0.6, -0.4, 0.6, 1.5, 0.3, -0.4, 0.3, 1.0];
        let s = stats(&mu, &cov);
        let md = minimized(&[7.0, 1.2, 8.0], 3, &[false, true, false]);
        let out = impute(&md, &Imputer::Gaussian(s)).unwrap();
        // independent route: full inverse of the 1x1 observed block via LU
        let s_oo = DMatrix::from_element(1, 1, 1.5);
        let inv = s_oo.lu().try_inverse().unwrap();
        let s_mo = DMatrix::from_row_slice(2, 1, &[0.6, 0.3]);
        let expected = DVector::from_vec(vec![0.5, 2.0]) + s_mo * inv * DVector::from_element(1, 1.2 + 1.0);
        assert_relative_eq!(out[(0, 0)], expected[0], epsilon = 1e-14);
        assert_relative_eq!(out[(0, 2)], expected[1], epsilon = 1e-14);
        assert_eq!(out[(0, 1)], 1.2);
    }

    #[test]
    fn fully_missing_rows_fall_back() {
        let s = stats(&[0.25, 0.75], &[1.0, 0.5, 0.5, 1.0]);
        let md = minimized(&[1.0, 1.0], 2, &[false, false]);
        assert_eq!(
            impute(&md, &Imputer::Gaussian(s)).unwrap().as_slice(),
            &[0.25, 0.75]
        );
        assert_eq!(impute(&md, &Imputer::Zero).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn complete_matrix_is_unchanged() {
        let s = stats(&[0.0, 0.0], &[1.0, 0.9, 0.9, 1.0]);
        let md = minimized(&[0.1, 0.2, 0.3, 0.4], 2, &[true; 4]);
        for imp in [Imputer::Zero, Imputer::Mean(s.mean().clone()), Imputer::Gaussian(s)] {
            assert_eq!(&impute(&md, &imp).unwrap(), md.zero_filled());
        }
    }

    #[test]
    fn arity_mismatch() {
        let md = minimized(&[0.1, 0.2], 2, &[true, false]);
        assert!(impute(&md, &Imputer::Mean(DVector::zeros(3))).is_err());
    }

    #[test]
    fn fit_stats_small_cases() {
        let d = Dataset::new(
            DMatrix::from_row_slice(3, 2, &[0.0, 2.0, 2.0, 0.0, 9.0, 9.0]),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let s = fit_gaussian_stats(&d, &[0, 1], 1e-6).unwrap();
        assert_eq!(s.mean().as_slice(), &[1.0, 1.0]);
        assert_eq!(s.cov().as_slice(), &[2.0, -2.0, -2.0, 2.0]);
        assert!(s.jitter() >= 1e-6);

        let same = Dataset::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]), vec![0, 1], 2)
            .unwrap();
        let s = fit_gaussian_stats(&same, &[0, 1], 1e-6).unwrap();
        assert!(s.cov().iter().all(|&v| v == 0.0));
        assert!(fit_gaussian_stats(&same, &[0], 1e-6).is_err());
    }
}

//! Numerical checks of the bounds behind the minimization algorithms:
//! the Bayes error of feature selection under jointly Gaussian data, the
//! parameter deviation of random row subsampling, the first-order utility
//! bound for entry-level removal, and second-order decay of the Taylor
//! residual.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinimizationMask};
use crate::error::{Error, Result};
use crate::impute::Imputer;
use crate::learner::{loss, per_row_gradients, target_utility, train, ImplicitModel, TrainOptions};
use crate::minimize::individualized_random_mask;
use crate::rng::{derive_seed, derived_rng, rng_from_seed};

/// Solver settings for the checks; finite-difference style comparisons need
/// optima far tighter than the default tolerance.
pub const THEORY_TRAIN: TrainOptions = TrainOptions {
    tol: 1e-12,
    max_iter: 200,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Additive allowance: `holds = lhs <= rhs + slack`.
    pub slack: f64,
    pub holds: bool,
    pub trials: usize,
    pub fingerprint: String,
    pub details: BTreeMap<String, f64>,
}

impl BoundCheckResult {
    fn new(
        check: &str,
        lhs: f64,
        rhs: f64,
        slack: f64,
        trials: usize,
        fingerprint: String,
        details: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            check: check.to_string(),
            lhs,
            rhs,
            slack,
            holds: lhs <= rhs + slack,
            trials,
            fingerprint,
            details,
        }
    }
}

/// `Var[y] − Σ_{kept} Cov(y, x_i)² / σ_i²`.
pub fn bayes_mse(var_y: f64, cov_yx: &[f64], var_x: &[f64], removed: &[usize]) -> Result<f64> {
    if cov_yx.len() != var_x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariances for {} variances",
            cov_yx.len(),
            var_x.len()
        )));
    }
    if let Some(v) = var_x.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "feature variances must be positive, got {v}"
        )));
    }
    Ok(var_y
        - (0..var_x.len())
            .filter(|j| !removed.contains(j))
            .map(|j| cov_yx[j] * cov_yx[j] / var_x[j])
            .sum::<f64>())
}

/// Independent Gaussian features with a linear-Gaussian target
/// `y = Σ coef_i x_i + N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearSetup {
    pub var_x: Vec<f64>,
    pub coef: Vec<f64>,
    pub noise_var: f64,
}

impl GaussianLinearSetup {
    pub fn var_y(&self) -> f64 {
        self.coef
            .iter()
            .zip(&self.var_x)
            .map(|(c, v)| c * c * v)
            .sum::<f64>()
            + self.noise_var
    }

    pub fn cov_yx(&self) -> Vec<f64> {
        self.coef.iter().zip(&self.var_x).map(|(c, v)| c * v).collect()
    }

    pub fn formula(&self, removed: &[usize]) -> Result<f64> {
        bayes_mse(self.var_y(), &self.cov_yx(), &self.var_x, removed)
    }
}

/// Fits least squares (with intercept) on the kept features of `n_mc`
/// Monte-Carlo draws and compares its mean squared residual to
/// [`bayes_mse`]. Holds when the relative gap is at most 3%.
pub fn check_feature_selection_thm(
    setup: &GaussianLinearSetup,
    removed: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<BoundCheckResult> {
    let p = setup.var_x.len();
    if setup.coef.len() != p {
        return Err(Error::DimensionMismatch("coef and var_x lengths differ".into()));
    }
    let formula = setup.formula(removed)?;
    let kept: Vec<usize> = (0..p).filter(|j| !removed.contains(j)).collect();
    let q = kept.len() + 1;
    let mut rng = rng_from_seed(seed);
    let noise_sd = setup.noise_var.sqrt();
    let sd: Vec<f64> = setup.var_x.iter().map(|v| v.sqrt()).collect();

    // accumulate the normal equations in one pass
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    let mut yty = 0.0;
    let mut x = vec![0.0; p];
    let mut row = DVector::<f64>::zeros(q);
    for _ in 0..n_mc {
        let mut y = 0.0;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[j] = sd[j] * z;
            y += setup.coef[j] * x[j];
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        y += noise_sd * e;
        row[0] = 1.0;
        for (a, &j) in kept.iter().enumerate() {
            row[a + 1] = x[j];
        }
        gram.ger(1.0, &row, &row, 1.0);
        xty.axpy(y, &row, 1.0);
        yty += y * y;
    }
    let beta = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolveFailed("normal equations are singular".into()))?
        .solve(&xty);
    // residual sum of squares = yᵀy − βᵀXᵀy at the least-squares solution
    let mc = (yty - beta.dot(&xty)) / n_mc as f64;
    let rel = (mc - formula).abs() / formula;
    let mut details = BTreeMap::new();
    details.insert("mc_mse".into(), mc);
    details.insert("formula_mse".into(), formula);
    details.insert("removed".into(), removed.len() as f64);
    Ok(BoundCheckResult::new(
        "feature_selection",
        rel,
        0.03,
        0.0,
        n_mc,
        format!("p={p} removed={removed:?} seed={seed}"),
        details,
    ))
}

/// Trace of the covariance (1/n normalization) of the per-row loss
/// gradients at `theta`.
pub fn gradient_covariance_trace(
    theta: &crate::learner::ModelParams,
    dataset: &Dataset,
) -> Result<f64> {
    let g = per_row_gradients(theta, dataset)?;
    let n = g.nrows() as f64;
    let mean = g.row_sum() / n;
    let mut trace = 0.0;
    for row in g.row_iter() {
        trace += (row - &mean).norm_squared();
    }
    Ok(trace / n)
}

/// Draws `trials` size-`subset_size` row samples with replacement, retrains
/// on each, and compares the mean parameter deviation from the full-data
/// optimum with `2·Tr(Σ_g)/(λ·|S|)`. `slack_factor` scales the allowance
/// (1.0 = the bound itself).
pub fn check_sampling_bound(
    dataset: &Dataset,
    lambda: f64,
    subset_size: usize,
    trials: usize,
    seed: u64,
    slack_factor: f64,
) -> Result<BoundCheckResult> {
    if subset_size == 0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "subset size and trial count must be positive".into(),
        ));
    }
    let theta = train(dataset, lambda, THEORY_TRAIN)?;
    let trace = gradient_covariance_trace(&theta, dataset)?;
    let bound = 2.0 * trace / (lambda * subset_size as f64);
    let full = theta.to_flat();
    let mut norms = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = derived_rng(seed, &[t as u64]);
        let idx: Vec<usize> = (0..subset_size)
            .map(|_| rng.random_range(0..dataset.n()))
            .collect();
        let sub = dataset.subset(&idx)?;
        let fit = train(&sub, lambda, THEORY_TRAIN)?;
        norms.push((fit.to_flat() - &full).norm());
    }
    let mean = norms.iter().sum::<f64>() / trials as f64;
    let mean_sq = norms.iter().map(|v| v * v).sum::<f64>() / trials as f64;
    let mut details = BTreeMap::new();
    details.insert("trace_cov".into(), trace);
    details.insert("mean_norm".into(), mean);
    details.insert("mean_sq_norm".into(), mean_sq);
    details.insert("bound".into(), bound);
    details.insert("lambda".into(), lambda);
    details.insert("subset_size".into(), subset_size as f64);
    Ok(BoundCheckResult::new(
        "sampling_bound",
        mean,
        bound,
        (slack_factor - 1.0) * bound,
        trials,
        format!("n={} p={} lambda={lambda} |S|={subset_size} seed={seed}", dataset.n(), dataset.p()),
        details,
    ))
}

/// Removes `removal_count` uniformly chosen entries (zero-imputed) in each
/// trial and compares the target loss with
/// `J(θ*) + √(2|S|)‖X‖∞‖LH⁻¹G‖₂ + |S|‖X‖∞²`. Holds when both the mean and
/// the worst trial stay under the right-hand side.
pub fn check_utility_bound(
    dataset: &Dataset,
    lambda: f64,
    removal_count: usize,
    trials: usize,
    seed: u64,
) -> Result<BoundCheckResult> {
    let (n, p) = (dataset.n(), dataset.p());
    if removal_count > n * p || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {removal_count} of {} entries over {trials} trials",
            n * p
        )));
    }
    let model = ImplicitModel::fit(dataset, lambda, THEORY_TRAIN)?;
    let j_star = loss(model.theta(), dataset)?;
    let sens_norm = model.sensitivity().entries.norm();
    let x_inf = dataset.features().amax();
    let s = removal_count as f64;
    let first_order = (2.0 * s).sqrt() * x_inf * sens_norm;
    let higher_order = s * x_inf * x_inf;
    let rhs = j_star + first_order;

    let mut losses = Vec::with_capacity(trials);
    for t in 0..trials {
        let mask = individualized_random_mask(n, p, n * p - removal_count, derive_seed(seed, &[t as u64]))?;
        losses.push(target_utility(dataset, &mask, lambda, &Imputer::Zero, THEORY_TRAIN)?.loss);
    }
    let mean = losses.iter().sum::<f64>() / trials as f64;
    let worst = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut details = BTreeMap::new();
    details.insert("j_star".into(), j_star);
    details.insert("first_order_term".into(), first_order);
    details.insert("higher_order_slack".into(), higher_order);
    details.insert("worst_trial_loss".into(), worst);
    details.insert("x_inf".into(), x_inf);
    details.insert("sensitivity_norm".into(), sens_norm);
    let mut result = BoundCheckResult::new(
        "utility_bound",
        mean,
        rhs,
        higher_order,
        trials,
        format!("n={n} p={p} lambda={lambda} |S|={removal_count} seed={seed}"),
        details,
    );
    result.holds = result.holds && worst <= rhs + higher_order;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorResidualRow {
    pub eps: f64,
    pub residual: f64,
    pub residual_over_eps: f64,
    pub residual_over_eps_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorResidualReport {
    pub rows: Vec<TaylorResidualRow>,
    /// `(r(ε_t)/ε_t²) / (r(ε_{t−1})/ε_{t−1}²)` for successive levels.
    pub ratios: Vec<f64>,
    pub holds: bool,
}

impl TaylorResidualReport {
    /// Worst deviation factor `max(r, 1/r)` over the successive ratios.
    pub fn worst_factor(&self) -> f64 {
        self.ratios
            .iter()
            .map(|&r| if r >= 1.0 { r } else { 1.0 / r })
            .fold(1.0, f64::max)
    }

    pub fn as_bound_check(&self, fingerprint: String) -> BoundCheckResult {
        let mut details = BTreeMap::new();
        for row in &self.rows {
            details.insert(format!("residual@{:e}", row.eps), row.residual);
        }
        let mut r = BoundCheckResult::new(
            "taylor_residual",
            self.worst_factor(),
            8.0,
            0.0,
            self.rows.len(),
            fingerprint,
            details,
        );
        r.holds = self.holds;
        r
    }
}

/// Compares `J(θ*(X+εΔ); X) − J(θ*(X); X)` with its first-order prediction
/// `ε⟨Δ, ∂J/∂X⟩` along a random unit direction `Δ`.
pub fn check_taylor_residual(
    dataset: &Dataset,
    lambda: f64,
    eps_list: &[f64],
    seed: u64,
) -> Result<TaylorResidualReport> {
    let (n, p) = (dataset.n(), dataset.p());
    let mut rng = rng_from_seed(seed);
    let mut dir = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    dir /= dir.norm();
    taylor_residual_along(dataset, lambda, eps_list, &dir)
}

pub fn taylor_residual_along(
    dataset: &Dataset,
    lambda: f64,
    eps_list: &[f64],
    dir: &DMatrix<f64>,
) -> Result<TaylorResidualReport> {
    if eps_list.iter().any(|&e| !(e > 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "epsilon values must be positive and strictly decreasing".into(),
        ));
    }
    let model = ImplicitModel::fit(dataset, lambda, THEORY_TRAIN)?;
    let j0 = loss(model.theta(), dataset)?;
    let slope = dir.dot(&model.sensitivity().entries);
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let perturbed = dataset.with_features(dataset.features() + dir * eps)?;
        let theta = train(&perturbed, lambda, THEORY_TRAIN)?;
        let residual = (loss(&theta, dataset)? - j0 - eps * slope).abs();
        rows.push(TaylorResidualRow {
            eps,
            residual,
            residual_over_eps: residual / eps,
            residual_over_eps_sq: residual / (eps * eps),
        });
    }
    let ratios: Vec<f64> = rows
        .windows(2)
        .map(|w| w[1].residual_over_eps_sq / w[0].residual_over_eps_sq)
        .collect();
    let holds = ratios.iter().all(|&r| (1.0 / 8.0..=8.0).contains(&r));
    Ok(TaylorResidualReport {
        rows,
        ratios,
        holds,
    })
}

/// Masks used by the utility-bound check for trial `t`; exposed for tests.
pub fn utility_bound_mask(n: usize, p: usize, removal_count: usize, seed: u64, t: usize) -> Result<MinimizationMask> {
    individualized_random_mask(n, p, n * p - removal_count, derive_seed(seed, &[t as u64]))
}

/// Draws `rows` rows of uniform `[0,1]` features with logistic labels, a
/// desk-scale problem instance for the bound checks.
pub fn random_logistic_instance(rows: usize, p: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b: f64 = rng.random_range(-0.5..0.5);
    let x = DMatrix::from_fn(rows, p, |_, _| rng.random::<f64>());
    let mid: f64 = w.iter().sum::<f64>() * 0.5;
    let mut labels: Vec<usize> = (0..rows)
        .map(|i| {
            let z = (0..p).map(|j| w[j] * x[(i, j)]).sum::<f64>() - mid + b;
            let prob = 1.0 / (1.0 + (-z).exp());
            (rng.random::<f64>() < prob) as usize
        })
        .collect();
    // both classes must be present for a finite optimum
    for c in 0..2 {
        if !labels.contains(&c) {
            let pick = sample(&mut rng, rows, 1).index(0);
            labels[pick] = c;
        }
    }
    Dataset::new(x, labels, 2)
}

//! L2-regularized binary / multinomial logistic regression.
//!
//! Parameterization: class 0 is the reference class with logit fixed at 0,
//! and each of the remaining `K = C − 1` classes owns a weight row and a
//! bias. The binary case is therefore the usual single-logit model. The flat
//! parameter vector is laid out class by class as `[w_k, b_k]`, so its length
//! is `d = K·(p + 1)`.
//!
//! Two objectives live here and must not be confused:
//! * the *utility* `J(θ; X, Y)`, the mean cross-entropy without any penalty;
//! * the *training objective* `J + (λ/2)‖W‖²`, minimized by [`train`].
//!
//! Biases are never regularized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MinimizationMask, MinimizedDataset};
use crate::error::{Error, Result};
use crate::impute::Imputer;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `(C − 1) × p`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelParamsRepr {
    lambda: f64,
    bias: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(n_classes: usize, p: usize, lambda: f64) -> Self {
        let k = n_classes.saturating_sub(1).max(1);
        Self {
            weights: DMatrix::zeros(k, p),
            bias: DVector::zeros(k),
            lambda,
        }
    }

    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, lambda: f64) -> Result<Self> {
        if weights.nrows() != bias.len() || weights.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} weight rows for {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            lambda,
        })
    }

    pub fn from_flat(flat: &DVector<f64>, n_classes: usize, p: usize, lambda: f64) -> Self {
        let k = n_classes - 1;
        assert_eq!(flat.len(), k * (p + 1), "flat parameter length");
        let weights = DMatrix::from_fn(k, p, |c, j| flat[c * (p + 1) + j]);
        let bias = DVector::from_fn(k, |c, _| flat[c * (p + 1) + p]);
        Self {
            weights,
            bias,
            lambda,
        }
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let (k, p) = self.weights.shape();
        let mut flat = DVector::zeros(k * (p + 1));
        for c in 0..k {
            for j in 0..p {
                flat[c * (p + 1) + j] = self.weights[(c, j)];
            }
            flat[c * (p + 1) + p] = self.bias[c];
        }
        flat
    }

    /// Flat vector with the weight entries kept and the bias entries zeroed,
    /// i.e. the gradient of `(1/2)‖W‖²`.
    pub fn weight_mask_flat(&self) -> DVector<f64> {
        let mut flat = self.to_flat();
        let p = self.p();
        for c in 0..self.n_logits() {
            flat[c * (p + 1) + p] = 0.0;
        }
        flat
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows() + 1
    }

    pub fn p(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_logits(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_logits() * (self.p() + 1)
    }

    /// `(C−1) × (p+1)` matrix `[W | b]`.
    fn stacked(&self) -> DMatrix<f64> {
        let (k, p) = self.weights.shape();
        DMatrix::from_fn(k, p + 1, |c, j| {
            if j < p {
                self.weights[(c, j)]
            } else {
                self.bias[c]
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = ModelParamsRepr {
            lambda: self.lambda,
            bias: self.bias.iter().copied().collect(),
            weights: self
                .weights
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: ModelParamsRepr = serde_json::from_str(text)?;
        let k = repr.weights.len();
        let p = repr.weights.first().map_or(0, Vec::len);
        if repr.weights.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged weight rows".into()));
        }
        let weights = DMatrix::from_fn(k, p, |c, j| repr.weights[c][j]);
        Self::new(weights, DVector::from_vec(repr.bias), repr.lambda)
    }

    fn check_arity(&self, dataset: &Dataset) -> Result<()> {
        if dataset.p() != self.p() || dataset.n_classes() != self.n_classes() {
            return Err(Error::DimensionMismatch(format!(
                "model has p={} C={}, dataset has p={} C={}",
                self.p(),
                self.n_classes(),
                dataset.p(),
                dataset.n_classes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// Design matrix with a trailing column of ones.
fn augmented(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[(i, j)] } else { 1.0 })
}

/// Per-row class probabilities of the non-reference classes (`n × K`) and
/// per-row log-partition values.
struct Forward {
    probs: DMatrix<f64>,
    log_norm: DVector<f64>,
    logits: DMatrix<f64>,
}

fn forward(theta: &ModelParams, xa: &DMatrix<f64>) -> Forward {
    let logits = xa * theta.stacked().transpose();
    let (n, k) = logits.shape();
    let mut probs = DMatrix::zeros(n, k);
    let mut log_norm = DVector::zeros(n);
    for i in 0..n {
        let m = logits.row(i).iter().fold(0.0f64, |a, &b| a.max(b));
        let mut s = (-m).exp();
        for c in 0..k {
            s += (logits[(i, c)] - m).exp();
        }
        log_norm[i] = m + s.ln();
        for c in 0..k {
            probs[(i, c)] = (logits[(i, c)] - log_norm[i]).exp();
        }
    }
    Forward {
        probs,
        log_norm,
        logits,
    }
}

/// Residuals `π_ik − 1[y_i = k]` over the non-reference classes.
fn residuals(fw: &Forward, labels: &[usize]) -> DMatrix<f64> {
    let mut r = fw.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        if y > 0 {
            r[(i, y - 1)] -= 1.0;
        }
    }
    r
}

fn row_losses(fw: &Forward, labels: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let z = if y == 0 { 0.0 } else { fw.logits[(i, y - 1)] };
            (fw.log_norm[i] - z).max(0.0)
        })
        .collect()
}

/// Per-row cross-entropy.
pub fn per_row_loss(theta: &ModelParams, dataset: &Dataset) -> Result<Vec<f64>> {
    theta.check_arity(dataset)?;
    let fw = forward(theta, &augmented(dataset.features()));
    Ok(row_losses(&fw, dataset.labels()))
}

/// Mean cross-entropy (no ridge term).
pub fn loss(theta: &ModelParams, dataset: &Dataset) -> Result<f64> {
    let rows = per_row_loss(theta, dataset)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Argmax predictions; ties go to the lowest class index.
pub fn predict(theta: &ModelParams, x: &DMatrix<f64>) -> Vec<usize> {
    let logits = augmented(x) * theta.stacked().transpose();
    logits
        .row_iter()
        .map(|row| {
            let mut best = (0usize, 0.0f64);
            for (c, &z) in row.iter().enumerate() {
                if z > best.1 {
                    best = (c + 1, z);
                }
            }
            best.0
        })
        .collect()
}

pub fn accuracy(theta: &ModelParams, dataset: &Dataset) -> Result<f64> {
    theta.check_arity(dataset)?;
    let pred = predict(theta, dataset.features());
    let hits = pred
        .iter()
        .zip(dataset.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / dataset.n() as f64)
}

/// Gradient of the unregularized utility `J` w.r.t. the flat parameters.
pub fn gradient_theta(theta: &ModelParams, dataset: &Dataset) -> Result<DVector<f64>> {
    theta.check_arity(dataset)?;
    let xa = augmented(dataset.features());
    let fw = forward(theta, &xa);
    Ok(flatten_rows(
        &(residuals(&fw, dataset.labels()).transpose() * &xa / dataset.n() as f64),
    ))
}

/// Gradient of the regularized training objective.
pub fn training_gradient(theta: &ModelParams, dataset: &Dataset) -> Result<DVector<f64>> {
    Ok(gradient_theta(theta, dataset)? + theta.weight_mask_flat() * theta.lambda)
}

pub fn training_objective(theta: &ModelParams, dataset: &Dataset) -> Result<f64> {
    Ok(loss(theta, dataset)? + 0.5 * theta.lambda * theta.weights.norm_squared())
}

/// Per-row gradients `∇_θ ℓ(θ; x_i, y_i)`, one row per sample (`n × d`).
pub fn per_row_gradients(theta: &ModelParams, dataset: &Dataset) -> Result<DMatrix<f64>> {
    theta.check_arity(dataset)?;
    let xa = augmented(dataset.features());
    let fw = forward(theta, &xa);
    let r = residuals(&fw, dataset.labels());
    let (k, q) = (theta.n_logits(), xa.ncols());
    Ok(DMatrix::from_fn(dataset.n(), k * q, |i, idx| {
        r[(i, idx / q)] * xa[(i, idx % q)]
    }))
}

fn flatten_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |idx, _| m[(idx / c, idx % c)])
}

/// Hessian of the regularized training objective at `theta` with ridge
/// strength `lambda` on the weight coordinates.
pub fn hessian(theta: &ModelParams, dataset: &Dataset, lambda: f64) -> Result<DMatrix<f64>> {
    theta.check_arity(dataset)?;
    let xa = augmented(dataset.features());
    let fw = forward(theta, &xa);
    Ok(hessian_from(&fw, &xa, theta.n_logits(), lambda))
}

fn hessian_from(fw: &Forward, xa: &DMatrix<f64>, k: usize, lambda: f64) -> DMatrix<f64> {
    let (n, q) = xa.shape();
    let d = k * q;
    let mut h = DMatrix::zeros(d, d);
    for a in 0..k {
        for b in a..k {
            // softmax curvature between logits a and b, per row
            let weights = DVector::from_fn(n, |i, _| {
                let pa = fw.probs[(i, a)];
                let pb = fw.probs[(i, b)];
                if a == b {
                    pa * (1.0 - pa)
                } else {
                    -pa * pb
                }
            });
            let mut scaled = xa.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= weights[i];
            }
            let block = xa.transpose() * scaled / n as f64;
            h.view_mut((a * q, b * q), (q, q)).copy_from(&block);
            if a != b {
                h.view_mut((b * q, a * q), (q, q))
                    .copy_from(&block.transpose());
            }
        }
    }
    for a in 0..k {
        for j in 0..q - 1 {
            h[(a * q + j, a * q + j)] += lambda;
        }
    }
    h
}

/// Objective values per accepted solver iterate, starting at the zero model.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
}

/// Minimizes `J + (λ/2)‖W‖²` from the zero model by damped Newton, falling
/// back to gradient steps when the Newton direction fails to descend.
pub fn train(dataset: &Dataset, lambda: f64, opts: TrainOptions) -> Result<ModelParams> {
    train_with_trace(dataset, lambda, opts).map(|(m, _)| m)
}

pub fn train_with_trace(
    dataset: &Dataset,
    lambda: f64,
    opts: TrainOptions,
) -> Result<(ModelParams, TrainTrace)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let (n_classes, p) = (dataset.n_classes(), dataset.p());
    let xa = augmented(dataset.features());
    let labels = dataset.labels();
    let n = dataset.n() as f64;
    let k = n_classes - 1;

    let eval = |theta: &ModelParams| -> (f64, DVector<f64>, Forward) {
        let fw = forward(theta, &xa);
        let obj = row_losses(&fw, labels).iter().sum::<f64>() / n
            + 0.5 * lambda * theta.weights.norm_squared();
        let grad = flatten_rows(&(residuals(&fw, labels).transpose() * &xa / n))
            + theta.weight_mask_flat() * lambda;
        (obj, grad, fw)
    };

    let mut flat = DVector::zeros(k * (p + 1));
    let mut theta = ModelParams::from_flat(&flat, n_classes, p, lambda);
    let (mut obj, mut grad, mut fw) = eval(&theta);
    let mut trace = TrainTrace::default();
    trace.objective.push(obj);
    trace.grad_norm.push(grad.norm());

    for _ in 0..opts.max_iter {
        let gnorm = grad.norm();
        if gnorm <= opts.tol {
            return Ok((theta, trace));
        }
        let h = hessian_from(&fw, &xa, k, lambda);
        let newton = Cholesky::new(h).map(|c| -c.solve(&grad));
        let mut accepted = None;
        let directions = newton
            .into_iter()
            .chain(std::iter::once(-grad.clone()));
        'dir: for dir in directions {
            let slope = grad.dot(&dir);
            if !(slope < 0.0) {
                continue;
            }
            let mut step = 1.0;
            while step > 1e-12 {
                let cand_flat = &flat + &dir * step;
                let cand = ModelParams::from_flat(&cand_flat, n_classes, p, lambda);
                let (c_obj, c_grad, c_fw) = eval(&cand);
                let armijo = c_obj <= obj + 1e-4 * step * slope;
                // at the floating-point floor the objective stops moving but
                // the gradient can still shrink; allow a few ulps of noise
                let floor = c_obj <= obj + 32.0 * f64::EPSILON * obj.abs().max(1.0)
                    && c_grad.norm() < gnorm;
                if c_obj.is_finite() && (armijo || floor) {
                    accepted = Some((cand_flat, cand, c_obj, c_grad, c_fw));
                    break 'dir;
                }
                step *= 0.5;
            }
        }
        match accepted {
            Some((f, t, o, g, w)) => {
                flat = f;
                theta = t;
                obj = o;
                grad = g;
                fw = w;
                trace.objective.push(obj);
                trace.grad_norm.push(grad.norm());
            }
            None => break,
        }
    }
    let gnorm = grad.norm();
    if gnorm <= opts.tol {
        Ok((theta, trace))
    } else {
        Err(Error::NonConvergence {
            iterations: trace.objective.len() - 1,
            grad_norm: gnorm,
        })
    }
}

/// Fingerprint of the inputs a sensitivity matrix was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFingerprint(pub u64);

impl DataFingerprint {
    pub fn of(dataset: &Dataset, lambda: f64) -> Self {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        dataset.n().hash(&mut h);
        dataset.p().hash(&mut h);
        for v in dataset.features().iter() {
            v.to_bits().hash(&mut h);
        }
        dataset.labels().hash(&mut h);
        lambda.to_bits().hash(&mut h);
        Self(h.finish())
    }
}

/// `∂J(θ*(X); X, Y)/∂X_ij` for every entry, evaluated at the full-data optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub entries: DMatrix<f64>,
    pub evaluated_at: DataFingerprint,
}

/// Implicit-function machinery around a trained optimum `θ*`: the Hessian
/// factor, the utility gradient `L`, and the analytic cross-derivative
/// `G = ∂²J_train/∂θ∂X`.
pub struct ImplicitModel {
    theta: ModelParams,
    xa: DMatrix<f64>,
    labels: Vec<usize>,
    fw: Forward,
    h_chol: Cholesky<f64, Dyn>,
    fingerprint: DataFingerprint,
}

impl ImplicitModel {
    pub fn fit(dataset: &Dataset, lambda: f64, opts: TrainOptions) -> Result<Self> {
        let theta = train(dataset, lambda, opts)?;
        Self::at(dataset, theta)
    }

    /// Wraps an already-trained optimum.
    pub fn at(dataset: &Dataset, theta: ModelParams) -> Result<Self> {
        theta.check_arity(dataset)?;
        let xa = augmented(dataset.features());
        let fw = forward(&theta, &xa);
        let h = hessian_from(&fw, &xa, theta.n_logits(), theta.lambda);
        let h_chol = Cholesky::new(h.clone()).ok_or_else(|| {
            let sv = h.singular_values();
            Error::SolveFailed(format!(
                "Hessian is not positive definite (condition estimate {:e})",
                sv.max() / sv.min()
            ))
        })?;
        Ok(Self {
            fingerprint: DataFingerprint::of(dataset, theta.lambda),
            theta,
            xa,
            labels: dataset.labels().to_vec(),
            fw,
            h_chol,
        })
    }

    pub fn theta(&self) -> &ModelParams {
        &self.theta
    }

    fn n(&self) -> usize {
        self.xa.nrows()
    }

    fn p(&self) -> usize {
        self.xa.ncols() - 1
    }

    /// `L`: gradient of the unregularized utility at `θ*`.
    pub fn utility_gradient(&self) -> DVector<f64> {
        let r = residuals(&self.fw, &self.labels);
        flatten_rows(&(r.transpose() * &self.xa / self.n() as f64))
    }

    /// Column of `G` for input entry `(i, j)`.
    pub fn cross_derivative(&self, i: usize, j: usize) -> DVector<f64> {
        let k = self.theta.n_logits();
        let q = self.p() + 1;
        let n = self.n() as f64;
        let pi = self.fw.probs.row(i);
        let w_j = self.theta.weights.column(j);
        let y = self.labels[i];
        // A_i w_j with A_i = diag(π) − ππᵀ
        let pw: f64 = (0..k).map(|c| pi[c] * w_j[c]).sum();
        let mut col = DVector::zeros(k * q);
        for c in 0..k {
            let a_w = pi[c] * (w_j[c] - pw);
            let r = pi[c] - if y == c + 1 { 1.0 } else { 0.0 };
            for m in 0..q {
                col[c * q + m] = a_w * self.xa[(i, m)] / n;
            }
            col[c * q + j] += r / n;
        }
        col
    }

    /// `∂θ*/∂X_ij = −H⁻¹ G_ij`.
    pub fn param_derivative(&self, i: usize, j: usize) -> DVector<f64> {
        -self.h_chol.solve(&self.cross_derivative(i, j))
    }

    /// `−L H⁻¹ G` for every entry, via one solve `v = H⁻¹Lᵀ` and a pass of
    /// analytic per-entry contractions.
    pub fn sensitivity(&self) -> SensitivityMatrix {
        let (n, p) = (self.n(), self.p());
        let k = self.theta.n_logits();
        let q = p + 1;
        let v = self.h_chol.solve(&self.utility_gradient());
        let r = residuals(&self.fw, &self.labels);
        let mut entries = DMatrix::zeros(n, p);
        for i in 0..n {
            let pi = self.fw.probs.row(i);
            // u_c = v_c · x̃_i, then q = A_i u
            let u: Vec<f64> = (0..k)
                .map(|c| (0..q).map(|m| v[c * q + m] * self.xa[(i, m)]).sum())
                .collect();
            let pu: f64 = (0..k).map(|c| pi[c] * u[c]).sum();
            let qa: Vec<f64> = (0..k).map(|c| pi[c] * (u[c] - pu)).collect();
            for j in 0..p {
                let mut acc = 0.0;
                for c in 0..k {
                    acc += self.theta.weights[(c, j)] * qa[c] + r[(i, c)] * v[c * q + j];
                }
                entries[(i, j)] = -acc / n as f64;
            }
        }
        SensitivityMatrix {
            entries,
            evaluated_at: self.fingerprint,
        }
    }
}

/// Trains on the full dataset and returns its sensitivity matrix.
pub fn sensitivity(dataset: &Dataset, lambda: f64, opts: TrainOptions) -> Result<SensitivityMatrix> {
    Ok(ImplicitModel::fit(dataset, lambda, opts)?.sensitivity())
}

/// Loss and accuracy on the original data of a model trained on minimized,
/// imputed data.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetUtility {
    pub loss: f64,
    pub accuracy: f64,
    pub params: ModelParams,
}

pub fn target_utility(
    dataset: &Dataset,
    mask: &MinimizationMask,
    lambda: f64,
    imputer: &Imputer,
    opts: TrainOptions,
) -> Result<TargetUtility> {
    let minimized = MinimizedDataset::new(dataset.features(), mask)?;
    let filled = crate::impute::impute(&minimized, imputer)?;
    let train_set = dataset.with_features(filled)?;
    let params = train(&train_set, lambda, opts)?;
    Ok(TargetUtility {
        loss: loss(&params, dataset)?,
        accuracy: accuracy(&params, dataset)?,
        params,
    })
}

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

/// Mean and covariance of a multivariate Gaussian, with the diagonal jitter
/// that made `cov + jitter·I` factorizable.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    jitter: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianStatsRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    jitter: f64,
}

impl GaussianStats {
    /// Validates symmetry and escalates the jitter (doubling from
    /// `initial_jitter`, at least [`DEFAULT_JITTER`] after the first failure)
    /// until `cov + jitter·I` admits a Cholesky factor. Fails past [`MAX_JITTER`].
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, initial_jitter: f64) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, mean has {p} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !(initial_jitter >= 0.0 && initial_jitter.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "jitter must be a finite nonnegative number, got {initial_jitter}"
            )));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let mut jitter = initial_jitter;
        loop {
            if jitter > MAX_JITTER {
                return Err(Error::NotPositiveDefinite { jitter: MAX_JITTER });
            }
            if factor(&cov, jitter).is_some() {
                return Ok(Self { mean, cov, jitter });
            }
            jitter = (2.0 * jitter).max(DEFAULT_JITTER);
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance without jitter.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn jittered_cov(&self) -> DMatrix<f64> {
        let mut c = self.cov.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += self.jitter;
        }
        c
    }

    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        factor(&self.cov, self.jitter).expect("jitter validated at construction")
    }

    pub fn to_json(&self) -> Result<String> {
        let p = self.dim();
        let repr = GaussianStatsRepr {
            mean: self.mean.iter().copied().collect(),
            cov: (0..p)
                .map(|i| (0..p).map(|j| self.cov[(i, j)]).collect())
                .collect(),
            jitter: self.jitter,
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: GaussianStatsRepr = serde_json::from_str(text)?;
        let p = repr.mean.len();
        if repr.cov.len() != p || repr.cov.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "covariance rows do not match mean of length {p}"
            )));
        }
        let cov = DMatrix::from_fn(p, p, |i, j| repr.cov[i][j]);
        Self::new(DVector::from_vec(repr.mean), cov, repr.jitter)
    }
}

fn factor(cov: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut c = cov.clone();
    for i in 0..c.nrows() {
        c[(i, i)] += jitter;
    }
    Cholesky::new(c)
}

/// How labels of a synthetic sample are generated from its features.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// `y = coefᵀx + N(0, noise_std²)`.
    Regression { coef: Vec<f64>, noise_std: f64 },
    /// `y ~ Bernoulli(sigmoid(weightsᵀx + bias))`.
    Logistic { weights: Vec<f64>, bias: f64 },
}

/// Features drawn from a Gaussian with real-valued (regression) or 0/1
/// (logistic) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub features: DMatrix<f64>,
    pub targets: Vec<f64>,
}

impl SyntheticSample {
    /// Binary classification dataset; only valid for logistic labels.
    pub fn into_dataset(self) -> Result<Dataset> {
        let labels = self
            .targets
            .iter()
            .map(|&t| {
                if t == 0.0 || t == 1.0 {
                    Ok(t as usize)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "target {t} is not a binary class label"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.features, labels, 2)
    }
}

/// Draws `n` rows from `N(mean, cov)` and labels them with `rule`.
pub fn synth_gaussian(
    n: usize,
    mean: &[f64],
    cov: &DMatrix<f64>,
    rule: &LabelRule,
    seed: u64,
) -> Result<SyntheticSample> {
    let p = mean.len();
    let stats = GaussianStats::new(DVector::from_column_slice(mean), cov.clone(), 0.0)?;
    let l = stats.cholesky().l();
    let coef_len = match rule {
        LabelRule::Regression { coef, .. } => coef.len(),
        LabelRule::Logistic { weights, .. } => weights.len(),
    };
    if coef_len != p {
        return Err(Error::DimensionMismatch(format!(
            "label rule has {coef_len} coefficients for {p} features"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut features = DMatrix::zeros(n, p);
    let mut targets = Vec::with_capacity(n);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = &stats.mean + &l * &z;
        features.row_mut(i).copy_from(&x.transpose());
        let y = match rule {
            LabelRule::Regression { coef, noise_std } => {
                let eps: f64 = StandardNormal.sample(&mut rng);
                dot(coef, x.as_slice()) + noise_std * eps
            }
            LabelRule::Logistic { weights, bias } => {
                let prob = sigmoid(dot(weights, x.as_slice()) + bias);
                let draw = Bernoulli::new(prob).expect("sigmoid lies in [0,1]");
                if draw.sample(&mut rng) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        targets.push(y);
    }
    Ok(SyntheticSample { features, targets })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

//! Data minimization for machine learning.
//!
//! Given a tabular dataset and an L2-regularized logistic-regression learner,
//! this crate computes individualized minimization masks (which entries of the
//! feature matrix to keep), evaluates the utility of models trained on the
//! minimized data, measures privacy leakage of the result, and re-selects
//! masks under feature-level privacy scores.
//!
//! Module map:
//! * [`data`]: datasets, CSV, scaling, splits, masks, Gaussian sampling
//! * [`learner`]: the lower-level training problem and its derivatives
//! * [`impute`]: zero / mean / conditional-Gaussian imputation
//! * [`minimize`]: baselines, Taylor, metamodel, evolutionary search
//! * [`attacks`]: re-identification, reconstruction, membership inference
//! * [`defense`]: privacy scores and privacy-aware selection
//! * [`theory`]: numerical bound checks
//! * [`cli`]: the command-line harness

pub mod attacks;
pub mod cli;
pub mod data;
pub mod defense;
pub mod error;
pub mod impute;
pub mod learner;
pub mod minimize;
pub mod rng;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};

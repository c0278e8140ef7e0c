//! Framework-agnostic open-set recognition engine.
//!
//! The engine consumes classifier activation vectors (logits), fits OpenMax
//! extreme-value models, applies softmax / softmax-threshold / OpenMax
//! decision rules with unknown rejection, tunes the OSR hyperparameters and
//! emits the full metric suite (accuracy, macro/micro P/R/F1, MCC, AUROC,
//! AUPR-OUT).
//!
//! Modules:
//! - [`dataset`]: activation files, manifests, stratified splits, open-set views
//! - [`weibull`]: Weibull tail fitting and CDF evaluation
//! - [`openmax`]: distances, MAVs, activation recalibration, decision rules
//! - [`metrics`]: confusion matrix and the metric suite
//! - [`eval`]: running a decision rule over a data split
//! - [`hpo`]: grid / random hyperparameter search
//! - [`toy`]: synthetic mixtures and a small gradient-descent classifier

pub mod dataset;
pub mod error;
pub mod eval;
pub mod hpo;
pub mod metrics;
pub mod openmax;
pub mod toy;
pub mod weibull;

pub use error::{OsrError, Result};

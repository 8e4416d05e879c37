//! Label-encoding risk minimization lab.
//!
//! A small, fully deterministic library for studying guidance signals on
//! unlabeled data: per-class prediction means aligned to one-hot label
//! encodings (LERM), entropy minimization, and plain empirical risk, with
//! numerical certifiers for the inequalities relating them, a manual-
//! backprop MLP, synthetic semi-supervised / domain-adaptation tasks, and
//! a CSV-emitting CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod numerics;
pub mod risks;
pub mod tasks;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{derive_seed, draw_normal, normal_matrix, softmax_rows, Matrix, RngState};
pub use risks::{
    empirical_risk, empirical_risk_grad, entropy_risk, entropy_risk_grad, label_encoding_risk,
    label_encoding_risk_grad, prediction_means_labeled, prediction_means_unlabeled,
    DivergenceKind, OneHot, PredictionMeans, ProbBatch, DEFAULT_MASS_EPS,
};
pub use theory::{
    balanced_labels, check_theorem1, check_theorem2, check_theorem3, random_labels,
    random_prob_batch, TheoremId, TheoremReport,
};

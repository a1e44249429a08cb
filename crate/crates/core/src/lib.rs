//! Cost-sensitive stochastic gradient boosting for conditional quantiles.
//!
//! Models minimise the asymmetric absolute loss that charges `alpha` per unit
//! of underestimation and `1 - alpha` per unit of overestimation, so a fitted
//! model estimates the conditional `alpha`-quantile of the response. A cost
//! ratio `U:V` (underestimation is `U/V` times as costly) maps to
//! `alpha = U / (U + V)`.

pub mod boosting;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod loss;
pub mod seed;
pub mod selection;
pub mod synth;
pub mod tree;

pub use boosting::{load_model, predict, save_model, train, BoostedModel};
pub use data::{cost_ratio_to_alpha, load_csv, CsvSchema, Dataset, TrainConfig};
pub use error::{Error, Result};
pub use loss::{
    deviance, initial_value, negative_gradient, terminal_node_estimate, weighted_quantile,
    QuantileLossSpec,
};
pub use selection::{cross_validate, train_with_selection, CvResult};
pub use tree::{fit_tree, predict_tree, RegressionTree};

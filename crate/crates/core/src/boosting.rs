//! Stochastic gradient boosting under the asymmetric absolute loss.
//!
//! Each iteration computes the working response (negative gradient) for every
//! row, draws a simple random sample without replacement, grows a tree on the
//! sample and then moves every row's fit, sampled or not, by `learning_rate`
//! times the value of the terminal it routes to. A fitted model predicts
//! `f0 + lr * rho_1(x) + ... + lr * rho_T(x)`, accumulated tree by tree in
//! that order so that scoring reproduces the in-loop fits bit for bit.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::{deviance_unchecked, gradient_unchecked, initial_value, QuantileLossSpec};
use crate::seed::{self, Stream};
use crate::tree::{column_orders, fit_tree_with_order, RegressionTree, TreeParams, TreeSample};

pub const MODEL_FORMAT: &str = "quantboost-model";
pub const MODEL_VERSION: u64 = 1;
const ROUTING_RULE: &str = "x[predictor] < threshold -> left";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub config: TrainConfig,
    pub n_rows: usize,
    pub subsample_size: usize,
    /// Training deviance after each tree.
    pub deviance_trace: Vec<f64>,
    /// Set when training deviance hit exactly zero before `max_trees`.
    pub stopped_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub f0: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub predictor_names: Vec<String>,
    pub trees: Vec<RegressionTree>,
    pub training: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u64,
    routing: String,
    #[serde(flatten)]
    model: BoostedModel,
}

#[derive(Deserialize)]
struct VersionProbe {
    format: Option<String>,
    version: Option<u64>,
}

/// Draws `m` distinct row indices from `0..n` with a partial Fisher-Yates
/// shuffle, returned in ascending order.
pub fn draw_subsample(n: usize, m: usize, master_seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = seed::rng(master_seed, Stream::Subsample, iteration as u64, 0);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in 0..m.min(n) {
        let j = rng.gen_range(i..n);
        perm.swap(i, j);
    }
    let mut chosen = vec![false; n];
    for &i in &perm[..m.min(n)] {
        chosen[i] = true;
    }
    (0..n).filter(|&i| chosen[i]).collect()
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<BoostedModel> {
    cfg.validate()?;
    let spec = QuantileLossSpec::new(cfg.alpha)?;
    let y = data.require_response()?;
    let w = data.weights();
    let cols = data.columns();
    let n = data.n_rows();

    let f0 = initial_value(y, w, spec)?;
    let m = cfg.subsample_size(n);
    let params = TreeParams {
        splits_per_tree: cfg.splits_per_tree,
        min_node_size: cfg.min_node_size,
    };
    let lr = cfg.learning_rate;

    let orders = column_orders(cols);
    let mut fit = vec![f0; n];
    let mut z = vec![0.0; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.max_trees);
    let mut trace = Vec::with_capacity(cfg.max_trees);
    let mut stopped_at = None;

    for t in 1..=cfg.max_trees {
        for i in 0..n {
            z[i] = gradient_unchecked(y[i], fit[i], w[i], spec);
            residuals[i] = y[i] - fit[i];
        }
        let rows = draw_subsample(n, m, cfg.seed, t);
        let sample = TreeSample {
            columns: cols,
            rows: &rows,
            z: &z,
            residuals: &residuals,
            weights: w,
        };
        let tree = fit_tree_with_order(sample, Some(&orders), params, spec)?;
        for (i, f) in fit.iter_mut().enumerate() {
            *f += lr * tree.predict_with(|j| cols[j][i]);
        }
        let dev = deviance_unchecked(y, &fit, w, spec);
        trees.push(tree);
        trace.push(dev);
        if dev == 0.0 {
            stopped_at = Some(t);
            break;
        }
    }

    Ok(BoostedModel {
        f0,
        alpha: cfg.alpha,
        learning_rate: lr,
        predictor_names: data.predictor_names().to_vec(),
        trees,
        training: TrainingMeta {
            seed: cfg.seed,
            config: cfg.clone(),
            n_rows: n,
            subsample_size: m,
            deviance_trace: trace,
            stopped_at,
        },
    })
}

impl BoostedModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn loss_spec(&self) -> QuantileLossSpec {
        QuantileLossSpec::new(self.alpha).expect("model alpha validated on construction")
    }

    /// For each model predictor, the matching column index in `data`.
    pub fn column_map(&self, data: &Dataset) -> Result<Vec<usize>> {
        if data.n_predictors() != self.predictor_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "model has {} predictors, data has {}",
                self.predictor_names.len(),
                data.n_predictors()
            )));
        }
        self.predictor_names
            .iter()
            .map(|name| {
                data.column_index(name).ok_or_else(|| {
                    Error::SchemaMismatch(format!("data is missing predictor `{name}`"))
                })
            })
            .collect()
    }

    fn check_n_trees(&self, n_trees: Option<usize>) -> Result<usize> {
        let k = n_trees.unwrap_or(self.trees.len());
        if k > self.trees.len() {
            return Err(Error::OutOfRange {
                what: "n_trees",
                value: k,
                min: 0,
                max: self.trees.len(),
            });
        }
        Ok(k)
    }

    /// Score a single row given in model predictor order.
    pub fn predict_row(&self, x: &[f64], n_trees: Option<usize>) -> Result<f64> {
        let k = self.check_n_trees(n_trees)?;
        if x.len() != self.predictor_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "row has {} values, model expects {}",
                x.len(),
                self.predictor_names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor vector"));
        }
        let mut f = self.f0;
        for tree in &self.trees[..k] {
            f += self.learning_rate * tree.predict_with(|j| x[j]);
        }
        Ok(f)
    }

    /// Deviance of the first `t` trees on `data`, for `t = 1..=n_trees()`,
    /// computed in a single pass over the trees.
    pub fn staged_deviance(&self, data: &Dataset) -> Result<Vec<f64>> {
        let map = self.column_map(data)?;
        let y = data.require_response()?;
        let w = data.weights();
        let spec = self.loss_spec();
        let mut fit = vec![self.f0; data.n_rows()];
        let mut out = Vec::with_capacity(self.trees.len());
        for tree in &self.trees {
            for (i, f) in fit.iter_mut().enumerate() {
                *f += self.learning_rate * tree.predict_with(|j| data.column(map[j])[i]);
            }
            out.push(deviance_unchecked(y, &fit, w, spec));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            routing: ROUTING_RULE.into(),
            model: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::InvalidConfig(format!("model serialisation failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let probe: VersionProbe =
            serde_json::from_value(value.clone()).map_err(|e| Error::ModelFormat {
                offset: 0,
                message: e.to_string(),
            })?;
        if probe.format.as_deref() != Some(MODEL_FORMAT) {
            return Err(Error::ModelFormat {
                offset: 0,
                message: format!("not a {MODEL_FORMAT} file"),
            });
        }
        match probe.version {
            Some(MODEL_VERSION) => {}
            Some(found) => {
                return Err(Error::ModelVersion {
                    found,
                    expected: MODEL_VERSION,
                })
            }
            None => {
                return Err(Error::ModelFormat {
                    offset: 0,
                    message: "missing version".into(),
                })
            }
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::ModelFormat {
            offset: 0,
            message: e.to_string(),
        })?;
        let model = file.model;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::ModelFormat {
                offset: 0,
                message: m.to_string(),
            })
        };
        QuantileLossSpec::new(self.alpha)?;
        if !self.f0.is_finite() || !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("invalid f0 or learning rate");
        }
        if self.predictor_names.is_empty() {
            return bad("model has no predictors");
        }
        let p = self.predictor_names.len();
        for tree in &self.trees {
            // re-run the structural checks on deserialised arenas
            RegressionTree::from_nodes(tree.nodes().to_vec())?;
            if tree.max_predictor().is_some_and(|j| j >= p) {
                return bad("tree references an unknown predictor");
            }
        }
        Ok(())
    }
}

fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    Error::ModelFormat {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Scores every row of `data`, using the first `n_trees` trees (all trees
/// when `None`).
pub fn predict(model: &BoostedModel, data: &Dataset, n_trees: Option<usize>) -> Result<Vec<f64>> {
    let k = model.check_n_trees(n_trees)?;
    let map = model.column_map(data)?;
    let mut fit = vec![model.f0; data.n_rows()];
    for tree in &model.trees[..k] {
        for (i, f) in fit.iter_mut().enumerate() {
            *f += model.learning_rate * tree.predict_with(|j| data.column(map[j])[i]);
        }
    }
    Ok(fit)
}

pub fn save_model(model: &BoostedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BoostedModel::from_json(&text)
}

//! Model interpretation: partial dependence, relative influence and the
//! permutation baseline for relative influence.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::boosting::BoostedModel;
use crate::data::{write_rows, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::weighted_quantile;
use crate::seed::{self, Stream};
use crate::selection::train_with_selection;
use crate::tree::{Node, RegressionTree};

pub const DEFAULT_PD_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PartialDependenceGrid {
    pub predictor: String,
    pub grid: Vec<f64>,
    pub response: Vec<f64>,
    /// Training-data deciles (10% .. 90%) of the predictor.
    pub deciles: Vec<f64>,
}

/// Contribution of one tree at `value` of predictor `target`, with every
/// other split averaged over by the training weight fractions.
pub fn tree_partial_dependence(tree: &RegressionTree, target: usize, value: f64) -> f64 {
    fn walk(nodes: &[Node], i: usize, target: usize, value: f64, mass: f64) -> f64 {
        match nodes[i] {
            Node::Terminal { rho, .. } => mass * rho,
            Node::Internal {
                predictor,
                threshold,
                left,
                right,
                weight_fraction_left,
                ..
            } => {
                if predictor == target {
                    let next = if value < threshold { left } else { right };
                    walk(nodes, next, target, value, mass)
                } else {
                    walk(nodes, left, target, value, mass * weight_fraction_left)
                        + walk(
                            nodes,
                            right,
                            target,
                            value,
                            mass * (1.0 - weight_fraction_left),
                        )
                }
            }
        }
    }
    walk(tree.nodes(), 0, target, value, 1.0)
}

/// `points` equally spaced values from `lo` to `hi` inclusive; a single
/// point when the range is empty.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 || lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    g[points - 1] = hi;
    g
}

pub fn partial_dependence(
    model: &BoostedModel,
    predictor: &str,
    train: &Dataset,
) -> Result<PartialDependenceGrid> {
    partial_dependence_with_points(model, predictor, train, DEFAULT_PD_POINTS)
}

pub fn partial_dependence_with_points(
    model: &BoostedModel,
    predictor: &str,
    train: &Dataset,
    points: usize,
) -> Result<PartialDependenceGrid> {
    let target = model
        .predictor_names
        .iter()
        .position(|n| n == predictor)
        .ok_or_else(|| Error::UnknownColumn(predictor.to_string()))?;
    if points < 2 {
        return Err(Error::InvalidConfig(
            "partial dependence needs at least 2 points".into(),
        ));
    }
    let map = model.column_map(train)?;
    let column = train.column(map[target]);
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = linear_grid(lo, hi, points);

    let response = grid
        .iter()
        .map(|&v| {
            let mut f = model.f0;
            for tree in &model.trees {
                f += model.learning_rate * tree_partial_dependence(tree, target, v);
            }
            f
        })
        .collect();

    let unit = vec![1.0; column.len()];
    let deciles = (1..=9)
        .map(|k| weighted_quantile(column, &unit, k as f64 / 10.0))
        .collect::<Result<Vec<_>>>()?;

    Ok(PartialDependenceGrid {
        predictor: predictor.to_string(),
        grid,
        response,
        deciles,
    })
}

/// Writes `(predictor, grid_value, pd_value)` rows for several grids.
pub fn write_pd_table<W: Write>(out: W, grids: &[PartialDependenceGrid]) -> Result<()> {
    let rows = grids
        .iter()
        .flat_map(|g| {
            g.grid
                .iter()
                .zip(&g.response)
                .map(|(v, r)| vec![g.predictor.clone(), v.to_string(), r.to_string()])
        })
        .collect();
    write_rows(out, &["predictor", "grid_value", "pd_value"], rows)
}

pub fn write_decile_table<W: Write>(out: W, grids: &[PartialDependenceGrid]) -> Result<()> {
    let rows = grids
        .iter()
        .flat_map(|g| {
            g.deciles.iter().enumerate().map(|(k, v)| {
                vec![
                    g.predictor.clone(),
                    format!("{}", (k + 1) * 10),
                    v.to_string(),
                ]
            })
        })
        .collect();
    write_rows(out, &["predictor", "percentile", "value"], rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeInfluence {
    pub predictor_names: Vec<String>,
    /// Percentages summing to 100, or all zero when `degenerate`.
    pub percent: Vec<f64>,
    /// No split in the considered trees improved anything.
    pub degenerate: bool,
}

impl RelativeInfluence {
    pub fn of(&self, name: &str) -> Option<f64> {
        self.predictor_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.percent[j])
    }
}

/// Raw SSE improvement per predictor over the first `n_trees` trees.
pub fn raw_improvements(model: &BoostedModel, n_trees: usize) -> Vec<f64> {
    let mut total = vec![0.0; model.predictor_names.len()];
    for tree in &model.trees[..n_trees] {
        for node in tree.nodes() {
            if let Node::Internal {
                predictor,
                improvement,
                ..
            } = *node
            {
                total[predictor] += improvement;
            }
        }
    }
    total
}

pub fn normalize_influence(raw: &[f64]) -> (Vec<f64>, bool) {
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        (raw.iter().map(|r| 100.0 * r / sum).collect(), false)
    } else {
        (vec![0.0; raw.len()], true)
    }
}

pub fn relative_influence(
    model: &BoostedModel,
    n_trees: Option<usize>,
) -> Result<RelativeInfluence> {
    let k = n_trees.unwrap_or(model.n_trees());
    if k > model.n_trees() {
        return Err(Error::OutOfRange {
            what: "n_trees",
            value: k,
            min: 0,
            max: model.n_trees(),
        });
    }
    let (percent, degenerate) = normalize_influence(&raw_improvements(model, k));
    Ok(RelativeInfluence {
        predictor_names: model.predictor_names.clone(),
        percent,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    pub predictor_names: Vec<String>,
    pub empirical: Vec<f64>,
    pub baseline_mean: Vec<f64>,
    pub baseline_samples: Vec<Vec<f64>>,
    pub replicates: usize,
}

impl InfluenceReport {
    /// Sample standard deviation of each predictor's replicates (0 for R = 1).
    pub fn baseline_sd(&self) -> Vec<f64> {
        self.baseline_samples
            .iter()
            .zip(&self.baseline_mean)
            .map(|(s, &m)| {
                if s.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = s.iter().map(|v| (v - m) * (v - m)).sum();
                (ss / (s.len() - 1) as f64).sqrt()
            })
            .collect()
    }

    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let sd = self.baseline_sd();
        let rows = (0..self.predictor_names.len())
            .map(|j| {
                vec![
                    self.predictor_names[j].clone(),
                    self.empirical[j].to_string(),
                    self.baseline_mean[j].to_string(),
                    sd[j].to_string(),
                ]
            })
            .collect();
        write_rows(
            out,
            &["predictor", "empirical", "baseline_mean", "baseline_sd"],
            rows,
        )
    }

    pub fn write_samples<W: Write>(&self, out: W) -> Result<()> {
        let rows = self
            .predictor_names
            .iter()
            .zip(&self.baseline_samples)
            .flat_map(|(name, s)| {
                s.iter()
                    .enumerate()
                    .map(move |(r, v)| vec![name.clone(), (r + 1).to_string(), v.to_string()])
            })
            .collect();
        write_rows(out, &["predictor", "replicate", "relative_influence"], rows)
    }
}

/// Writes `(predictor, empirical)` only.
pub fn write_empirical_table<W: Write>(out: W, ri: &RelativeInfluence) -> Result<()> {
    let rows = ri
        .predictor_names
        .iter()
        .zip(&ri.percent)
        .map(|(n, p)| vec![n.clone(), p.to_string()])
        .collect();
    write_rows(out, &["predictor", "empirical"], rows)
}

/// Random permutation of one column, keyed by (seed, predictor, replicate).
pub fn permute_column(
    values: &[f64],
    master_seed: u64,
    predictor: usize,
    replicate: usize,
) -> Vec<f64> {
    let mut out = values.to_vec();
    out.shuffle(&mut seed::rng(
        master_seed,
        Stream::Permutation,
        predictor as u64,
        replicate as u64,
    ));
    out
}

/// Permutation baseline: for every predictor and replicate, shuffle that
/// column, rerun cross-validated training with the same settings and keep the
/// shuffled predictor's relative influence. The unpermuted model is trained
/// the same way to supply the empirical influence.
pub fn baseline_influence(
    data: &Dataset,
    cfg: &TrainConfig,
    replicates: usize,
) -> Result<InfluenceReport> {
    if replicates < 1 {
        return Err(Error::InvalidConfig(
            "at least one replicate is required".into(),
        ));
    }
    let (model, _) = train_with_selection(data, cfg)?;
    baseline_influence_for(&model, data, cfg, replicates)
}

/// Like [`baseline_influence`], with the empirical influence taken from an
/// already fitted model.
pub fn baseline_influence_for(
    model: &BoostedModel,
    data: &Dataset,
    cfg: &TrainConfig,
    replicates: usize,
) -> Result<InfluenceReport> {
    if replicates < 1 {
        return Err(Error::InvalidConfig(
            "at least one replicate is required".into(),
        ));
    }
    data.require_response()?;
    let empirical = relative_influence(model, None)?.percent;
    let p = data.n_predictors();

    let jobs: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (0..replicates).map(move |r| (j, r)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(j, r)| {
            let shuffled = permute_column(data.column(j), cfg.seed, j, r);
            let permuted = data.with_column(j, shuffled)?;
            let (m, _) = train_with_selection(&permuted, cfg)?;
            Ok(relative_influence(&m, None)?.percent[j])
        })
        .collect();

    let mut samples = vec![Vec::with_capacity(replicates); p];
    for ((j, _), res) in jobs.iter().zip(results) {
        samples[*j].push(res?);
    }
    let baseline_mean = samples
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    Ok(InfluenceReport {
        predictor_names: data.predictor_names().to_vec(),
        empirical,
        baseline_mean,
        baseline_samples: samples,
        replicates,
    })
}

//! Choosing the number of boosting iterations by k-fold cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::boosting::{train, BoostedModel};
use crate::data::{write_rows, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Mean held-out deviance after `t` trees, at index `t - 1`.
    pub cv_curve: Vec<f64>,
    /// 1-based argmin of `cv_curve`; ties go to the fewest trees.
    pub best_iterations: usize,
    /// Fold index of every row.
    pub fold_assignments: Vec<usize>,
}

impl CvResult {
    pub fn deviance_at(&self, t: usize) -> f64 {
        self.cv_curve[t - 1]
    }

    /// Writes the `(iteration, mean_cv_deviance)` table.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let rows = self
            .cv_curve
            .iter()
            .enumerate()
            .map(|(i, d)| vec![(i + 1).to_string(), d.to_string()])
            .collect();
        write_rows(out, &["iteration", "mean_cv_deviance"], rows)
    }
}

/// Seeded partition of `n` rows into `k` folds whose sizes differ by at most
/// one.
pub fn assign_folds(n: usize, k: usize, master_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(master_seed, Stream::CvFolds, k as u64, 0));
    let mut folds = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

/// Weight-mass weighted average of per-fold curves, summed in fold order.
pub fn combine_fold_curves(curves: &[Vec<f64>], masses: &[f64]) -> Vec<f64> {
    let len = curves.first().map_or(0, Vec::len);
    let total: f64 = masses.iter().sum();
    (0..len)
        .map(|t| {
            curves
                .iter()
                .zip(masses)
                .map(|(c, m)| m * c[t])
                .sum::<f64>()
                / total
        })
        .collect()
}

/// First index of the minimum, as a 1-based iteration count.
pub fn argmin_iteration(curve: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate() {
        if v < curve[best] {
            best = i;
        }
    }
    best + 1
}

pub fn cross_validate(data: &Dataset, cfg: &TrainConfig) -> Result<CvResult> {
    cfg.validate()?;
    data.require_response()?;
    let n = data.n_rows();
    if cfg.cv_folds > n {
        return Err(Error::InvalidConfig(format!(
            "{} folds requested for {n} rows",
            cfg.cv_folds
        )));
    }
    let folds = assign_folds(n, cfg.cv_folds, cfg.seed);

    let per_fold: Vec<Result<(Vec<f64>, f64)>> = (0..cfg.cv_folds)
        .into_par_iter()
        .map(|k| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] == k);
            let fold_cfg = TrainConfig {
                seed: seed::derive(cfg.seed, Stream::CvFoldTraining, k as u64, 0),
                ..cfg.clone()
            };
            let model = train(&data.subset(&kept), &fold_cfg)?;
            let held_out = data.subset(&held);
            let mut curve = model.staged_deviance(&held_out)?;
            // training may stop early once it fits exactly; later trees add nothing
            let last = *curve.last().expect("at least one tree");
            curve.resize(cfg.max_trees, last);
            Ok((curve, held_out.weights().iter().sum()))
        })
        .collect();

    let mut curves = Vec::with_capacity(cfg.cv_folds);
    let mut masses = Vec::with_capacity(cfg.cv_folds);
    for r in per_fold {
        let (c, m) = r?;
        curves.push(c);
        masses.push(m);
    }
    let cv_curve = combine_fold_curves(&curves, &masses);
    let best_iterations = argmin_iteration(&cv_curve);
    Ok(CvResult {
        cv_curve,
        best_iterations,
        fold_assignments: folds,
    })
}

/// Cross-validates, then refits on all rows with `max_trees` set to the
/// selected iteration count.
pub fn train_with_selection(data: &Dataset, cfg: &TrainConfig) -> Result<(BoostedModel, CvResult)> {
    let cv = cross_validate(data, cfg)?;
    let final_cfg = TrainConfig {
        max_trees: cv.best_iterations,
        ..cfg.clone()
    };
    let model = train(data, &final_cfg)?;
    Ok((model, cv))
}

//! Asymmetric absolute (pinball) loss and the weighted empirical quantile.
//!
//! Underestimates (`y > f`) cost `alpha` per unit, overestimates and exact
//! hits cost `1 - alpha`. The minimiser of the weighted loss over a constant
//! shift is the weighted `alpha`-quantile, which is used both for the initial
//! fit and for every terminal node estimate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileLossSpec {
    alpha: f64,
}

impl QuantileLossSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        Ok(QuantileLossSpec { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Unnormalised loss of a single observation.
    #[inline]
    pub fn loss(&self, y: f64, f: f64, w: f64) -> f64 {
        if y > f {
            self.alpha * w * (y - f)
        } else {
            (1.0 - self.alpha) * w * (f - y)
        }
    }
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Weighted mean pinball loss.
pub fn deviance(y: &[f64], f: &[f64], w: &[f64], spec: QuantileLossSpec) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("deviance needs at least one observation"));
    }
    if f.len() != y.len() || w.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "deviance inputs",
            left: y.len(),
            right: if f.len() != y.len() { f.len() } else { w.len() },
        });
    }
    check_finite(y, "response")?;
    check_finite(f, "fitted values")?;
    check_finite(w, "weights")?;
    Ok(deviance_unchecked(y, f, w, spec))
}

pub(crate) fn deviance_unchecked(y: &[f64], f: &[f64], w: &[f64], spec: QuantileLossSpec) -> f64 {
    let mut under = 0.0;
    let mut over = 0.0;
    let mut total_w = 0.0;
    for ((&yi, &fi), &wi) in y.iter().zip(f).zip(w) {
        if yi > fi {
            under += wi * (yi - fi);
        } else {
            over += wi * (fi - yi);
        }
        total_w += wi;
    }
    (spec.alpha * under + (1.0 - spec.alpha) * over) / total_w
}

/// Negative gradient of the weighted loss with respect to the fit.
/// `y == f` takes the overestimate branch.
pub fn negative_gradient(y: f64, f: f64, w: f64, spec: QuantileLossSpec) -> Result<f64> {
    if !(y.is_finite() && f.is_finite() && w.is_finite()) {
        return Err(Error::NonFinite("gradient input"));
    }
    Ok(gradient_unchecked(y, f, w, spec))
}

#[inline]
pub(crate) fn gradient_unchecked(y: f64, f: f64, w: f64, spec: QuantileLossSpec) -> f64 {
    if y > f {
        w * spec.alpha
    } else {
        -w * (1.0 - spec.alpha)
    }
}

/// Smallest value `v` whose cumulative weight (all pairs with value `<= v`)
/// reaches `alpha * sum(w)`.
///
/// With unit weights this is the order statistic at 1-based rank
/// `ceil(alpha * n)`, and integer weights behave exactly like replicating
/// each value that many times.
pub fn weighted_quantile(values: &[f64], w: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty sample"));
    }
    if values.len() != w.len() {
        return Err(Error::LengthMismatch {
            what: "quantile values vs weights",
            left: values.len(),
            right: w.len(),
        });
    }
    check_finite(values, "quantile values")?;
    if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidConfig(
            "quantile weights must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(w.iter().copied()).collect();
    Ok(quantile_of_pairs(&mut pairs, alpha))
}

/// Core of [`weighted_quantile`]; sorts `pairs` in place. Inputs are
/// assumed valid and nonempty.
pub(crate) fn quantile_of_pairs(pairs: &mut [(f64, f64)], alpha: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Total is accumulated in sorted order so the running sum ends exactly
    // on it and the scan always terminates.
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let target = alpha * total;
    let mut cum = 0.0;
    for &(v, wt) in pairs.iter() {
        cum += wt;
        if cum >= target {
            return v;
        }
    }
    pairs[pairs.len() - 1].0
}

/// Initial constant fit: the weighted `alpha`-quantile of the response.
pub fn initial_value(y: &[f64], w: &[f64], spec: QuantileLossSpec) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Empty("initial value needs a nonempty response"));
    }
    weighted_quantile(y, w, spec.alpha)
}

/// Additive shift minimising the node's weighted pinball loss, given the
/// residuals `y - f` of the rows in the node.
pub fn terminal_node_estimate(residuals: &[f64], w: &[f64], spec: QuantileLossSpec) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty("terminal node has no rows"));
    }
    weighted_quantile(residuals, w, spec.alpha)
}

/// Weighted pinball loss of shifting every residual in a node by `rho`.
pub fn node_loss(residuals: &[f64], w: &[f64], rho: f64, spec: QuantileLossSpec) -> f64 {
    residuals
        .iter()
        .zip(w)
        .map(|(&r, &wi)| spec.loss(r, rho, wi))
        .sum()
}

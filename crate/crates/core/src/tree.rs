//! Least-squares regression trees fit to the working response.
//!
//! Trees are grown best-first: at every step the leaf whose best admissible
//! split gives the largest weighted SSE reduction of the working response is
//! split, until the split budget is spent or nothing improves. Terminal values
//! are not leaf means but the weighted `alpha`-quantile of the residuals that
//! land in the leaf.
//!
//! Routing is `x[predictor] < threshold` to the left, everything else to the
//! right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{quantile_of_pairs, QuantileLossSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Internal {
        predictor: usize,
        threshold: f64,
        left: usize,
        right: usize,
        weight_fraction_left: f64,
        improvement: f64,
    },
    Terminal {
        rho: f64,
        n_rows: usize,
        weight_mass: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

/// Growth limits for a single tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub splits_per_tree: usize,
    pub min_node_size: usize,
}

/// The rows a tree is grown on. `columns` hold the full data set; `z`,
/// `residuals` and `weights` are indexed by the same full row index, and only
/// the rows listed in `rows` are used.
#[derive(Debug, Clone, Copy)]
pub struct TreeSample<'a> {
    pub columns: &'a [Vec<f64>],
    pub rows: &'a [usize],
    pub z: &'a [f64],
    pub residuals: &'a [f64],
    pub weights: &'a [f64],
}

impl RegressionTree {
    /// A tree with one terminal node.
    pub fn constant(rho: f64, n_rows: usize, weight_mass: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Terminal {
                rho,
                n_rows,
                weight_mass,
            }],
        }
    }

    /// Builds a tree from an explicit node arena (root at index 0), checking
    /// that it forms a proper binary tree.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree has no nodes"));
        }
        let mut parents = vec![0usize; nodes.len()];
        for node in &nodes {
            match *node {
                Node::Internal {
                    left,
                    right,
                    threshold,
                    weight_fraction_left,
                    improvement,
                    ..
                } => {
                    for child in [left, right] {
                        if child == 0 || child >= nodes.len() {
                            return Err(Error::InvalidConfig(format!(
                                "tree child index {child} out of range"
                            )));
                        }
                        parents[child] += 1;
                    }
                    if !threshold.is_finite()
                        || !(0.0..=1.0).contains(&weight_fraction_left)
                        || !(improvement.is_finite() && improvement >= 0.0)
                    {
                        return Err(Error::InvalidConfig("invalid internal node".into()));
                    }
                }
                Node::Terminal {
                    rho, weight_mass, ..
                } => {
                    if !rho.is_finite() || !weight_mass.is_finite() {
                        return Err(Error::NonFinite("terminal node"));
                    }
                }
            }
        }
        if parents[1..].iter().any(|&p| p != 1) {
            return Err(Error::InvalidConfig(
                "every non-root node must have exactly one parent".into(),
            ));
        }
        // Reachability from the root rules out cycles among the rest.
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConfig("tree contains a cycle".into()));
            }
            if let Node::Internal { left, right, .. } = nodes[i] {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("unreachable tree nodes".into()));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_terminals(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Terminal { .. }))
            .count()
    }

    /// Largest predictor index referenced by a split, if any.
    pub fn max_predictor(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { predictor, .. } => Some(*predictor),
                Node::Terminal { .. } => None,
            })
            .max()
    }

    /// Index of the terminal node reached by a row whose predictor `j` has
    /// value `value(j)`.
    #[inline]
    pub fn leaf_index(&self, value: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    predictor,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if value(predictor) < threshold {
                        left
                    } else {
                        right
                    }
                }
                Node::Terminal { .. } => return i,
            }
        }
    }

    #[inline]
    pub fn rho_at(&self, leaf: usize) -> f64 {
        match self.nodes[leaf] {
            Node::Terminal { rho, .. } => rho,
            Node::Internal { .. } => panic!("node {leaf} is not a terminal"),
        }
    }

    #[inline]
    pub(crate) fn predict_with(&self, value: impl Fn(usize) -> f64) -> f64 {
        self.rho_at(self.leaf_index(value))
    }
}

/// Terminal value for the row `x`.
pub fn predict_tree(tree: &RegressionTree, x: &[f64]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictor vector"));
    }
    if let Some(p) = tree.max_predictor() {
        if p >= x.len() {
            return Err(Error::SchemaMismatch(format!(
                "tree splits on predictor {p} but row has {} values",
                x.len()
            )));
        }
    }
    Ok(tree.predict_with(|j| x[j]))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    predictor: usize,
    threshold: f64,
    improvement: f64,
}

struct Leaf {
    node: usize,
    /// Local row positions, sorted by each predictor's value.
    sorted: Vec<Vec<u32>>,
    best: Option<Candidate>,
}

struct Grower {
    /// Predictor values of the sampled rows, by local position.
    xs: Vec<Vec<f64>>,
    z: Vec<f64>,
    w: Vec<f64>,
    params: TreeParams,
    min_improvement: f64,
}

impl Grower {
    #[inline]
    fn x(&self, predictor: usize, local: u32) -> f64 {
        self.xs[predictor][local as usize]
    }

    fn best_split(&self, sorted: &[Vec<u32>]) -> Option<Candidate> {
        let n = sorted[0].len();
        let min = self.params.min_node_size;
        if n < 2 * min {
            return None;
        }
        let (mut w_tot, mut s_tot) = (0.0, 0.0);
        let first = self.z[sorted[0][0] as usize];
        let mut pure = true;
        for &i in &sorted[0] {
            w_tot += self.w[i as usize];
            s_tot += self.w[i as usize] * self.z[i as usize];
            pure &= self.z[i as usize] == first;
        }
        if pure {
            return None;
        }

        let mut best: Option<Candidate> = None;
        for (p, order) in sorted.iter().enumerate() {
            let xs = &self.xs[p];
            let (mut w_left, mut s_left) = (0.0, 0.0);
            let mut next = xs[order[0] as usize];
            for k in 0..n - min {
                let i = order[k] as usize;
                w_left += self.w[i];
                s_left += self.w[i] * self.z[i];
                let here = next;
                next = xs[order[k + 1] as usize];
                if k + 1 < min || next <= here {
                    continue;
                }
                let w_right = w_tot - w_left;
                let s_right = s_tot - s_left;
                let diff = s_left / w_left - s_right / w_right;
                let improvement = w_left * w_right / w_tot * diff * diff;
                if best.is_none_or(|b| improvement > b.improvement) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold <= here {
                        threshold = next;
                    }
                    best = Some(Candidate {
                        predictor: p,
                        threshold,
                        improvement,
                    });
                }
            }
        }
        best.filter(|b| b.improvement > self.min_improvement)
    }
}

/// Grows one tree on `sample`. A sample too small to split (fewer than
/// `2 * min_node_size` rows) yields a single terminal node.
pub fn fit_tree(
    sample: TreeSample<'_>,
    params: TreeParams,
    spec: QuantileLossSpec,
) -> Result<RegressionTree> {
    fit_tree_with_order(sample, None, params, spec)
}

/// Stable argsort of every column by value (ties by row index).
pub(crate) fn column_orders(columns: &[Vec<f64>]) -> Vec<Vec<u32>> {
    columns
        .iter()
        .map(|c| {
            let mut order: Vec<u32> = (0..c.len() as u32).collect();
            order.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
            order
        })
        .collect()
}

/// As [`fit_tree`], optionally reusing full-data orders from
/// [`column_orders`] so the sample never has to be re-sorted. Both paths
/// produce the same per-leaf orders, hence identical trees.
pub(crate) fn fit_tree_with_order(
    sample: TreeSample<'_>,
    orders: Option<&[Vec<u32>]>,
    params: TreeParams,
    spec: QuantileLossSpec,
) -> Result<RegressionTree> {
    let n = sample.rows.len();
    if n == 0 {
        return Err(Error::Empty("tree sample has no rows"));
    }
    if sample.columns.is_empty() {
        return Err(Error::Empty("tree sample has no predictors"));
    }
    if params.min_node_size == 0 {
        return Err(Error::InvalidConfig(
            "min_node_size must be at least 1".into(),
        ));
    }

    let z: Vec<f64> = sample.rows.iter().map(|&r| sample.z[r]).collect();
    let w: Vec<f64> = sample.rows.iter().map(|&r| sample.weights[r]).collect();
    let root_scale: f64 = z.iter().zip(&w).map(|(zi, wi)| wi * zi * zi).sum();
    let xs = sample
        .columns
        .iter()
        .map(|c| sample.rows.iter().map(|&r| c[r]).collect())
        .collect();
    let grower = Grower {
        xs,
        z,
        w,
        params,
        min_improvement: 1e-12 * root_scale,
    };

    let sorted: Vec<Vec<u32>> = match orders {
        Some(orders) => {
            // rows are ascending, so local positions follow row order
            let mut local = vec![u32::MAX; sample.columns[0].len()];
            for (a, &r) in sample.rows.iter().enumerate() {
                local[r] = a as u32;
            }
            orders
                .iter()
                .map(|o| {
                    o.iter()
                        .map(|&r| local[r as usize])
                        .filter(|&a| a != u32::MAX)
                        .collect()
                })
                .collect()
        }
        None => (0..sample.columns.len())
            .map(|p| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| grower.x(p, a).total_cmp(&grower.x(p, b)));
                order
            })
            .collect(),
    };

    let mut nodes = vec![placeholder()];
    let best = grower.best_split(&sorted);
    let mut leaves = vec![Leaf {
        node: 0,
        sorted,
        best,
    }];

    let mut splits = 0;
    while splits < params.splits_per_tree {
        // Highest improvement wins; equal improvements keep the earliest leaf.
        let mut pick: Option<(usize, f64)> = None;
        for (li, leaf) in leaves.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|(_, imp)| c.improvement > imp) {
                    pick = Some((li, c.improvement));
                }
            }
        }
        let Some((li, _)) = pick else { break };
        let leaf = leaves.remove(li);
        let cand = leaf.best.expect("picked leaf has a split");

        let goes_left: Vec<bool> = {
            let mut g = vec![false; n];
            for &i in &leaf.sorted[0] {
                g[i as usize] = grower.x(cand.predictor, i) < cand.threshold;
            }
            g
        };
        let (left_sorted, right_sorted): (Vec<Vec<u32>>, Vec<Vec<u32>>) = leaf
            .sorted
            .into_iter()
            .map(|order| order.into_iter().partition(|&i| goes_left[i as usize]))
            .unzip();

        let mass = |s: &[u32]| s.iter().map(|&i| grower.w[i as usize]).sum::<f64>();
        let w_left = mass(&left_sorted[0]);
        let w_right = mass(&right_sorted[0]);

        let left = nodes.len();
        let right = left + 1;
        nodes.push(placeholder());
        nodes.push(placeholder());
        nodes[leaf.node] = Node::Internal {
            predictor: cand.predictor,
            threshold: cand.threshold,
            left,
            right,
            weight_fraction_left: w_left / (w_left + w_right),
            improvement: cand.improvement,
        };
        splits += 1;

        let remaining = splits < params.splits_per_tree;
        for (node, sorted) in [(left, left_sorted), (right, right_sorted)] {
            let best = if remaining {
                grower.best_split(&sorted)
            } else {
                None
            };
            leaves.push(Leaf { node, sorted, best });
        }
    }

    let mut pairs = Vec::new();
    for leaf in &leaves {
        pairs.clear();
        pairs.extend(leaf.sorted[0].iter().map(|&i| {
            let r = sample.rows[i as usize];
            (sample.residuals[r], sample.weights[r])
        }));
        let weight_mass = pairs.iter().map(|p| p.1).sum();
        let n_rows = pairs.len();
        let rho = quantile_of_pairs(&mut pairs, spec.alpha());
        nodes[leaf.node] = Node::Terminal {
            rho,
            n_rows,
            weight_mass,
        };
    }
    Ok(RegressionTree { nodes })
}

fn placeholder() -> Node {
    Node::Terminal {
        rho: 0.0,
        n_rows: 0,
        weight_mass: 0.0,
    }
}

//! Greedy axis-parallel decision trees grown with Gini impurity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::classifier::{Method, ModelMetadata, TreeClassifier};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formulation::Plane;
use crate::topology::{NodeId, TreeTopology};

#[derive(Debug, Clone, PartialEq)]
pub struct CartConfig {
    pub max_depth: u32,
    /// Smallest child size, as a fraction of the training sample (rounded up).
    pub min_leaf_fraction: f64,
    /// Cap on the number of splits. Splits are taken in order of impurity
    /// decrease, so a cap keeps the most useful ones.
    pub max_active_nodes: Option<usize>,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig { max_depth: 3, min_leaf_fraction: 0.05, max_active_nodes: None }
    }
}

impl CartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidArgument("CART depth must be at least 1".into()));
        }
        if !(self.min_leaf_fraction > 0.0 && self.min_leaf_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min leaf fraction must lie in (0, 1), got {}",
                self.min_leaf_fraction
            )));
        }
        if self.max_active_nodes == Some(0) {
            return Err(Error::InvalidArgument("active node cap must be at least 1".into()));
        }
        Ok(())
    }

    fn min_leaf(&self, n: usize) -> usize {
        ((self.min_leaf_fraction * n as f64).ceil() as usize).max(1)
    }
}

/// Gini impurity `1 - sum p_k^2` of a vector of class counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("gini of an empty node".into()));
    }
    Ok(1.0 - sum_sq(counts, n) / n as f64)
}

/// `sum c_k^2 / n`; `n * gini = n - sum_sq`.
fn sum_sq(counts: &[usize], n: usize) -> f64 {
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

const TIE: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Split {
    feature: usize,
    threshold: f64,
    /// Decrease of `n * gini` from the parent to its children.
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct Candidate {
    node: NodeId,
    split: Split,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Max-heap: larger gain first, then the smaller node id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.split.gain.total_cmp(&other.split.gain).then(other.node.cmp(&self.node))
    }
}

fn counts_of(d: &Dataset, members: &[usize]) -> Vec<usize> {
    let mut c = vec![0; d.num_classes()];
    for &i in members {
        c[d.label(i) - 1] += 1;
    }
    c
}

/// Best (feature, midpoint) split of `members`, if one strictly lowers the
/// weighted impurity while leaving `min_leaf` points on each side.
fn best_split(d: &Dataset, members: &[usize], min_leaf: usize) -> Option<Split> {
    let n = members.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total = counts_of(d, members);
    let parent = n as f64 - sum_sq(&total, n);
    // (children n*gini, feature, position in sorted order, threshold)
    let mut best: Option<(f64, usize, usize, f64)> = None;
    let mut order = members.to_vec();
    for j in 0..d.num_features() {
        order.sort_by(|&a, &b| d.row(a)[j].total_cmp(&d.row(b)[j]).then(a.cmp(&b)));
        let mut left = vec![0; total.len()];
        for pos in 1..n {
            left[d.label(order[pos - 1]) - 1] += 1;
            let (lo, hi) = (d.row(order[pos - 1])[j], d.row(order[pos])[j]);
            if lo == hi || pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let children = n as f64 - sum_sq(&left, pos) - sum_sq(&right, n - pos);
            if best.is_none_or(|(b, ..)| children < b - TIE) {
                best = Some((children, j, pos, lo + (hi - lo) / 2.0));
            }
        }
    }
    let (children, feature, pos, threshold) = best?;
    if children >= parent - TIE {
        return None;
    }
    order.sort_by(|&a, &b| d.row(a)[feature].total_cmp(&d.row(b)[feature]).then(a.cmp(&b)));
    let (mut left, mut right) = (order[..pos].to_vec(), order[pos..].to_vec());
    left.sort_unstable();
    right.sort_unstable();
    Some(Split { feature, threshold, gain: parent - children, left, right })
}

/// Grows a CART tree on `d` as given (no rescaling). Splits are
/// `x_j > threshold` to the right, matching the oblique trees' sign rule.
pub fn fit_cart(d: &Dataset, cfg: &CartConfig) -> Result<TreeClassifier> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Data("cannot fit CART on an empty sample".into()));
    }
    if d.num_classes() < 2 {
        return Err(Error::Data("CART needs at least two classes".into()));
    }
    let topo = TreeTopology::new(cfg.max_depth)?;
    let min_leaf = cfg.min_leaf(d.len());
    let p = d.num_features();
    let mut planes: Vec<Option<Plane>> = vec![None; topo.num_branch_nodes()];
    let mut heap = BinaryHeap::new();
    let root: Vec<usize> = (0..d.len()).collect();
    if let Some(split) = best_split(d, &root, min_leaf) {
        heap.push(Candidate { node: 1, split });
    }
    let cap = cfg.max_active_nodes.unwrap_or(usize::MAX);
    let mut used = 0;
    while let Some(Candidate { node, split }) = heap.pop() {
        if used == cap {
            break;
        }
        used += 1;
        let mut w = vec![0.0; p];
        w[split.feature] = 1.0;
        planes[node - 1] = Some((w, -split.threshold));
        for (child, members) in [(2 * node, split.left), (2 * node + 1, split.right)] {
            if topo.is_branch(child) {
                if let Some(s) = best_split(d, &members, min_leaf) {
                    heap.push(Candidate { node: child, split: s });
                }
            }
        }
    }
    let meta = ModelMetadata { method: Method::Cart, costs: None, status: None, objective: None, gap: None };
    let hint = vec![None; topo.node_count()];
    Ok(TreeClassifier::from_parts(topo, planes, hint, d, meta))
}

#[cfg(test)]
mod tests;

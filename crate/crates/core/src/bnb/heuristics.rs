//! Primal heuristics. Everything here produces full valuations through
//! [`assemble`] and keeps only those the feasibility checker accepts.

use crate::dataset::{ClassId, Dataset};
use crate::formulation::{
    assemble, check_feasible, compress_routing, majority, route_by_sign, score, MiqpModel, Plane,
};
use crate::topology::{NodeId, TreeTopology};

use super::restriction::{solve_svm_groups, SvmGroup};

pub(crate) const CHECK_TOL: f64 = 1e-6;
const INT_TOL: f64 = 1e-6;

/// Heuristic valuation with its objective and the simplex work it cost.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub x: Vec<f64>,
    pub objective: f64,
}

fn is_integral(m: &MiqpModel, x: &[f64]) -> bool {
    (0..m.num_vars()).all(|j| !m.is_binary(j) || (x[j] - x[j].round()).abs() <= INT_TOL)
}

/// Rounds a relaxation point into a tree by routing on the sign of its
/// hyperplanes. Integral feasible inputs come back unchanged.
pub fn round_incumbent(m: &MiqpModel, fractional: &[f64], d: &Dataset, topo: &TreeTopology) -> Option<Vec<f64>> {
    if fractional.len() != m.num_vars() || topo.depth() != m.layout.depth || d.len() != m.layout.n {
        return None;
    }
    if is_integral(m, fractional) && check_feasible(m, fractional, CHECK_TOL).is_feasible() {
        return Some(fractional.to_vec());
    }
    let planes: Vec<Plane> = topo
        .branch_nodes()
        .map(|t| {
            let (w, w0) = m.layout.hyperplane(fractional, t);
            (w.to_vec(), w0)
        })
        .collect();
    let leaves = route_by_sign(d, topo, &planes);
    let (leaves, classes, moved) = collapse(d, topo, leaves);
    let p = d.num_features();
    let mut lifted: Vec<Plane> = vec![(vec![0.0; p], -1.0); planes.len()];
    for (plane, to) in planes.into_iter().zip(moved) {
        if let Some(t) = to {
            lifted[t - 1] = plane;
        }
    }
    let planes = fit_trivial(d, topo, &leaves, lifted);
    let x = assemble(m, d, &leaves, &planes, &classes);
    check_feasible(m, &x, CHECK_TOL).is_feasible().then_some(x)
}

/// Replaces the planes of nodes whose members all go one way by the
/// constant plane sending them there.
fn fit_trivial(d: &Dataset, topo: &TreeTopology, leaves: &[NodeId], mut planes: Vec<Plane>) -> Vec<Plane> {
    let p = d.num_features();
    let (left, right) = side_counts(topo, leaves);
    for t in topo.branch_nodes() {
        if left[t - 1] == 0 || right[t - 1] == 0 {
            planes[t - 1] = (vec![0.0; p], if right[t - 1] > 0 { 1.0 } else { -1.0 });
        }
    }
    planes
}

fn side_counts(topo: &TreeTopology, leaves: &[NodeId]) -> (Vec<usize>, Vec<usize>) {
    let mut left = vec![0; topo.num_branch_nodes()];
    let mut right = vec![0; topo.num_branch_nodes()];
    for &leaf in leaves {
        let mut t = leaf;
        while t > 1 {
            if t % 2 == 1 {
                right[t / 2 - 1] += 1;
            } else {
                left[t / 2 - 1] += 1;
            }
            t /= 2;
        }
    }
    (left, right)
}

fn leaf_counts(d: &Dataset, topo: &TreeTopology, leaves: &[NodeId]) -> Vec<Vec<usize>> {
    let first = topo.num_leaves();
    let mut counts = vec![vec![0usize; d.num_classes()]; topo.num_leaves()];
    for (i, &t) in leaves.iter().enumerate() {
        counts[t - first][d.label(i) - 1] += 1;
    }
    counts
}

/// Merges every subtree whose nonempty leaves agree on the majority class
/// into its leftmost leaf, compresses away pass-through nodes (see
/// [`compress_routing`]), then assigns leaf classes: majorities for occupied
/// leaves, and for empty ones the least used class (unused ones first,
/// smallest id on ties).
pub(crate) fn collapse(
    d: &Dataset,
    topo: &TreeTopology,
    mut leaves: Vec<NodeId>,
) -> (Vec<NodeId>, Vec<ClassId>, Vec<Option<NodeId>>) {
    let first = topo.num_leaves();
    let mut branch: Vec<NodeId> = topo.branch_nodes().collect();
    branch.reverse();
    for t in branch {
        let counts = leaf_counts(d, topo, &leaves);
        let under = topo.leaves_under(t);
        let mut classes = under.clone().filter_map(|l| majority(&counts[l - first]));
        let Some(c0) = classes.next() else { continue };
        let occupied = under.clone().filter(|&l| counts[l - first].iter().any(|&c| c > 0)).count();
        if occupied > 1 && classes.all(|c| c == c0) {
            let target = *under.start();
            for leaf in leaves.iter_mut() {
                if under.contains(leaf) {
                    *leaf = target;
                }
            }
        }
    }
    let (leaves, moved) = compress_routing(topo, &leaves);
    let counts = leaf_counts(d, topo, &leaves);
    let mut classes: Vec<Option<ClassId>> = counts.iter().map(|c| majority(c)).collect();
    let mut used = vec![0usize; d.num_classes()];
    for c in classes.iter().flatten() {
        used[c - 1] += 1;
    }
    for slot in classes.iter_mut().filter(|c| c.is_none()) {
        let k = (0..used.len()).min_by_key(|&k| (used[k], k)).expect("two classes");
        used[k] += 1;
        *slot = Some(k + 1);
    }
    (leaves, classes.into_iter().map(|c| c.expect("filled")).collect(), moved)
}

/// SVM groups of a routing: members of each branch node with their side.
fn groups_of(topo: &TreeTopology, leaves: &[NodeId]) -> Vec<SvmGroup> {
    let mut groups = vec![SvmGroup { members: Vec::new(), positive: Vec::new() }; topo.num_branch_nodes()];
    for (i, &leaf) in leaves.iter().enumerate() {
        let mut t = leaf;
        while t > 1 {
            let g = &mut groups[t / 2 - 1];
            g.members.push(i);
            g.positive.push(t % 2 == 1);
            t /= 2;
        }
    }
    for g in &mut groups {
        // Members were pushed leaf by leaf; keep them in observation order.
        let mut order: Vec<usize> = (0..g.members.len()).collect();
        order.sort_by_key(|&a| g.members[a]);
        g.members = order.iter().map(|&a| g.members[a]).collect();
        g.positive = order.iter().map(|&a| g.positive[a]).collect();
    }
    groups
}

/// Best valuation with the given routing: collapsed, with optimal planes for
/// the fixed sides. Returns it with the simplex iterations spent.
pub(crate) fn from_routing(m: &MiqpModel, d: &Dataset, leaves: Vec<NodeId>) -> (Option<Candidate>, usize) {
    let topo = m.layout.topology();
    let (leaves, classes, _) = collapse(d, &topo, leaves);
    let groups = groups_of(&topo, &leaves);
    let svm = solve_svm_groups(d, &groups, m.costs.c2, m.options.omega_bound, 1e-9);
    let x = assemble(m, d, &leaves, &svm.planes, &classes);
    if !check_feasible(m, &x, CHECK_TOL).is_feasible() {
        return (None, svm.iterations);
    }
    let objective = m.objective_value(&x);
    (Some(Candidate { x, objective }), svm.iterations)
}

/// Alternates between re-fitting planes for the current routing and
/// re-routing by their signs while the objective improves.
pub(crate) fn polish_candidate(m: &MiqpModel, d: &Dataset, start: Candidate) -> (Candidate, usize) {
    let topo = m.layout.topology();
    let mut best = start;
    let mut work = 0;
    for _ in 0..20 {
        let planes: Vec<Plane> = topo
            .branch_nodes()
            .map(|t| {
                let (w, w0) = m.layout.hyperplane(&best.x, t);
                (w.to_vec(), w0)
            })
            .collect();
        let (next, it) = from_routing(m, d, route_by_sign(d, &topo, &planes));
        work += it;
        match next {
            Some(c) if c.objective < best.objective - 1e-9 * (1.0 + best.objective.abs()) => best = c,
            _ => break,
        }
    }
    (best, work)
}

/// Improves a feasible valuation by refitting planes and re-routing. Returns
/// the input when nothing better is found.
pub fn polish(m: &MiqpModel, d: &Dataset, x: &[f64]) -> Vec<f64> {
    let start = Candidate { x: x.to_vec(), objective: m.objective_value(x) };
    let refit = from_routing(m, d, crate::formulation::decode(m, x).leaves).0;
    let start = match refit {
        Some(c) if c.objective < start.objective => c,
        _ => start,
    };
    polish_candidate(m, d, start).0.x
}

/// Tries to merge each split node bottom-up, keeping merges that lower the
/// objective.
pub(crate) fn prune_pass(m: &MiqpModel, d: &Dataset, start: Candidate) -> (Candidate, usize) {
    let topo = m.layout.topology();
    let mut best = start;
    let mut work = 0;
    let mut branch: Vec<NodeId> = topo.branch_nodes().collect();
    branch.reverse();
    for t in branch {
        let leaves = crate::formulation::decode(m, &best.x).leaves;
        // Members of the right child move to the same relative position
        // under the left child.
        let shift = topo.depth() - topo.level(t) - 1;
        let (right, left) = ((2 * t + 1) << shift, (2 * t) << shift);
        let merged: Vec<NodeId> = leaves
            .iter()
            .map(|&l| if l >> shift == 2 * t + 1 { l - right + left } else { l })
            .collect();
        if merged == leaves {
            continue;
        }
        let (cand, it) = from_routing(m, d, merged);
        work += it;
        if let Some(c) = cand {
            if c.objective < best.objective - 1e-9 * (1.0 + best.objective.abs()) {
                best = c;
            }
        }
    }
    (best, work)
}

fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Top-down tree: at each node, the bipartition of the classes present whose
/// SVM split leaves the purest children (weighted Gini) is used.
pub(crate) fn greedy_routing(d: &Dataset, topo: &TreeTopology, c2: f64, bound: f64) -> (Vec<NodeId>, usize) {
    let n = d.len();
    let k = d.num_classes();
    let mut node_of = vec![1usize; n];
    let mut work = 0;
    for t in topo.branch_nodes() {
        let members: Vec<usize> = (0..n).filter(|&i| node_of[i] == t).collect();
        let mut counts = vec![0usize; k];
        for &i in &members {
            counts[d.label(i) - 1] += 1;
        }
        let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
        let mut best: Option<(f64, Vec<bool>)> = None;
        if present.len() >= 2 {
            let parent_gini = gini(&counts);
            for mask in bipartitions(present.len()) {
                let positive: Vec<bool> = members
                    .iter()
                    .map(|&i| {
                        let pos = present.iter().position(|&c| c == d.label(i) - 1).expect("present");
                        mask & (1 << pos) != 0
                    })
                    .collect();
                let g = SvmGroup { members: members.clone(), positive };
                let svm = solve_svm_groups(d, std::slice::from_ref(&g), c2, bound, 1e-7);
                work += svm.iterations;
                let plane = &svm.planes[0];
                let sides: Vec<bool> = members.iter().map(|&i| score(plane, d.row(i)) > 0.0).collect();
                let mut lc = vec![0usize; k];
                let mut rc = vec![0usize; k];
                for (&i, &s) in members.iter().zip(&sides) {
                    if s {
                        rc[d.label(i) - 1] += 1;
                    } else {
                        lc[d.label(i) - 1] += 1;
                    }
                }
                let (nl, nr) = (lc.iter().sum::<usize>() as f64, rc.iter().sum::<usize>() as f64);
                if nl == 0.0 || nr == 0.0 {
                    continue;
                }
                let w = (nl * gini(&lc) + nr * gini(&rc)) / (nl + nr);
                if w < parent_gini - 1e-12 && best.as_ref().is_none_or(|(b, _)| w < *b) {
                    best = Some((w, sides));
                }
            }
        }
        match best {
            Some((_, sides)) => {
                for (&i, &s) in members.iter().zip(&sides) {
                    node_of[i] = if s { 2 * t + 1 } else { 2 * t };
                }
            }
            None => {
                for &i in &members {
                    node_of[i] = 2 * t;
                }
            }
        }
    }
    (node_of, work)
}

/// Masks over `r` items with item 0 always on the negative side; at most 64
/// of them (one-vs-rest beyond that).
fn bipartitions(r: usize) -> Vec<usize> {
    if r <= 7 {
        (1..(1usize << r)).filter(|m| m & 1 == 0).collect()
    } else {
        (0..r).map(|c| 1usize << c).collect()
    }
}

/// Starting incumbents: the single-leaf tree and greedy SVM trees, each
/// polished and pruned. Returns the best one and the simplex work spent.
pub(crate) fn initial_incumbent(m: &MiqpModel, d: &Dataset) -> (Option<Candidate>, usize) {
    let topo = m.layout.topology();
    let mut work = 0;
    let mut best: Option<Candidate> = None;
    let consider = |c: Option<Candidate>, best: &mut Option<Candidate>| {
        if let Some(c) = c {
            if best.as_ref().is_none_or(|b| c.objective < b.objective) {
                *best = Some(c);
            }
        }
    };
    let (single, it) = from_routing(m, d, vec![topo.num_leaves(); d.len()]);
    work += it;
    consider(single, &mut best);
    let mut weights = vec![m.costs.c2, 1.0, 100.0];
    weights.dedup();
    for c2 in weights {
        let (routing, it) = greedy_routing(d, &topo, c2, m.options.omega_bound);
        work += it;
        let (cand, it) = from_routing(m, d, routing);
        work += it;
        if let Some(c) = cand {
            let (c, it) = polish_candidate(m, d, c);
            work += it;
            let (c, it) = prune_pass(m, d, c);
            work += it;
            consider(Some(c), &mut best);
        }
    }
    (best, work)
}

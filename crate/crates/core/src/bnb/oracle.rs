//! Exhaustive reference solver for depth-1 trees on tiny samples.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formulation::{assemble, build_model, CostConfig, ModelOptions, ValidInequalities};
use crate::topology::TreeTopology;

use super::restriction::{solve_svm_groups, SvmGroup};

pub const ORACLE_MAX_N: usize = 12;

/// Tries every subset of the sample as the right-hand side of the root split,
/// solves the plane exactly for each, and returns the best objective with its
/// valuation. Valid inequalities are ignored since they do not change the
/// optimum; variables fixed by the options are respected.
pub fn brute_force_oracle(d: &Dataset, costs: CostConfig, opts: &ModelOptions) -> Result<(f64, Vec<f64>)> {
    let n = d.len();
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "enumeration needs n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    let topo = TreeTopology::new(1)?;
    let base = ModelOptions { valid_inequalities: ValidInequalities::none(), ..opts.clone() };
    let m = build_model(d, &topo, costs, &base)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let leaves: Vec<usize> = (0..n).map(|i| if mask & (1 << i) != 0 { 3 } else { 2 }).collect();
        let respects = (0..n).all(|i| {
            let j = m.layout.z(i, leaves[i]);
            let other = m.layout.z(i, leaves[i] ^ 1);
            m.variables[j].ub >= 1.0 && m.variables[other].lb <= 0.0
        });
        if !respects {
            continue;
        }
        let classes = leaf_classes(d, &leaves);
        let group = SvmGroup { members: (0..n).collect(), positive: leaves.iter().map(|&l| l == 3).collect() };
        let svm = solve_svm_groups(d, std::slice::from_ref(&group), costs.c2, base.omega_bound, 1e-9);
        let x = assemble(&m, d, &leaves, &svm.planes, &classes);
        let value = m.objective_value(&x);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, x));
        }
    }
    best.ok_or_else(|| Error::Model("fixings leave no feasible routing".into()))
}

/// Majority class of each leaf of the enumerated split, with empty leaves
/// taking the smallest class not used by the other.
fn leaf_classes(d: &Dataset, leaves: &[usize]) -> Vec<usize> {
    let k = d.num_classes();
    let mut counts = [vec![0usize; k], vec![0usize; k]];
    for (i, &l) in leaves.iter().enumerate() {
        counts[l - 2][d.label(i) - 1] += 1;
    }
    let a = crate::formulation::majority(&counts[0]);
    let b = crate::formulation::majority(&counts[1]);
    let other = |c: usize| if c == 1 { 2 } else { 1 };
    match (a, b) {
        (Some(a), Some(b)) => vec![a, b],
        (Some(a), None) => vec![a, other(a)],
        (None, Some(b)) => vec![other(b), b],
        (None, None) => vec![1, 2],
    }
}

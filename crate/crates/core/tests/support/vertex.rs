//! Brute-force LP oracle: enumerate every basic solution of a small bounded LP.

use moctsvm::lp::{LpProblem, Sense};
use rand::Rng;

/// Minimum of the LP over all vertices, or `None` when no vertex is feasible.
/// Requires finite bounds on every variable.
pub fn vertex_minimum(p: &LpProblem, tol: f64) -> Option<f64> {
    let n = p.num_vars();
    // Candidate hyperplanes: every row plus every finite bound.
    let mut planes: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for r in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &r.coeffs {
            a[j] += v;
        }
        planes.push((a, r.rhs, r.sense == Sense::Eq));
    }
    for j in 0..n {
        let (l, u) = p.bounds[j];
        assert!(l.is_finite() && u.is_finite());
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), l, false));
        planes.push((e, u, false));
    }
    let must: Vec<usize> = (0..planes.len()).filter(|&i| planes[i].2).collect();
    let optional: Vec<usize> = (0..planes.len()).filter(|&i| !planes[i].2).collect();
    let mut best: Option<f64> = None;
    let mut chosen = Vec::with_capacity(n);
    let all: Vec<usize> = must.iter().chain(optional.iter()).copied().collect();
    subsets(&all, n, 0, &mut chosen, &mut |set| {
        let a: Vec<Vec<f64>> = set.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = set.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = gauss_solve(a, b) {
            if p.max_violation(&x) <= tol {
                let f = p.objective_value(&x);
                best = Some(best.map_or(f, |v: f64| v.min(f)));
            }
        }
    });
    best
}

fn subsets(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if cur.len() == k {
        f(cur);
        return;
    }
    for i in start..items.len() {
        if items.len() - i < k - cur.len() {
            break;
        }
        cur.push(items[i]);
        subsets(items, k, i + 1, cur, f);
        cur.pop();
    }
}

/// Dense Gaussian elimination with partial pivoting; `None` if (near) singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Random LP with finite boxes, feasible by construction around an interior point.
pub fn random_feasible_lp(rng: &mut impl Rng) -> LpProblem {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let l = rng.gen_range(-5.0..0.0);
            (l, l + rng.gen_range(0.5..10.0))
        })
        .collect();
    let x0: Vec<f64> = bounds.iter().map(|&(l, u)| rng.gen_range(l..u)).collect();
    let obj = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut p = LpProblem::new(obj, bounds);
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.8) {
                coeffs.push((j, rng.gen_range(-4.0..4.0)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        let (sense, rhs) = match rng.gen_range(0..10) {
            0 => (Sense::Eq, act),
            1..=5 => (Sense::Le, act + rng.gen_range(0.0..2.0)),
            _ => (Sense::Ge, act - rng.gen_range(0.0..2.0)),
        };
        p.add_row(coeffs, sense, rhs);
    }
    p
}

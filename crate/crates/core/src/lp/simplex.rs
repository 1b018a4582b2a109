//! Bounded-variable revised simplex (primal and dual) over sparse columns.
//!
//! Every row `i` gets a logical variable `r_i = a_i x`, so the constraint
//! system is `[A  -I] (x, r) = 0` and all row senses become bounds on `r`.
//! Box bounds on structurals are handled implicitly by the nonbasic status.

use serde::{Deserialize, Serialize};

use super::lu::LuFactors;
use super::{LpProblem, LpStatus, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarStatus {
    Basic,
    Lower,
    Upper,
    /// Nonbasic free variable resting at zero.
    Zero,
}

/// Status of every structural and logical variable; restorable warm start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub num_structural: usize,
    pub status: Vec<VarStatus>,
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: usize::MAX,
            refactor_every: 50,
            bland_after: 200,
        }
    }
}

enum PhaseEnd {
    Done,
    Infeasible,
    Unbounded,
    IterationLimit,
    Numerical,
    Cutoff,
}

#[derive(Debug, Clone)]
pub struct Simplex {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    slack_cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    status: Vec<VarStatus>,
    basis: Vec<usize>,
    x: Vec<f64>,
    d: Vec<f64>,
    lu: Option<LuFactors>,
    opts: SimplexOptions,
    iterations: usize,
    phase_cost: Option<Vec<f64>>,
    objective_limit: Option<f64>,
    limit_active: bool,
    certified_bound: f64,
    deadline: Option<std::time::Instant>,
}

impl Simplex {
    pub fn new(problem: &LpProblem, opts: SimplexOptions) -> Self {
        let n = problem.num_vars();
        let mut s = Simplex {
            n,
            m: 0,
            cols: vec![Vec::new(); n],
            slack_cols: Vec::new(),
            cost: problem.objective.clone(),
            lb: problem.bounds.iter().map(|b| b.0).collect(),
            ub: problem.bounds.iter().map(|b| b.1).collect(),
            status: Vec::with_capacity(n),
            basis: Vec::new(),
            x: vec![0.0; n],
            d: problem.objective.clone(),
            lu: None,
            opts,
            iterations: 0,
            phase_cost: None,
            objective_limit: None,
            limit_active: false,
            certified_bound: f64::NEG_INFINITY,
            deadline: None,
        };
        for j in 0..n {
            let st = s.dual_friendly_status(j, s.cost[j]);
            s.status.push(st);
            s.x[j] = s.nonbasic_value(j, st);
        }
        s.add_rows(&problem.rows);
        s
    }

    pub fn num_structural(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Lets the dual simplex stop as soon as it can prove the optimum is
    /// above `limit`; the solve then reports [`LpStatus::ObjectiveLimit`].
    pub fn set_objective_limit(&mut self, limit: Option<f64>) {
        self.objective_limit = limit;
    }

    /// Lower bound proven when the last solve hit the objective limit.
    pub fn certified_bound(&self) -> f64 {
        self.certified_bound
    }

    /// Weak-duality bound from the multipliers of the current basis under the
    /// true costs, minimizing each reduced-cost term over its box.
    fn lagrangian_bound(&self) -> f64 {
        let mut cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        let mut y = vec![0.0; self.m];
        self.lu.as_ref().expect("factorized").btran(&mut cb, &mut y);
        let mut bound = 0.0;
        for j in 0..self.n + self.m {
            let mut dj = self.cost[j];
            for &(i, a) in self.col(j) {
                dj -= y[i] * a;
            }
            if dj.abs() <= 1e-12 {
                continue;
            }
            let at = if dj > 0.0 { self.lb[j] } else { self.ub[j] };
            if !at.is_finite() {
                return f64::NEG_INFINITY;
            }
            bound += dj * at;
        }
        bound
    }

    pub fn set_iteration_limit(&mut self, limit: usize) {
        self.opts.max_iterations = limit;
    }

    /// Wall-clock instant after which a solve stops with an iteration limit.
    pub fn set_deadline(&mut self, deadline: Option<std::time::Instant>) {
        self.deadline = deadline;
    }

    fn past_deadline(&self) -> bool {
        self.iterations % 64 == 0 && self.deadline.is_some_and(|d| std::time::Instant::now() >= d)
    }

    fn col(&self, j: usize) -> &[(usize, f64)] {
        if j < self.n {
            &self.cols[j]
        } else {
            &self.slack_cols[j - self.n]
        }
    }

    fn dual_friendly_status(&self, j: usize, c: f64) -> VarStatus {
        let (l, u) = (self.lb[j], self.ub[j]);
        if c >= 0.0 {
            if l.is_finite() {
                VarStatus::Lower
            } else if u.is_finite() {
                VarStatus::Upper
            } else {
                VarStatus::Zero
            }
        } else if u.is_finite() {
            VarStatus::Upper
        } else if l.is_finite() {
            VarStatus::Lower
        } else {
            VarStatus::Zero
        }
    }

    fn nonbasic_value(&self, j: usize, st: VarStatus) -> f64 {
        match st {
            VarStatus::Lower => self.lb[j],
            VarStatus::Upper => self.ub[j],
            VarStatus::Zero | VarStatus::Basic => 0.0,
        }
    }

    /// Appends rows; their logicals enter the basis.
    pub fn add_rows(&mut self, rows: &[Row]) {
        for row in rows {
            let i = self.m;
            let mut act = 0.0;
            for &(j, a) in &row.coeffs {
                if a != 0.0 {
                    self.cols[j].push((i, a));
                    act += a * self.x[j];
                }
            }
            let (l, u) = row.sense.logical_bounds(row.rhs);
            self.slack_cols.push(vec![(i, -1.0)]);
            self.lb.push(l);
            self.ub.push(u);
            self.cost.push(0.0);
            self.status.push(VarStatus::Basic);
            self.x.push(act);
            self.d.push(0.0);
            self.basis.push(self.n + i);
            self.m += 1;
        }
        if !rows.is_empty() {
            self.lu = None;
        }
    }

    /// Deletes rows whose logical is basic (rows that are not binding in the
    /// current basis); other requested rows are kept. Later rows shift down.
    /// Returns the indices actually removed.
    pub fn remove_slack_rows(&mut self, rows: &[usize]) -> Vec<usize> {
        let n = self.n;
        let mut drop = vec![false; self.m];
        for &i in rows {
            if i < self.m && self.status[n + i] == VarStatus::Basic {
                drop[i] = true;
            }
        }
        let removed: Vec<usize> = (0..self.m).filter(|&i| drop[i]).collect();
        if removed.is_empty() {
            return removed;
        }
        let mut new_index = vec![usize::MAX; self.m];
        let mut next = 0;
        for i in 0..self.m {
            if !drop[i] {
                new_index[i] = next;
                next += 1;
            }
        }
        for col in &mut self.cols {
            col.retain(|&(i, _)| !drop[i]);
            for e in col.iter_mut() {
                e.0 = new_index[e.0];
            }
        }
        let keep_var = |j: usize| j < n || !drop[j - n];
        let filter = |v: &mut Vec<f64>| {
            let mut j = 0;
            v.retain(|_| {
                let k = keep_var(j);
                j += 1;
                k
            });
        };
        filter(&mut self.lb);
        filter(&mut self.ub);
        filter(&mut self.cost);
        filter(&mut self.x);
        filter(&mut self.d);
        let mut j = 0;
        self.status.retain(|_| {
            let k = keep_var(j);
            j += 1;
            k
        });
        self.basis.retain(|&j| keep_var(j));
        for j in self.basis.iter_mut() {
            if *j >= n {
                *j = n + new_index[*j - n];
            }
        }
        self.m = next;
        self.slack_cols = (0..self.m).map(|i| vec![(i, -1.0)]).collect();
        self.lu = None;
        self.phase_cost = None;
        removed
    }

    /// Row activities minus their bounds' nearest side; zero when binding.
    pub fn row_slacks(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                let v = self.x[self.n + i];
                (v - self.lb[self.n + i]).abs().min((self.ub[self.n + i] - v).abs())
            })
            .collect()
    }

    pub fn set_objective(&mut self, c: &[f64]) {
        self.cost[..self.n].copy_from_slice(c);
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lb[j], self.ub[j])
    }

    pub fn set_bounds(&mut self, j: usize, l: f64, u: f64) {
        self.lb[j] = l;
        self.ub[j] = u;
        let st = self.status[j];
        if st != VarStatus::Basic {
            let fixed_st = match st {
                VarStatus::Lower if !l.is_finite() => self.dual_friendly_status(j, self.d[j]),
                VarStatus::Upper if !u.is_finite() => self.dual_friendly_status(j, self.d[j]),
                VarStatus::Zero if l.is_finite() || u.is_finite() => self.dual_friendly_status(j, self.d[j]),
                other => other,
            };
            self.status[j] = fixed_st;
            self.x[j] = self.nonbasic_value(j, fixed_st);
        }
    }

    pub fn basis(&self) -> Basis {
        Basis {
            num_structural: self.n,
            status: self.status.clone(),
        }
    }

    /// Restores a basis saved earlier, possibly before rows were appended
    /// (their logicals stay basic). Returns false if it does not fit.
    pub fn set_basis(&mut self, b: &Basis) -> bool {
        if b.num_structural != self.n || b.status.len() > self.n + self.m {
            return false;
        }
        let mut status = b.status.clone();
        status.resize(self.n + self.m, VarStatus::Basic);
        let basics: Vec<usize> = (0..status.len()).filter(|&j| status[j] == VarStatus::Basic).collect();
        if basics.len() != self.m {
            return false;
        }
        for j in 0..status.len() {
            if status[j] != VarStatus::Basic {
                let st = match status[j] {
                    VarStatus::Lower if !self.lb[j].is_finite() => self.dual_friendly_status(j, 0.0),
                    VarStatus::Upper if !self.ub[j].is_finite() => self.dual_friendly_status(j, 0.0),
                    other => other,
                };
                status[j] = st;
                self.x[j] = self.nonbasic_value(j, st);
            }
        }
        self.status = status;
        self.basis = basics;
        self.lu = None;
        true
    }

    fn effective_cost(&self, j: usize) -> f64 {
        match &self.phase_cost {
            Some(c) => c[j],
            None => self.cost[j],
        }
    }

    fn refactor(&mut self) -> bool {
        for _attempt in 0..self.m + 2 {
            let result = {
                let basis = &self.basis;
                let n = self.n;
                let cols = &self.cols;
                let slack = &self.slack_cols;
                LuFactors::factorize(self.m, |c| {
                    let j = basis[c];
                    if j < n {
                        &cols[j]
                    } else {
                        &slack[j - n]
                    }
                })
            };
            match result {
                Ok(lu) => {
                    self.lu = Some(lu);
                    return true;
                }
                Err(sing) => {
                    // Swap dependent columns for logicals of uncovered rows.
                    for (&pos, &row) in sing.positions.iter().zip(&sing.rows) {
                        let out = self.basis[pos];
                        let logical = self.n + row;
                        if self.status[logical] == VarStatus::Basic {
                            continue;
                        }
                        let st = self.dual_friendly_status(out, self.d[out]);
                        self.status[out] = st;
                        self.x[out] = self.nonbasic_value(out, st);
                        self.status[logical] = VarStatus::Basic;
                        self.basis[pos] = logical;
                    }
                }
            }
        }
        false
    }

    fn ensure_factor(&mut self) -> bool {
        let stale = match &self.lu {
            None => true,
            Some(lu) => lu.eta_count() >= self.opts.refactor_every || lu.eta_nnz() > 5 * self.m + 1000,
        };
        if stale {
            self.refactor()
        } else {
            true
        }
    }

    fn compute_primal(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                let v = self.x[j];
                if v != 0.0 {
                    for &(i, a) in self.col(j) {
                        rhs[i] -= a * v;
                    }
                }
            }
        }
        let mut xb = vec![0.0; self.m];
        self.lu.as_ref().expect("factorized").ftran(&mut rhs, &mut xb);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[pos];
        }
    }

    fn compute_duals(&mut self) -> Vec<f64> {
        let mut cb: Vec<f64> = self.basis.iter().map(|&j| self.effective_cost(j)).collect();
        let mut y = vec![0.0; self.m];
        self.lu.as_ref().expect("factorized").btran(&mut cb, &mut y);
        for j in 0..self.n + self.m {
            if self.status[j] == VarStatus::Basic {
                self.d[j] = 0.0;
            } else {
                let mut dj = self.effective_cost(j);
                for &(i, a) in self.col(j) {
                    dj -= y[i] * a;
                }
                self.d[j] = dj;
            }
        }
        y
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.lb[j] == self.ub[j]
    }

    fn primal_infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lb[j] {
            self.lb[j] - v
        } else if v > self.ub[j] {
            v - self.ub[j]
        } else {
            0.0
        }
    }

    fn dual_infeasibility(&self, j: usize) -> f64 {
        if self.is_fixed(j) {
            return 0.0;
        }
        match self.status[j] {
            VarStatus::Basic => 0.0,
            VarStatus::Lower => (-self.d[j]).max(0.0),
            VarStatus::Upper => self.d[j].max(0.0),
            VarStatus::Zero => self.d[j].abs(),
        }
    }

    fn max_primal_infeasibility(&self) -> f64 {
        self.basis.iter().map(|&j| self.primal_infeasibility(j)).fold(0.0, f64::max)
    }

    /// Flips boxed nonbasics to the bound their reduced cost prefers and
    /// reports the remaining dual infeasibility.
    fn flip_to_dual_feasible(&mut self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.n + self.m {
            let st = self.status[j];
            if st == VarStatus::Basic || self.is_fixed(j) {
                continue;
            }
            let dj = self.d[j];
            let tol = self.opts.dual_tol;
            if st == VarStatus::Lower && dj < -tol && self.ub[j].is_finite() {
                self.status[j] = VarStatus::Upper;
                self.x[j] = self.ub[j];
            } else if st == VarStatus::Upper && dj > tol && self.lb[j].is_finite() {
                self.status[j] = VarStatus::Lower;
                self.x[j] = self.lb[j];
            }
            worst = worst.max(self.dual_infeasibility(j));
        }
        worst
    }

    /// Row `r` of B^-1 N together with row `r` of B^-1.
    fn pivot_row_with_rho(&self, r: usize) -> (Vec<f64>, Vec<f64>) {
        let mut e = vec![0.0; self.m];
        e[r] = 1.0;
        let mut rho = vec![0.0; self.m];
        self.lu.as_ref().expect("factorized").btran(&mut e, &mut rho);
        let mut alpha = vec![0.0; self.n + self.m];
        for j in 0..self.n + self.m {
            if self.status[j] != VarStatus::Basic {
                let mut s = 0.0;
                for &(i, a) in self.col(j) {
                    s += rho[i] * a;
                }
                alpha[j] = s;
            }
        }
        (alpha, rho)
    }

    fn ftran_col(&self, q: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; self.m];
        for &(i, a) in self.col(q) {
            rhs[i] = a;
        }
        let mut out = vec![0.0; self.m];
        self.lu.as_ref().expect("factorized").ftran(&mut rhs, &mut out);
        out
    }

    fn replace_basic(&mut self, r: usize, q: usize, leaving_status: VarStatus, alpha_q: &[f64]) {
        let p = self.basis[r];
        self.status[p] = leaving_status;
        self.status[q] = VarStatus::Basic;
        self.basis[r] = q;
        self.d[q] = 0.0;
        if let Some(lu) = self.lu.as_mut() {
            lu.push_eta(r, alpha_q);
        }
    }

    /// Runs the simplex method to a verified terminal status.
    pub fn solve(&mut self) -> LpStatus {
        for j in 0..self.n + self.m {
            if self.lb[j] > self.ub[j] {
                return LpStatus::Infeasible;
            }
        }
        self.certified_bound = f64::NEG_INFINITY;
        let mut last = LpStatus::NumericalFailure;
        for _round in 0..6 {
            if !self.refactor() {
                return LpStatus::NumericalFailure;
            }
            self.phase_cost = None;
            self.compute_primal();
            self.compute_duals();
            let dual_inf = self.flip_to_dual_feasible();
            if dual_inf > 0.0 {
                self.compute_primal();
            }
            let primal_inf = self.max_primal_infeasibility();
            let pt = self.opts.primal_tol;
            let dt = self.opts.dual_tol;
            if primal_inf <= pt && dual_inf <= dt {
                return LpStatus::Optimal;
            }
            let outcome = if dual_inf <= dt {
                self.perturbed_dual_phase()
            } else if primal_inf <= pt {
                self.primal_phase()
            } else {
                // Artificial costs make the current basis dual feasible.
                let mut c = vec![0.0; self.n + self.m];
                for j in 0..self.n + self.m {
                    c[j] = match self.status[j] {
                        VarStatus::Lower if !self.is_fixed(j) => 1.0,
                        VarStatus::Upper if !self.is_fixed(j) => -1.0,
                        _ => 0.0,
                    };
                }
                self.phase_cost = Some(c);
                self.compute_duals();
                let r = self.dual_phase();
                self.phase_cost = None;
                match r {
                    PhaseEnd::Done => {
                        self.ensure_factor();
                        self.compute_duals();
                        self.primal_phase()
                    }
                    other => other,
                }
            };
            last = match outcome {
                PhaseEnd::Done => continue,
                PhaseEnd::Infeasible => {
                    if self.confirm_infeasible() {
                        return LpStatus::Infeasible;
                    }
                    continue;
                }
                PhaseEnd::Unbounded => return LpStatus::Unbounded,
                PhaseEnd::IterationLimit => return LpStatus::IterationLimit,
                PhaseEnd::Cutoff => return LpStatus::ObjectiveLimit,
                PhaseEnd::Numerical => LpStatus::NumericalFailure,
            };
        }
        last
    }

    /// Re-derives primal values from a fresh factorization and checks that
    /// some basic variable is still out of bounds.
    fn confirm_infeasible(&mut self) -> bool {
        if !self.refactor() {
            return false;
        }
        self.compute_primal();
        self.max_primal_infeasibility() > self.opts.primal_tol
    }

    /// Dual phase on costs nudged away from zero reduced costs in the
    /// dual-feasible direction, which breaks ties in the ratio test. The
    /// caller re-prices with the true costs afterwards.
    fn perturbed_dual_phase(&mut self) -> PhaseEnd {
        let mut c = self.cost.clone();
        for (j, cj) in c.iter_mut().enumerate() {
            if self.is_fixed(j) {
                continue;
            }
            let jitter = 1.0 + (j.wrapping_mul(2_654_435_761) % 1024) as f64 / 1024.0;
            let eps = 1e-7 * jitter * (1.0 + cj.abs());
            match self.status[j] {
                VarStatus::Lower => *cj += eps,
                VarStatus::Upper => *cj -= eps,
                _ => {}
            }
        }
        self.phase_cost = Some(c);
        self.compute_duals();
        self.limit_active = self.objective_limit.is_some();
        let r = self.dual_phase();
        self.limit_active = false;
        self.phase_cost = None;
        r
    }

    /// Moves the phase cost of a nonbasic variable whose reduced cost has the
    /// wrong sign to a small jittered value of the right sign. Only valid
    /// while phase costs are active.
    fn shift_cost(&mut self, j: usize) {
        let dj = self.d[j];
        let wrong = match self.status[j] {
            VarStatus::Lower => dj < 0.0,
            VarStatus::Upper => dj > 0.0,
            VarStatus::Zero => dj != 0.0,
            VarStatus::Basic => false,
        };
        if wrong && !self.is_fixed(j) {
            let h = (j ^ self.iterations.rotate_left(17)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let jitter = 1e-7 * (1.0 + (h >> 54) as f64 / 1024.0);
            let target = match self.status[j] {
                VarStatus::Lower => jitter,
                VarStatus::Upper => -jitter,
                _ => 0.0,
            };
            if let Some(c) = self.phase_cost.as_mut() {
                c[j] += target - dj;
                self.d[j] = target;
            }
        }
    }

    fn dual_phase(&mut self) -> PhaseEnd {
        let mut weights = vec![1.0; self.m];
        let mut degenerate = 0usize;
        let mut infeasible_hits = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations || self.past_deadline() {
                return PhaseEnd::IterationLimit;
            }
            if !self.ensure_factor() {
                return PhaseEnd::Numerical;
            }
            if self.lu.as_ref().map_or(0, LuFactors::eta_count) == 0 {
                self.compute_primal();
                self.compute_duals();
                for j in 0..self.n + self.m {
                    self.shift_cost(j);
                }
            }
            let bland = degenerate > self.opts.bland_after;
            let pt = self.opts.primal_tol;

            // Leaving row by dual steepest edge.
            let mut leave: Option<(usize, f64)> = None;
            for (pos, &j) in self.basis.iter().enumerate() {
                let inf = self.primal_infeasibility(j);
                if inf > pt {
                    let score = inf * inf / weights[pos];
                    let better = match leave {
                        None => true,
                        Some((bp, bs)) => {
                            if bland {
                                j < self.basis[bp]
                            } else {
                                score > bs
                            }
                        }
                    };
                    if better {
                        leave = Some((pos, score));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return PhaseEnd::Done;
            };
            let p = self.basis[r];
            let (target, leaving_status) = if self.x[p] < self.lb[p] {
                (self.lb[p], VarStatus::Lower)
            } else {
                (self.ub[p], VarStatus::Upper)
            };
            let delta = self.x[p] - target;
            let sgn = if delta < 0.0 { -1.0 } else { 1.0 };

            let (alpha_r, rho_r) = self.pivot_row_with_rho(r);
            let ptol = self.opts.pivot_tol;
            let dtol = self.opts.dual_tol;
            let eligible = |s: &Self, j: usize| -> Option<(f64, f64)> {
                let st = s.status[j];
                if st == VarStatus::Basic || s.is_fixed(j) {
                    return None;
                }
                let a = alpha_r[j];
                if a.abs() <= ptol {
                    return None;
                }
                let sa = sgn * a;
                let dj = s.d[j];
                match st {
                    VarStatus::Lower if sa > 0.0 => Some((dj.max(0.0), a.abs())),
                    VarStatus::Upper if sa < 0.0 => Some(((-dj).max(0.0), a.abs())),
                    VarStatus::Zero => Some((dj.abs(), a.abs())),
                    _ => None,
                }
            };

            let mut entering: Option<usize> = None;
            let mut flips: Vec<usize> = Vec::new();
            if bland {
                let mut best = f64::INFINITY;
                for j in 0..self.n + self.m {
                    if let Some((dj, a)) = eligible(self, j) {
                        let ratio = dj / a;
                        if ratio < best - 1e-15 {
                            best = ratio;
                            entering = Some(j);
                        }
                    }
                }
            } else {
                // Bound-flipping ratio test: boxed candidates whose breakpoint
                // is passed while the leaving row stays infeasible move to
                // their other bound instead of entering.
                let mut cands: Vec<(f64, f64, usize)> = (0..self.n + self.m)
                    .filter_map(|j| eligible(self, j).map(|(dj, a)| (dj / a, a, j)))
                    .collect();
                cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)).then(x.2.cmp(&y.2)));
                let mut slope = delta.abs();
                let mut stop = cands.len();
                for (k, &(_, a, j)) in cands.iter().enumerate() {
                    let range = if self.status[j] == VarStatus::Zero { f64::INFINITY } else { self.ub[j] - self.lb[j] };
                    let next = slope - a * range;
                    if !(next > 0.0) || k + 1 == cands.len() {
                        stop = k;
                        break;
                    }
                    slope = next;
                }
                if stop < cands.len() {
                    // Harris pass over the remaining breakpoints.
                    let rest = &cands[stop..];
                    let theta_max = rest.iter().map(|&(ratio, a, _)| ratio + dtol / a).fold(f64::INFINITY, f64::min);
                    let mut best_a = 0.0;
                    for &(ratio, a, j) in rest {
                        if ratio > theta_max {
                            break;
                        }
                        if a > best_a {
                            best_a = a;
                            entering = Some(j);
                        }
                    }
                    flips = cands[..stop].iter().map(|&(_, _, j)| j).collect();
                }
            }
            let Some(q) = entering else {
                infeasible_hits += 1;
                if infeasible_hits > 1 || self.lu.as_ref().map_or(0, LuFactors::eta_count) == 0 {
                    return PhaseEnd::Infeasible;
                }
                self.lu = None;
                continue;
            };
            let alpha_q = self.ftran_col(q);
            let piv = alpha_q[r];
            if piv.abs() <= ptol || (piv - alpha_r[q]).abs() > 1e-6 * (1.0 + piv.abs()) {
                // Inconsistent pivot: refactor and try again.
                if self.lu.as_ref().map_or(0, LuFactors::eta_count) == 0 {
                    return PhaseEnd::Numerical;
                }
                self.lu = None;
                continue;
            }
            self.iterations += 1;
            if self.limit_active && self.iterations % 10 == 0 {
                let limit = self.objective_limit.unwrap_or(f64::INFINITY);
                let phase_obj: f64 = (0..self.n + self.m).map(|j| self.effective_cost(j) * self.x[j]).sum();
                if phase_obj > limit {
                    let bound = self.lagrangian_bound();
                    if bound > limit {
                        self.certified_bound = bound;
                        return PhaseEnd::Cutoff;
                    }
                }
            }

            let delta = if flips.is_empty() {
                delta
            } else {
                let mut rhs = vec![0.0; self.m];
                for &j in &flips {
                    let (to, st) = match self.status[j] {
                        VarStatus::Lower => (self.ub[j], VarStatus::Upper),
                        _ => (self.lb[j], VarStatus::Lower),
                    };
                    let step = to - self.x[j];
                    for &(i, a) in self.col(j) {
                        rhs[i] += a * step;
                    }
                    self.x[j] = to;
                    self.status[j] = st;
                }
                let mut change = vec![0.0; self.m];
                self.lu.as_ref().expect("factorized").ftran(&mut rhs, &mut change);
                for (pos, &j) in self.basis.iter().enumerate() {
                    self.x[j] -= change[pos];
                }
                self.x[p] - target
            };
            let theta_p = delta / piv;
            self.x[q] += theta_p;
            for (pos, &j) in self.basis.iter().enumerate() {
                if pos != r {
                    self.x[j] -= alpha_q[pos] * theta_p;
                }
            }
            self.x[p] = target;

            // A Harris step may pick a slightly wrong-signed reduced cost;
            // treating it as zero keeps the dual objective monotone.
            let dq = match self.status[q] {
                VarStatus::Lower => self.d[q].max(0.0),
                VarStatus::Upper => self.d[q].min(0.0),
                _ => self.d[q],
            };
            let theta_d = dq / piv;
            if theta_d.abs() < 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            for j in 0..self.n + self.m {
                if self.status[j] != VarStatus::Basic && j != q {
                    self.d[j] -= theta_d * alpha_r[j];
                    self.shift_cost(j);
                }
            }
            self.d[p] = -theta_d;

            let mut tau = vec![0.0; self.m];
            let mut rho = rho_r;
            self.lu.as_ref().expect("factorized").ftran(&mut rho, &mut tau);
            let beta_r = weights[r];
            for i in 0..self.m {
                if i != r && alpha_q[i] != 0.0 {
                    let k = alpha_q[i] / piv;
                    weights[i] = (weights[i] - 2.0 * k * tau[i] + k * k * beta_r).max(1e-4);
                }
            }
            weights[r] = (beta_r / (piv * piv)).max(1e-4);
            self.replace_basic(r, q, leaving_status, &alpha_q);
        }
    }

    fn primal_phase(&mut self) -> PhaseEnd {
        let mut degenerate = 0usize;
        let mut unbounded_hits = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations || self.past_deadline() {
                return PhaseEnd::IterationLimit;
            }
            if !self.ensure_factor() {
                return PhaseEnd::Numerical;
            }
            if self.lu.as_ref().map_or(0, LuFactors::eta_count) == 0 {
                self.compute_primal();
            }
            self.compute_duals();
            let bland = degenerate > self.opts.bland_after;
            let dtol = self.opts.dual_tol;

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                let inf = self.dual_infeasibility(j);
                if inf > dtol {
                    let better = match entering {
                        None => true,
                        Some((_, best)) => !bland && inf > best,
                    };
                    if better {
                        entering = Some((j, inf));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return PhaseEnd::Done;
            };
            let dir = match self.status[q] {
                VarStatus::Lower => 1.0,
                VarStatus::Upper => -1.0,
                _ => {
                    if self.d[q] < 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let alpha_q = self.ftran_col(q);
            let ptol = self.opts.pivot_tol;
            let pt = self.opts.primal_tol;

            // Harris pass one on relaxed bounds.
            let mut t_max = f64::INFINITY;
            for (pos, &j) in self.basis.iter().enumerate() {
                let g = -alpha_q[pos] * dir;
                if g < -ptol && self.lb[j].is_finite() {
                    t_max = t_max.min((self.x[j] - self.lb[j] + pt) / -g);
                } else if g > ptol && self.ub[j].is_finite() {
                    t_max = t_max.min((self.ub[j] - self.x[j] + pt) / g);
                }
            }
            let t_max = t_max.max(0.0);
            let flip = self.ub[q] - self.lb[q];
            if flip.is_finite() && flip <= t_max {
                // Bound flip, no basis change.
                self.iterations += 1;
                let t = flip;
                self.x[q] += dir * t;
                for (pos, &j) in self.basis.iter().enumerate() {
                    self.x[j] -= alpha_q[pos] * dir * t;
                }
                self.status[q] = if dir > 0.0 { VarStatus::Upper } else { VarStatus::Lower };
                self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                degenerate = 0;
                continue;
            }
            if !t_max.is_finite() {
                unbounded_hits += 1;
                if unbounded_hits > 1 || self.lu.as_ref().map_or(0, LuFactors::eta_count) == 0 {
                    return PhaseEnd::Unbounded;
                }
                self.lu = None;
                continue;
            }
            // Pass two: largest pivot among ratios within the relaxed bound.
            let mut leave: Option<(usize, f64, f64)> = None;
            for (pos, &j) in self.basis.iter().enumerate() {
                let g = -alpha_q[pos] * dir;
                let ratio = if g < -ptol && self.lb[j].is_finite() {
                    (self.x[j] - self.lb[j]).max(0.0) / -g
                } else if g > ptol && self.ub[j].is_finite() {
                    (self.ub[j] - self.x[j]).max(0.0) / g
                } else {
                    continue;
                };
                if ratio <= t_max {
                    let better = match leave {
                        None => true,
                        Some((bp, br, bg)) => {
                            if bland {
                                ratio < br - 1e-15 || (ratio <= br + 1e-15 && j < self.basis[bp])
                            } else {
                                g.abs() > bg
                            }
                        }
                    };
                    if better {
                        leave = Some((pos, ratio, g.abs()));
                    }
                }
            }
            let (r, t, _) = leave.expect("pass two finds the pass-one row");
            let p = self.basis[r];
            let g_r = -alpha_q[r] * dir;
            let (leaving_status, target) = if g_r < 0.0 {
                (VarStatus::Lower, self.lb[p])
            } else {
                (VarStatus::Upper, self.ub[p])
            };
            self.iterations += 1;
            if t < 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.x[q] += dir * t;
            for (pos, &j) in self.basis.iter().enumerate() {
                self.x[j] -= alpha_q[pos] * dir * t;
            }
            self.x[p] = target;
            self.replace_basic(r, q, leaving_status, &alpha_q);
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    pub fn objective_value(&self) -> f64 {
        self.cost[..self.n].iter().zip(&self.x[..self.n]).map(|(c, x)| c * x).sum()
    }

    /// Row duals (the reduced costs of the logicals).
    pub fn row_duals(&self) -> Vec<f64> {
        self.d[self.n..].to_vec()
    }

    pub fn reduced_costs(&self) -> Vec<f64> {
        self.d[..self.n].to_vec()
    }

    /// Recomputes duals from a fresh factorization for reporting.
    pub fn refresh_duals(&mut self) {
        if self.refactor() {
            self.phase_cost = None;
            self.compute_primal();
            self.compute_duals();
        }
    }
}

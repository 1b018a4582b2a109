//! Linear programming: problem and solution types, and the simplex entry points.

mod lu;
mod simplex;

use serde::{Deserialize, Serialize};

pub use simplex::{Basis, Simplex, SimplexOptions, VarStatus};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    /// Bounds on the row activity implied by `activity (sense) rhs`.
    pub fn logical_bounds(self, rhs: f64) -> (f64, f64) {
        match self {
            Sense::Le => (f64::NEG_INFINITY, rhs),
            Sense::Ge => (rhs, f64::INFINITY),
            Sense::Eq => (rhs, rhs),
        }
    }

    /// Amount by which `activity` violates the row; zero when satisfied.
    pub fn violation(self, activity: f64, rhs: f64) -> f64 {
        match self {
            Sense::Le => (activity - rhs).max(0.0),
            Sense::Ge => (rhs - activity).max(0.0),
            Sense::Eq => (activity - rhs).abs(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

/// Sparse linear row `sum coeffs (sense) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        self.sense.violation(self.activity(x), self.rhs)
    }
}

/// `min c'x` subject to sparse rows and per-variable bounds (infinities allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub bounds: Vec<(f64, f64)>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, bounds: Vec<(f64, f64)>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
            bounds,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> &mut Self {
        self.rows.push(Row::new(coeffs, sense, rhs));
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(format!("{} bounds for {n} variables", self.bounds.len()));
        }
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(format!("variable {j} has invalid bounds [{l}, {u}]"));
            }
        }
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(format!("objective coefficient {j} is not finite"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(format!("row {i} has non-finite rhs"));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(format!("row {i} has invalid entry ({j}, {a})"));
                }
            }
        }
        Ok(())
    }

    /// Largest row or bound violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(x)).fold(0.0, f64::max);
        let bounds = self
            .bounds
            .iter()
            .zip(x)
            .map(|(&(l, u), &v)| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
    /// Stopped early: a dual bound already exceeds the objective limit.
    ObjectiveLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// One multiplier per row; nonpositive on `<=` rows and nonnegative on `>=` rows.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

impl LpSolution {
    fn from_solver(status: LpStatus, s: &mut Simplex) -> Self {
        if status == LpStatus::Optimal {
            s.refresh_duals();
        }
        Self {
            status,
            x: s.values().to_vec(),
            duals: s.row_duals(),
            reduced_costs: s.reduced_costs(),
            objective: s.objective_value(),
            iterations: s.iterations(),
            basis: Some(s.basis()),
        }
    }

    fn rejected(p: &LpProblem) -> Self {
        Self {
            status: LpStatus::NumericalFailure,
            x: vec![0.0; p.num_vars()],
            duals: vec![0.0; p.rows.len()],
            reduced_costs: vec![0.0; p.num_vars()],
            objective: f64::NAN,
            iterations: 0,
            basis: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// KKT residuals of an optimal solution, all in absolute terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
}

impl KktResiduals {
    /// Recomputes the residuals of `sol` from the problem data alone.
    pub fn compute(p: &LpProblem, sol: &LpSolution) -> Self {
        let n = p.num_vars();
        let x = &sol.x;
        let y = &sol.duals;
        // Reduced costs implied by the duals: c - A'y.
        let mut d = p.objective.clone();
        for (row, &yi) in p.rows.iter().zip(y) {
            for &(j, a) in &row.coeffs {
                d[j] -= a * yi;
            }
        }
        let primal = p.max_violation(x);

        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        let mut dual_obj = 0.0;
        for (row, &yi) in p.rows.iter().zip(y) {
            let sign_err = match row.sense {
                Sense::Le => yi.max(0.0),
                Sense::Ge => (-yi).max(0.0),
                Sense::Eq => 0.0,
            };
            dual = dual.max(sign_err);
            comp = comp.max((yi * (row.activity(x) - row.rhs)).abs());
            dual_obj += yi * row.rhs;
        }
        for j in 0..n {
            let (l, u) = p.bounds[j];
            let dj = d[j];
            if dj > 0.0 {
                if l.is_finite() {
                    dual_obj += dj * l;
                    comp = comp.max((dj * (x[j] - l)).abs());
                } else {
                    dual = dual.max(dj);
                }
            } else if dj < 0.0 {
                if u.is_finite() {
                    dual_obj += dj * u;
                    comp = comp.max((dj * (u - x[j])).abs());
                } else {
                    dual = dual.max(-dj);
                }
            }
        }
        let primal_obj = p.objective_value(x);
        Self {
            primal,
            dual,
            complementarity: comp,
            duality_gap: (primal_obj - dual_obj).abs(),
        }
    }
}

/// Solves `p` from a slack basis. `tol` is the feasibility/optimality
/// tolerance used to classify the result.
pub fn solve_lp(p: &LpProblem, tol: f64) -> LpSolution {
    if p.validate().is_err() {
        return LpSolution::rejected(p);
    }
    let mut s = Simplex::new(p, options_for(tol));
    let status = s.solve();
    LpSolution::from_solver(status, &mut s)
}

/// Solves `p` plus `new_rows`, warm-started from `prev` (a solution of `p`).
/// Produces the same result as solving the augmented problem from scratch.
pub fn add_rows_and_resolve(p: &LpProblem, prev: &LpSolution, new_rows: &[Row], tol: f64) -> LpSolution {
    let mut augmented = p.clone();
    augmented.rows.extend_from_slice(new_rows);
    if augmented.validate().is_err() {
        return LpSolution::rejected(&augmented);
    }
    let mut s = Simplex::new(p, options_for(tol));
    if let Some(b) = &prev.basis {
        s.set_basis(b);
    }
    s.add_rows(new_rows);
    let status = s.solve();
    LpSolution::from_solver(status, &mut s)
}

fn options_for(tol: f64) -> SimplexOptions {
    let t = (tol * 1e-2).clamp(1e-11, 1e-7);
    SimplexOptions {
        primal_tol: t,
        dual_tol: t,
        ..SimplexOptions::default()
    }
}

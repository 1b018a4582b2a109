//! The mixed-integer model: variables, the linear constraint families, the
//! convex epigraph rows `delta >= 1/2 |omega_t|^2`, valid inequalities and the
//! anchor-fixing preprocessing step.
//!
//! Indexing: observations are 0-based row indices, nodes are 1-based ids of
//! [`TreeTopology`], classes are 1-based [`ClassId`]s.

use std::collections::HashMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::lp::{Row, Sense};
use crate::topology::{NodeId, TreeTopology};

/// Objective weights for leaf misclassification, margin errors and splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl CostConfig {
    pub fn new(c1: f64, c2: f64, c3: f64) -> Result<Self> {
        let c = Self { c1, c2, c3 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Valid-inequality families to append on top of the base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidInequalities {
    /// Ancestor containment for sampled observation pairs.
    pub vi1: bool,
    /// Sibling leaves under a split parent take different classes.
    pub vi2: bool,
    /// `alpha <= z`.
    pub vi3: bool,
    /// `h <= alpha` (already part of the base linearization).
    pub vi4: bool,
    /// Every present class owns between 1 and `2^D - 1` leaves.
    pub vi5: bool,
}

impl ValidInequalities {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { vi1: true, vi2: true, vi3: true, vi4: true, vi5: true }
    }

    /// Only the family with the given 1-based number.
    pub fn only(family: usize) -> Self {
        let mut v = Self::none();
        match family {
            1 => v.vi1 = true,
            2 => v.vi2 = true,
            3 => v.vi3 = true,
            4 => v.vi4 = true,
            5 => v.vi5 = true,
            _ => {}
        }
        v
    }

    pub fn any(&self) -> bool {
        self.vi1 || self.vi2 || self.vi3 || self.vi4 || self.vi5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Fixing {
    #[default]
    Off,
    On { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Box bound on every hyperplane coefficient and intercept.
    pub omega_bound: f64,
    /// Big-M of the split rows; `None` derives `omega_bound * (p + 1) + 1`.
    pub big_m_split: Option<f64>,
    /// Constant of the leaf-error rows; `None` uses [`default_c8`].
    pub c8_constant: Option<f64>,
    pub valid_inequalities: ValidInequalities,
    pub fixing: Fixing,
    /// Seed for the pair sample of the ancestor-containment family.
    pub seed: u64,
    /// Adds `d_t <= d_parent(t)`. Every tree with an unsplit node above a
    /// split has an equal-cost compressed twin, so the optimum is unchanged
    /// while many symmetric copies disappear.
    pub split_hierarchy: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            omega_bound: 50.0,
            big_m_split: None,
            c8_constant: None,
            valid_inequalities: ValidInequalities::none(),
            fixing: Fixing::Off,
            seed: 0,
            split_hierarchy: true,
        }
    }
}

impl ModelOptions {
    pub fn split_big_m(&self, p: usize) -> f64 {
        self.big_m_split.unwrap_or(self.omega_bound * p as f64 + self.omega_bound + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_bound > 0.0 && self.omega_bound.is_finite()) {
            return Err(Error::InvalidArgument("omega_bound must be positive".into()));
        }
        if let Some(m) = self.big_m_split {
            if !(m >= 1.0) {
                return Err(Error::InvalidArgument("big_m_split must be at least 1".into()));
            }
        }
        if let Some(c) = self.c8_constant {
            if !(c >= 1.0) {
                return Err(Error::InvalidArgument("c8_constant must be at least 1".into()));
            }
        }
        if let Fixing::On { radius } = self.fixing {
            if !(radius > 0.0) {
                return Err(Error::InvalidArgument("fixing radius must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Family and indices, e.g. `C4[3,5]`.
    pub label: String,
    pub row: Row,
}

/// `epigraph >= factor * sum(v^2 for v in vars)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadEpigraph {
    pub epigraph: usize,
    pub vars: Vec<usize>,
    pub factor: f64,
}

impl QuadEpigraph {
    pub fn violation(&self, x: &[f64]) -> f64 {
        let q: f64 = self.vars.iter().map(|&j| x[j] * x[j]).sum();
        (self.factor * q - x[self.epigraph]).max(0.0)
    }
}

/// Variable families in branching-priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    D,
    Q,
    Z,
    Alpha,
    H,
    V,
    Omega,
    Omega0,
    E,
    L,
    Delta,
}

impl Family {
    pub const BINARY: [Family; 6] = [Family::D, Family::Q, Family::Z, Family::Alpha, Family::H, Family::V];

    pub fn is_binary(self) -> bool {
        Self::BINARY.contains(&self)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Family::D => "d",
            Family::Q => "q",
            Family::Z => "z",
            Family::Alpha => "alpha",
            Family::H => "h",
            Family::V => "v",
            Family::Omega => "w",
            Family::Omega0 => "w0",
            Family::E => "e",
            Family::L => "L",
            Family::Delta => "delta",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "d" => Family::D,
            "q" => Family::Q,
            "z" => Family::Z,
            "alpha" => Family::Alpha,
            "h" => Family::H,
            "v" => Family::V,
            "w" => Family::Omega,
            "w0" => Family::Omega0,
            "e" => Family::E,
            "L" => Family::L,
            "delta" => Family::Delta,
            _ => return Err(Error::InvalidArgument(format!("unknown variable family {s:?}"))),
        })
    }
}

/// Where every variable lives in the flat variable vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub depth: u32,
    z: usize,
    alpha: usize,
    h: usize,
    d: usize,
    v: usize,
    q: usize,
    omega: usize,
    omega0: usize,
    e: usize,
    l: usize,
    delta: usize,
    total: usize,
}

impl VarLayout {
    pub fn new(n: usize, p: usize, k: usize, depth: u32) -> Self {
        let t_count = (1usize << (depth + 1)) - 1;
        let b = (1usize << depth) - 1;
        let leaves = 1usize << depth;
        let z = 0;
        let alpha = z + n * t_count;
        let h = alpha + n * b;
        let d = h + n * b;
        let v = d + b;
        let q = v + b;
        let omega = q + k * leaves;
        let omega0 = omega + b * p;
        let e = omega0 + b;
        let l = e + n * b;
        let delta = l + leaves;
        Self { n, p, k, depth, z, alpha, h, d, v, q, omega, omega0, e, l, delta, total: delta + 1 }
    }

    pub fn topology(&self) -> TreeTopology {
        TreeTopology::new(self.depth).expect("layout depth is valid")
    }

    pub fn num_vars(&self) -> usize {
        self.total
    }

    fn nodes(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    fn branches(&self) -> usize {
        (1usize << self.depth) - 1
    }

    fn first_leaf(&self) -> usize {
        1usize << self.depth
    }

    pub fn z(&self, i: usize, t: NodeId) -> usize {
        debug_assert!(i < self.n && t >= 1 && t <= self.nodes());
        self.z + i * self.nodes() + (t - 1)
    }

    pub fn alpha(&self, i: usize, t: NodeId) -> usize {
        debug_assert!(t >= 1 && t <= self.branches());
        self.alpha + i * self.branches() + (t - 1)
    }

    pub fn h(&self, i: usize, t: NodeId) -> usize {
        self.h + i * self.branches() + (t - 1)
    }

    pub fn d(&self, t: NodeId) -> usize {
        self.d + (t - 1)
    }

    pub fn v(&self, t: NodeId) -> usize {
        self.v + (t - 1)
    }

    pub fn q(&self, k: ClassId, t: NodeId) -> usize {
        debug_assert!(k >= 1 && k <= self.k && t >= self.first_leaf());
        self.q + (t - self.first_leaf()) * self.k + (k - 1)
    }

    pub fn omega(&self, t: NodeId, j: usize) -> usize {
        self.omega + (t - 1) * self.p + j
    }

    pub fn omega0(&self, t: NodeId) -> usize {
        self.omega0 + (t - 1)
    }

    pub fn e(&self, i: usize, t: NodeId) -> usize {
        self.e + i * self.branches() + (t - 1)
    }

    pub fn l(&self, t: NodeId) -> usize {
        self.l + (t - self.first_leaf())
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Family of variable `j`.
    pub fn family(&self, j: usize) -> Family {
        match j {
            _ if j < self.alpha => Family::Z,
            _ if j < self.h => Family::Alpha,
            _ if j < self.d => Family::H,
            _ if j < self.v => Family::D,
            _ if j < self.q => Family::V,
            _ if j < self.omega => Family::Q,
            _ if j < self.omega0 => Family::Omega,
            _ if j < self.e => Family::Omega0,
            _ if j < self.l => Family::E,
            _ if j < self.delta => Family::L,
            _ => Family::Delta,
        }
    }

    /// Hyperplane `(omega_t, omega_t0)` of branch node `t` in `x`.
    pub fn hyperplane<'a>(&self, x: &'a [f64], t: NodeId) -> (&'a [f64], f64) {
        let o = self.omega(t, 0);
        (&x[o..o + self.p], x[self.omega0(t)])
    }

    fn name(&self, j: usize) -> String {
        let f = self.family(j);
        let b = self.branches();
        let nodes = self.nodes();
        match f {
            Family::Z => {
                let r = j - self.z;
                format!("z[{},{}]", r / nodes, r % nodes + 1)
            }
            Family::Alpha | Family::H | Family::E => {
                let base = match f {
                    Family::Alpha => self.alpha,
                    Family::H => self.h,
                    _ => self.e,
                };
                let r = j - base;
                format!("{f}[{},{}]", r / b, r % b + 1)
            }
            Family::D => format!("d[{}]", j - self.d + 1),
            Family::V => format!("v[{}]", j - self.v + 1),
            Family::Q => {
                let r = j - self.q;
                format!("q[{},{}]", r % self.k + 1, r / self.k + self.first_leaf())
            }
            Family::Omega => {
                let r = j - self.omega;
                format!("w[{},{}]", r / self.p + 1, r % self.p)
            }
            Family::Omega0 => format!("w0[{}]", j - self.omega0 + 1),
            Family::L => format!("L[{}]", j - self.l + self.first_leaf()),
            Family::Delta => "delta".to_string(),
        }
    }
}

/// A complete instance: bounds and integrality, linear rows, epigraph rows
/// and a linear objective to minimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiqpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub quads: Vec<QuadEpigraph>,
    /// Sparse objective `(variable, coefficient)`.
    pub objective: Vec<(usize, f64)>,
    pub layout: VarLayout,
    pub costs: CostConfig,
    pub options: ModelOptions,
    /// Constant of the leaf-error rows.
    pub c8: f64,
    /// Training sample the model was built from, when known. Lets the solver
    /// run primal heuristics; absent for models read back from text.
    #[serde(skip)]
    pub data: Option<Dataset>,
}

impl MiqpModel {
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn num_continuous(&self) -> usize {
        self.num_vars() - self.num_binaries()
    }

    /// Name to id map; built on demand.
    pub fn var_index(&self) -> HashMap<String, usize> {
        self.variables.iter().enumerate().map(|(j, v)| (v.name.clone(), j)).collect()
    }

    pub fn var_id(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    pub fn dense_objective(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.num_vars()];
        for &(j, v) in &self.objective {
            c[j] += v;
        }
        c
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.variables[j].kind == VarKind::Binary
    }

    /// Fixes variables by name, e.g. the output of [`apply_fixing_heuristic`].
    pub fn apply_fixings(&mut self, fixings: &[(String, f64)]) -> Result<()> {
        let index = self.var_index();
        for (name, value) in fixings {
            let &j = index
                .get(name)
                .ok_or_else(|| Error::Model(format!("no variable named {name}")))?;
            let var = &mut self.variables[j];
            if *value < var.lb - 1e-12 || *value > var.ub + 1e-12 {
                return Err(Error::Model(format!(
                    "fixing {name} = {value} contradicts bounds [{}, {}]",
                    var.lb, var.ub
                )));
            }
            var.lb = *value;
            var.ub = *value;
        }
        Ok(())
    }

    /// Linear rows only, as an LP over the same variables with binaries relaxed.
    pub fn linear_relaxation(&self) -> crate::lp::LpProblem {
        let mut p = crate::lp::LpProblem::new(
            self.dense_objective(),
            self.variables.iter().map(|v| (v.lb, v.ub)).collect(),
        );
        p.rows = self.constraints.iter().map(|c| c.row.clone()).collect();
        p
    }

    fn push_var(&mut self, kind: VarKind, lb: f64, ub: f64) {
        let j = self.variables.len();
        self.variables.push(Variable { name: self.layout.name(j), lb, ub, kind });
    }

    fn push_row(&mut self, label: String, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { label, row: Row::new(coeffs, sense, rhs) });
    }
}

/// Largest number of training observations any tree can misclassify,
/// `n - n_max`.
pub fn misclassification_bound(n: usize, n_max: usize) -> usize {
    n - n_max
}

/// Constant used in the leaf-error rows unless overridden. A row for a class
/// `k'` that the leaf is not assigned to must stay slack, which needs a
/// constant of at least `n_max`; `n - n_max` alone is too small on samples
/// where one class holds more than half of the observations.
pub fn default_c8(n: usize, n_max: usize) -> f64 {
    misclassification_bound(n, n_max).max(n_max).max(1) as f64
}

/// Builds the base model. The dataset must be scaled into the unit box.
pub fn build_model(d: &Dataset, topo: &TreeTopology, costs: CostConfig, opts: &ModelOptions) -> Result<MiqpModel> {
    costs.validate()?;
    opts.validate()?;
    if !d.is_unit_scaled() {
        return Err(Error::Model("features must be normalized into [0, 1]".into()));
    }
    let k = d.num_classes();
    if k < 2 {
        return Err(Error::Model("at least two classes are required".into()));
    }
    let n = d.len();
    let p = d.num_features();
    let layout = VarLayout::new(n, p, k, topo.depth());
    let c8 = opts.c8_constant.unwrap_or_else(|| default_c8(n, d.largest_class_count()));
    let big_m = opts.split_big_m(p);
    let omega_bound = opts.omega_bound;

    let mut m = MiqpModel {
        variables: Vec::with_capacity(layout.num_vars()),
        constraints: Vec::new(),
        quads: Vec::new(),
        objective: Vec::new(),
        layout: layout.clone(),
        costs,
        options: opts.clone(),
        c8,
        data: Some(d.clone()),
    };
    // Variables are pushed in layout order so ids and names line up.
    let inf = f64::INFINITY;
    for j in 0..layout.num_vars() {
        let (kind, lb, ub) = match layout.family(j) {
            Family::Z | Family::Alpha | Family::H | Family::D | Family::V | Family::Q => (VarKind::Binary, 0.0, 1.0),
            Family::Omega | Family::Omega0 => (VarKind::Continuous, -omega_bound, omega_bound),
            Family::E | Family::L | Family::Delta => (VarKind::Continuous, 0.0, inf),
        };
        m.push_var(kind, lb, ub);
    }

    m.objective.push((layout.delta(), 1.0));
    for t in topo.leaf_nodes() {
        m.objective.push((layout.l(t), costs.c1));
    }
    for i in 0..n {
        for t in topo.branch_nodes() {
            m.objective.push((layout.e(i, t), costs.c2));
        }
    }
    for t in topo.branch_nodes() {
        m.objective.push((layout.d(t), costs.c3));
    }

    for t in topo.branch_nodes() {
        m.quads.push(QuadEpigraph {
            epigraph: layout.delta(),
            vars: (0..p).map(|j| layout.omega(t, j)).collect(),
            factor: 0.5,
        });
    }

    for i in 0..n {
        let x = d.row(i);
        for t in topo.branch_nodes() {
            let mut score: Vec<(usize, f64)> = (0..p)
                .filter(|&j| x[j] != 0.0)
                .map(|j| (layout.omega(t, j), x[j]))
                .collect();
            score.push((layout.omega0(t), 1.0));

            let mut a = score.clone();
            a.extend([(layout.e(i, t), 1.0), (layout.z(i, t), -big_m), (layout.alpha(i, t), -big_m)]);
            m.push_row(format!("C2a[{i},{t}]"), a, Sense::Ge, 1.0 - 2.0 * big_m);

            let mut b = score;
            b.extend([(layout.e(i, t), -1.0), (layout.z(i, t), big_m), (layout.alpha(i, t), -big_m)]);
            m.push_row(format!("C2b[{i},{t}]"), b, Sense::Le, big_m - 1.0);
        }
    }

    for i in 0..n {
        for s in 0..=topo.depth() {
            let coeffs = topo.level_nodes(s).map(|t| (layout.z(i, t), 1.0)).collect();
            m.push_row(format!("C3[{i},{s}]"), coeffs, Sense::Eq, 1.0);
        }
    }

    for i in 0..n {
        for t in 2..=topo.node_count() {
            let pt = t / 2;
            m.push_row(
                format!("C4[{i},{t}]"),
                vec![(layout.z(i, t), 1.0), (layout.z(i, pt), -1.0)],
                Sense::Le,
                0.0,
            );
        }
    }

    for i in 0..n {
        for t in 2..=topo.node_count() {
            let pt = t / 2;
            if t % 2 == 0 {
                // Negative side of the parent goes left.
                m.push_row(
                    format!("C5a[{i},{t}]"),
                    vec![(layout.z(i, pt), 1.0), (layout.z(i, t), -1.0), (layout.alpha(i, pt), -1.0)],
                    Sense::Le,
                    0.0,
                );
            } else {
                m.push_row(
                    format!("C5b[{i},{t}]"),
                    vec![(layout.z(i, pt), 1.0), (layout.z(i, t), -1.0), (layout.alpha(i, pt), 1.0)],
                    Sense::Le,
                    1.0,
                );
            }
        }
    }

    let nf = n as f64;
    for t in topo.branch_nodes() {
        for i in 0..n {
            let (h, z, a) = (layout.h(i, t), layout.z(i, t), layout.alpha(i, t));
            m.push_row(format!("C6a[{i},{t}]"), vec![(h, 1.0), (z, -1.0), (a, -1.0)], Sense::Ge, -1.0);
            m.push_row(format!("C6b[{i},{t}]"), vec![(h, 1.0), (z, -1.0), (a, 1.0)], Sense::Le, 1.0);
            m.push_row(format!("C6hz[{i},{t}]"), vec![(h, 1.0), (z, -1.0)], Sense::Le, 0.0);
            m.push_row(format!("C6ha[{i},{t}]"), vec![(h, 1.0), (a, -1.0)], Sense::Le, 0.0);
        }
        let mut c = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            c.push((layout.z(i, t), 1.0));
            c.push((layout.h(i, t), -1.0));
        }
        c.push((layout.v(t), -nf));
        m.push_row(format!("C6c[{t}]"), c, Sense::Le, 0.0);
        let mut c: Vec<(usize, f64)> = (0..n).map(|i| (layout.h(i, t), 1.0)).collect();
        c.push((layout.d(t), -nf));
        c.push((layout.v(t), nf));
        m.push_row(format!("C6d[{t}]"), c, Sense::Le, nf);
    }

    if opts.split_hierarchy {
        for t in topo.branch_nodes().skip(1) {
            m.push_row(format!("H[{t}]"), vec![(layout.d(t), 1.0), (layout.d(t / 2), -1.0)], Sense::Le, 0.0);
        }
    }

    for t in topo.leaf_nodes() {
        let coeffs = (1..=k).map(|c| (layout.q(c, t), 1.0)).collect();
        m.push_row(format!("C7[{t}]"), coeffs, Sense::Eq, 1.0);
    }

    // L_t - sum_{i: y_i != k} z_it - c8 q_kt >= -c8
    for t in topo.leaf_nodes() {
        for c in 1..=k {
            let mut coeffs = vec![(layout.l(t), 1.0)];
            for i in 0..n {
                if d.label(i) != c {
                    coeffs.push((layout.z(i, t), -1.0));
                }
            }
            coeffs.push((layout.q(c, t), -c8));
            m.push_row(format!("C8[{c},{t}]"), coeffs, Sense::Ge, -c8);
        }
    }

    if opts.valid_inequalities.any() {
        add_valid_inequalities(&mut m, d, topo, opts.valid_inequalities)?;
    }
    if let Fixing::On { radius } = opts.fixing {
        let fixings = apply_fixing_heuristic(d, topo, radius)?;
        m.apply_fixings(&fixings)?;
    }
    Ok(m)
}

/// Appends the selected valid-inequality families to `m`.
pub fn add_valid_inequalities(
    m: &mut MiqpModel,
    d: &Dataset,
    topo: &TreeTopology,
    families: ValidInequalities,
) -> Result<()> {
    let layout = m.layout.clone();
    if layout.n != d.len() || layout.p != d.num_features() || layout.depth != topo.depth() || layout.k != d.num_classes() {
        return Err(Error::Model("valid inequalities requested for a model built on different data".into()));
    }
    let n = layout.n;

    if families.vi1 && n >= 2 {
        // z_is + z_i's <= z_it + z_i't with t the parent of s, for a sample of
        // n pairs per level.
        let mut rng = ChaCha8Rng::seed_from_u64(m.options.seed);
        let total_pairs = n * (n - 1) / 2;
        for s_level in 1..=topo.depth() {
            let count = n.min(total_pairs);
            for code in sample(&mut rng, total_pairs, count).into_iter() {
                let (i, i2) = unrank_pair(code, n);
                for s in topo.level_nodes(s_level) {
                    let t = s / 2;
                    m.push_row(
                        format!("VI1[{i},{i2},{s}]"),
                        vec![
                            (layout.z(i, s), 1.0),
                            (layout.z(i2, s), 1.0),
                            (layout.z(i, t), -1.0),
                            (layout.z(i2, t), -1.0),
                        ],
                        Sense::Le,
                        0.0,
                    );
                }
            }
        }
    }

    if families.vi2 {
        for t in topo.leaf_nodes().step_by(2) {
            let s = t + 1;
            let pt = t / 2;
            for c in 1..=layout.k {
                m.push_row(
                    format!("VI2[{c},{t}]"),
                    vec![(layout.q(c, t), 1.0), (layout.q(c, s), 1.0), (layout.d(pt), 1.0)],
                    Sense::Le,
                    2.0,
                );
            }
        }
    }

    if families.vi3 {
        for i in 0..n {
            for t in topo.branch_nodes() {
                m.push_row(
                    format!("VI3[{i},{t}]"),
                    vec![(layout.alpha(i, t), 1.0), (layout.z(i, t), -1.0)],
                    Sense::Le,
                    0.0,
                );
            }
        }
    }

    if families.vi4 {
        for i in 0..n {
            for t in topo.branch_nodes() {
                m.push_row(
                    format!("VI4[{i},{t}]"),
                    vec![(layout.h(i, t), 1.0), (layout.alpha(i, t), -1.0)],
                    Sense::Le,
                    0.0,
                );
            }
        }
    }

    if families.vi5 {
        let leaves = topo.num_leaves();
        let counts = d.class_counts();
        let present = counts.iter().filter(|&&c| c > 0).count();
        for c in 1..=layout.k {
            if counts[c - 1] == 0 {
                continue;
            }
            let coeffs: Vec<(usize, f64)> = topo.leaf_nodes().map(|t| (layout.q(c, t), 1.0)).collect();
            // The lower side needs a leaf per present class.
            if present <= leaves {
                m.push_row(format!("VI5lo[{c}]"), coeffs.clone(), Sense::Ge, 1.0);
            }
            m.push_row(format!("VI5hi[{c}]"), coeffs, Sense::Le, (leaves - 1) as f64);
        }
    }
    Ok(())
}

fn unrank_pair(code: usize, n: usize) -> (usize, usize) {
    let mut rest = code;
    for i in 0..n {
        let row = n - 1 - i;
        if rest < row {
            return (i, i + 1 + rest);
        }
        rest -= row;
    }
    unreachable!("pair code out of range")
}

/// Anchor fixings: the densest same-class neighborhood goes to the first
/// leaf, the same-class neighborhood of the observation farthest from it goes
/// to the last leaf. Returns `(variable name, value)` pairs.
pub fn apply_fixing_heuristic(d: &Dataset, topo: &TreeTopology, radius: f64) -> Result<Vec<(String, f64)>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("fixing radius must be positive, got {radius}")));
    }
    let n = d.len();
    let dist = |a: usize, b: usize| -> f64 {
        d.row(a).iter().zip(d.row(b)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
    };
    let neighborhood = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| d.label(j) == d.label(i) && dist(i, j) <= radius).collect()
    };
    let mut i0 = 0;
    let mut best = 0;
    for i in 0..n {
        let size = neighborhood(i).len();
        if size > best {
            best = size;
            i0 = i;
        }
    }
    let mut i_f = 0;
    let mut far = f64::NEG_INFINITY;
    for i in 0..n {
        let r = dist(i0, i);
        if r > far {
            far = r;
            i_f = i;
        }
    }
    let first = neighborhood(i0);
    let last = neighborhood(i_f);
    if let Some(&shared) = first.iter().find(|i| last.contains(i)) {
        return Err(Error::Model(format!(
            "observation {shared} lies in both anchor neighborhoods; refusing contradictory fixings"
        )));
    }
    let t0 = 1usize << topo.depth();
    let tf = topo.node_count();
    let mut out = Vec::new();
    for (members, target) in [(&first, t0), (&last, tf)] {
        for &i in members {
            for t in topo.leaf_nodes() {
                out.push((format!("z[{i},{t}]"), if t == target { 1.0 } else { 0.0 }));
            }
        }
    }
    Ok(out)
}

/// One violated requirement and by how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, prefix: &str) -> bool {
        self.violations.iter().any(|v| v.constraint.starts_with(prefix))
    }

    pub fn max_residual(&self) -> f64 {
        self.violations.iter().map(|v| v.residual).fold(0.0, f64::max)
    }
}

/// Lists every bound, integrality, linear, epigraph and path violation of `x`.
pub fn check_feasible(m: &MiqpModel, x: &[f64], tol: f64) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();
    if x.len() != m.num_vars() {
        report.violations.push(Violation {
            constraint: format!("length[{} != {}]", x.len(), m.num_vars()),
            residual: f64::INFINITY,
        });
        return report;
    }
    let mut push = |label: String, r: f64| {
        if !(r <= tol) {
            report.violations.push(Violation { constraint: label, residual: r });
        }
    };
    for (var, &v) in m.variables.iter().zip(x) {
        push(format!("bound:{}", var.name), (var.lb - v).max(v - var.ub).max(0.0));
        if var.kind == VarKind::Binary {
            push(format!("integrality:{}", var.name), (v - v.round()).abs());
        }
    }
    for c in &m.constraints {
        push(c.label.clone(), c.row.violation(x));
    }
    for (t, q) in m.quads.iter().enumerate() {
        push(format!("C1[{}]", t + 1), q.violation(x));
    }
    // Each observation's occupied nodes must form one root-to-leaf path.
    let layout = &m.layout;
    let topo = layout.topology();
    for i in 0..layout.n {
        let mut t = 1;
        let mut ok = x[layout.z(i, 1)] > 0.5;
        while ok && topo.is_branch(t) {
            let (l, r) = (2 * t, 2 * t + 1);
            let (zl, zr) = (x[layout.z(i, l)] > 0.5, x[layout.z(i, r)] > 0.5);
            ok = zl != zr;
            t = if zl { l } else { r };
        }
        let on_path: usize = topo.nodes().filter(|&t| x[layout.z(i, t)] > 0.5).count();
        if !ok || on_path != topo.depth() as usize + 1 {
            push(format!("path[{i}]"), 1.0);
        }
    }
    report
}

/// Per-branch-node hyperplane `(omega, omega0)`.
pub type Plane = (Vec<f64>, f64);

/// Leaf reached by every observation when descending by the sign of each
/// node's score: `s > 0` goes right, otherwise left.
pub fn route_by_sign(d: &Dataset, topo: &TreeTopology, planes: &[Plane]) -> Vec<NodeId> {
    (0..d.len()).map(|i| descend(d.row(i), topo, planes)).collect()
}

/// Removes pass-through nodes from a routing: wherever every observation at
/// a node continues to the same child, the child's subtree is lifted into
/// the node, and groups with no split left below them settle in the leftmost
/// leaf. Returns the new leaves and, per original branch node, the node its
/// split moved to (`None` for nodes that no longer split).
pub fn compress_routing(topo: &TreeTopology, leaves: &[NodeId]) -> (Vec<NodeId>, Vec<Option<NodeId>>) {
    fn rec(
        topo: &TreeTopology,
        leaves: &[NodeId],
        members: Vec<usize>,
        t: NodeId,
        u: NodeId,
        out: &mut [NodeId],
        moved: &mut [Option<NodeId>],
    ) {
        if members.is_empty() {
            return;
        }
        if topo.is_leaf(u) {
            let leaf = t << (topo.depth() - topo.level(t));
            for i in members {
                out[i] = leaf;
            }
            return;
        }
        let below = topo.level(u) + 1;
        let child = |i: usize| leaves[i] >> (topo.depth() - below);
        let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| child(i) == 2 * u);
        if right.is_empty() {
            rec(topo, leaves, left, t, 2 * u, out, moved);
        } else if left.is_empty() {
            rec(topo, leaves, right, t, 2 * u + 1, out, moved);
        } else {
            moved[u - 1] = Some(t);
            rec(topo, leaves, left, 2 * t, 2 * u, out, moved);
            rec(topo, leaves, right, 2 * t + 1, 2 * u + 1, out, moved);
        }
    }
    let mut out = leaves.to_vec();
    let mut moved = vec![None; topo.num_branch_nodes()];
    rec(topo, leaves, (0..leaves.len()).collect(), 1, 1, &mut out, &mut moved);
    (out, moved)
}

pub(crate) fn descend(x: &[f64], topo: &TreeTopology, planes: &[Plane]) -> NodeId {
    let mut t = 1;
    while topo.is_branch(t) {
        t = if score(&planes[t - 1], x) > 0.0 { 2 * t + 1 } else { 2 * t };
    }
    t
}

pub fn score(plane: &Plane, x: &[f64]) -> f64 {
    plane.0.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + plane.1
}

/// Majority class per leaf of the observations routed there; ties go to the
/// smallest class id. `None` for empty leaves.
pub fn leaf_majorities(d: &Dataset, topo: &TreeTopology, leaves: &[NodeId]) -> Vec<Option<ClassId>> {
    let first = 1usize << topo.depth();
    let mut counts = vec![vec![0usize; d.num_classes()]; topo.num_leaves()];
    for (i, &t) in leaves.iter().enumerate() {
        counts[t - first][d.label(i) - 1] += 1;
    }
    counts.iter().map(|c| majority(c)).collect()
}

/// Index + 1 of the largest count, smallest id on ties; `None` if all zero.
pub fn majority(counts: &[usize]) -> Option<ClassId> {
    let mut best: Option<(usize, usize)> = None;
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k + 1)
}

/// Builds the full valuation for observations sent to `leaves`, with the given
/// hyperplanes and leaf classes. Split flags follow occupancy (a node splits
/// iff both children receive observations), margin errors and leaf errors are
/// the smallest values the rows allow, and `delta` is the largest half squared
/// norm.
pub fn assemble(m: &MiqpModel, d: &Dataset, leaves: &[NodeId], planes: &[Plane], leaf_class: &[ClassId]) -> Vec<f64> {
    let layout = &m.layout;
    let topo = layout.topology();
    let big_m = m.options.split_big_m(layout.p);
    let mut x = vec![0.0; layout.num_vars()];
    let mut left = vec![0usize; topo.num_branch_nodes()];
    let mut right = vec![0usize; topo.num_branch_nodes()];
    for (i, &leaf) in leaves.iter().enumerate() {
        let mut t = leaf;
        x[layout.z(i, t)] = 1.0;
        while t > 1 {
            let pt = t / 2;
            x[layout.z(i, pt)] = 1.0;
            if t % 2 == 1 {
                x[layout.alpha(i, pt)] = 1.0;
                x[layout.h(i, pt)] = 1.0;
                right[pt - 1] += 1;
            } else {
                left[pt - 1] += 1;
            }
            t = pt;
        }
    }
    for t in topo.branch_nodes() {
        let (l, r) = (left[t - 1], right[t - 1]);
        x[layout.d(t)] = if l > 0 && r > 0 { 1.0 } else { 0.0 };
        x[layout.v(t)] = if l > 0 { 1.0 } else { 0.0 };
        let (w, w0) = &planes[t - 1];
        for (j, &wj) in w.iter().enumerate() {
            x[layout.omega(t, j)] = wj;
        }
        x[layout.omega0(t)] = *w0;
    }
    for t in topo.leaf_nodes() {
        x[layout.q(leaf_class[t - (1 << topo.depth())], t)] = 1.0;
    }
    fill_continuous(m, d, &mut x, big_m);
    x
}

/// Recomputes `e`, `L` and `delta` as the smallest values consistent with the
/// binaries and hyperplanes already in `x`.
pub fn fill_continuous(m: &MiqpModel, d: &Dataset, x: &mut [f64], big_m: f64) {
    let layout = &m.layout;
    let topo = layout.topology();
    for i in 0..layout.n {
        let row = d.row(i);
        for t in topo.branch_nodes() {
            let (w, w0) = layout.hyperplane(x, t);
            let s: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + w0;
            let z = x[layout.z(i, t)];
            let a = x[layout.alpha(i, t)];
            let need_a = 1.0 - big_m * (2.0 - z - a) - s;
            let need_b = s + 1.0 - big_m * (1.0 - z + a);
            x[layout.e(i, t)] = need_a.max(need_b).max(0.0);
        }
    }
    for t in topo.leaf_nodes() {
        let mut l = 0.0f64;
        let members: Vec<usize> = (0..layout.n).filter(|&i| x[layout.z(i, t)] > 0.5).collect();
        for c in 1..=layout.k {
            let wrong = members.iter().filter(|&&i| d.label(i) != c).count() as f64;
            l = l.max(wrong - m.c8 * (1.0 - x[layout.q(c, t)]));
        }
        x[layout.l(t)] = l.max(0.0);
    }
    let delta = m.quads.iter().map(|q| q.factor * q.vars.iter().map(|&j| x[j] * x[j]).sum::<f64>()).fold(0.0, f64::max);
    x[layout.delta()] = delta;
}

/// Tree structure read back from a valuation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedTree {
    /// Leaf of every observation following its `z` path.
    pub leaves: Vec<NodeId>,
    pub planes: Vec<Plane>,
    pub split: Vec<bool>,
    pub leaf_class: Vec<ClassId>,
}

pub fn decode(m: &MiqpModel, x: &[f64]) -> DecodedTree {
    let layout = &m.layout;
    let topo = layout.topology();
    let leaves = (0..layout.n)
        .map(|i| {
            topo.leaf_nodes()
                .max_by(|&a, &b| x[layout.z(i, a)].total_cmp(&x[layout.z(i, b)]).then(b.cmp(&a)))
                .expect("at least one leaf")
        })
        .collect();
    let planes = topo
        .branch_nodes()
        .map(|t| {
            let (w, w0) = layout.hyperplane(x, t);
            (w.to_vec(), w0)
        })
        .collect();
    let split = topo.branch_nodes().map(|t| x[layout.d(t)] > 0.5).collect();
    let leaf_class = topo
        .leaf_nodes()
        .map(|t| {
            (1..=layout.k)
                .max_by(|&a, &b| x[layout.q(a, t)].total_cmp(&x[layout.q(b, t)]).then(b.cmp(&a)))
                .expect("at least two classes")
        })
        .collect();
    DecodedTree { leaves, planes, split, leaf_class }
}

#[cfg(test)]
mod tests;

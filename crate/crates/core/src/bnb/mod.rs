//! Branch-and-bound over the binaries with LP relaxations tightened by
//! tangent cuts on the quadratic epigraph rows.

mod heuristics;
mod oa;
mod oracle;
mod restriction;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{check_feasible, decode, fill_continuous, route_by_sign, Family, MiqpModel};
use crate::lp::{Basis, LpProblem, LpStatus, Row, Sense, Simplex, SimplexOptions, VarStatus};

pub use heuristics::{polish, round_incumbent};
pub use oa::oa_separate;
pub use oracle::{brute_force_oracle, ORACLE_MAX_N};
pub use restriction::{evaluate as svm_objective, margin_error, solve_svm_groups, SvmGroup, SvmSolution};

/// Simplex iterations a time limit stands for in deterministic mode.
pub const ITERATIONS_PER_SECOND: f64 = 8_000.0;

const INT_TOL: f64 = 1e-7;
const INTEGRAL_OA_ROUNDS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    /// Seconds; in deterministic mode converted to a simplex work budget.
    pub time_limit: f64,
    pub gap_tolerance: f64,
    /// Relative epigraph violation above which a tangent cut is added.
    pub oa_tolerance: f64,
    pub max_oa_rounds_per_node: usize,
    pub node_limit: usize,
    pub branching_priority: Vec<Family>,
    /// Ignore the wall clock and stop on simplex work only.
    pub deterministic: bool,
    /// Explicit simplex iteration budget, overriding the conversion.
    pub work_limit: Option<u64>,
    /// Run primal heuristics when the model carries its data.
    pub heuristics: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            time_limit: 300.0,
            gap_tolerance: 1e-4,
            oa_tolerance: 1e-6,
            max_oa_rounds_per_node: 1,
            node_limit: usize::MAX,
            branching_priority: vec![Family::D, Family::Q, Family::Z, Family::Alpha, Family::H, Family::V],
            deterministic: false,
            work_limit: None,
            heuristics: true,
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_limit > 0.0) {
            return Err(Error::InvalidArgument(format!("time limit must be positive, got {}", self.time_limit)));
        }
        if !(self.gap_tolerance > 0.0) || !(self.oa_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if let Some(f) = self.branching_priority.iter().find(|f| !f.is_binary()) {
            return Err(Error::InvalidArgument(format!("cannot branch on continuous family {f}")));
        }
        Ok(())
    }

    /// Simplex iterations allowed in total, if any cap applies.
    pub fn work_budget(&self) -> Option<u64> {
        match (self.work_limit, self.deterministic) {
            (Some(w), _) => Some(w),
            (None, true) => Some((self.time_limit * ITERATIONS_PER_SECOND).ceil() as u64),
            (None, false) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleTimeLimit,
    Infeasible,
    NoIncumbentTimeLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::FeasibleTimeLimit => "feasible_time_limit",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NoIncumbentTimeLimit => "no_incumbent_time_limit",
        })
    }
}

/// Relaxation outcome of one processed node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Final LP value after the cut loop; `None` if the LP was infeasible or
    /// interrupted.
    pub lp_bound: Option<f64>,
    pub cuts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub incumbent: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub best_bound: f64,
    pub gap: Option<f64>,
    pub nodes_explored: usize,
    pub cuts_added: usize,
    pub lp_iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    #[serde(skip)]
    pub cut_pool: Vec<Row>,
    #[serde(skip)]
    pub nodes: Vec<NodeRecord>,
}

impl SolveResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solve results serialize")
    }
}

/// Relative gap `(objective - bound) / |objective|`, zero when closed.
pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    let diff = objective - bound;
    if diff <= 0.0 {
        0.0
    } else {
        diff / objective.abs().max(1e-10)
    }
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    parent: Option<usize>,
    depth: usize,
    bound: f64,
    fixings: Vec<(usize, f64)>,
    /// Warm start, tagged with the cut-pool epoch it was saved in.
    basis: Option<(u64, Basis)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Reversed so the max-heap pops the smallest bound, then the oldest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

enum Outcome {
    Pruned(f64),
    Infeasible,
    Integral { bound: f64, x: Vec<f64>, converged: bool },
    Fractional { bound: f64, x: Vec<f64> },
    Interrupted,
}

/// Solves the model; see [`solve_miqp_logged`] for a per-node log.
pub fn solve_miqp(m: &MiqpModel, cfg: &BnbConfig) -> Result<SolveResult> {
    solve_miqp_logged(m, cfg, &mut std::io::sink())
}

/// Solves the model, writing one line per processed node to `log`.
pub fn solve_miqp_logged(m: &MiqpModel, cfg: &BnbConfig, log: &mut dyn Write) -> Result<SolveResult> {
    cfg.validate()?;
    Solver::new(m, cfg, log).run()
}

struct Solver<'a> {
    m: &'a MiqpModel,
    cfg: &'a BnbConfig,
    log: &'a mut dyn Write,
    simplex: Simplex,
    scale: f64,
    root_bounds: Vec<(f64, f64)>,
    binaries: Vec<usize>,
    family_of: Vec<Family>,
    applied: Vec<(f64, f64)>,
    incumbent: Option<(f64, Vec<f64>)>,
    cut_pool: Vec<Row>,
    extra_work: u64,
    budget: Option<u64>,
    start: Instant,
    nodes: Vec<NodeRecord>,
    floor: f64,
    model_rows: usize,
    epoch: u64,
}

impl<'a> Solver<'a> {
    fn new(m: &'a MiqpModel, cfg: &'a BnbConfig, log: &'a mut dyn Write) -> Self {
        let mut lp: LpProblem = m.linear_relaxation();
        let scale = lp.objective.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        for c in &mut lp.objective {
            *c /= scale;
        }
        let simplex = Simplex::new(&lp, SimplexOptions::default());
        let binaries: Vec<usize> = (0..m.num_vars()).filter(|&j| m.is_binary(j)).collect();
        let root_bounds = lp.bounds.clone();
        Self {
            m,
            cfg,
            log,
            simplex,
            scale,
            applied: root_bounds.clone(),
            root_bounds,
            family_of: (0..m.num_vars()).map(|j| m.layout.family(j)).collect(),
            binaries,
            incumbent: None,
            cut_pool: Vec::new(),
            extra_work: 0,
            budget: cfg.work_budget(),
            start: Instant::now(),
            nodes: Vec::new(),
            floor: f64::INFINITY,
            model_rows: m.constraints.len(),
            epoch: 0,
        }
    }

    fn work(&self) -> u64 {
        self.simplex.iterations() as u64 + self.extra_work
    }

    fn out_of_resources(&self) -> bool {
        if let Some(b) = self.budget {
            if self.work() >= b {
                return true;
            }
        }
        !self.cfg.deterministic && self.start.elapsed().as_secs_f64() >= self.cfg.time_limit
    }

    /// Nodes whose bound reaches this value cannot improve the incumbent by
    /// more than the gap tolerance.
    fn cutoff(&self) -> f64 {
        match &self.incumbent {
            Some((v, _)) => v - (self.cfg.gap_tolerance * v.abs()).max(1e-9),
            None => f64::INFINITY,
        }
    }

    fn offer(&mut self, objective: f64, x: Vec<f64>) -> bool {
        if self.incumbent.as_ref().is_none_or(|(v, _)| objective < *v - 1e-12 * (1.0 + v.abs())) {
            self.incumbent = Some((objective, x));
            true
        } else {
            false
        }
    }

    /// Lower bound from variable bounds alone.
    fn trivial_bound(&self) -> f64 {
        self.m
            .objective
            .iter()
            .map(|&(j, c)| {
                let (l, u) = self.root_bounds[j];
                if c >= 0.0 {
                    c * l
                } else {
                    c * u
                }
            })
            .sum::<f64>()
            .max(f64::NEG_INFINITY)
    }

    fn run(mut self) -> Result<SolveResult> {
        if self.cfg.heuristics {
            if let Some(d) = self.m.data.as_ref() {
                let (cand, work) = heuristics::initial_incumbent(self.m, d);
                self.extra_work += work as u64;
                if let Some(c) = cand {
                    self.offer(c.objective, c.x);
                }
            }
        }
        let root_bound = self.trivial_bound();
        let mut heap = BinaryHeap::new();
        let mut dive = Some(Node { id: 0, parent: None, depth: 0, bound: root_bound, fixings: Vec::new(), basis: None });
        let mut next_id = 1;
        let mut explored = 0usize;
        let mut interrupted = false;

        loop {
            let node = match dive.take().or_else(|| heap.pop()) {
                Some(n) => n,
                None => break,
            };
            if node.bound >= self.cutoff() {
                self.floor = self.floor.min(node.bound);
                continue;
            }
            if explored >= self.cfg.node_limit || self.out_of_resources() {
                heap.push(node);
                interrupted = true;
                break;
            }
            explored += 1;
            let pool_before = self.cut_pool.len();
            let iters_before = self.simplex.iterations();
            let outcome = self.process(&node)?;
            let record_bound = match &outcome {
                Outcome::Pruned(b) | Outcome::Integral { bound: b, .. } | Outcome::Fractional { bound: b, .. } => Some(*b),
                _ => None,
            };
            let node_cuts = self.cut_pool.len() - pool_before;
            let node_iters = self.simplex.iterations() - iters_before;
            self.nodes.push(NodeRecord {
                id: node.id,
                parent: node.parent,
                depth: node.depth,
                lp_bound: record_bound,
                cuts: node_cuts,
            });
            let inc = self.incumbent.as_ref().map(|(v, _)| format!("{v:.9}")).unwrap_or_else(|| "-".into());
            let bound = record_bound.map(|b| format!("{b:.9}")).unwrap_or_else(|| "infeasible".into());
            let _ = writeln!(
                self.log,
                "node {} depth {} bound {} cuts {} iterations {} incumbent {}",
                node.id, node.depth, bound, node_cuts, node_iters, inc
            );

            match outcome {
                Outcome::Interrupted => {
                    heap.push(node);
                    interrupted = true;
                    break;
                }
                Outcome::Infeasible => {}
                Outcome::Pruned(b) => self.floor = self.floor.min(b),
                Outcome::Integral { bound, x, converged } => {
                    self.accept_integral(&x);
                    if converged || bound >= self.cutoff() {
                        self.floor = self.floor.min(bound);
                    } else if let Some(j) = self.first_free_binary(&node) {
                        let value = x[j].round();
                        let basis = (self.epoch, self.simplex.basis());
                        let (a, b) = self.children(&node, j, value, bound, basis, &mut next_id);
                        heap.push(b);
                        dive = Some(a);
                    } else {
                        self.floor = self.floor.min(bound);
                    }
                }
                Outcome::Fractional { bound, x } => {
                    if explored <= 10 || explored % 20 == 0 {
                        self.try_rounding(&x);
                    }
                    if bound >= self.cutoff() {
                        self.floor = self.floor.min(bound);
                        continue;
                    }
                    let j = self.branching_variable(&x).expect("fractional node has a fractional binary");
                    let up_first = x[j] >= 0.5;
                    let basis = (self.epoch, self.simplex.basis());
                    let (a, b) = self.children(&node, j, if up_first { 1.0 } else { 0.0 }, bound, basis, &mut next_id);
                    heap.push(b);
                    dive = Some(a);
                }
            }
        }

        self.canonicalize_incumbent();
        let open_min = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        let mut best_bound = open_min.min(self.floor);
        let (status, objective, incumbent, gap) = match self.incumbent.take() {
            Some((v, x)) => {
                best_bound = best_bound.min(v);
                let gap = relative_gap(v, best_bound);
                let status = if !interrupted && gap <= self.cfg.gap_tolerance * (1.0 + 1e-9) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::FeasibleTimeLimit
                };
                (status, Some(v), Some(x), Some(gap))
            }
            None if interrupted => (SolveStatus::NoIncumbentTimeLimit, None, None, None),
            None => (SolveStatus::Infeasible, None, None, None),
        };
        if status == SolveStatus::Infeasible {
            best_bound = f64::INFINITY;
        }
        Ok(SolveResult {
            status,
            incumbent,
            objective,
            best_bound,
            gap,
            nodes_explored: explored,
            cuts_added: self.cut_pool.len(),
            lp_iterations: self.work(),
            wall_time: (!self.cfg.deterministic).then(|| self.start.elapsed().as_secs_f64()),
            cut_pool: self.cut_pool,
            nodes: self.nodes,
        })
    }

    fn children(&self, node: &Node, j: usize, first: f64, bound: f64, basis: (u64, Basis), next_id: &mut usize) -> (Node, Node) {
        let mut make = |v: f64| {
            let mut fixings = node.fixings.clone();
            fixings.push((j, v));
            let id = *next_id;
            *next_id += 1;
            Node { id, parent: Some(node.id), depth: node.depth + 1, bound, fixings, basis: Some(basis.clone()) }
        };
        let a = make(first);
        let b = make(1.0 - first);
        (a, b)
    }

    fn apply_bounds(&mut self, node: &Node) {
        let mut wanted = self.root_bounds.clone();
        for &(j, v) in &node.fixings {
            wanted[j] = (v, v);
        }
        for i in 0..self.binaries.len() {
            let j = self.binaries[i];
            if self.applied[j] != wanted[j] {
                self.simplex.set_bounds(j, wanted[j].0, wanted[j].1);
                self.applied[j] = wanted[j];
            }
        }
    }

    fn solve_lp(&mut self) -> Result<LpStatus> {
        if let Some(b) = self.budget {
            let remaining = b.saturating_sub(self.work());
            self.simplex.set_iteration_limit(self.simplex.iterations() + remaining as usize);
        }
        if !self.cfg.deterministic {
            let deadline = std::time::Duration::try_from_secs_f64(self.cfg.time_limit)
                .ok()
                .and_then(|t| self.start.checked_add(t));
            self.simplex.set_deadline(deadline);
        }
        let status = self.simplex.solve();
        match status {
            LpStatus::NumericalFailure | LpStatus::Unbounded => {
                let n = self.simplex.num_structural();
                let slack = Basis { num_structural: n, status: vec![VarStatus::Lower; n] };
                self.simplex.set_basis(&slack);
                match self.simplex.solve() {
                    s @ (LpStatus::Optimal
                    | LpStatus::Infeasible
                    | LpStatus::IterationLimit
                    | LpStatus::ObjectiveLimit) => Ok(s),
                    other => Err(Error::Solver(format!("node relaxation failed twice ({other:?})"))),
                }
            }
            s => Ok(s),
        }
    }

    fn process(&mut self, node: &Node) -> Result<Outcome> {
        self.apply_bounds(node);
        if let Some((epoch, b)) = &node.basis {
            if *epoch == self.epoch {
                self.simplex.set_basis(b);
            }
        }
        let mut rounds = 0;
        loop {
            let cutoff = self.cutoff();
            self.simplex.set_objective_limit(cutoff.is_finite().then_some(cutoff / self.scale));
            match self.solve_lp()? {
                LpStatus::Optimal => {}
                LpStatus::ObjectiveLimit => {
                    return Ok(Outcome::Pruned((self.simplex.certified_bound() * self.scale).max(node.bound)));
                }
                LpStatus::Infeasible => return Ok(Outcome::Infeasible),
                LpStatus::IterationLimit => return Ok(Outcome::Interrupted),
                other => return Err(Error::Solver(format!("unexpected relaxation status {other:?}"))),
            }
            let x = self.simplex.values().to_vec();
            let bound = (self.simplex.objective_value() * self.scale).max(node.bound);
            if bound >= self.cutoff() {
                return Ok(Outcome::Pruned(bound));
            }
            let integral = self.is_integral(&x);
            let tol = if integral { self.cfg.oa_tolerance.min(1e-9) } else { self.cfg.oa_tolerance };
            let cuts = self.separate(&x, tol);
            let cap = if integral { INTEGRAL_OA_ROUNDS } else { self.cfg.max_oa_rounds_per_node };
            if cuts.is_empty() || rounds >= cap || self.out_of_resources() {
                self.purge_cuts();
                return Ok(if integral {
                    Outcome::Integral { bound, x, converged: cuts.is_empty() }
                } else {
                    Outcome::Fractional { bound, x }
                });
            }
            self.simplex.add_rows(&cuts);
            self.cut_pool.extend(cuts);
            rounds += 1;
        }
    }

    /// Drops cuts that are slack at the current relaxation once the pool in
    /// the LP grows past a size proportional to the epigraph count.
    fn purge_cuts(&mut self) {
        let active = self.simplex.num_rows() - self.model_rows;
        if active <= 50 + 10 * self.m.quads.len() {
            return;
        }
        let slacks = self.simplex.row_slacks();
        let slack: Vec<usize> = (self.model_rows..self.simplex.num_rows()).filter(|&i| slacks[i] > 1e-9).collect();
        if !self.simplex.remove_slack_rows(&slack).is_empty() {
            self.epoch += 1;
        }
    }

    fn separate(&self, x: &[f64], tol: f64) -> Vec<Row> {
        let mut cuts = Vec::new();
        for q in &self.m.quads {
            let sq: f64 = q.vars.iter().map(|&j| x[j] * x[j]).sum();
            let value = q.factor * sq;
            let epi = x[q.epigraph];
            if value - epi > tol * (1.0 + epi.abs()) {
                let mut coeffs = vec![(q.epigraph, 1.0)];
                coeffs.extend(q.vars.iter().filter(|&&j| x[j] != 0.0).map(|&j| (j, -2.0 * q.factor * x[j])));
                cuts.push(Row::new(coeffs, Sense::Ge, -value));
            }
        }
        cuts
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.binaries.iter().all(|&j| (x[j] - x[j].round()).abs() <= INT_TOL)
    }

    fn branching_variable(&self, x: &[f64]) -> Option<usize> {
        let frac = |j: usize| {
            let f = x[j] - x[j].floor();
            f.min(1.0 - f)
        };
        for fam in &self.cfg.branching_priority {
            let best = self
                .binaries
                .iter()
                .copied()
                .filter(|&j| self.family_of[j] == *fam && frac(j) > INT_TOL)
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if frac(b) >= frac(j) => Some(b),
                    _ => Some(j),
                });
            if best.is_some() {
                return best;
            }
        }
        self.binaries.iter().copied().filter(|&j| frac(j) > INT_TOL).max_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(b.cmp(&a)))
    }

    fn first_free_binary(&self, node: &Node) -> Option<usize> {
        let fixed: std::collections::HashSet<usize> = node.fixings.iter().map(|&(j, _)| j).collect();
        for fam in &self.cfg.branching_priority {
            if let Some(&j) = self.binaries.iter().find(|&&j| {
                self.family_of[j] == *fam && !fixed.contains(&j) && self.root_bounds[j].0 < self.root_bounds[j].1
            }) {
                return Some(j);
            }
        }
        None
    }

    /// Turns an integral relaxation point into a checked valuation.
    fn accept_integral(&mut self, x: &[f64]) {
        let mut cand = x.to_vec();
        for &j in &self.binaries {
            cand[j] = cand[j].round();
        }
        match self.m.data.as_ref() {
            Some(d) => fill_continuous(self.m, d, &mut cand, self.m.options.split_big_m(self.m.layout.p)),
            None => {
                for q in &self.m.quads {
                    let v = q.factor * q.vars.iter().map(|&j| cand[j] * cand[j]).sum::<f64>();
                    cand[q.epigraph] = cand[q.epigraph].max(v);
                }
            }
        }
        if check_feasible(self.m, &cand, heuristics::CHECK_TOL).is_feasible() {
            let v = self.m.objective_value(&cand);
            if self.offer(v, cand.clone()) {
                self.polish_incumbent();
            }
        }
    }

    fn try_rounding(&mut self, x: &[f64]) {
        let Some(d) = self.m.data.as_ref().filter(|_| self.cfg.heuristics) else { return };
        let topo = self.m.layout.topology();
        if let Some(cand) = round_incumbent(self.m, x, d, &topo) {
            let v = self.m.objective_value(&cand);
            if self.offer(v, cand) {
                self.polish_incumbent();
            }
        }
    }

    /// The big-M rows let a point travel against the sign of a split if it
    /// pays hinge error. When that changes any predicted class, swap in the
    /// refit on the sign routing provided it costs no more.
    fn canonicalize_incumbent(&mut self) {
        let Some(d) = self.m.data.as_ref() else { return };
        let Some((v, x)) = &self.incumbent else { return };
        let tree = decode(self.m, x);
        let topo = self.m.layout.topology();
        let first = 1usize << topo.depth();
        let signed = route_by_sign(d, &topo, &tree.planes);
        let class_of = |t: usize| tree.leaf_class[t - first];
        if signed.iter().zip(&tree.leaves).all(|(&a, &b)| class_of(a) == class_of(b)) {
            return;
        }
        let (cand, work) = heuristics::from_routing(self.m, d, signed);
        self.extra_work += work as u64;
        if let Some(c) = cand.filter(|c| c.objective <= v + 1e-9 * (1.0 + v.abs())) {
            self.incumbent = Some((c.objective, c.x));
        }
    }

    fn polish_incumbent(&mut self) {
        let Some(d) = self.m.data.as_ref().filter(|_| self.cfg.heuristics) else { return };
        let Some((v, x)) = self.incumbent.clone() else { return };
        let (c, work) = heuristics::polish_candidate(self.m, d, heuristics::Candidate { x, objective: v });
        self.extra_work += work as u64;
        self.offer(c.objective, c.x);
    }
}

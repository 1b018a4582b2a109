//! Repeated stratified cross-validation with grid tuning on an inner
//! holdout, plus the brute-force self-check used by the CLI.

use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{brute_force_oracle, solve_miqp, BnbConfig, SolveStatus};
use crate::cart::{fit_cart, CartConfig};
use crate::classifier::{extract_tree, Method, TreeClassifier};
use crate::dataset::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::formulation::{build_model, CostConfig, ModelOptions};
use crate::topology::TreeTopology;

fn powers(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| 10f64.powi(i)).collect()
}

/// Cost grids searched during tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
}

impl Grids {
    /// `10^-5..10^5` for c1 and c2, `10^-2..10^2` for c3.
    pub fn full() -> Self {
        Grids { c1: powers(-5, 5), c2: powers(-5, 5), c3: powers(-2, 2) }
    }

    /// A 3x3x3 grid that keeps misclassification expensive relative to
    /// margin and split costs.
    pub fn small() -> Self {
        Grids { c1: vec![10.0, 100.0, 1000.0], c2: vec![0.1, 1.0, 10.0], c3: vec![0.01, 0.1, 1.0] }
    }

    pub fn single(c: CostConfig) -> Self {
        Grids { c1: vec![c.c1], c2: vec![c.c2], c3: vec![c.c3] }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("c1", &self.c1), ("c2", &self.c2), ("c3", &self.c3)] {
            if g.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} grid is empty")));
            }
            for &v in g {
                CostConfig { c1: v, c2: v, c3: v }
                    .validate()
                    .map_err(|_| Error::InvalidArgument(format!("{name} grid value {v} is not a positive finite number")))?;
            }
        }
        Ok(())
    }

    /// Grid points in tie-break order: smaller c3 first, then c2, then c1.
    pub fn points(&self) -> Vec<CostConfig> {
        let sorted = |g: &[f64]| {
            let mut g = g.to_vec();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        };
        let (c1, c2, c3) = (sorted(&self.c1), sorted(&self.c2), sorted(&self.c3));
        let mut out = Vec::with_capacity(c1.len() * c2.len() * c3.len());
        for &a3 in &c3 {
            for &a2 in &c2 {
                for &a1 in &c1 {
                    out.push(CostConfig { c1: a1, c2: a2, c3: a3 });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScale {
    Full,
    Small,
}

impl GridScale {
    pub fn grids(self) -> Grids {
        match self {
            GridScale::Full => Grids::full(),
            GridScale::Small => Grids::small(),
        }
    }
}

impl FromStr for GridScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GridScale::Full),
            "small" => Ok(GridScale::Small),
            other => Err(Error::InvalidArgument(format!("unknown grid scale {other:?} (expected full or small)"))),
        }
    }
}

/// One tuning candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPoint {
    Costs(CostConfig),
    /// CART split cap.
    ActiveNodes(usize),
}

impl std::fmt::Display for GridPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridPoint::Costs(c) => write!(f, "c1={:e} c2={:e} c3={:e}", c.c1, c.c2, c.c3),
            GridPoint::ActiveNodes(k) => write!(f, "active_nodes={k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub depth: u32,
    pub grids: Grids,
    /// CART split caps to tune over; `None` means `1..=2^D - 1`.
    pub active_nodes: Option<Vec<usize>>,
    pub folds: usize,
    pub repeats: usize,
    /// Seconds per final fit (a work budget in deterministic mode).
    pub time_limit: f64,
    /// Seconds per inner tuning fit; `None` uses `time_limit`.
    pub tuning_time_limit: Option<f64>,
    pub gap_tolerance: f64,
    pub seed: u64,
    pub deterministic: bool,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub min_leaf_fraction: f64,
    pub model_options: ModelOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Moctsvm,
            depth: 2,
            grids: Grids::full(),
            active_nodes: None,
            folds: 5,
            repeats: 5,
            time_limit: 300.0,
            tuning_time_limit: None,
            gap_tolerance: 1e-4,
            seed: 0,
            deterministic: true,
            threads: 0,
            min_leaf_fraction: 0.05,
            model_options: ModelOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        TreeTopology::new(self.depth)?;
        if self.method == Method::Moctsvm {
            self.grids.validate()?;
        }
        if let Some(caps) = &self.active_nodes {
            if caps.is_empty() || caps.contains(&0) {
                return Err(Error::InvalidArgument("active node grid must be non-empty and positive".into()));
            }
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        for t in [Some(self.time_limit), self.tuning_time_limit].into_iter().flatten() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("time limit must be positive, got {t}")));
            }
        }
        self.cart_config(None).validate()
    }

    fn grid_points(&self) -> Vec<GridPoint> {
        match self.method {
            Method::Moctsvm => self.grids.points().into_iter().map(GridPoint::Costs).collect(),
            Method::Cart => {
                let all = (1..(1usize << self.depth)).collect();
                let mut caps = self.active_nodes.clone().unwrap_or(all);
                caps.sort_unstable();
                caps.dedup();
                caps.into_iter().map(GridPoint::ActiveNodes).collect()
            }
        }
    }

    fn cart_config(&self, cap: Option<usize>) -> CartConfig {
        CartConfig { max_depth: self.depth, min_leaf_fraction: self.min_leaf_fraction, max_active_nodes: cap }
    }

    fn bnb_config(&self) -> BnbConfig {
        BnbConfig {
            time_limit: self.time_limit,
            gap_tolerance: self.gap_tolerance,
            deterministic: self.deterministic,
            ..BnbConfig::default()
        }
    }
}

/// A fitted model with the solver's account of it.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: TreeClassifier,
    pub status: Option<SolveStatus>,
    pub gap: Option<f64>,
    pub lp_iterations: u64,
}

/// Fits one grid point on `d` (already scaled).
pub fn fit_point(d: &Dataset, point: &GridPoint, cfg: &ExperimentConfig) -> Result<Fit> {
    match *point {
        GridPoint::ActiveNodes(cap) => Ok(Fit {
            model: fit_cart(d, &cfg.cart_config(Some(cap)))?,
            status: None,
            gap: None,
            lp_iterations: 0,
        }),
        GridPoint::Costs(costs) => {
            let topo = TreeTopology::new(cfg.depth)?;
            let m = build_model(d, &topo, costs, &cfg.model_options)?;
            let r = solve_miqp(&m, &cfg.bnb_config())?;
            let model = extract_tree(&r, &m, d)?;
            Ok(Fit { model, status: Some(r.status), gap: r.gap, lp_iterations: r.lp_iterations })
        }
    }
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based.
    pub repeat: usize,
    /// 1-based.
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Hash of every training row and label the fold consumed.
    pub train_hash: String,
    pub chosen: Option<GridPoint>,
    pub accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub status: Option<SolveStatus>,
    pub gap: Option<f64>,
    pub lp_iterations: u64,
    /// Omitted in deterministic mode so reports stay reproducible.
    pub wall_time: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub n: usize,
    pub p: usize,
    pub classes: usize,
    pub method: Method,
    pub depth: u32,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub time_limit: f64,
    pub grid_size: usize,
    pub successful: usize,
    pub failed: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_gap: Option<f64>,
    pub mean_wall_time: Option<f64>,
    pub fold_results: Vec<FoldResult>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Order-sensitive hash of rows and labels, as hex.
pub fn data_hash(d: &Dataset) -> String {
    let mut h = DefaultHasher::new();
    for i in 0..d.len() {
        for v in d.row(i) {
            v.to_bits().hash(&mut h);
        }
        d.label(i).hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

fn fold_seed(seed: u64, repeat: usize, fold: usize) -> u64 {
    seed ^ ((repeat as u64) << 32 | fold as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Picks the grid point with the best accuracy on a stratified 20% holdout
/// of `train`. Earlier points win ties.
fn tune(train: &Dataset, points: &[GridPoint], cfg: &ExperimentConfig, seed: u64) -> Result<GridPoint> {
    if points.len() == 1 {
        return Ok(points[0]);
    }
    let plan = FoldPlan::stratified(train, 5, 1, seed)?;
    let (inner, holdout) = plan.split(0, 1);
    let (inner, holdout) = (train.subset(&inner), train.subset(&holdout));
    let mut inner_cfg = cfg.clone();
    inner_cfg.time_limit = cfg.tuning_time_limit.unwrap_or(cfg.time_limit);
    let scores: Vec<Option<f64>> = points
        .par_iter()
        .map(|pt| fit_point(&inner, pt, &inner_cfg).and_then(|f| f.model.accuracy(&holdout)).ok())
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| points[i])
        .ok_or_else(|| Error::Solver("no grid point produced a model on the inner split".into()))
}

fn run_fold(d: &Dataset, plan: &FoldPlan, repeat: usize, fold: usize, cfg: &ExperimentConfig) -> FoldResult {
    let start = Instant::now();
    let (train_idx, test_idx) = plan.split(repeat, fold);
    let raw_train = d.subset(&train_idx);
    let train = raw_train.normalize();
    let norm = train.normalization().cloned().expect("normalize sets ranges");
    let test = d.subset(&test_idx).normalize_with(&norm);
    let mut out = FoldResult {
        repeat: repeat + 1,
        fold,
        train_size: train.len(),
        test_size: test.len(),
        train_hash: data_hash(&raw_train),
        chosen: None,
        accuracy: None,
        train_accuracy: None,
        status: None,
        gap: None,
        lp_iterations: 0,
        wall_time: None,
        error: None,
    };
    let seed = fold_seed(plan.seed, repeat, fold);
    let mut fold_cfg = cfg.clone();
    fold_cfg.model_options.seed = seed;
    let result = tune(&train, &fold_cfg.grid_points(), &fold_cfg, seed).and_then(|pt| {
        out.chosen = Some(pt);
        let fit = fit_point(&train, &pt, &fold_cfg)?;
        out.status = fit.status;
        out.gap = fit.gap;
        out.lp_iterations = fit.lp_iterations;
        out.train_accuracy = Some(fit.model.accuracy(&train)?);
        out.accuracy = Some(fit.model.accuracy(&test)?);
        Ok(())
    });
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    if !cfg.deterministic {
        out.wall_time = Some(start.elapsed().as_secs_f64());
    }
    out
}

/// Runs repeated stratified k-fold CV of `cfg.method` on `d` (raw scale).
/// Each training split is normalized on its own ranges, tuned on an inner
/// holdout, refitted in full and scored on its test fold.
pub fn run_crossval(name: &str, d: &Dataset, cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let plan = FoldPlan::stratified(d, cfg.folds, cfg.repeats, cfg.seed)?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.repeats).flat_map(|r| (1..=cfg.folds).map(move |f| (r, f))).collect();
    let work = || jobs.par_iter().map(|&(r, f)| run_fold(d, &plan, r, f, cfg)).collect::<Vec<_>>();
    let fold_results = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    let accs: Vec<f64> = fold_results.iter().filter_map(|f| f.accuracy).collect();
    if accs.is_empty() {
        let first = fold_results.iter().find_map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Solver(format!("no fold produced a model: {first}")));
    }
    let (mean_accuracy, sd_accuracy) = mean_sd(&accs);
    let gaps: Vec<f64> = fold_results.iter().filter_map(|f| f.gap).collect();
    let times: Vec<f64> = fold_results.iter().filter_map(|f| f.wall_time).collect();
    Ok(BenchReport {
        dataset: name.to_string(),
        n: d.len(),
        p: d.num_features(),
        classes: d.num_classes(),
        method: cfg.method,
        depth: cfg.depth,
        folds: cfg.folds,
        repeats: cfg.repeats,
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        time_limit: cfg.time_limit,
        grid_size: cfg.grid_points().len(),
        successful: accs.len(),
        failed: fold_results.len() - accs.len(),
        mean_accuracy,
        sd_accuracy,
        mean_gap: (!gaps.is_empty()).then(|| mean_sd(&gaps).0),
        mean_wall_time: (!times.is_empty()).then(|| mean_sd(&times).0),
        fold_results,
    })
}

/// Plain-text table, one row per report, accuracies in percent.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:>3} {:>3} {:>2}  {:<8} {:>16} {:>9} {:>9} {:>7}",
        "dataset", "n", "p", "K", "D", "method", "accuracy", "gap", "time(s)", "fits"
    );
    for r in reports {
        let acc = format!("{:.2} ± {:.2}", 100.0 * r.mean_accuracy, 100.0 * r.sd_accuracy);
        let gap = r.mean_gap.map_or("-".to_string(), |g| format!("{:.2}%", 100.0 * g));
        let time = r.mean_wall_time.map_or("-".to_string(), |t| format!("{t:.2}"));
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>3} {:>3} {:>2}  {:<8} {:>16} {:>9} {:>9} {:>7}",
            r.dataset,
            r.n,
            r.p,
            r.classes,
            r.depth,
            r.method.to_string(),
            acc,
            gap,
            time,
            format!("{}/{}", r.successful, r.successful + r.failed)
        );
    }
    s
}

/// Per-fold lines for one report.
pub fn render_folds(r: &BenchReport) -> String {
    let mut s = String::new();
    for f in &r.fold_results {
        let acc = f.accuracy.map_or("failed".to_string(), |a| format!("{:.2}", 100.0 * a));
        let chosen = f.chosen.map_or("-".to_string(), |c| c.to_string());
        let gap = f.gap.map_or("-".to_string(), |g| format!("{g:.4}"));
        let status = f.status.map_or("-".to_string(), |st| st.to_string());
        let _ = write!(s, "repeat {} fold {}: accuracy {acc} [{chosen}] status {status} gap {gap}", f.repeat, f.fold);
        if let Some(e) = &f.error {
            let _ = write!(s, " error: {e}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrial {
    pub n: usize,
    pub classes: usize,
    pub costs: CostConfig,
    pub solver: f64,
    pub oracle: f64,
    /// `|solver - oracle| / |oracle|` (absolute when the optimum is 0).
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub trials: Vec<OracleTrial>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const ORACLE_TOLERANCE: f64 = 1e-6;

/// Random depth-1 instance: `2 <= n <= 8`, two features, up to three
/// classes, costs drawn from the full grids.
pub fn oracle_instance(rng: &mut ChaCha8Rng) -> Result<(Dataset, CostConfig)> {
    let n = rng.gen_range(2..=8);
    let k = rng.gen_range(2..=3usize).min(n);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let y: Vec<usize> = (0..n).map(|i| if i < k { i + 1 } else { rng.gen_range(1..=k) }).collect();
    let pick = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| 10f64.powi(rng.gen_range(lo..=hi));
    let costs = CostConfig::new(pick(rng, -5, 5), pick(rng, -5, 5), pick(rng, -2, 2))?;
    Ok((Dataset::from_rows(rows, y)?, costs))
}

/// Compares the branch-and-bound optimum with exhaustive enumeration on
/// `trials` random instances.
pub fn oracle_check(seed: u64, trials: usize) -> Result<OracleReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("oracle check needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = TreeTopology::new(1)?;
    let cfg = BnbConfig { gap_tolerance: 1e-9, deterministic: true, ..BnbConfig::default() };
    let opts = ModelOptions::default();
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (d, costs) = oracle_instance(&mut rng)?;
        let m = build_model(&d, &topo, costs, &opts)?;
        let r = solve_miqp(&m, &cfg)?;
        let solver = r.objective.ok_or_else(|| Error::Solver(format!("no incumbent ({})", r.status)))?;
        let (oracle, _) = brute_force_oracle(&d, costs, &opts)?;
        out.push(OracleTrial {
            n: d.len(),
            classes: d.num_classes(),
            costs,
            solver,
            oracle,
            deviation: if oracle == 0.0 { solver.abs() } else { (solver - oracle).abs() / oracle.abs() },
        });
    }
    let max_deviation = out.iter().map(|t| t.deviation).fold(0.0, f64::max);
    Ok(OracleReport {
        seed,
        trials: out,
        max_deviation,
        tolerance: ORACLE_TOLERANCE,
        passed: max_deviation <= ORACLE_TOLERANCE,
    })
}

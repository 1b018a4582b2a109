use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moctsvm::bnb::{solve_miqp, BnbConfig};
use moctsvm::cart::{fit_cart, CartConfig};
use moctsvm::classifier::{extract_tree, write_predictions, Method, TreeClassifier};
use moctsvm::dataset::{Dataset, FeatureTable, LabelColumn};
use moctsvm::experiment::{
    oracle_check, render_folds, render_table, run_crossval, BenchReport, ExperimentConfig, GridScale,
};
use moctsvm::formulation::{build_model, CostConfig, ModelOptions, ValidInequalities};
use moctsvm::textfmt::write_model;
use moctsvm::topology::TreeTopology;

#[derive(Parser)]
#[command(name = "moctsvm", version, about = "Optimal classification trees with SVM splits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one tree on a CSV and save it as JSON.
    Train(TrainArgs),
    /// Predict classes for the rows of a CSV with a saved tree.
    Predict(PredictArgs),
    /// Repeated k-fold cross-validation of one method.
    Crossval(CrossvalArgs),
    /// Cross-validate MOCTSVM and CART side by side.
    Bench(CrossvalArgs),
    /// Compare branch-and-bound against enumeration on random tiny instances.
    OracleCheck(OracleArgs),
    /// Write the MIQP for a dataset in the text model format.
    ExportModel(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Moctsvm,
    Cart,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Moctsvm => Method::Moctsvm,
            MethodArg::Cart => Method::Cart,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Full,
    Small,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column: a 0-based index or a header name (default: last).
    #[arg(long)]
    label_col: Option<String>,
}

impl DataArgs {
    fn label(&self) -> LabelColumn {
        self.label_col.as_deref().map_or(LabelColumn::Last, |s| s.parse().expect("infallible"))
    }

    fn load(&self) -> Result<Dataset> {
        Dataset::load_csv(&self.data, &self.label()).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 2)]
    depth: u32,
    #[arg(long, default_value_t = 1000.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, default_value_t = 0.1)]
    c3: f64,
    /// Add every valid-inequality family.
    #[arg(long)]
    valid_inequalities: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CostArgs {
    fn costs(&self) -> Result<CostConfig> {
        Ok(CostConfig::new(self.c1, self.c2, self.c3)?)
    }

    fn model_options(&self) -> ModelOptions {
        let vi = if self.valid_inequalities { ValidInequalities::all() } else { ValidInequalities::none() };
        ModelOptions { valid_inequalities: vi, seed: self.seed, ..ModelOptions::default() }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: CostArgs,
    #[arg(long, value_enum, default_value = "moctsvm")]
    method: MethodArg,
    /// Seconds (a simplex work budget with --deterministic).
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    #[arg(long)]
    deterministic: bool,
    /// CART minimum child size as a fraction of the sample.
    #[arg(long, default_value_t = 0.05)]
    min_leaf_fraction: f64,
    /// Unused by training; accepted for uniformity.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Where to write the model JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Label column; when given, accuracy is printed to stderr.
    #[arg(long)]
    label_col: Option<String>,
    /// Where to write `row,class` lines (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    /// One or more CSV files.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long, value_enum, default_value = "moctsvm")]
    method: MethodArg,
    #[arg(long, default_value_t = 2)]
    depth: u32,
    #[arg(long, value_enum, default_value = "full")]
    grid_scale: ScaleArg,
    /// Fix c1 instead of tuning it.
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long)]
    c3: Option<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Seconds per final fit.
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    /// Seconds per tuning fit (default: the final fit's limit).
    #[arg(long)]
    tuning_time_limit: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    /// Keep a class-stratified sample of this many rows per class.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Accepted for uniformity: cross-validation always runs deterministically
    /// unless --wall-clock is given.
    #[arg(long)]
    deterministic: bool,
    /// Stop fits on the wall clock; reports then include timings.
    #[arg(long, conflicts_with = "deterministic")]
    wall_clock: bool,
    #[arg(long)]
    valid_inequalities: bool,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: CostArgs,
    /// Skip min-max scaling of the features.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes, in exit-code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Usage = 1,
    Data = 2,
    Solver = 3,
}

/// A CLI-level failure with an explicit class.
#[derive(Debug)]
struct Tagged(Failure, String);

impl std::fmt::Display for Tagged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Tagged {}

fn fail(kind: Failure, msg: impl Into<String>) -> anyhow::Error {
    Tagged(kind, msg.into()).into()
}

fn classify(err: &anyhow::Error) -> Failure {
    use moctsvm::error::Error as E;
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<Tagged>() {
            return t.0;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => Failure::Usage,
                E::Model(_) | E::Solver(_) => Failure::Solver,
                _ => Failure::Data,
            };
        }
    }
    Failure::Data
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let d = a.data.load()?.normalize();
    let model = match a.method {
        MethodArg::Cart => {
            let cfg = CartConfig { max_depth: a.model.depth, min_leaf_fraction: a.min_leaf_fraction, max_active_nodes: None };
            fit_cart(&d, &cfg)?
        }
        MethodArg::Moctsvm => {
            let topo = TreeTopology::new(a.model.depth)?;
            let m = build_model(&d, &topo, a.model.costs()?, &a.model.model_options())?;
            let cfg = BnbConfig { time_limit: a.time_limit, gap_tolerance: a.gap, deterministic: a.deterministic, ..BnbConfig::default() };
            let r = solve_miqp(&m, &cfg)?;
            eprintln!(
                "status {} objective {} bound {:.6} gap {} nodes {}",
                r.status,
                r.objective.map_or("-".into(), |v| format!("{v:.6}")),
                r.best_bound,
                r.gap.map_or("-".into(), |g| format!("{g:.4}")),
                r.nodes_explored
            );
            if r.incumbent.is_none() {
                return Err(fail(Failure::Solver, format!("no feasible tree found ({})", r.status)));
            }
            extract_tree(&r, &m, &d)?
        }
    };
    eprintln!("training accuracy {:.4} with {} splits", model.accuracy(&d)?, model.num_splits());
    write_output(a.out.as_deref(), &model.to_json()?)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = TreeClassifier::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let label: Option<LabelColumn> = a.label_col.as_deref().map(|s| s.parse().expect("infallible"));
    let table = FeatureTable::load_csv(&a.data, model.feature_names(), label.as_ref())
        .with_context(|| format!("loading {}", a.data.display()))?;
    let preds = table.rows.iter().map(|r| model.predict(r)).collect::<moctsvm::error::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &model, &preds)?;
    if let (Some(labels), false) = (&table.labels, preds.is_empty()) {
        let hits = preds.iter().zip(labels).filter(|(&k, l)| model.class_name(k) == l.as_str()).count();
        eprintln!("accuracy {:.4} ({hits}/{})", hits as f64 / preds.len() as f64, preds.len());
    }
    write_output(a.out.as_deref(), std::str::from_utf8(&buf)?)
}

fn experiment_config(a: &CrossvalArgs, method: Method) -> ExperimentConfig {
    let mut grids = match a.grid_scale {
        ScaleArg::Full => GridScale::Full.grids(),
        ScaleArg::Small => GridScale::Small.grids(),
    };
    let fix = |g: &mut Vec<f64>, v: Option<f64>| {
        if let Some(v) = v {
            *g = vec![v];
        }
    };
    fix(&mut grids.c1, a.c1);
    fix(&mut grids.c2, a.c2);
    fix(&mut grids.c3, a.c3);
    let vi = if a.valid_inequalities { ValidInequalities::all() } else { ValidInequalities::none() };
    ExperimentConfig {
        method,
        depth: a.depth,
        grids,
        folds: a.folds,
        repeats: a.repeats,
        time_limit: a.time_limit,
        tuning_time_limit: a.tuning_time_limit,
        gap_tolerance: a.gap,
        seed: a.seed,
        deterministic: !a.wall_clock,
        threads: a.threads,
        model_options: ModelOptions { valid_inequalities: vi, ..ModelOptions::default() },
        ..ExperimentConfig::default()
    }
}

fn load_for_cv(a: &CrossvalArgs, path: &Path) -> Result<(String, Dataset)> {
    let label = a.label_col.as_deref().map_or(LabelColumn::Last, |s| s.parse().expect("infallible"));
    let mut d = Dataset::load_csv(path, &label).with_context(|| format!("loading {}", path.display()))?;
    if let Some(k) = a.per_class {
        d = d.stratified_sample(k, a.seed)?;
    }
    let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
    Ok((name, d))
}

fn crossval(a: &CrossvalArgs, methods: &[Method]) -> Result<()> {
    let mut reports: Vec<BenchReport> = Vec::new();
    for path in &a.data {
        let (name, d) = load_for_cv(a, path)?;
        for &m in methods {
            let r = run_crossval(&name, &d, &experiment_config(a, m))?;
            eprint!("{name} {m}:\n{}", render_folds(&r));
            reports.push(r);
        }
    }
    let table = render_table(&reports);
    print!("{table}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.txt"), &table)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn oracle(a: &OracleArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(fail(Failure::Usage, "--trials must be at least 1"));
    }
    let r = oracle_check(a.seed, a.trials)?;
    for (i, t) in r.trials.iter().enumerate() {
        println!(
            "trial {:>3}: n={} K={} c=({:e},{:e},{:e}) solver={:.10} oracle={:.10} deviation={:.3e}",
            i + 1,
            t.n,
            t.classes,
            t.costs.c1,
            t.costs.c2,
            t.costs.c3,
            t.solver,
            t.oracle,
            t.deviation
        );
    }
    println!("max relative deviation {:.3e} (tolerance {:e}): {}", r.max_deviation, r.tolerance, if r.passed { "pass" } else { "FAIL" });
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&r)?)?;
    }
    if !r.passed {
        return Err(fail(Failure::Solver, "solver and oracle disagree"));
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let mut d = a.data.load()?;
    if !a.raw {
        d = d.normalize();
    }
    let topo = TreeTopology::new(a.model.depth)?;
    let m = build_model(&d, &topo, a.model.costs()?, &a.model.model_options())?;
    write_output(a.out.as_deref(), &write_model(&m))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Crossval(a) => {
            let m = a.method.into();
            crossval(&a, &[m])
        }
        Command::Bench(a) => crossval(&a, &[Method::Moctsvm, Method::Cart]),
        Command::OracleCheck(a) => oracle(&a),
        Command::ExportModel(a) => export(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Failure::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e) as u8)
        }
    }
}

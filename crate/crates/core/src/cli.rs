//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{BaselineOptions, OrdinalModel, StandardModel};
use crate::data::io::{read_cells, read_dataset, read_feature_tables, read_schema, write_dataset, DatasetPaths};
use crate::data::{pair_index, stage_pairs, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, predict_cell, table_csv, CellPrediction, EvalReport};
use crate::model::{HyperParams, Method, StageWeights};
use crate::persist::{load_model, save_model, TrainedModel};
use crate::pipeline::{benchmark, tune_proposed, BenchmarkConfig, GridScore, LambdaGrid};
use crate::simgen::{generate_dataset, SimConfig};
use crate::trainer::{fit_with, Execution, TrainTrace};

#[derive(Debug, Parser)]
#[command(name = "mmrs", version, about = "Monotonic multistage recommender")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially and bit-reproducibly.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and its generating parameters.
    Simulate(SimulateArgs),
    /// Fit one model and write it with its training trace.
    Train(TrainArgs),
    /// Write decision values and predicted labels per cell.
    Predict(PredictArgs),
    /// Score a model on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Grid search of the ridge weights on a validation set.
    Tune(TuneArgs),
    /// Fit and compare methods on shared splits.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory (schema.toml, users.csv, items.csv, interactions.csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Schema file to use instead of the one in the data directory.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> DatasetPaths {
        let mut paths = DatasetPaths::in_dir(&self.data);
        if let Some(s) = &self.schema {
            paths.schema = s.clone();
        }
        paths
    }

    fn load(&self) -> Result<Dataset> {
        read_dataset(&self.paths())
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Latent dimension.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.0001)]
    pub lambda3: f64,
    /// Stage-pair weights: `all`, `next`, `last` or `t':t=w,...`.
    #[arg(long, default_value = "all")]
    pub weights: String,
    /// Outer stopping tolerance on the objective decrement.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reweight classes inversely to their frequency within each stage pair.
    #[arg(long)]
    pub balanced: bool,
}

impl FitArgs {
    fn hyper(&self, stages: usize) -> Result<HyperParams> {
        let mut h = HyperParams::new(self.k, stages).with_lambdas(self.lambda1, self.lambda2, self.lambda3);
        h.weights = StageWeights::parse(stages, &self.weights)?;
        h.tol_outer = self.tol;
        h.max_outer = self.max_iter;
        h.seed = self.seed;
        h.class_balance = self.balanced;
        h.validate(stages)?;
        Ok(h)
    }

    fn baseline_options(&self) -> BaselineOptions {
        BaselineOptions {
            class_balance: self.balanced,
            ..BaselineOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// User category cardinalities.
    #[arg(long, value_delimiter = ',', default_value = "50,30,50")]
    pub users: Vec<usize>,
    /// Item category cardinalities.
    #[arg(long, value_delimiter = ',', default_value = "100,40")]
    pub items: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    /// Number of observed user-item pairs.
    #[arg(long, default_value_t = 50_000)]
    pub observed: usize,
    /// Multiplier on the label noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file to write; the trace goes to `<out>.trace`.
    #[arg(long)]
    pub out: PathBuf,
    /// `proposed`, `standard` or `ordinal`; the baselines use `--lambda2` as their ridge weight.
    #[arg(long, default_value = "proposed")]
    pub method: Method,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Cells to score (`i,j` or `i,j,y1..yT`); defaults to the interactions of `--data`.
    #[arg(long)]
    pub cells: Option<PathBuf>,
    /// Stage pairs to emit, e.g. `0:1,0:2,1:2`; defaults to all.
    #[arg(long)]
    pub pairs: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Stage-pair weights of the overall error.
    #[arg(long, default_value = "all")]
    pub weights: String,
    /// Report file (JSON); a one-column table goes to `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Validation dataset directory.
    #[arg(long)]
    pub val: PathBuf,
    /// Ridge grid `l1=..;l2=..;l3=..`; omitted axes use the default grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Best model; the trace goes to `<out>.trace` and the grid scores to `<out>.scores.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for `table.csv` and `reports.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Methods to compare.
    #[arg(long, value_delimiter = ',', default_value = "proposed,standard,ordinal")]
    pub method: Vec<Method>,
    #[arg(long)]
    pub grid: Option<String>,
    /// Independent splits; replication `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[command(flatten)]
    pub fit: FitArgs,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        Error::Malformed { .. } => 4,
        Error::Schema(_) => 5,
        Error::ChainViolation { .. } => 6,
        Error::EmptyTrainingSet(_) => 7,
        Error::CorruptModel(_) => 8,
        Error::SchemaMismatch => 9,
        Error::InvalidInput(_)
        | Error::DuplicatePair { .. }
        | Error::UnknownUser(_)
        | Error::UnknownItem(_)
        | Error::StageOutOfRange { .. }
        | Error::InvalidPair { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_) => 10,
    }
}

/// Parses `argv` and runs the command, returning the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmrs: error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = match cli.threads {
        Some(0) => return Err(Error::InvalidInput("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let command = cli.command;
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(command, exec)),
        None => dispatch(command, exec),
    }
}

fn dispatch(command: Command, exec: Execution) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a, exec),
        Command::Predict(a) => predict_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Tune(a) => tune(&a, exec),
        Command::Benchmark(a) => benchmark_cmd(&a, exec),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let config = SimConfig {
        user_cardinalities: a.users.clone(),
        item_cardinalities: a.items.clone(),
        k: a.k,
        stages: a.stages,
        omega0_size: a.observed,
        noise_scale: a.noise,
        seed: a.seed,
    };
    let sim = generate_dataset(&config)?;
    write_dataset(&a.out, &sim.dataset)?;
    save_model(&a.out.join("truth.json"), &TrainedModel::Proposed(sim.truth))?;
    let sigma: String = sim.sigma.iter().map(|s| format!("{s:e}\n")).collect();
    write_text(&a.out.join("sigma.txt"), &sigma)?;
    eprintln!(
        "simulated {} pairs, {} users, {} items",
        sim.dataset.len(),
        sim.dataset.users().len(),
        sim.dataset.items().len()
    );
    Ok(())
}

fn fit_method(
    dataset: &Dataset,
    method: Method,
    hyper: &HyperParams,
    opts: &BaselineOptions,
    exec: Execution,
) -> Result<(TrainedModel, Option<TrainTrace>)> {
    let n_pairs = stage_pairs(dataset.stages()).len();
    Ok(match method {
        Method::Proposed => {
            let (params, trace) = fit_with(dataset, hyper, exec)?;
            (TrainedModel::Proposed(params), Some(trace))
        }
        Method::Standard => (
            TrainedModel::Standard(StandardModel::fit(dataset, &vec![hyper.lambda2; n_pairs], opts)?),
            None,
        ),
        Method::Ordinal => (
            TrainedModel::Ordinal(OrdinalModel::fit(
                dataset,
                &vec![hyper.lambda2; dataset.stages()],
                hyper.weights.values(),
                opts,
            )?),
            None,
        ),
    })
}

fn train(a: &TrainArgs, exec: Execution) -> Result<()> {
    let dataset = a.data.load()?;
    dataset.validate_chain().into_result()?;
    let hyper = a.fit.hyper(dataset.stages())?;
    let (model, trace) = fit_method(&dataset, a.method, &hyper, &a.fit.baseline_options(), exec)?;
    save_model(&a.out, &model)?;
    if let Some(trace) = trace {
        write_text(&with_suffix(&a.out, ".trace"), &trace.to_log())?;
        eprintln!(
            "{} iterations, objective {:.6e}{}",
            trace.entries.len().saturating_sub(1),
            trace.final_objective(),
            if trace.converged { "" } else { " (max iterations reached)" }
        );
    }
    Ok(())
}

/// Parses `t':t,...` into pair positions.
pub fn parse_pairs(stages: usize, text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in text.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let bad = || Error::InvalidInput(format!("cannot parse stage pair `{entry}`"));
        let (tp, t) = entry.split_once(':').ok_or_else(bad)?;
        let tp: usize = tp.trim().parse().map_err(|_| bad())?;
        let t: usize = t.trim().parse().map_err(|_| bad())?;
        if tp >= t || t > stages {
            return Err(Error::InvalidPair {
                present: tp,
                subsequent: t,
                stages,
            });
        }
        out.push(pair_index(stages, tp, t));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no stage pairs requested".into()));
    }
    Ok(out)
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let paths = a.data.paths();
    let schema = read_schema(&paths.schema)?;
    let model = load_model(&a.model)?;
    model.check_schema(&schema)?;
    let stages = schema.stages;
    let (users, items) = read_feature_tables(&paths, &schema)?;
    let cells = read_cells(a.cells.as_ref().unwrap_or(&paths.interactions), stages)?;
    let pairs = stage_pairs(stages);
    let chosen = match &a.pairs {
        Some(text) => parse_pairs(stages, text)?,
        None => (0..pairs.len()).collect(),
    };

    let mut w = csv::Writer::from_path(&a.out).map_err(|e| csv_io(&a.out, e))?;
    let mut header = vec!["i".to_string(), "j".to_string()];
    header.extend(chosen.iter().map(|&p| format!("f{}{}", pairs[p].0, pairs[p].1)));
    header.extend(chosen.iter().map(|&p| format!("phi{}{}", pairs[p].0, pairs[p].1)));
    header.extend(chosen.iter().map(|&p| format!("assumed{}{}", pairs[p].0, pairs[p].1)));
    w.write_record(&header).map_err(|e| csv_io(&a.out, e))?;
    let mut assumed_any = false;
    for c in &cells {
        let user = users.get(&c.user).ok_or(Error::UnknownUser(c.user))?;
        let item = items.get(&c.item).ok_or(Error::UnknownItem(c.item))?;
        let f = predict_cell(&model, user, item)?;
        let p = CellPrediction::new(stages, c.user, c.item, f, c.labels.as_deref());
        let mut row = vec![c.user.to_string(), c.item.to_string()];
        row.extend(chosen.iter().map(|&k| format!("{:e}", p.f[k])));
        row.extend(chosen.iter().map(|&k| p.phi[k].as_i8().to_string()));
        row.extend(chosen.iter().map(|&k| u8::from(p.assumed[k]).to_string()));
        assumed_any |= chosen.iter().any(|&k| p.assumed[k]);
        w.write_record(&row).map_err(|e| csv_io(&a.out, e))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    if assumed_any {
        eprintln!("note: y^{{t'}} unobserved for some cells; those predictions assume y^{{t'}} = +1 (assumed = 1)");
    }
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.into(),
            source,
        },
        other => Error::InvalidInput(format!("cannot write {}: {other:?}", path.display())),
    }
}

fn summary(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method {}", report.method);
    for p in &report.pairs {
        let rate = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "({},{}) n={} error={} balanced={}{}",
            p.present,
            p.subsequent,
            p.count,
            rate(p.error),
            rate(p.balanced_error),
            if p.balanced_fallback { " (one class)" } else { "" }
        );
    }
    let overall = report.overall_error.map_or("NA".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(s, "overall {overall}");
    let _ = writeln!(s, "inconsistency {:.4}", report.inconsistency_rate);
    s
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let dataset = a.data.load()?;
    let model = load_model(&a.model)?;
    let weights = StageWeights::parse(dataset.stages(), &a.weights)?;
    let report = evaluate_model(&model, &dataset, &weights)?;
    write_text(&a.out, &to_json(&report)?)?;
    write_text(
        &with_suffix(&a.out, ".csv"),
        &table_csv(&[(report.method, vec![report.clone()])]),
    )?;
    print!("{}", summary(&report));
    Ok(())
}

fn grid(text: Option<&str>) -> Result<LambdaGrid> {
    text.map_or_else(|| Ok(LambdaGrid::default()), LambdaGrid::parse)
}

fn tune(a: &TuneArgs, exec: Execution) -> Result<()> {
    let train = a.data.load()?;
    let val = DataArgs {
        data: a.val.clone(),
        schema: a.data.schema.clone(),
    }
    .load()?;
    train.validate_chain().into_result()?;
    let hyper = a.fit.hyper(train.stages())?;
    let tuned = tune_proposed(&train, &val, &hyper, &grid(a.grid.as_deref())?, exec)?;
    save_model(&a.out, &TrainedModel::Proposed(tuned.params))?;
    write_text(&with_suffix(&a.out, ".trace"), &tuned.trace.to_log())?;
    write_text(&with_suffix(&a.out, ".scores.csv"), &scores_csv(&tuned.scores))?;
    eprintln!(
        "best lambda1={} lambda2={} lambda3={}",
        tuned.hyper.lambda1, tuned.hyper.lambda2, tuned.hyper.lambda3
    );
    Ok(())
}

fn scores_csv(scores: &[GridScore]) -> String {
    let mut s = String::from("lambda1,lambda2,lambda3,validation_error\n");
    for g in scores {
        let _ = writeln!(s, "{},{},{},{}", g.lambda1, g.lambda2, g.lambda3, g.validation_error);
    }
    s
}

fn benchmark_cmd(a: &BenchmarkArgs, exec: Execution) -> Result<()> {
    if a.repeats == 0 || a.method.is_empty() {
        return Err(Error::InvalidInput("benchmark needs at least one repeat and one method".into()));
    }
    let dataset = a.data.load()?;
    dataset.validate_chain().into_result()?;
    let base = a.fit.hyper(dataset.stages())?;
    let mut columns: Vec<(Method, Vec<EvalReport>)> = a.method.iter().map(|&m| (m, Vec::new())).collect();
    for r in 0..a.repeats as u64 {
        let mut hyper = base.clone();
        hyper.seed = base.seed + r;
        let mut config = BenchmarkConfig::new(hyper);
        config.grid = grid(a.grid.as_deref())?;
        config.methods = a.method.clone();
        config.baseline = a.fit.baseline_options();
        config.exec = exec;
        for run in benchmark(&dataset, &config)? {
            let column = columns
                .iter_mut()
                .find(|(m, _)| *m == run.method)
                .expect("method requested");
            column.1.push(run.report);
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let table = table_csv(&columns);
    write_text(&a.out.join("table.csv"), &table)?;
    write_text(&a.out.join("reports.json"), &to_json(&columns)?)?;
    print!("{table}");
    Ok(())
}

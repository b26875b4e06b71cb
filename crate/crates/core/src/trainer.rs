//! Block successive minimization over the A, a, B, b and q blocks.
//!
//! Each block, with every other block held at a snapshot, is a bounded hinge
//! problem in canonical form; see [`crate::solver`]. A block solution is
//! accepted only when it lowers the block objective, so the outer objective
//! never increases.

use std::collections::HashMap;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stage_pairs, Dataset, FeatureSchema, Features, Label};
use crate::error::{Error, Result};
use crate::model::{HyperParams, LossWeights, ModelParams};
use crate::rng::{substream, Stream};
use crate::solver::{
    hinge, primal_objective, solve_subproblem_warm, Sample, SubproblemSpec, VisitOrder,
};

/// `N(0, 0.1)` read as variance 0.1.
pub const INIT_STD: f64 = 0.316_227_766_016_837_94;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockId {
    UserLinear,
    UserLevel { feature: usize, level: usize },
    ItemLinear,
    ItemLevel { feature: usize, level: usize },
    /// `q_r`, `r` in `1..=T`.
    Stage(usize),
}

impl BlockId {
    /// Every block in outer-iteration order.
    pub fn all(schema: &FeatureSchema) -> Vec<BlockId> {
        let mut out = vec![BlockId::UserLinear];
        for (l, &n) in schema.user_cardinalities.iter().enumerate() {
            out.extend((0..n).map(|h| BlockId::UserLevel { feature: l, level: h }));
        }
        out.push(BlockId::ItemLinear);
        for (l, &m) in schema.item_cardinalities.iter().enumerate() {
            out.extend((0..m).map(|h| BlockId::ItemLevel { feature: l, level: h }));
        }
        out.extend((1..=schema.stages).map(BlockId::Stage));
        out
    }

    fn check(self, schema: &FeatureSchema) -> Result<()> {
        let ok = match self {
            BlockId::UserLinear | BlockId::ItemLinear => true,
            BlockId::UserLevel { feature, level } => schema
                .user_cardinalities
                .get(feature)
                .is_some_and(|&n| level < n),
            BlockId::ItemLevel { feature, level } => schema
                .item_cardinalities
                .get(feature)
                .is_some_and(|&m| level < m),
            BlockId::Stage(r) => (1..=schema.stages).contains(&r),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("block {self:?} is outside the schema")))
        }
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::UserLinear => write!(f, "A"),
            BlockId::ItemLinear => write!(f, "B"),
            BlockId::UserLevel { feature, level } => write!(f, "a({},{})", feature + 1, level + 1),
            BlockId::ItemLevel { feature, level } => write!(f, "b({},{})", feature + 1, level + 1),
            BlockId::Stage(r) => write!(f, "q({r})"),
        }
    }
}

/// Starting point: `|N(0, 0.1)|` entries (variance 0.1) for A, B, a, b (in that order), `q_r = 1/(2T)`.
pub fn init_params(schema: &FeatureSchema, k: usize, seed: u64) -> Result<ModelParams> {
    schema.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    let mut rng = substream(seed, Stream::Init);
    let normal = Normal::new(0.0, INIT_STD).expect("fixed positive std");
    let mut params = ModelParams::zeros(schema, k);
    let mut draw = || normal.sample(&mut rng).abs();
    for v in params
        .user_linear
        .iter_mut()
        .chain(params.item_linear.iter_mut())
        .chain(params.user_factors.iter_mut().flatten())
        .chain(params.item_factors.iter_mut().flatten())
        .flatten()
    {
        *v = draw();
    }
    let q = 1.0 / (2.0 * schema.stages as f64);
    for v in params.stage_factors.iter_mut().flatten() {
        *v = q;
    }
    Ok(params)
}

/// One hinge term `(t', t)` of a cell's empirical loss.
#[derive(Clone, Copy, Debug)]
struct Row {
    present: usize,
    subsequent: usize,
    pair: usize,
    y: Label,
    cost: f64,
}

/// Training data laid out for repeated block assembly.
struct Problem<'a> {
    users: Vec<&'a Features>,
    items: Vec<&'a Features>,
    rows: Vec<Row>,
    /// Row ranges per cell, `rows[starts[c]..starts[c + 1]]`.
    starts: Vec<usize>,
    user_level_cells: Vec<Vec<Vec<usize>>>,
    item_level_cells: Vec<Vec<Vec<usize>>>,
}

impl<'a> Problem<'a> {
    fn new(dataset: &'a Dataset, hyper: &HyperParams) -> Result<Self> {
        let schema = dataset.schema();
        let stages = schema.stages;
        let weights = LossWeights::new(dataset, &hyper.weights, hyper.class_balance)?;
        let pairs = stage_pairs(stages);
        let mut users = Vec::with_capacity(dataset.len());
        let mut items = Vec::with_capacity(dataset.len());
        let mut rows = Vec::new();
        let mut starts = vec![0];
        let mut user_level_cells: Vec<Vec<Vec<usize>>> = schema
            .user_cardinalities
            .iter()
            .map(|&n| vec![Vec::new(); n])
            .collect();
        let mut item_level_cells: Vec<Vec<Vec<usize>>> = schema
            .item_cardinalities
            .iter()
            .map(|&m| vec![Vec::new(); m])
            .collect();
        for (cell, x) in dataset.interactions().iter().enumerate() {
            let user = dataset.user(x.user)?;
            let item = dataset.item(x.item)?;
            for (l, &h) in user.categories.iter().enumerate() {
                user_level_cells[l][h].push(cell);
            }
            for (l, &h) in item.categories.iter().enumerate() {
                item_level_cells[l][h].push(cell);
            }
            users.push(user);
            items.push(item);
            for (pair, &(present, subsequent)) in pairs.iter().enumerate() {
                if !x.label(present).is_positive() {
                    continue;
                }
                let y = x.label(subsequent);
                let cost = weights.cost(present, subsequent, y);
                if cost > 0.0 {
                    rows.push(Row {
                        present,
                        subsequent,
                        pair,
                        y,
                        cost,
                    });
                }
            }
            starts.push(rows.len());
        }
        Ok(Problem {
            users,
            items,
            rows,
            starts,
            user_level_cells,
            item_level_cells,
        })
    }

    fn cell_rows(&self, cell: usize) -> &[Row] {
        &self.rows[self.starts[cell]..self.starts[cell + 1]]
    }

    fn objective(&self, params: &ModelParams, hyper: &HyperParams) -> f64 {
        let mut loss = 0.0;
        for cell in 0..self.users.len() {
            let rows = self.cell_rows(cell);
            if rows.is_empty() {
                continue;
            }
            let a = user_latent(params, self.users[cell], None);
            let b = item_latent(params, self.items[cell], None);
            let f = params.decision_values_latent(&a, &b);
            for r in rows {
                loss += r.cost * hinge(r.y.as_f64() * f[r.pair]);
            }
        }
        loss + params.penalty(hyper.lambda1, hyper.lambda2, hyper.lambda3)
    }
}

/// `A u + Σ_l a_{l, s_l}`, optionally leaving out the linear part or one categorical feature.
#[derive(Clone, Copy)]
enum Omit {
    Linear,
    Feature(usize),
}

fn latent(
    linear: &[Vec<f64>],
    factors: &[Vec<Vec<f64>>],
    features: &Features,
    k: usize,
    omit: Option<Omit>,
) -> Vec<f64> {
    let mut out = vec![0.0; k];
    if !matches!(omit, Some(Omit::Linear)) {
        for (o, row) in out.iter_mut().zip(linear) {
            *o = row.iter().zip(&features.numeric).map(|(w, x)| w * x).sum();
        }
    }
    for (l, (levels, &h)) in factors.iter().zip(&features.categories).enumerate() {
        if matches!(omit, Some(Omit::Feature(m)) if m == l) {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&levels[h]) {
            *o += v;
        }
    }
    out
}

fn user_latent(params: &ModelParams, user: &Features, omit: Option<Omit>) -> Vec<f64> {
    latent(&params.user_linear, &params.user_factors, user, params.k, omit)
}

fn item_latent(params: &ModelParams, item: &Features, omit: Option<Omit>) -> Vec<f64> {
    latent(&params.item_linear, &params.item_factors, item, params.k, omit)
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `q_{t't}` for every pair.
fn stage_vectors(params: &ModelParams) -> Vec<Vec<f64>> {
    stage_pairs(params.schema.stages)
        .into_iter()
        .map(|(tp, t)| params.stage_vector(tp, t).expect("pair from stage_pairs"))
        .collect()
}

fn block_spec(dim: usize, ridge: f64, hyper: &HyperParams, samples: Vec<Sample>) -> SubproblemSpec {
    SubproblemSpec::nonnegative(dim, ridge)
        .with_samples(samples)
        .with_tolerance(hyper.solver_tol, hyper.solver_max_iter)
}

/// Side of the factorization a linear or level block belongs to.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    User,
    Item,
}

impl<'a> Problem<'a> {
    fn own(&self, side: Side, cell: usize) -> &'a Features {
        match side {
            Side::User => self.users[cell],
            Side::Item => self.items[cell],
        }
    }

    fn own_latent(&self, side: Side, params: &ModelParams, cell: usize, omit: Option<Omit>) -> Vec<f64> {
        match side {
            Side::User => user_latent(params, self.users[cell], omit),
            Side::Item => item_latent(params, self.items[cell], omit),
        }
    }

    fn other_latent(&self, side: Side, params: &ModelParams, cell: usize) -> Vec<f64> {
        match side {
            Side::User => item_latent(params, self.items[cell], None),
            Side::Item => user_latent(params, self.users[cell], None),
        }
    }

    /// A or B: feature `x ⊗ (other ∘ q_{t't})` over column-stacked vec, drift from the categorical part.
    fn linear_block(&self, side: Side, params: &ModelParams, qs: &[Vec<f64>], hyper: &HyperParams) -> SubproblemSpec {
        let k = params.k;
        let p = match side {
            Side::User => params.schema.p1,
            Side::Item => params.schema.p2,
        };
        let mut samples = Vec::new();
        if p > 0 {
            for cell in 0..self.users.len() {
                let rows = self.cell_rows(cell);
                if rows.is_empty() {
                    continue;
                }
                let fixed = self.own_latent(side, params, cell, Some(Omit::Linear));
                let other = self.other_latent(side, params, cell);
                let numeric = &self.own(side, cell).numeric;
                for r in rows {
                    let w = hadamard(&other, &qs[r.pair]);
                    let mut x = Vec::with_capacity(p * k);
                    for &xj in numeric {
                        x.extend(w.iter().map(|wk| xj * wk));
                    }
                    samples.push(Sample::new(x, r.y, r.cost, dot(&fixed, &w)));
                }
            }
        }
        block_spec(p * k, hyper.lambda1, hyper, samples)
    }

    /// a(l, h) or b(l, h): feature `other ∘ q_{t't}` over cells at that level.
    fn level_block(
        &self,
        side: Side,
        feature: usize,
        level: usize,
        params: &ModelParams,
        qs: &[Vec<f64>],
        hyper: &HyperParams,
    ) -> SubproblemSpec {
        let cells = match side {
            Side::User => &self.user_level_cells[feature][level],
            Side::Item => &self.item_level_cells[feature][level],
        };
        let mut samples = Vec::new();
        for &cell in cells {
            let rows = self.cell_rows(cell);
            if rows.is_empty() {
                continue;
            }
            let fixed = self.own_latent(side, params, cell, Some(Omit::Feature(feature)));
            let other = self.other_latent(side, params, cell);
            for r in rows {
                let w = hadamard(&other, &qs[r.pair]);
                let drift = dot(&fixed, &w);
                samples.push(Sample::new(w, r.y, r.cost, drift));
            }
        }
        block_spec(params.k, hyper.lambda2, hyper, samples)
    }

    /// q(r): feature `−(a∘b)`, drift `(1 − Σ_{r'≠r} q_{r'})·(a∘b)` over pairs with `t' < r ≤ t`.
    fn stage_block(&self, r: usize, params: &ModelParams, hyper: &HyperParams) -> SubproblemSpec {
        let k = params.k;
        let mut samples = Vec::new();
        for cell in 0..self.users.len() {
            let rows: Vec<&Row> = self
                .cell_rows(cell)
                .iter()
                .filter(|row| row.present < r && r <= row.subsequent)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let ab = hadamard(
                &user_latent(params, self.users[cell], None),
                &item_latent(params, self.items[cell], None),
            );
            for row in rows {
                let mut rest = vec![1.0; k];
                for rp in row.present + 1..=row.subsequent {
                    if rp != r {
                        for (v, q) in rest.iter_mut().zip(&params.stage_factors[rp - 1]) {
                            *v -= q;
                        }
                    }
                }
                let x: Vec<f64> = ab.iter().map(|v| -v).collect();
                samples.push(Sample::new(x, row.y, row.cost, dot(&rest, &ab)));
            }
        }
        block_spec(k, hyper.lambda3, hyper, samples)
    }

    fn assemble(&self, block: BlockId, params: &ModelParams, hyper: &HyperParams) -> SubproblemSpec {
        match block {
            BlockId::UserLinear => self.linear_block(Side::User, params, &stage_vectors(params), hyper),
            BlockId::ItemLinear => self.linear_block(Side::Item, params, &stage_vectors(params), hyper),
            BlockId::UserLevel { feature, level } => {
                self.level_block(Side::User, feature, level, params, &stage_vectors(params), hyper)
            }
            BlockId::ItemLevel { feature, level } => {
                self.level_block(Side::Item, feature, level, params, &stage_vectors(params), hyper)
            }
            BlockId::Stage(r) => self.stage_block(r, params, hyper),
        }
    }
}

/// Current value of a block as the solver sees it (A and B column-stacked).
pub fn block_value(params: &ModelParams, block: BlockId) -> Vec<f64> {
    match block {
        BlockId::UserLinear => column_stack(&params.user_linear),
        BlockId::ItemLinear => column_stack(&params.item_linear),
        BlockId::UserLevel { feature, level } => params.user_factors[feature][level].clone(),
        BlockId::ItemLevel { feature, level } => params.item_factors[feature][level].clone(),
        BlockId::Stage(r) => params.stage_factors[r - 1].clone(),
    }
}

pub fn set_block_value(params: &mut ModelParams, block: BlockId, beta: &[f64]) {
    match block {
        BlockId::UserLinear => unstack(&mut params.user_linear, beta),
        BlockId::ItemLinear => unstack(&mut params.item_linear, beta),
        BlockId::UserLevel { feature, level } => {
            params.user_factors[feature][level].copy_from_slice(beta)
        }
        BlockId::ItemLevel { feature, level } => {
            params.item_factors[feature][level].copy_from_slice(beta)
        }
        BlockId::Stage(r) => params.stage_factors[r - 1].copy_from_slice(beta),
    }
}

fn column_stack(m: &[Vec<f64>]) -> Vec<f64> {
    let k = m.len();
    let p = m.first().map_or(0, Vec::len);
    let mut out = vec![0.0; k * p];
    for (row, values) in m.iter().enumerate() {
        for (j, v) in values.iter().enumerate() {
            out[j * k + row] = *v;
        }
    }
    out
}

fn unstack(m: &mut [Vec<f64>], beta: &[f64]) {
    let k = m.len();
    for (row, values) in m.iter_mut().enumerate() {
        for (j, v) in values.iter_mut().enumerate() {
            *v = beta[j * k + row];
        }
    }
}

/// The block's canonical subproblem with every other block fixed at `params`.
pub fn assemble_block(
    block: BlockId,
    params: &ModelParams,
    dataset: &Dataset,
    hyper: &HyperParams,
) -> Result<SubproblemSpec> {
    check_inputs(dataset, params, hyper)?;
    block.check(dataset.schema())?;
    let problem = Problem::new(dataset, hyper)?;
    Ok(problem.assemble(block, params, hyper))
}

fn check_inputs(dataset: &Dataset, params: &ModelParams, hyper: &HyperParams) -> Result<()> {
    params.validate()?;
    if &params.schema != dataset.schema() {
        return Err(Error::SchemaMismatch);
    }
    if params.k != hyper.k {
        return Err(Error::InvalidInput(format!(
            "model has K = {}, hyperparameters ask for K = {}",
            params.k, hyper.k
        )));
    }
    hyper.validate(dataset.stages())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Levels of one categorical feature are solved concurrently.
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub seconds: f64,
    pub subproblems: usize,
    pub unconverged: usize,
    pub rejected: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Entry 0 is the starting point.
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.objective).collect()
    }

    /// True when no step raises the objective by more than `slack`.
    pub fn is_descending(&self, slack: f64) -> bool {
        self.entries.windows(2).all(|w| w[1].objective <= w[0].objective + slack)
    }

    pub fn final_objective(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.objective)
    }

    /// One `iteration objective seconds` line per entry.
    pub fn to_log(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {:.12e} {:.6}\n", e.iteration, e.objective, e.seconds))
            .collect()
    }
}

struct BlockOutcome {
    beta: Option<Vec<f64>>,
    alpha: Vec<f64>,
    converged: bool,
}

fn solve_block(spec: &SubproblemSpec, current: &[f64], warm: Option<&Vec<f64>>) -> Result<BlockOutcome> {
    if spec.dim == 0 {
        return Ok(BlockOutcome {
            beta: None,
            alpha: Vec::new(),
            converged: true,
        });
    }
    let warm = warm.filter(|w| w.len() == spec.samples.len()).map(Vec::as_slice);
    let solution = solve_subproblem_warm(spec, warm)?;
    let before = primal_objective(spec, current)?;
    let beta = if solution.primal_objective < before {
        Some(solution.beta)
    } else {
        segment_minimum(spec, current, &solution.beta, before)
    };
    Ok(BlockOutcome {
        beta,
        alpha: solution.alpha,
        converged: solution.converged,
    })
}

/// Exact minimizer of the block objective on the segment `[current, candidate]`, if it
/// beats `current`. The segment stays inside the nonnegative orthant.
fn segment_minimum(spec: &SubproblemSpec, current: &[f64], candidate: &[f64], before: f64) -> Option<Vec<f64>> {
    let dir: Vec<f64> = candidate.iter().zip(current).map(|(c, b)| c - b).collect();
    let dd: f64 = dir.iter().map(|d| d * d).sum();
    if dd == 0.0 {
        return None;
    }
    let bd: f64 = current.iter().zip(&dir).map(|(b, d)| b * d).sum();
    // hinge k is active while y·m0 + t·y·dm < 1
    let mut slope0 = 2.0 * spec.ridge * bd;
    let mut kinks = Vec::new();
    for s in spec.samples.iter().filter(|s| s.cost > 0.0) {
        let y = s.y.as_f64();
        let m0 = y * (dot(current, &s.x) + s.drift);
        let dm = y * dot(&dir, &s.x);
        let active = m0 < 1.0 || (m0 == 1.0 && dm < 0.0);
        if active {
            slope0 -= s.cost * dm;
        }
        if dm != 0.0 {
            let t = (1.0 - m0) / dm;
            if t > 0.0 && t < 1.0 {
                // crossing adds c·|dm| to the slope
                kinks.push((t, s.cost * dm.abs()));
            }
        }
    }
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let curvature = 2.0 * spec.ridge * dd;
    let mut slope = slope0;
    let mut start = 0.0;
    let mut t_best = 1.0;
    for (t, jump) in kinks.into_iter().chain(std::iter::once((1.0, 0.0))) {
        let end_slope = slope + curvature * (t - start);
        if end_slope >= 0.0 {
            t_best = if slope >= 0.0 { start } else { start - slope / curvature };
            break;
        }
        slope = end_slope + jump;
        start = t;
        if slope >= 0.0 {
            t_best = t;
            break;
        }
    }
    if t_best <= 0.0 {
        return None;
    }
    let beta: Vec<f64> = current
        .iter()
        .zip(&dir)
        .map(|(b, d)| (b + t_best * d).max(0.0))
        .collect();
    (primal_objective(spec, &beta).ok()? < before).then_some(beta)
}

#[derive(Default)]
struct PassStats {
    subproblems: usize,
    unconverged: usize,
    rejected: usize,
}

impl PassStats {
    fn record(&mut self, outcome: &BlockOutcome) {
        self.subproblems += 1;
        self.unconverged += usize::from(!outcome.converged);
        self.rejected += usize::from(outcome.beta.is_none());
    }
}

fn run_block(
    problem: &Problem,
    params: &mut ModelParams,
    hyper: &HyperParams,
    block: BlockId,
    duals: &mut HashMap<BlockId, Vec<f64>>,
    stats: &mut PassStats,
) -> Result<()> {
    let spec = problem.assemble(block, params, hyper);
    let outcome = solve_block(&spec, &block_value(params, block), duals.get(&block))?;
    stats.record(&outcome);
    if let Some(beta) = &outcome.beta {
        set_block_value(params, block, beta);
    }
    duals.insert(block, outcome.alpha);
    Ok(())
}

fn outer_pass(
    problem: &Problem,
    params: &mut ModelParams,
    hyper: &HyperParams,
    duals: &mut HashMap<BlockId, Vec<f64>>,
    exec: Execution,
) -> Result<PassStats> {
    let mut stats = PassStats::default();
    let schema = params.schema.clone();
    run_block(problem, params, hyper, BlockId::UserLinear, duals, &mut stats)?;
    for (l, &n) in schema.user_cardinalities.iter().enumerate() {
        let blocks: Vec<BlockId> = (0..n).map(|h| BlockId::UserLevel { feature: l, level: h }).collect();
        run_levels(problem, params, hyper, &blocks, Side::User, l, duals, exec, &mut stats)?;
    }
    run_block(problem, params, hyper, BlockId::ItemLinear, duals, &mut stats)?;
    for (l, &m) in schema.item_cardinalities.iter().enumerate() {
        let blocks: Vec<BlockId> = (0..m).map(|h| BlockId::ItemLevel { feature: l, level: h }).collect();
        run_levels(problem, params, hyper, &blocks, Side::Item, l, duals, exec, &mut stats)?;
    }
    for r in 1..=schema.stages {
        run_block(problem, params, hyper, BlockId::Stage(r), duals, &mut stats)?;
    }
    Ok(stats)
}

/// All levels of one categorical feature against one snapshot.
#[allow(clippy::too_many_arguments)]
fn run_levels(
    problem: &Problem,
    params: &mut ModelParams,
    hyper: &HyperParams,
    blocks: &[BlockId],
    side: Side,
    feature: usize,
    duals: &mut HashMap<BlockId, Vec<f64>>,
    exec: Execution,
    stats: &mut PassStats,
) -> Result<()> {
    let snapshot: &ModelParams = params;
    let qs = stage_vectors(snapshot);
    let solve = |block: &BlockId| -> Result<BlockOutcome> {
        let level = match *block {
            BlockId::UserLevel { level, .. } | BlockId::ItemLevel { level, .. } => level,
            _ => unreachable!("level blocks only"),
        };
        let spec = problem.level_block(side, feature, level, snapshot, &qs, hyper);
        solve_block(&spec, &block_value(snapshot, *block), duals.get(block))
    };
    let outcomes: Vec<Result<BlockOutcome>> = match exec {
        Execution::Sequential => blocks.iter().map(solve).collect(),
        Execution::Parallel => blocks.par_iter().map(solve).collect(),
    };
    for (block, outcome) in blocks.iter().zip(outcomes) {
        let outcome = outcome?;
        stats.record(&outcome);
        if let Some(beta) = &outcome.beta {
            set_block_value(params, *block, beta);
        }
        duals.insert(*block, outcome.alpha);
    }
    Ok(())
}

/// Fits from [`init_params`] with levels solved in parallel.
pub fn fit(dataset: &Dataset, hyper: &HyperParams) -> Result<(ModelParams, TrainTrace)> {
    fit_with(dataset, hyper, Execution::Parallel)
}

pub fn fit_with(
    dataset: &Dataset,
    hyper: &HyperParams,
    exec: Execution,
) -> Result<(ModelParams, TrainTrace)> {
    let init = init_params(dataset.schema(), hyper.k, hyper.seed)?;
    fit_from(dataset, hyper, init, exec)
}

pub fn fit_from(
    dataset: &Dataset,
    hyper: &HyperParams,
    init: ModelParams,
    exec: Execution,
) -> Result<(ModelParams, TrainTrace)> {
    check_inputs(dataset, &init, hyper)?;
    for (name, v) in [
        ("lambda1", hyper.lambda1),
        ("lambda2", hyper.lambda2),
        ("lambda3", hyper.lambda3),
    ] {
        if v <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "{name} must be positive for training, got {v}"
            )));
        }
    }
    dataset.validate_chain().into_result()?;
    let problem = Problem::new(dataset, hyper)?;

    let start = Instant::now();
    let mut params = init;
    let mut duals = HashMap::new();
    let mut trace = TrainTrace::default();
    let mut objective = problem.objective(&params, hyper);
    trace.entries.push(TraceEntry {
        iteration: 0,
        objective,
        seconds: 0.0,
        subproblems: 0,
        unconverged: 0,
        rejected: 0,
    });
    for iteration in 1..=hyper.max_outer {
        let stats = outer_pass(&problem, &mut params, hyper, &mut duals, exec)?;
        let next = problem.objective(&params, hyper);
        trace.entries.push(TraceEntry {
            iteration,
            objective: next,
            seconds: start.elapsed().as_secs_f64(),
            subproblems: stats.subproblems,
            unconverged: stats.unconverged,
            rejected: stats.rejected,
        });
        let decrement = objective - next;
        objective = next;
        if decrement < hyper.tol_outer {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

/// Largest objective decrease any single block re-solve (from a cold dual, tight tolerance) achieves.
pub fn max_block_improvement(
    dataset: &Dataset,
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<(BlockId, f64)> {
    check_inputs(dataset, params, hyper)?;
    let problem = Problem::new(dataset, hyper)?;
    let mut best = (BlockId::UserLinear, 0.0);
    for block in BlockId::all(dataset.schema()) {
        let spec = problem.assemble(block, params, hyper);
        if spec.dim == 0 {
            continue;
        }
        let spec = SubproblemSpec {
            tol: hyper.solver_tol.min(1e-6),
            max_iter: hyper.solver_max_iter.max(10_000),
            order: VisitOrder::Cyclic,
            ..spec
        };
        let before = primal_objective(&spec, &block_value(params, block))?;
        let after = solve_subproblem_warm(&spec, None)?.primal_objective;
        if before - after > best.1 {
            best = (block, before - after);
        }
    }
    Ok(best)
}

/// Regularized objective computed on the training layout; equals [`crate::model::model_objective`].
pub fn training_objective(dataset: &Dataset, params: &ModelParams, hyper: &HyperParams) -> Result<f64> {
    check_inputs(dataset, params, hyper)?;
    Ok(Problem::new(dataset, hyper)?.objective(params, hyper))
}

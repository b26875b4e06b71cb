//! Holdout tuning and the three-way benchmark on a single split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineOptions, OrdinalModel, OrdinalStage, StandardModel};
use crate::data::{stage_pairs, Dataset, SplitRatios};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, pair_counts, predict, EvalReport};
use crate::model::{HyperParams, Method, ModelParams};
use crate::persist::TrainedModel;
use crate::trainer::{fit_with, Execution, TrainTrace};

/// Ridge grid for the proposed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            lambda1: vec![0.001, 0.005, 0.01],
            lambda2: vec![0.01, 0.05, 0.1],
            lambda3: vec![0.0001, 0.0005, 0.001],
        }
    }
}

/// Ridge grid shared by both baselines.
pub const BASELINE_GRID: [f64; 12] = [
    0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0,
];

fn parse_list(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("cannot parse grid value `{v}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!("grid `{text}` must list positive values")));
    }
    Ok(values)
}

impl LambdaGrid {
    /// `l1=a,b;l2=c;l3=d,e`; axes left out keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = LambdaGrid::default();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("grid axis `{part}` needs `=`")))?;
            let values = parse_list(values)?;
            match key.trim() {
                "l1" | "lambda1" => grid.lambda1 = values,
                "l2" | "lambda2" => grid.lambda2 = values,
                "l3" | "lambda3" => grid.lambda3 = values,
                other => return Err(Error::InvalidInput(format!("unknown grid axis `{other}`"))),
            }
        }
        Ok(grid)
    }

    pub fn single(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        LambdaGrid {
            lambda1: vec![lambda1],
            lambda2: vec![lambda2],
            lambda3: vec![lambda3],
        }
    }

    /// Grid points in `λ1`-major order. `λ1` only touches `A` and `B`, so it collapses to
    /// its first value when there are no numeric features.
    pub fn points(&self, has_numeric: bool) -> Vec<(f64, f64, f64)> {
        let l1: &[f64] = if has_numeric {
            &self.lambda1
        } else {
            &self.lambda1[..self.lambda1.len().min(1)]
        };
        let mut out = Vec::new();
        for &a in l1 {
            for &b in &self.lambda2 {
                for &c in &self.lambda3 {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub validation_error: f64,
    pub trace: TrainTrace,
}

#[derive(Clone, Debug)]
pub struct TunedProposed {
    pub hyper: HyperParams,
    pub params: ModelParams,
    pub trace: TrainTrace,
    pub scores: Vec<GridScore>,
}

fn validation_error(model: &TrainedModel, val: &Dataset, hyper: &HyperParams) -> Result<f64> {
    evaluate_model(model, val, &hyper.weights)?
        .overall_error
        .ok_or_else(|| Error::EmptyTrainingSet("validation set has no evaluable stage pair".into()))
}

/// Fits every grid point on `train` and keeps the lowest validation overall error
/// (earliest point on ties).
pub fn tune_proposed(
    train: &Dataset,
    val: &Dataset,
    base: &HyperParams,
    grid: &LambdaGrid,
    exec: Execution,
) -> Result<TunedProposed> {
    let schema = train.schema();
    let points = grid.points(schema.p1 + schema.p2 > 0);
    if points.is_empty() {
        return Err(Error::InvalidInput("tuning grid is empty".into()));
    }
    let run = |&(l1, l2, l3): &(f64, f64, f64)| -> Result<(HyperParams, ModelParams, TrainTrace, f64)> {
        let hyper = base.clone().with_lambdas(l1, l2, l3);
        let (params, trace) = fit_with(train, &hyper, exec)?;
        let err = validation_error(&TrainedModel::Proposed(params.clone()), val, &hyper)?;
        Ok((hyper, params, trace, err))
    };
    let fits: Vec<Result<_>> = match exec {
        Execution::Sequential => points.iter().map(run).collect(),
        Execution::Parallel => points.par_iter().map(run).collect(),
    };
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let scores = fits
        .iter()
        .map(|(h, _, t, e)| GridScore {
            lambda1: h.lambda1,
            lambda2: h.lambda2,
            lambda3: h.lambda3,
            validation_error: *e,
            trace: t.clone(),
        })
        .collect();
    let best = fits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .3.total_cmp(&b.1 .3).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    let (hyper, params, trace, _) = fits.into_iter().nth(best).expect("index in range");
    Ok(TunedProposed {
        hyper,
        params,
        trace,
        scores,
    })
}

fn argmin(values: &[Option<f64>]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if values[best].is_none_or(|b| *v < b) {
                best = i;
            }
        }
    }
    best
}

/// Per-pair ridge chosen by validation error of that pair.
pub fn tune_standard(train: &Dataset, val: &Dataset, grid: &[f64], opts: &BaselineOptions) -> Result<StandardModel> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("baseline grid is empty".into()));
    }
    let pairs = stage_pairs(train.stages());
    let fits = grid
        .par_iter()
        .map(|&l| StandardModel::fit(train, &vec![l; pairs.len()], opts))
        .collect::<Result<Vec<_>>>()?;
    let mut errors = Vec::with_capacity(fits.len());
    for m in &fits {
        let preds = predict(&TrainedModel::Standard(m.clone()), val)?;
        errors.push(
            pairs
                .iter()
                .map(|&(tp, t)| Ok(pair_counts(&preds, val, tp, t)?.error_rate()))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let mut weights = Vec::with_capacity(pairs.len());
    let mut lambdas = Vec::with_capacity(pairs.len());
    for p in 0..pairs.len() {
        let column: Vec<Option<f64>> = errors.iter().map(|e| e[p]).collect();
        let best = argmin(&column);
        weights.push(fits[best].weights[p].clone());
        lambdas.push(grid[best]);
    }
    Ok(StandardModel {
        schema: train.schema().clone(),
        weights,
        lambdas,
    })
}

/// Per-present-stage ridge chosen by the pooled validation error of that stage's pairs.
pub fn tune_ordinal(
    train: &Dataset,
    val: &Dataset,
    grid: &[f64],
    hyper: &HyperParams,
    opts: &BaselineOptions,
) -> Result<OrdinalModel> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("baseline grid is empty".into()));
    }
    let stages = train.stages();
    let weights = hyper.weights.values().to_vec();
    let fits = grid
        .par_iter()
        .map(|&l| OrdinalModel::fit(train, &vec![l; stages], &weights, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut errors: Vec<Vec<Option<f64>>> = Vec::with_capacity(fits.len());
    for m in &fits {
        let preds = predict(&TrainedModel::Ordinal(m.clone()), val)?;
        let mut per_stage = Vec::with_capacity(stages);
        for tp in 0..stages {
            let (mut num, mut den) = (0.0, 0.0);
            for t in tp + 1..=stages {
                let c = pair_counts(&preds, val, tp, t)?;
                let w = hyper.weights.get(tp, t);
                num += w * c.errors() as f64;
                den += w * c.count() as f64;
            }
            per_stage.push((den > 0.0).then(|| num / den));
        }
        errors.push(per_stage);
    }
    let chosen: Vec<OrdinalStage> = (0..stages)
        .map(|tp| {
            let column: Vec<Option<f64>> = errors.iter().map(|e| e[tp]).collect();
            fits[argmin(&column)].stages[tp].clone()
        })
        .collect();
    Ok(OrdinalModel {
        schema: train.schema().clone(),
        stages: chosen,
    })
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub ratios: SplitRatios,
    pub split_seed: u64,
    pub hyper: HyperParams,
    pub grid: LambdaGrid,
    pub baseline_grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub baseline: BaselineOptions,
    pub exec: Execution,
}

impl BenchmarkConfig {
    pub fn new(hyper: HyperParams) -> Self {
        let baseline = BaselineOptions {
            class_balance: hyper.class_balance,
            ..BaselineOptions::default()
        };
        BenchmarkConfig {
            ratios: SplitRatios::standard_split(),
            split_seed: hyper.seed,
            hyper,
            grid: LambdaGrid::default(),
            baseline_grid: BASELINE_GRID.to_vec(),
            methods: vec![Method::Proposed, Method::Standard, Method::Ordinal],
            baseline,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub method: Method,
    pub model: TrainedModel,
    pub report: EvalReport,
    /// Present for the proposed method.
    pub trace: Option<TrainTrace>,
    pub hyper: Option<HyperParams>,
    /// Every grid point tried for the proposed method.
    pub scores: Vec<GridScore>,
}

/// Splits once, then tunes and tests every requested method on the same parts.
pub fn benchmark(dataset: &Dataset, config: &BenchmarkConfig) -> Result<Vec<BenchmarkRun>> {
    let (train, val, test) = dataset.split(config.ratios, config.split_seed)?;
    config
        .methods
        .iter()
        .map(|&method| {
            let mut scores = Vec::new();
            let (model, trace, hyper) = match method {
                Method::Proposed => {
                    let tuned = tune_proposed(&train, &val, &config.hyper, &config.grid, config.exec)?;
                    scores = tuned.scores;
                    (
                        TrainedModel::Proposed(tuned.params),
                        Some(tuned.trace),
                        Some(tuned.hyper),
                    )
                }
                Method::Standard => (
                    TrainedModel::Standard(tune_standard(&train, &val, &config.baseline_grid, &config.baseline)?),
                    None,
                    None,
                ),
                Method::Ordinal => (
                    TrainedModel::Ordinal(tune_ordinal(
                        &train,
                        &val,
                        &config.baseline_grid,
                        &config.hyper,
                        &config.baseline,
                    )?),
                    None,
                    None,
                ),
            };
            let report = evaluate_model(&model, &test, &config.hyper.weights)?;
            Ok(BenchmarkRun {
                method,
                model,
                report,
                trace,
                hyper,
                scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_collapse() {
        let g = LambdaGrid::parse("l1=0.1,0.2; l3=1e-3").unwrap();
        assert_eq!(g.lambda1, vec![0.1, 0.2]);
        assert_eq!(g.lambda2, LambdaGrid::default().lambda2);
        assert_eq!(g.lambda3, vec![1e-3]);
        assert_eq!(g.points(true).len(), 2 * 3);
        assert_eq!(g.points(false).len(), 3);
        assert!(LambdaGrid::parse("l4=1").is_err());
        assert!(LambdaGrid::parse("l1=-1").is_err());
        assert!(LambdaGrid::parse("l1=").is_err());
    }

    #[test]
    fn argmin_skips_missing() {
        assert_eq!(argmin(&[None, Some(0.3), Some(0.2), Some(0.2)]), 2);
        assert_eq!(argmin(&[None, None]), 0);
    }
}

//! Linear baselines on one-hot features: one free classifier per stage pair,
//! and the ordinal model with one base vector and nonnegative decrements per present stage.

use serde::{Deserialize, Serialize};

use crate::data::{one_hot_row, stage_pairs, Dataset, FeatureSchema, Features, Label};
use crate::error::{Error, Result};
use crate::solver::{
    hinge, primal_objective, solve_subproblem, solve_subproblem_warm, Bound, Sample, SubproblemSpec,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};

/// Shared solver and balancing settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineOptions {
    pub class_balance: bool,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Passes of the ordinal block descent.
    pub max_passes: usize,
    pub pass_tol: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            class_balance: false,
            solver_tol: DEFAULT_TOL,
            solver_max_iter: DEFAULT_MAX_ITER,
            max_passes: 50,
            pass_tol: 1e-6,
        }
    }
}

struct Design {
    x: Vec<Vec<f64>>,
    /// Labels `y^1..y^T` per row.
    labels: Vec<Vec<Label>>,
}

impl Design {
    fn new(dataset: &Dataset) -> Result<Self> {
        let schema = dataset.schema();
        let mut x = Vec::with_capacity(dataset.len());
        let mut labels = Vec::with_capacity(dataset.len());
        for r in dataset.interactions() {
            x.push(one_hot_row(schema, dataset.user(r.user)?, dataset.item(r.item)?));
            labels.push(r.labels.clone());
        }
        Ok(Design { x, labels })
    }

    fn label(&self, row: usize, stage: usize) -> Label {
        if stage == 0 {
            Label::Positive
        } else {
            self.labels[row][stage - 1]
        }
    }

    fn omega(&self, present: usize) -> Vec<usize> {
        (0..self.x.len())
            .filter(|&r| self.label(r, present).is_positive())
            .collect()
    }
}

/// `[negative, positive]` cost multipliers within one set of rows.
fn balance_factors(labels: impl Iterator<Item = Label>, enabled: bool) -> [f64; 2] {
    let (mut pos, mut neg) = (0usize, 0usize);
    for y in labels {
        if y.is_positive() {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if enabled && pos > 0 && neg > 0 {
        let n = (pos + neg) as f64;
        [n / (2.0 * neg as f64), n / (2.0 * pos as f64)]
    } else {
        [1.0, 1.0]
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("ridge must be positive, got {lambda}")))
    }
}

fn check_pair(stages: usize, present: usize, subsequent: usize) -> Result<()> {
    crate::model::check_pair(stages, present, subsequent)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Separate linear classifier per stage pair, stored in [`stage_pairs`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardModel {
    pub schema: FeatureSchema,
    pub weights: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

fn standard_spec(design: &Design, present: usize, subsequent: usize, lambda: f64, opts: &BaselineOptions) -> Result<SubproblemSpec> {
    let rows = design.omega(present);
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet(format!("Ω_{present} is empty")));
    }
    let width = design.x[0].len();
    let factors = balance_factors(rows.iter().map(|&r| design.label(r, subsequent)), opts.class_balance);
    let base = 1.0 / rows.len() as f64;
    let samples = rows
        .iter()
        .map(|&r| {
            let y = design.label(r, subsequent);
            let c = base * factors[usize::from(y.is_positive())];
            Sample::new(design.x[r].clone(), y, c, 0.0)
        })
        .collect();
    Ok(SubproblemSpec::free(width, lambda)
        .with_samples(samples)
        .with_tolerance(opts.solver_tol, opts.solver_max_iter))
}

/// Hinge plus ridge on Ω_{t'} with mean-normalized costs and free weights.
pub fn fit_standard_pair(
    dataset: &Dataset,
    present: usize,
    subsequent: usize,
    lambda: f64,
    opts: &BaselineOptions,
) -> Result<Vec<f64>> {
    check_pair(dataset.stages(), present, subsequent)?;
    check_lambda(lambda)?;
    let design = Design::new(dataset)?;
    let spec = standard_spec(&design, present, subsequent, lambda, opts)?;
    Ok(solve_subproblem(&spec)?.beta)
}

impl StandardModel {
    /// Fits every pair with its own ridge; a pair whose Ω_{t'} is empty gets the zero vector.
    pub fn fit(dataset: &Dataset, lambdas: &[f64], opts: &BaselineOptions) -> Result<Self> {
        let schema = dataset.schema().clone();
        let pairs = stage_pairs(schema.stages);
        if lambdas.len() != pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: pairs.len(),
                got: lambdas.len(),
            });
        }
        let design = Design::new(dataset)?;
        let mut weights = Vec::with_capacity(pairs.len());
        for (&(tp, t), &lambda) in pairs.iter().zip(lambdas) {
            check_lambda(lambda)?;
            let w = match standard_spec(&design, tp, t, lambda, opts) {
                Ok(spec) => solve_subproblem(&spec)?.beta,
                Err(Error::EmptyTrainingSet(_)) => vec![0.0; schema.one_hot_width()],
                Err(e) => return Err(e),
            };
            weights.push(w);
        }
        Ok(StandardModel {
            schema,
            weights,
            lambdas: lambdas.to_vec(),
        })
    }

    pub fn decision_values_for(&self, user: &Features, item: &Features) -> Vec<f64> {
        let x = one_hot_row(&self.schema, user, item);
        self.weights.iter().map(|w| dot(w, &x)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let pairs = stage_pairs(self.schema.stages).len();
        let width = self.schema.one_hot_width();
        if self.weights.len() != pairs
            || self.lambdas.len() != pairs
            || self.weights.iter().any(|w| w.len() != width)
        {
            return Err(Error::InvalidInput("standard model has the wrong shape".into()));
        }
        if self.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("standard model weights"));
        }
        Ok(())
    }

    pub fn stored_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }
}

/// Model of one present stage: `f^{t't} = (β_0 − Σ_{t_0 = t'+1..t} β_{t_0})·x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalStage {
    pub present: usize,
    pub base: Vec<f64>,
    /// `β_{t'+1}..β_T`, all nonnegative.
    pub decrements: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl OrdinalStage {
    /// `f^{t't}` for `t = t'+1..=T`.
    pub fn decision_values(&self, x: &[f64]) -> Vec<f64> {
        let mut f = dot(&self.base, x);
        self.decrements
            .iter()
            .map(|d| {
                f -= dot(d, x);
                f
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalModel {
    pub schema: FeatureSchema,
    pub stages: Vec<OrdinalStage>,
}

struct OrdinalRows {
    rows: Vec<usize>,
    /// Cost per row and subsequent stage, indexed `[row][t - t' - 1]`.
    costs: Vec<Vec<f64>>,
}

fn ordinal_rows(design: &Design, present: usize, stage_count: usize, weights: &[f64], opts: &BaselineOptions) -> Result<OrdinalRows> {
    let rows = design.omega(present);
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet(format!("Ω_{present} is empty")));
    }
    let normalizer: f64 = weights.iter().sum::<f64>() * rows.len() as f64;
    if normalizer <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "every stage weight for present stage {present} is zero"
        )));
    }
    let factors: Vec<[f64; 2]> = (present + 1..=stage_count)
        .map(|t| balance_factors(rows.iter().map(|&r| design.label(r, t)), opts.class_balance))
        .collect();
    let costs = rows
        .iter()
        .map(|&r| {
            (present + 1..=stage_count)
                .enumerate()
                .map(|(i, t)| {
                    let y = design.label(r, t);
                    weights[i] * factors[i][usize::from(y.is_positive())] / normalizer
                })
                .collect()
        })
        .collect();
    Ok(OrdinalRows { rows, costs })
}

fn ordinal_objective(design: &Design, data: &OrdinalRows, stage: &OrdinalStage) -> f64 {
    let mut loss = 0.0;
    for (&r, costs) in data.rows.iter().zip(&data.costs) {
        let f = stage.decision_values(&design.x[r]);
        for (i, (fv, c)) in f.iter().zip(costs).enumerate() {
            let y = design.label(r, stage.present + 1 + i);
            loss += c * hinge(y.as_f64() * fv);
        }
    }
    let sq = |v: &[f64]| dot(v, v);
    loss + stage.lambda * (sq(&stage.base) + stage.decrements.iter().map(|d| sq(d)).sum::<f64>())
}

/// Block `0` is the base vector, block `i ≥ 1` the decrement for `t' + i`.
fn ordinal_block(design: &Design, data: &OrdinalRows, stage: &OrdinalStage, block: usize, opts: &BaselineOptions) -> SubproblemSpec {
    let width = stage.base.len();
    let mut samples = Vec::new();
    for (&r, costs) in data.rows.iter().zip(&data.costs) {
        let x = &design.x[r];
        let base = dot(&stage.base, x);
        let decs: Vec<f64> = stage.decrements.iter().map(|d| dot(d, x)).collect();
        for (i, &c) in costs.iter().enumerate() {
            // f^{t', t'+1+i} involves decrements 0..=i
            if block > 0 && block - 1 > i {
                continue;
            }
            let y = design.label(r, stage.present + 1 + i);
            let removed: f64 = decs[..=i]
                .iter()
                .enumerate()
                .filter(|&(j, _)| block == 0 || j != block - 1)
                .map(|(_, v)| v)
                .sum();
            let (features, drift) = if block == 0 {
                (x.clone(), -removed)
            } else {
                (x.iter().map(|v| -v).collect(), base - removed)
            };
            samples.push(Sample::new(features, y, c, drift));
        }
    }
    let bound = if block == 0 { Bound::Free } else { Bound::NonNegative };
    SubproblemSpec::new(width, stage.lambda, vec![bound; width])
        .with_samples(samples)
        .with_tolerance(opts.solver_tol, opts.solver_max_iter)
}

fn block_mut(stage: &mut OrdinalStage, block: usize) -> &mut Vec<f64> {
    if block == 0 {
        &mut stage.base
    } else {
        &mut stage.decrements[block - 1]
    }
}

/// Block coordinate descent from zero; `weights` covers `t = t'+1..=T`.
/// Returns the stage model and its objective after each pass (entry 0 is the start).
pub fn fit_ordinal_stage(
    dataset: &Dataset,
    present: usize,
    lambda: f64,
    weights: &[f64],
    opts: &BaselineOptions,
) -> Result<(OrdinalStage, Vec<f64>)> {
    let design = Design::new(dataset)?;
    fit_ordinal_stage_on(&design, dataset.stages(), present, lambda, weights, opts)
}

fn fit_ordinal_stage_on(
    design: &Design,
    stage_count: usize,
    present: usize,
    lambda: f64,
    weights: &[f64],
    opts: &BaselineOptions,
) -> Result<(OrdinalStage, Vec<f64>)> {
    if present >= stage_count {
        return Err(Error::StageOutOfRange {
            stage: present,
            stages: stage_count,
        });
    }
    check_lambda(lambda)?;
    if weights.len() != stage_count - present || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "ordinal stage {present} needs {} nonnegative weights",
            stage_count - present
        )));
    }
    let data = ordinal_rows(design, present, stage_count, weights, opts)?;
    let width = design.x[0].len();
    let mut stage = OrdinalStage {
        present,
        base: vec![0.0; width],
        decrements: vec![vec![0.0; width]; stage_count - present],
        lambda,
    };
    let mut duals: Vec<Option<Vec<f64>>> = vec![None; stage_count - present + 1];
    let mut objective = ordinal_objective(design, &data, &stage);
    let mut trace = vec![objective];
    for _ in 0..opts.max_passes {
        for block in 0..=stage_count - present {
            let spec = ordinal_block(design, &data, &stage, block, opts);
            let current = block_mut(&mut stage, block).clone();
            let solution = solve_subproblem_warm(&spec, duals[block].as_deref())?;
            if solution.primal_objective < primal_objective(&spec, &current)? {
                *block_mut(&mut stage, block) = solution.beta;
            }
            duals[block] = Some(solution.alpha);
        }
        let next = ordinal_objective(design, &data, &stage);
        trace.push(next);
        let decrement = objective - next;
        objective = next;
        if decrement < opts.pass_tol {
            break;
        }
    }
    Ok((stage, trace))
}

impl OrdinalModel {
    /// `lambdas` has one entry per present stage `0..T`; `weights` in [`stage_pairs`] order.
    /// A present stage with no training rows or no positive weight keeps the zero model.
    pub fn fit(dataset: &Dataset, lambdas: &[f64], weights: &[f64], opts: &BaselineOptions) -> Result<Self> {
        let schema = dataset.schema().clone();
        let stage_count = schema.stages;
        if lambdas.len() != stage_count {
            return Err(Error::DimensionMismatch {
                expected: stage_count,
                got: lambdas.len(),
            });
        }
        let pairs = stage_pairs(stage_count);
        if weights.len() != pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: pairs.len(),
                got: weights.len(),
            });
        }
        let design = Design::new(dataset)?;
        let width = schema.one_hot_width();
        let mut stages = Vec::with_capacity(stage_count);
        for (present, &lambda) in lambdas.iter().enumerate() {
            let w: Vec<f64> = pairs
                .iter()
                .zip(weights)
                .filter(|((tp, _), _)| *tp == present)
                .map(|(_, &w)| w)
                .collect();
            let zero = || OrdinalStage {
                present,
                base: vec![0.0; width],
                decrements: vec![vec![0.0; width]; stage_count - present],
                lambda,
            };
            let fitted = if w.iter().all(|&v| v == 0.0) {
                zero()
            } else {
                match fit_ordinal_stage_on(&design, stage_count, present, lambda, &w, opts) {
                    Ok((stage, _)) => stage,
                    Err(Error::EmptyTrainingSet(_)) => zero(),
                    Err(e) => return Err(e),
                }
            };
            stages.push(fitted);
        }
        Ok(OrdinalModel { schema, stages })
    }

    pub fn decision_values_for(&self, user: &Features, item: &Features) -> Vec<f64> {
        let x = one_hot_row(&self.schema, user, item);
        let mut out = Vec::with_capacity(stage_pairs(self.schema.stages).len());
        for stage in &self.stages {
            out.extend(stage.decision_values(&x));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let t = self.schema.stages;
        let width = self.schema.one_hot_width();
        let shape_ok = self.stages.len() == t
            && self.stages.iter().enumerate().all(|(tp, s)| {
                s.present == tp
                    && s.base.len() == width
                    && s.decrements.len() == t - tp
                    && s.decrements.iter().all(|d| d.len() == width)
            });
        if !shape_ok {
            return Err(Error::InvalidInput("ordinal model has the wrong shape".into()));
        }
        let values = self
            .stages
            .iter()
            .flat_map(|s| s.base.iter().chain(s.decrements.iter().flatten()));
        if values.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ordinal model weights"));
        }
        if self
            .stages
            .iter()
            .flat_map(|s| s.decrements.iter().flatten())
            .any(|v| *v < 0.0)
        {
            return Err(Error::InvalidInput("ordinal decrements must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn stored_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.base.len() + s.decrements.iter().map(Vec::len).sum::<usize>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use std::collections::BTreeMap;

    fn toy() -> Dataset {
        let schema = FeatureSchema::new(0, 0, vec![2], vec![2], 2).unwrap();
        let users = BTreeMap::from([
            (0, Features::new(vec![], vec![0])),
            (1, Features::new(vec![], vec![1])),
        ]);
        let items = BTreeMap::from([
            (0, Features::new(vec![], vec![0])),
            (1, Features::new(vec![], vec![1])),
        ]);
        use Label::*;
        let interactions = vec![
            Interaction::new(0, 0, vec![Positive, Positive]),
            Interaction::new(0, 1, vec![Positive, Negative]),
            Interaction::new(1, 0, vec![Negative, Negative]),
            Interaction::new(1, 1, vec![Positive, Positive]),
        ];
        Dataset::new(schema, users, items, interactions).unwrap()
    }

    #[test]
    fn singleton_gets_positive_margin() {
        let d = toy();
        let one = d.with_interactions(vec![d.interactions()[0].clone()]).unwrap();
        let w = fit_standard_pair(&one, 0, 1, 1e-3, &BaselineOptions::default()).unwrap();
        let x = one_hot_row(one.schema(), one.user(0).unwrap(), one.item(0).unwrap());
        assert!(dot(&w, &x) > 0.0);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let d = toy();
        let w = fit_standard_pair(&d, 0, 2, 1e8, &BaselineOptions::default()).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn empty_omega_is_an_error() {
        let d = toy();
        let none = d
            .with_interactions(vec![Interaction::new(1, 0, vec![Label::Negative, Label::Negative])])
            .unwrap();
        assert!(matches!(
            fit_standard_pair(&none, 1, 2, 1.0, &BaselineOptions::default()),
            Err(Error::EmptyTrainingSet(_))
        ));
        assert!(fit_ordinal_stage(&none, 1, 1.0, &[1.0], &BaselineOptions::default()).is_err());
    }

    #[test]
    fn ordinal_descends_and_keeps_decrements_nonnegative() {
        let d = toy();
        let (stage, trace) = fit_ordinal_stage(&d, 0, 0.01, &[1.0, 1.0], &BaselineOptions::default()).unwrap();
        assert!(stage.decrements.iter().flatten().all(|v| *v >= 0.0));
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn model_shapes() {
        let d = toy();
        let opts = BaselineOptions::default();
        let s = StandardModel::fit(&d, &[0.1; 3], &opts).unwrap();
        assert!(s.validate().is_ok());
        assert_eq!(s.stored_count(), 4 * 3);
        let o = OrdinalModel::fit(&d, &[0.1; 2], &[1.0; 3], &opts).unwrap();
        assert!(o.validate().is_ok());
        // (T − t' + 1) vectors per present stage
        assert_eq!(o.stored_count(), 4 * (3 + 2));
        let f = o.decision_values_for(d.user(0).unwrap(), d.item(0).unwrap());
        assert_eq!(f.len(), 3);
        assert!(f[1] <= f[0]);
    }
}

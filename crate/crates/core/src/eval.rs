//! Multistage error rates, prediction inconsistency and class-balanced error.
//!
//! A test cell `(i, j) ∈ Ω_{t'}` counts as an error for pair `(t', t)` when the
//! predicted label `sign(f^{t't})`, with `sign(0) = −1`, differs from `y^t`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{pair_index, stage_pairs, Dataset, Features, ItemId, Label, UserId};
use crate::error::{Error, Result};
use crate::model::{predict_label, Method, StageWeights};
use crate::persist::TrainedModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub user: UserId,
    pub item: ItemId,
    /// `f^{t't}` in pair order.
    pub f: Vec<f64>,
    /// `φ^{t't}` in pair order.
    pub phi: Vec<Label>,
    /// True where `y^{t'}` was not observed and taken as `+1`.
    pub assumed: Vec<bool>,
}

impl CellPrediction {
    /// `labels` holds `y^1..y^T` when observed.
    pub fn new(stages: usize, user: UserId, item: ItemId, f: Vec<f64>, labels: Option<&[Label]>) -> Self {
        let pairs = stage_pairs(stages);
        let mut phi = Vec::with_capacity(pairs.len());
        let mut assumed = Vec::with_capacity(pairs.len());
        for (&(tp, _), &fv) in pairs.iter().zip(&f) {
            let present = match (tp, labels) {
                (0, _) => Some(Label::Positive),
                (_, Some(y)) => Some(y[tp - 1]),
                (_, None) => None,
            };
            assumed.push(present.is_none());
            phi.push(predict_label(fv, present.unwrap_or(Label::Positive)));
        }
        CellPrediction {
            user,
            item,
            f,
            phi,
            assumed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePairPredictions {
    pub method: Method,
    pub stages: usize,
    pub cells: Vec<CellPrediction>,
}

pub fn predict_cell(model: &TrainedModel, user: &Features, item: &Features) -> Result<Vec<f64>> {
    let f = model.decision_values_for(user, item)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decision value"));
    }
    Ok(f)
}

/// Decision values and Eq.-5 labels for every interaction of `dataset`, in order.
pub fn predict(model: &TrainedModel, dataset: &Dataset) -> Result<StagePairPredictions> {
    model.check_schema(dataset.schema())?;
    let stages = dataset.stages();
    let cells = dataset
        .interactions()
        .iter()
        .map(|x| {
            let f = predict_cell(model, dataset.user(x.user)?, dataset.item(x.item)?)?;
            Ok(CellPrediction::new(stages, x.user, x.item, f, Some(&x.labels)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StagePairPredictions {
        method: model.method(),
        stages,
        cells,
    })
}

fn check_alignment(predictions: &StagePairPredictions, test: &Dataset) -> Result<()> {
    if predictions.stages != test.stages() || predictions.cells.len() != test.len() {
        return Err(Error::InvalidInput(
            "predictions do not belong to this test set".into(),
        ));
    }
    for (c, x) in predictions.cells.iter().zip(test.interactions()) {
        if c.user != x.user || c.item != x.item {
            return Err(Error::InvalidInput(format!(
                "prediction for ({}, {}) lines up with test cell ({}, {})",
                c.user, c.item, x.user, x.item
            )));
        }
    }
    Ok(())
}

/// Error counts over Ω_{t'} of the test set, split by the class of `y^t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub positives: usize,
    pub positive_errors: usize,
    pub negatives: usize,
    pub negative_errors: usize,
}

impl PairCounts {
    pub fn count(&self) -> usize {
        self.positives + self.negatives
    }

    pub fn errors(&self) -> usize {
        self.positive_errors + self.negative_errors
    }

    pub fn error_rate(&self) -> Option<f64> {
        (self.count() > 0).then(|| self.errors() as f64 / self.count() as f64)
    }

    /// Mean of the per-class rates; `None` unless both classes occur.
    pub fn balanced_rate(&self) -> Option<f64> {
        (self.positives > 0 && self.negatives > 0).then(|| {
            0.5 * (self.positive_errors as f64 / self.positives as f64)
                + 0.5 * (self.negative_errors as f64 / self.negatives as f64)
        })
    }
}

pub fn pair_counts(
    predictions: &StagePairPredictions,
    test: &Dataset,
    present: usize,
    subsequent: usize,
) -> Result<PairCounts> {
    check_alignment(predictions, test)?;
    crate::model::check_pair(test.stages(), present, subsequent)?;
    let p = pair_index(test.stages(), present, subsequent);
    let mut counts = PairCounts::default();
    for (c, x) in predictions.cells.iter().zip(test.interactions()) {
        if !x.label(present).is_positive() {
            continue;
        }
        let y = x.label(subsequent);
        let wrong = Label::from_value(c.f[p]) != y;
        if y.is_positive() {
            counts.positives += 1;
            counts.positive_errors += usize::from(wrong);
        } else {
            counts.negatives += 1;
            counts.negative_errors += usize::from(wrong);
        }
    }
    Ok(counts)
}

/// `None` when Ω_{t'} of the test set is empty.
pub fn pairwise_error(
    predictions: &StagePairPredictions,
    test: &Dataset,
    present: usize,
    subsequent: usize,
) -> Result<Option<f64>> {
    Ok(pair_counts(predictions, test, present, subsequent)?.error_rate())
}

/// Balanced error and whether it fell back to the plain rate for lack of one class.
pub fn balanced_error(
    predictions: &StagePairPredictions,
    test: &Dataset,
    present: usize,
    subsequent: usize,
) -> Result<Option<(f64, bool)>> {
    let counts = pair_counts(predictions, test, present, subsequent)?;
    Ok(match counts.balanced_rate() {
        Some(r) => Some((r, false)),
        None => counts.error_rate().map(|r| (r, true)),
    })
}

/// Pooled rate `Σ w·errors / Σ w·count`; `None` when no pair with positive weight is evaluable.
pub fn overall_error(
    predictions: &StagePairPredictions,
    test: &Dataset,
    weights: &StageWeights,
) -> Result<Option<f64>> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (tp, t) in stage_pairs(test.stages()) {
        let c = pair_counts(predictions, test, tp, t)?;
        let w = weights.get(tp, t);
        num += w * c.errors() as f64;
        den += w * c.count() as f64;
    }
    Ok((den > 0.0).then(|| num / den))
}

/// True when a sign matrix (sign(0) = −1) breaks either monotonicity line.
pub fn violates_monotonicity(f: &[f64], stages: usize) -> bool {
    let positive = |tp: usize, t: usize| f[pair_index(stages, tp, t)] > 0.0;
    for tp in 0..stages {
        for t in tp + 1..=stages {
            if t < stages && !positive(tp, t) && positive(tp, t + 1) {
                return true;
            }
            if tp + 1 < t && !positive(tp + 1, t) && positive(tp, t) {
                return true;
            }
        }
    }
    false
}

/// Fraction of cells whose sign matrix is inconsistent, each cell counted once.
pub fn inconsistency_rate(predictions: &StagePairPredictions) -> f64 {
    if predictions.cells.is_empty() {
        return 0.0;
    }
    let bad = predictions
        .cells
        .iter()
        .filter(|c| violates_monotonicity(&c.f, predictions.stages))
        .count();
    bad as f64 / predictions.cells.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub present: usize,
    pub subsequent: usize,
    pub count: usize,
    pub error: Option<f64>,
    pub balanced_error: Option<f64>,
    /// Balanced error equals the plain rate because only one class occurred.
    pub balanced_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub pairs: Vec<PairReport>,
    /// Count- and weight-pooled error.
    pub overall_error: Option<f64>,
    /// Unweighted mean of the evaluable pairwise rates.
    pub mean_pair_error: Option<f64>,
    pub inconsistency_rate: f64,
    pub cells: usize,
}

pub fn evaluate(
    predictions: &StagePairPredictions,
    test: &Dataset,
    weights: &StageWeights,
) -> Result<EvalReport> {
    check_alignment(predictions, test)?;
    let mut pairs = Vec::new();
    for (tp, t) in stage_pairs(test.stages()) {
        let c = pair_counts(predictions, test, tp, t)?;
        let (balanced, fallback) = match c.balanced_rate() {
            Some(r) => (Some(r), false),
            None => (c.error_rate(), c.count() > 0),
        };
        pairs.push(PairReport {
            present: tp,
            subsequent: t,
            count: c.count(),
            error: c.error_rate(),
            balanced_error: balanced,
            balanced_fallback: fallback,
        });
    }
    let rates: Vec<f64> = pairs.iter().filter_map(|p| p.error).collect();
    let mean_pair_error = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    Ok(EvalReport {
        method: predictions.method,
        overall_error: overall_error(predictions, test, weights)?,
        mean_pair_error,
        inconsistency_rate: inconsistency_rate(predictions),
        cells: test.len(),
        pairs,
    })
}

pub fn evaluate_model(model: &TrainedModel, test: &Dataset, weights: &StageWeights) -> Result<EvalReport> {
    evaluate(&predict(model, test)?, test, weights)
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

fn cell(values: &[f64], percent: bool) -> String {
    match mean_sd(values) {
        None => "NA".into(),
        Some((m, s)) if percent => format!("{:.3}%({:.3})", 100.0 * m, 100.0 * s),
        Some((m, s)) => format!("{m:.3}({s:.3})"),
    }
}

/// Table with one row per stage pair, then `Overall` and `%Inconsist`; one column per
/// method holding `mean(sd)` over that method's replications.
pub fn table_csv(columns: &[(Method, Vec<EvalReport>)]) -> String {
    let mut out = String::from("row");
    for (m, _) in columns {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    let stages = columns
        .iter()
        .flat_map(|(_, r)| r.first())
        .map(|r| r.pairs.last().map_or(0, |p| p.subsequent))
        .max()
        .unwrap_or(0);
    for (idx, (tp, t)) in stage_pairs(stages).into_iter().enumerate() {
        let _ = write!(out, "\"({tp},{t})\"");
        for (_, reports) in columns {
            let v: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.pairs.get(idx).and_then(|p| p.error))
                .collect();
            let _ = write!(out, ",{}", cell(&v, false));
        }
        out.push('\n');
    }
    out.push_str("Overall");
    for (_, reports) in columns {
        let v: Vec<f64> = reports.iter().filter_map(|r| r.overall_error).collect();
        let _ = write!(out, ",{}", cell(&v, false));
    }
    out.push_str("\n%Inconsist");
    for (_, reports) in columns {
        let v: Vec<f64> = reports.iter().map(|r| r.inconsistency_rate).collect();
        let _ = write!(out, ",{}", cell(&v, true));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, Interaction};
    use std::collections::BTreeMap;

    fn dataset(labels: &[[i64; 2]]) -> Dataset {
        let schema = FeatureSchema::new(0, 0, vec![1], vec![labels.len()], 2).unwrap();
        let users = BTreeMap::from([(0, Features::new(vec![], vec![0]))]);
        let items = (0..labels.len() as u64)
            .map(|j| (j, Features::new(vec![], vec![j as usize])))
            .collect();
        let interactions = labels
            .iter()
            .enumerate()
            .map(|(j, y)| {
                Interaction::new(
                    0,
                    j as u64,
                    y.iter().map(|&v| Label::from_sign(v).unwrap()).collect(),
                )
            })
            .collect();
        Dataset::new(schema, users, items, interactions).unwrap()
    }

    fn preds(d: &Dataset, f: Vec<Vec<f64>>) -> StagePairPredictions {
        StagePairPredictions {
            method: Method::Standard,
            stages: 2,
            cells: d
                .interactions()
                .iter()
                .zip(f)
                .map(|(x, f)| CellPrediction::new(2, x.user, x.item, f, Some(&x.labels)))
                .collect(),
        }
    }

    #[test]
    fn pairwise_counts() {
        let d = dataset(&[[1, 1], [1, 1], [1, 1]]);
        let perfect = preds(&d, vec![vec![1.0; 3]; 3]);
        assert_eq!(pairwise_error(&perfect, &d, 0, 1).unwrap(), Some(0.0));
        let negative = preds(&d, vec![vec![-1.0; 3]; 3]);
        assert_eq!(pairwise_error(&negative, &d, 0, 1).unwrap(), Some(1.0));
        let one_wrong = preds(&d, vec![vec![1.0; 3], vec![1.0; 3], vec![-1.0; 3]]);
        assert_eq!(pairwise_error(&one_wrong, &d, 0, 2).unwrap(), Some(1.0 / 3.0));
        let zero = preds(&d, vec![vec![0.0; 3]; 3]);
        assert_eq!(pairwise_error(&zero, &d, 0, 1).unwrap(), Some(1.0));
        let negatives = dataset(&[[-1, -1], [1, -1]]);
        let zero = preds(&negatives, vec![vec![0.0; 3]; 2]);
        assert_eq!(pairwise_error(&zero, &negatives, 0, 1).unwrap(), Some(0.5));
    }

    #[test]
    fn absent_pair() {
        let d = dataset(&[[-1, -1]]);
        let p = preds(&d, vec![vec![-1.0; 3]]);
        assert_eq!(pairwise_error(&p, &d, 1, 2).unwrap(), None);
        assert_eq!(balanced_error(&p, &d, 1, 2).unwrap(), None);
    }

    #[test]
    fn balanced_always_positive() {
        let mut labels = vec![[1, 1]; 9];
        labels.push([-1, -1]);
        let d = dataset(&labels);
        let p = preds(&d, vec![vec![1.0; 3]; 10]);
        assert_eq!(balanced_error(&p, &d, 0, 1).unwrap(), Some((0.5, false)));
        assert_eq!(pairwise_error(&p, &d, 0, 1).unwrap(), Some(0.1));
        let d1 = dataset(&[[1, 1], [1, 1]]);
        let p1 = preds(&d1, vec![vec![1.0; 3]; 2]);
        assert_eq!(balanced_error(&p1, &d1, 0, 1).unwrap(), Some((0.0, true)));
    }

    #[test]
    fn overall_pools() {
        // (0,1) always right, (0,2) always wrong, (1,2) equal count and always wrong
        let d = dataset(&[[1, 1], [1, 1]]);
        let p = preds(&d, vec![vec![1.0, -1.0, -1.0]; 2]);
        let w = StageWeights::parse(2, "0:1=1,0:2=1").unwrap();
        assert_eq!(overall_error(&p, &d, &w).unwrap(), Some(0.5));
        let all = StageWeights::all(2);
        assert_eq!(overall_error(&p, &d, &all).unwrap(), Some(4.0 / 6.0));
    }

    #[test]
    fn inconsistency_examples() {
        // pairs (0,1), (0,2), (1,2)
        assert!(violates_monotonicity(&[-1.0, 1.0, 1.0], 2));
        assert!(violates_monotonicity(&[1.0, 1.0, -1.0], 2));
        assert!(!violates_monotonicity(&[1.0, -1.0, -1.0], 2));
        assert!(!violates_monotonicity(&[1.0, -1.0, 1.0], 2));
        assert!(!violates_monotonicity(&[-1.0, 0.0, 1.0], 2));
    }

    #[test]
    fn table_layout() {
        let d = dataset(&[[1, 1], [1, -1]]);
        let p = preds(&d, vec![vec![1.0; 3]; 2]);
        let r = evaluate(&p, &d, &StageWeights::all(2)).unwrap();
        let csv = table_csv(&[(Method::Proposed, vec![r.clone(), r])]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row,proposed");
        assert_eq!(lines.len(), 1 + 3 + 2);
        assert!(lines[4].starts_with("Overall,"));
        assert!(lines[5].starts_with("%Inconsist,0.000%"));
    }
}

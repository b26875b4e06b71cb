//! Nonnegative additive latent factor model.
//!
//! For a user with features `(u, s)` and an item with `(v, o)`:
//!
//! ```text
//! a(u, s) = A u + Σ_l a_{l, s_l}        b(v, o) = B v + Σ_l b_{l, o_l}
//! f^{t't} = (a ∘ b)·1 − Σ_{r = t'+1..t} (a ∘ b)·q_r
//! ```
//!
//! All blocks are entrywise nonnegative, so every stage term `h_r = (a∘b)·q_r`
//! is nonnegative and the sign matrix of `f` is monotone in both indices.

use serde::{Deserialize, Serialize};

use crate::data::{pair_index, stage_pairs, Dataset, FeatureSchema, Features, ItemId, Label, UserId};
use crate::error::{Error, Result};
use crate::solver::hinge;

/// Latent parameters. Matrices are stored row-major as `K` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub schema: FeatureSchema,
    pub k: usize,
    /// `A`, K × p1.
    pub user_linear: Vec<Vec<f64>>,
    /// `B`, K × p2.
    pub item_linear: Vec<Vec<f64>>,
    /// `a_{l,h}` indexed `[l][h]`.
    pub user_factors: Vec<Vec<Vec<f64>>>,
    /// `b_{l,h}` indexed `[l][h]`.
    pub item_factors: Vec<Vec<Vec<f64>>>,
    /// `q_r` for `r = 1..=T`, stored at `r - 1`.
    pub stage_factors: Vec<Vec<f64>>,
}

fn filled(len: usize, k: usize, value: f64) -> Vec<Vec<f64>> {
    vec![vec![value; k]; len]
}

impl ModelParams {
    pub fn zeros(schema: &FeatureSchema, k: usize) -> Self {
        ModelParams {
            schema: schema.clone(),
            k,
            user_linear: filled(k, schema.p1, 0.0),
            item_linear: filled(k, schema.p2, 0.0),
            user_factors: schema
                .user_cardinalities
                .iter()
                .map(|&n| filled(n, k, 0.0))
                .collect(),
            item_factors: schema
                .item_cardinalities
                .iter()
                .map(|&m| filled(m, k, 0.0))
                .collect(),
            stage_factors: filled(schema.stages, k, 0.0),
        }
    }

    /// Checks shapes against the schema and the nonnegativity of every entry.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schema;
        s.validate()?;
        let k = self.k;
        let bad = |what: &str| Error::InvalidInput(format!("parameter block {what} has the wrong shape"));
        let rows_ok = |m: &Vec<Vec<f64>>, rows: usize, cols: usize| {
            m.len() == rows && m.iter().all(|r| r.len() == cols)
        };
        if k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if !rows_ok(&self.user_linear, k, s.p1) {
            return Err(bad("A"));
        }
        if !rows_ok(&self.item_linear, k, s.p2) {
            return Err(bad("B"));
        }
        if self.user_factors.len() != s.d1()
            || self
                .user_factors
                .iter()
                .zip(&s.user_cardinalities)
                .any(|(f, &n)| !rows_ok(f, n, k))
        {
            return Err(bad("a"));
        }
        if self.item_factors.len() != s.d2()
            || self
                .item_factors
                .iter()
                .zip(&s.item_cardinalities)
                .any(|(f, &m)| !rows_ok(f, m, k))
        {
            return Err(bad("b"));
        }
        if !rows_ok(&self.stage_factors, s.stages, k) {
            return Err(bad("q"));
        }
        if let Some(v) = self.values().find(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "parameters must be finite and nonnegative, found {v}"
            )));
        }
        Ok(())
    }

    /// Every stored scalar, block by block.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.user_linear
            .iter()
            .chain(&self.item_linear)
            .chain(self.user_factors.iter().flatten())
            .chain(self.item_factors.iter().flatten())
            .chain(&self.stage_factors)
            .flatten()
            .copied()
    }

    pub fn stored_count(&self) -> usize {
        self.values().count()
    }

    /// a(u, s) = A u + Σ_l a_{l, s_l}
    pub fn user_map(&self, user: &Features) -> Result<Vec<f64>> {
        check_features(user, self.schema.p1, &self.schema.user_cardinalities)?;
        Ok(latent_map(
            &self.user_linear,
            &self.user_factors,
            user,
            self.k,
        ))
    }

    /// b(v, o) = B v + Σ_l b_{l, o_l}
    pub fn item_map(&self, item: &Features) -> Result<Vec<f64>> {
        check_features(item, self.schema.p2, &self.schema.item_cardinalities)?;
        Ok(latent_map(
            &self.item_linear,
            &self.item_factors,
            item,
            self.k,
        ))
    }

    /// q_{t't} = 1 − Σ_{r=t'+1}^{t} q_r; entries may be negative.
    pub fn stage_vector(&self, present: usize, subsequent: usize) -> Result<Vec<f64>> {
        check_pair(self.schema.stages, present, subsequent)?;
        let mut q = vec![1.0; self.k];
        for r in present + 1..=subsequent {
            for (qk, v) in q.iter_mut().zip(&self.stage_factors[r - 1]) {
                *qk -= v;
            }
        }
        Ok(q)
    }

    /// Stage terms `h_0 = (a∘b)·1` and `h_r = (a∘b)·q_r`.
    pub fn stage_terms(&self, user_latent: &[f64], item_latent: &[f64]) -> Vec<f64> {
        let ab: Vec<f64> = user_latent
            .iter()
            .zip(item_latent)
            .map(|(a, b)| a * b)
            .collect();
        let mut h = Vec::with_capacity(self.schema.stages + 1);
        h.push(ab.iter().sum());
        h.extend(
            self.stage_factors
                .iter()
                .map(|q| ab.iter().zip(q).map(|(x, y)| x * y).sum::<f64>()),
        );
        h
    }

    /// All `f^{t't}` for one cell in [`stage_pairs`] order.
    pub fn decision_values_latent(&self, user_latent: &[f64], item_latent: &[f64]) -> Vec<f64> {
        decisions_from_terms(&self.stage_terms(user_latent, item_latent), self.schema.stages)
    }

    pub fn decision_values_for(&self, user: &Features, item: &Features) -> Result<Vec<f64>> {
        let a = self.user_map(user)?;
        let b = self.item_map(item)?;
        Ok(self.decision_values_latent(&a, &b))
    }

    pub fn decision_value(
        &self,
        dataset: &Dataset,
        user: UserId,
        item: ItemId,
        present: usize,
        subsequent: usize,
    ) -> Result<f64> {
        check_pair(self.schema.stages, present, subsequent)?;
        let f = self.decision_values_for(dataset.user(user)?, dataset.item(item)?)?;
        Ok(f[pair_index(self.schema.stages, present, subsequent)])
    }

    pub fn penalty(&self, lambda1: f64, lambda2: f64, lambda3: f64) -> f64 {
        let sq = |blocks: &[Vec<f64>]| -> f64 { blocks.iter().flatten().map(|v| v * v).sum() };
        lambda1 * (sq(&self.user_linear) + sq(&self.item_linear))
            + lambda2
                * (self.user_factors.iter().map(|f| sq(f)).sum::<f64>()
                    + self.item_factors.iter().map(|f| sq(f)).sum::<f64>())
            + lambda3 * sq(&self.stage_factors)
    }
}

fn check_features(f: &Features, p: usize, cardinalities: &[usize]) -> Result<()> {
    if f.numeric.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: f.numeric.len(),
        });
    }
    if f.categories.len() != cardinalities.len() {
        return Err(Error::DimensionMismatch {
            expected: cardinalities.len(),
            got: f.categories.len(),
        });
    }
    if let Some((c, n)) = f
        .categories
        .iter()
        .zip(cardinalities)
        .find(|(c, n)| **c >= **n)
    {
        return Err(Error::InvalidInput(format!(
            "category level {} out of range 1..={n}",
            c + 1
        )));
    }
    Ok(())
}

fn latent_map(linear: &[Vec<f64>], factors: &[Vec<Vec<f64>>], f: &Features, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (o, row) in out.iter_mut().zip(linear) {
        *o = row.iter().zip(&f.numeric).map(|(w, x)| w * x).sum();
    }
    for (levels, &h) in factors.iter().zip(&f.categories) {
        for (o, v) in out.iter_mut().zip(&levels[h]) {
            *o += v;
        }
    }
    out
}

pub(crate) fn check_pair(stages: usize, present: usize, subsequent: usize) -> Result<()> {
    if present < subsequent && subsequent <= stages {
        Ok(())
    } else {
        Err(Error::InvalidPair {
            present,
            subsequent,
            stages,
        })
    }
}

/// `f^{t't} = h_0 − S(t', t)` with `S(t', t) = h_{t'+1} + S(t'+1, t)` summed
/// from the right, so rounding keeps `S` monotone in both indices whenever
/// every `h_r ≥ 0`.
pub fn decisions_from_terms(h: &[f64], stages: usize) -> Vec<f64> {
    let mut out = vec![0.0; stages * (stages + 1) / 2];
    for t in 1..=stages {
        let mut tail = 0.0;
        for tp in (0..t).rev() {
            tail += h[tp + 1];
            out[pair_index(stages, tp, t)] = h[0] - tail;
        }
    }
    out
}

/// Prediction rule: −1 when the present stage is negative, otherwise sign(f) with sign(0) = −1.
pub fn predict_label(decision: f64, present_label: Label) -> Label {
    match present_label {
        Label::Negative => Label::Negative,
        Label::Positive => Label::from_value(decision),
    }
}

/// Nonnegative weights `w_{t't}` in [`stage_pairs`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    stages: usize,
    values: Vec<f64>,
}

impl StageWeights {
    pub fn new(stages: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != stages * (stages + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: stages * (stages + 1) / 2,
                got: values.len(),
            });
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("stage weights must be nonnegative".into()));
        }
        if !values.iter().any(|w| *w > 0.0) {
            return Err(Error::InvalidInput("at least one stage weight must be positive".into()));
        }
        Ok(StageWeights { stages, values })
    }

    pub fn all(stages: usize) -> Self {
        Self::from_rule(stages, |_, _| true)
    }

    pub fn next_stage(stages: usize) -> Self {
        Self::from_rule(stages, |tp, t| t - tp == 1)
    }

    pub fn last_stage(stages: usize) -> Self {
        Self::from_rule(stages, move |_, t| t == stages)
    }

    fn from_rule(stages: usize, rule: impl Fn(usize, usize) -> bool) -> Self {
        StageWeights {
            stages,
            values: stage_pairs(stages)
                .into_iter()
                .map(|(tp, t)| if rule(tp, t) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Parses `all`, `next`, `last` or an explicit `t':t=w,...` list (unlisted pairs get 0).
    pub fn parse(stages: usize, text: &str) -> Result<Self> {
        match text.trim() {
            "all" => return Ok(Self::all(stages)),
            "next" => return Ok(Self::next_stage(stages)),
            "last" => return Ok(Self::last_stage(stages)),
            _ => {}
        }
        let mut values = vec![0.0; stages * (stages + 1) / 2];
        for entry in text.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let bad = || Error::InvalidInput(format!("cannot parse stage weight `{entry}`"));
            let (pair, w) = entry.split_once('=').ok_or_else(bad)?;
            let (tp, t) = pair.split_once(':').ok_or_else(bad)?;
            let tp: usize = tp.trim().parse().map_err(|_| bad())?;
            let t: usize = t.trim().parse().map_err(|_| bad())?;
            let w: f64 = w.trim().parse().map_err(|_| bad())?;
            check_pair(stages, tp, t)?;
            values[pair_index(stages, tp, t)] = w;
        }
        Self::new(stages, values)
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn get(&self, present: usize, subsequent: usize) -> f64 {
        self.values[pair_index(self.stages, present, subsequent)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub weights: StageWeights,
    pub tol_outer: f64,
    pub max_outer: usize,
    pub seed: u64,
    pub class_balance: bool,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl HyperParams {
    pub fn new(k: usize, stages: usize) -> Self {
        HyperParams {
            k,
            lambda1: 0.001,
            lambda2: 0.01,
            lambda3: 0.0001,
            weights: StageWeights::all(stages),
            tol_outer: 1e-4,
            max_outer: 50,
            seed: 0,
            class_balance: false,
            solver_tol: crate::solver::DEFAULT_TOL,
            solver_max_iter: crate::solver::DEFAULT_MAX_ITER,
        }
    }

    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self.lambda3 = lambda3;
        self
    }

    pub fn validate(&self, stages: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.weights.stages() != stages {
            return Err(Error::InvalidInput(format!(
                "stage weights cover T = {}, dataset has T = {stages}",
                self.weights.stages()
            )));
        }
        Ok(())
    }
}

/// Per-sample costs of the empirical loss: `w_{t't} · balance / N_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    stages: usize,
    normalizer: f64,
    /// `[negative, positive]` multiplier per stage pair.
    factors: Vec<[f64; 2]>,
    weights: StageWeights,
}

impl LossWeights {
    /// `N_w = Σ w_{t't} |Ω_{t'}|` over `dataset`; class-balance factors are
    /// inverse class frequencies within Ω_{t'} scaled to mean one.
    pub fn new(dataset: &Dataset, weights: &StageWeights, class_balance: bool) -> Result<Self> {
        let stages = dataset.stages();
        let pairs = stage_pairs(stages);
        let mut normalizer = 0.0;
        let mut factors = vec![[1.0, 1.0]; pairs.len()];
        for (p, &(tp, t)) in pairs.iter().enumerate() {
            let (mut pos, mut neg) = (0usize, 0usize);
            for x in dataset.interactions() {
                if x.label(tp).is_positive() {
                    if x.label(t).is_positive() {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
            normalizer += weights.get(tp, t) * (pos + neg) as f64;
            if class_balance && pos > 0 && neg > 0 {
                let n = (pos + neg) as f64;
                factors[p] = [n / (2.0 * neg as f64), n / (2.0 * pos as f64)];
            }
        }
        if normalizer <= 0.0 {
            return Err(Error::EmptyTrainingSet(
                "no observed cell falls in a stage pair with positive weight".into(),
            ));
        }
        Ok(LossWeights {
            stages,
            normalizer,
            factors,
            weights: weights.clone(),
        })
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Cost of one `(i, j, t', t)` term with label `y^t`.
    pub fn cost(&self, present: usize, subsequent: usize, label: Label) -> f64 {
        let p = pair_index(self.stages, present, subsequent);
        let f = self.factors[p][usize::from(label.is_positive())];
        self.weights.get(present, subsequent) * f / self.normalizer
    }
}

/// Regularized empirical loss: weighted mean hinge over all pairs and Ω_{t'}, plus J_λ.
pub fn model_objective(dataset: &Dataset, params: &ModelParams, hyper: &HyperParams) -> Result<f64> {
    let weights = LossWeights::new(dataset, &hyper.weights, hyper.class_balance)?;
    let loss = empirical_loss(dataset, params, &weights)?;
    Ok(loss + params.penalty(hyper.lambda1, hyper.lambda2, hyper.lambda3))
}

pub fn empirical_loss(dataset: &Dataset, params: &ModelParams, weights: &LossWeights) -> Result<f64> {
    let stages = dataset.stages();
    let pairs = stage_pairs(stages);
    let mut total = 0.0;
    for x in dataset.interactions() {
        let f = params.decision_values_for(dataset.user(x.user)?, dataset.item(x.item)?)?;
        for (&(tp, t), fv) in pairs.iter().zip(&f) {
            if x.label(tp).is_positive() {
                let y = x.label(t);
                total += weights.cost(tp, t, y) * hinge(y.as_f64() * fv);
            }
        }
    }
    Ok(total)
}

/// Marginal positive rates `π_t = P(Y^t = 1 | Δ = 1)` with `π_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityChain {
    pi: Vec<f64>,
}

impl ProbabilityChain {
    /// `pi` lists `π_1..π_T`; requires `1 ≥ π_1 ≥ … ≥ π_T ≥ 0`.
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        let mut full = Vec::with_capacity(pi.len() + 1);
        full.push(1.0);
        full.extend(pi);
        if full.len() < 2 {
            return Err(Error::InvalidInput("chain needs at least one stage".into()));
        }
        for w in full.windows(2) {
            if !(w[1].is_finite() && w[1] >= 0.0 && w[1] <= w[0]) {
                return Err(Error::InvalidInput(format!(
                    "positive rates must be nonincreasing in [0, 1]: {full:?}"
                )));
            }
        }
        Ok(ProbabilityChain { pi: full })
    }

    pub fn stages(&self) -> usize {
        self.pi.len() - 1
    }

    pub fn pi(&self, stage: usize) -> f64 {
        self.pi[stage]
    }

    /// P(Y^t = 1 | Y^{t'} = 1, Δ = 1) = π_t / π_{t'}.
    pub fn conditional(&self, present: usize, subsequent: usize) -> f64 {
        self.pi[subsequent] / self.pi[present]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BayesDecomposition {
    /// `h^0..h^T`, all nonnegative.
    pub terms: Vec<f64>,
    /// `f^{t't}` in [`stage_pairs`] order.
    pub decisions: Vec<f64>,
}

/// Additive form of the multistage Bayes rule:
/// `h^0 = c log_α 2`, `h^r = c log_α(π_{r−1} / π_r)`.
pub fn bayes_from_chain(chain: &ProbabilityChain, c: f64, base: f64) -> Result<BayesDecomposition> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("c must be positive, got {c}")));
    }
    if !(base > 1.0 && base.is_finite()) {
        return Err(Error::InvalidInput(format!("log base must exceed 1, got {base}")));
    }
    let stages = chain.stages();
    // π_r = 0 leaves h^{r+1} undefined
    if let Some(r) = (1..stages).find(|&r| chain.pi(r) == 0.0) {
        return Err(Error::InvalidInput(format!(
            "π_{r} = 0 but stage {} is requested",
            r + 1
        )));
    }
    let ln_base = base.ln();
    let mut terms = Vec::with_capacity(stages + 1);
    terms.push(c * 2f64.ln() / ln_base);
    for r in 1..=stages {
        terms.push(c * (chain.pi(r - 1) / chain.pi(r)).ln() / ln_base);
    }
    let decisions = decisions_from_terms(&terms, stages);
    Ok(BayesDecomposition { terms, decisions })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Standard,
    Ordinal,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Method::Proposed),
            "standard" | "svm" => Ok(Method::Standard),
            "ordinal" | "osvm" => Ok(Method::Ordinal),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Proposed => "proposed",
            Method::Standard => "standard",
            Method::Ordinal => "ordinal",
        })
    }
}

/// Parameter counts of the latent-factor parametrizations:
/// proposed `(Λ + T)K`, standard `ΛKT(T+1)/2`, ordinal `ΛKT`.
pub fn count_params(schema: &FeatureSchema, k: usize, method: Method) -> usize {
    let lambda = schema.lambda();
    let t = schema.stages;
    match method {
        Method::Proposed => (lambda + t) * k,
        Method::Standard => lambda * k * t * (t + 1) / 2,
        Method::Ordinal => lambda * k * t,
    }
}

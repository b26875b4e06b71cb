//! Dataset representation for monotonic multistage feedback.
//!
//! An observed user–item cell carries a label per stage `1..=T`; stage 0 is
//! the implicit "observed" stage and is always positive. A cell that is not
//! listed is missing. Categorical indices are zero-based in memory and
//! one-based in the CSV files.

pub mod io;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub type UserId = u64;
pub type ItemId = u64;

/// Shape of the feature space and the number of stages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct FeatureSchema {
    pub p1: usize,
    pub p2: usize,
    pub user_cardinalities: Vec<usize>,
    pub item_cardinalities: Vec<usize>,
    pub stages: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    p1: usize,
    p2: usize,
    d1: usize,
    d2: usize,
    user_cardinalities: Vec<usize>,
    item_cardinalities: Vec<usize>,
    #[serde(rename = "T")]
    stages: usize,
}

impl TryFrom<SchemaRepr> for FeatureSchema {
    type Error = Error;

    fn try_from(r: SchemaRepr) -> Result<Self> {
        if r.d1 != r.user_cardinalities.len() || r.d2 != r.item_cardinalities.len() {
            return Err(Error::Schema(format!(
                "d1 = {}, d2 = {} but {} user and {} item cardinalities given",
                r.d1,
                r.d2,
                r.user_cardinalities.len(),
                r.item_cardinalities.len()
            )));
        }
        FeatureSchema::new(
            r.p1,
            r.p2,
            r.user_cardinalities,
            r.item_cardinalities,
            r.stages,
        )
    }
}

impl From<FeatureSchema> for SchemaRepr {
    fn from(s: FeatureSchema) -> Self {
        SchemaRepr {
            p1: s.p1,
            p2: s.p2,
            d1: s.d1(),
            d2: s.d2(),
            user_cardinalities: s.user_cardinalities,
            item_cardinalities: s.item_cardinalities,
            stages: s.stages,
        }
    }
}

impl FeatureSchema {
    pub fn new(
        p1: usize,
        p2: usize,
        user_cardinalities: Vec<usize>,
        item_cardinalities: Vec<usize>,
        stages: usize,
    ) -> Result<Self> {
        let schema = FeatureSchema {
            p1,
            p2,
            user_cardinalities,
            item_cardinalities,
            stages,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p1 + self.d1() == 0 {
            return Err(Error::Schema("users need at least one feature".into()));
        }
        if self.p2 + self.d2() == 0 {
            return Err(Error::Schema("items need at least one feature".into()));
        }
        if self
            .user_cardinalities
            .iter()
            .chain(&self.item_cardinalities)
            .any(|&c| c == 0)
        {
            return Err(Error::Schema("every cardinality must be at least 1".into()));
        }
        if self.stages == 0 {
            return Err(Error::Schema("T must be at least 1".into()));
        }
        Ok(())
    }

    pub fn d1(&self) -> usize {
        self.user_cardinalities.len()
    }

    pub fn d2(&self) -> usize {
        self.item_cardinalities.len()
    }

    /// Λ = p1 + p2 + Σ n_l + Σ m_l, which is also the one-hot design width.
    pub fn lambda(&self) -> usize {
        self.p1
            + self.p2
            + self.user_cardinalities.iter().sum::<usize>()
            + self.item_cardinalities.iter().sum::<usize>()
    }

    pub fn one_hot_width(&self) -> usize {
        self.lambda()
    }

    /// Stage pairs `(t', t)` with `0 <= t' < t <= T` in lexicographic order.
    pub fn stage_pairs(&self) -> Vec<(usize, usize)> {
        stage_pairs(self.stages)
    }
}

pub fn stage_pairs(stages: usize) -> Vec<(usize, usize)> {
    (0..stages)
        .flat_map(|tp| (tp + 1..=stages).map(move |t| (tp, t)))
        .collect()
}

/// Position of `(t', t)` in [`stage_pairs`] order.
pub fn pair_index(stages: usize, present: usize, subsequent: usize) -> usize {
    // rows 0..t' contribute T - r entries each
    let before: usize = (0..present).map(|r| stages - r).sum();
    before + (subsequent - present - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(value: i64) -> Option<Label> {
        match value {
            1 => Some(Label::Positive),
            -1 => Some(Label::Negative),
            _ => None,
        }
    }

    /// sign(0) is negative.
    pub fn from_value(value: f64) -> Label {
        if value > 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Numeric features in `[0, 1]` and zero-based categorical levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub numeric: Vec<f64>,
    pub categories: Vec<usize>,
}

pub type UserFeatures = Features;
pub type ItemFeatures = Features;

impl Features {
    pub fn new(numeric: Vec<f64>, categories: Vec<usize>) -> Self {
        Features {
            numeric,
            categories,
        }
    }

    fn check(&self, p: usize, cardinalities: &[usize], what: &str) -> Result<()> {
        if self.numeric.len() != p {
            return Err(Error::InvalidInput(format!(
                "{what} has {} numeric features, schema declares {p}",
                self.numeric.len()
            )));
        }
        if self.categories.len() != cardinalities.len() {
            return Err(Error::InvalidInput(format!(
                "{what} has {} categorical features, schema declares {}",
                self.categories.len(),
                cardinalities.len()
            )));
        }
        if let Some(x) = self
            .numeric
            .iter()
            .find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "{what} numeric feature {x} outside [0, 1]"
            )));
        }
        for (l, (&c, &n)) in self.categories.iter().zip(cardinalities).enumerate() {
            if c >= n {
                return Err(Error::InvalidInput(format!(
                    "{what} category {} of feature {} exceeds cardinality {n}",
                    c + 1,
                    l + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    /// Labels for stages `1..=T`.
    pub labels: Vec<Label>,
}

impl Interaction {
    pub fn new(user: UserId, item: ItemId, labels: Vec<Label>) -> Self {
        Interaction { user, item, labels }
    }

    /// Label at `stage`, where stage 0 is always positive.
    pub fn label(&self, stage: usize) -> Label {
        if stage == 0 {
            Label::Positive
        } else {
            self.labels[stage - 1]
        }
    }
}

/// Observed interactions plus the shared user and item feature tables.
///
/// Immutable once built; splits share the feature tables.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: FeatureSchema,
    users: Arc<BTreeMap<UserId, UserFeatures>>,
    items: Arc<BTreeMap<ItemId, ItemFeatures>>,
    interactions: Vec<Interaction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainViolation {
    pub user: UserId,
    pub item: ItemId,
    pub stage: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<ChainViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::ChainViolation {
                count: self.violations.len(),
                user: v.user,
                item: v.item,
                stage: v.stage,
            }),
        }
    }
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        users: BTreeMap<UserId, UserFeatures>,
        items: BTreeMap<ItemId, ItemFeatures>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        Self::with_shared_tables(schema, Arc::new(users), Arc::new(items), interactions)
    }

    fn with_shared_tables(
        schema: FeatureSchema,
        users: Arc<BTreeMap<UserId, UserFeatures>>,
        items: Arc<BTreeMap<ItemId, ItemFeatures>>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        schema.validate()?;
        for (id, u) in users.iter() {
            u.check(schema.p1, &schema.user_cardinalities, &format!("user {id}"))?;
        }
        for (id, v) in items.iter() {
            v.check(schema.p2, &schema.item_cardinalities, &format!("item {id}"))?;
        }
        let mut seen = HashSet::with_capacity(interactions.len());
        for x in &interactions {
            if !users.contains_key(&x.user) {
                return Err(Error::UnknownUser(x.user));
            }
            if !items.contains_key(&x.item) {
                return Err(Error::UnknownItem(x.item));
            }
            if x.labels.len() != schema.stages {
                return Err(Error::InvalidInput(format!(
                    "interaction ({}, {}) has {} labels, expected T = {}",
                    x.user,
                    x.item,
                    x.labels.len(),
                    schema.stages
                )));
            }
            if !seen.insert((x.user, x.item)) {
                return Err(Error::DuplicatePair {
                    user: x.user,
                    item: x.item,
                });
            }
        }
        Ok(Dataset {
            schema,
            users,
            items,
            interactions,
        })
    }

    /// Same feature tables, different interactions.
    pub fn with_interactions(&self, interactions: Vec<Interaction>) -> Result<Self> {
        Self::with_shared_tables(
            self.schema.clone(),
            Arc::clone(&self.users),
            Arc::clone(&self.items),
            interactions,
        )
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn stages(&self) -> usize {
        self.schema.stages
    }

    pub fn users(&self) -> &BTreeMap<UserId, UserFeatures> {
        &self.users
    }

    pub fn items(&self) -> &BTreeMap<ItemId, ItemFeatures> {
        &self.items
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn user(&self, id: UserId) -> Result<&UserFeatures> {
        self.users.get(&id).ok_or(Error::UnknownUser(id))
    }

    pub fn item(&self, id: ItemId) -> Result<&ItemFeatures> {
        self.items.get(&id).ok_or(Error::UnknownItem(id))
    }

    pub fn shares_tables_with(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.users, &other.users) && Arc::ptr_eq(&self.items, &other.items)
    }

    /// Reports every `(i, j, t)` with `y^{t-1} = -1` and `y^t = +1`.
    pub fn validate_chain(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for x in &self.interactions {
            for t in 2..=self.schema.stages {
                if !x.label(t - 1).is_positive() && x.label(t).is_positive() {
                    violations.push(ChainViolation {
                        user: x.user,
                        item: x.item,
                        stage: t,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// Indices of interactions in Ω_{t'}: observed cells positive at stage `t'`.
    pub fn build_omega(&self, present: usize) -> Result<Vec<usize>> {
        if present >= self.schema.stages {
            return Err(Error::StageOutOfRange {
                stage: present,
                stages: self.schema.stages,
            });
        }
        Ok(self
            .interactions
            .iter()
            .enumerate()
            .filter(|(_, x)| x.label(present).is_positive())
            .map(|(k, _)| k)
            .collect())
    }

    /// One-hot design rows: `u`, `v`, user dummies, item dummies.
    pub fn one_hot_encode(&self) -> Vec<Vec<f64>> {
        self.interactions
            .iter()
            .map(|x| one_hot_row(&self.schema, &self.users[&x.user], &self.items[&x.item]))
            .collect()
    }

    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        split_dataset(self, ratios, seed)
    }
}

pub fn one_hot_row(schema: &FeatureSchema, user: &UserFeatures, item: &ItemFeatures) -> Vec<f64> {
    let mut row = Vec::with_capacity(schema.one_hot_width());
    row.extend_from_slice(&user.numeric);
    row.extend_from_slice(&item.numeric);
    for (&level, &n) in user.categories.iter().zip(&schema.user_cardinalities) {
        row.extend((0..n).map(|h| if h == level { 1.0 } else { 0.0 }));
    }
    for (&level, &m) in item.categories.iter().zip(&schema.item_cardinalities) {
        row.extend((0..m).map(|h| if h == level { 1.0 } else { 0.0 }));
    }
    row
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    /// All three parts must be positive and sum to one.
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        if !(train > 0.0 && val > 0.0 && test > 0.0) {
            return Err(Error::InvalidInput(format!(
                "split ratios ({train}, {val}, {test}) must all be positive"
            )));
        }
        Self::allow_empty(train, val, test)
    }

    /// Like [`SplitRatios::new`] but zero-sized parts are allowed.
    pub fn allow_empty(train: f64, val: f64, test: f64) -> Result<Self> {
        let parts = [train, val, test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidInput(format!(
                "split ratios ({train}, {val}, {test}) must be finite and nonnegative"
            )));
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "split ratios ({train}, {val}, {test}) must sum to 1"
            )));
        }
        Ok(SplitRatios { train, val, test })
    }

    pub fn standard_split() -> Self {
        SplitRatios {
            train: 0.1,
            val: 0.1,
            test: 0.8,
        }
    }
}

/// Deterministic disjoint partition of the interactions; feature tables are shared.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Split));
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = (((n as f64) * ratios.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    let [train, val, test] = parts.each_mut().map(|idx| {
        idx.sort_unstable();
        idx.iter()
            .map(|&k| dataset.interactions[k].clone())
            .collect::<Vec<_>>()
    });
    Ok((
        dataset.with_interactions(train)?,
        dataset.with_interactions(val)?,
        dataset.with_interactions(test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    fn cat_schema(t: usize) -> FeatureSchema {
        FeatureSchema::new(0, 0, vec![3], vec![2], t).unwrap()
    }

    fn dataset(labels: &[Vec<Label>]) -> Dataset {
        let schema = cat_schema(labels.first().map_or(2, |l| l.len()));
        let users = (0..labels.len() as u64)
            .map(|i| (i, Features::new(vec![], vec![(i % 3) as usize])))
            .collect();
        let items = [(0, Features::new(vec![], vec![1]))].into_iter().collect();
        let xs = labels
            .iter()
            .enumerate()
            .map(|(i, y)| Interaction::new(i as u64, 0, y.clone()))
            .collect();
        Dataset::new(schema, users, items, xs).unwrap()
    }

    #[test]
    fn chain_validation_examples() {
        let d = dataset(&[vec![P, P, N], vec![P, N, P], vec![N, N, N]]);
        let report = d.validate_chain();
        assert_eq!(
            report.violations,
            vec![ChainViolation {
                user: 1,
                item: 0,
                stage: 3
            }]
        );
        assert!(matches!(
            report.into_result(),
            Err(Error::ChainViolation { count: 1, .. })
        ));
        assert!(dataset(&[vec![P, P, N]]).validate_chain().is_clean());
        assert!(dataset(&[vec![N, N, N]]).validate_chain().is_clean());
    }

    #[test]
    fn omega_examples() {
        let d = dataset(&[vec![P, N], vec![N, N], vec![P, P]]);
        assert_eq!(d.build_omega(0).unwrap(), vec![0, 1, 2]);
        assert_eq!(d.build_omega(1).unwrap(), vec![0, 2]);
        let two = dataset(&[vec![P, N], vec![N, N]]);
        assert_eq!(two.build_omega(1).unwrap(), vec![0]);
        assert!(matches!(
            d.build_omega(2),
            Err(Error::StageOutOfRange { stage: 2, stages: 2 })
        ));
        let empty = d.with_interactions(vec![]).unwrap();
        assert!(empty.build_omega(0).unwrap().is_empty());
        assert!(empty.build_omega(1).unwrap().is_empty());
    }

    #[test]
    fn one_hot_examples() {
        let schema = FeatureSchema::new(0, 1, vec![3], vec![], 1).unwrap();
        let row = one_hot_row(
            &schema,
            &Features::new(vec![], vec![1]),
            &Features::new(vec![0.0], vec![]),
        );
        // the item contributes a single zero numeric entry after the user dummies
        assert_eq!(row, vec![0.0, 0.0, 1.0, 0.0]);

        let numeric = FeatureSchema::new(2, 1, vec![], vec![], 1).unwrap();
        let row = one_hot_row(
            &numeric,
            &Features::new(vec![0.3, 0.7], vec![]),
            &Features::new(vec![0.5], vec![]),
        );
        assert_eq!(row, vec![0.3, 0.7, 0.5]);

        let mixed = FeatureSchema::new(1, 1, vec![2], vec![2], 1).unwrap();
        assert_eq!(mixed.one_hot_width(), 6);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = dataset(&vec![vec![P, N]; 100]);
        let (a, b, c) = d.split(SplitRatios::standard_split(), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 10, 80));
        let (a2, b2, c2) = d.split(SplitRatios::standard_split(), 3).unwrap();
        assert_eq!(a.interactions(), a2.interactions());
        assert_eq!(b.interactions(), b2.interactions());
        assert_eq!(c.interactions(), c2.interactions());
        assert!(a.shares_tables_with(&d));
        assert!(SplitRatios::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        let all = SplitRatios::allow_empty(1.0, 0.0, 0.0).unwrap();
        let (a, b, c) = d.split(all, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (100, 0, 0));
    }

    #[test]
    fn ingestion_errors() {
        let schema = cat_schema(1);
        let users: BTreeMap<_, _> = [(1, Features::new(vec![], vec![0]))].into_iter().collect();
        let items: BTreeMap<_, _> = [(1, Features::new(vec![], vec![0]))].into_iter().collect();
        let dup = vec![
            Interaction::new(1, 1, vec![P]),
            Interaction::new(1, 1, vec![N]),
        ];
        assert!(matches!(
            Dataset::new(schema.clone(), users.clone(), items.clone(), dup),
            Err(Error::DuplicatePair { user: 1, item: 1 })
        ));
        let unknown = vec![Interaction::new(2, 1, vec![P])];
        assert!(matches!(
            Dataset::new(schema.clone(), users.clone(), items.clone(), unknown),
            Err(Error::UnknownUser(2))
        ));
        let bad_cat: BTreeMap<_, _> = [(1, Features::new(vec![], vec![3]))].into_iter().collect();
        assert!(Dataset::new(schema.clone(), bad_cat, items.clone(), vec![]).is_err());
        let numeric = FeatureSchema::new(1, 0, vec![], vec![2], 1).unwrap();
        let out_of_range: BTreeMap<_, _> =
            [(1, Features::new(vec![1.5], vec![]))].into_iter().collect();
        assert!(Dataset::new(numeric, out_of_range, items, vec![]).is_err());
    }

    #[test]
    fn schema_rules() {
        assert!(FeatureSchema::new(0, 1, vec![], vec![], 1).is_err());
        assert!(FeatureSchema::new(1, 1, vec![0], vec![], 1).is_err());
        assert!(FeatureSchema::new(1, 1, vec![], vec![], 0).is_err());
        let s = FeatureSchema::new(1, 2, vec![3, 4], vec![5], 3).unwrap();
        assert_eq!(s.lambda(), 1 + 2 + 7 + 5);
    }

    #[test]
    fn pair_indexing_matches_enumeration() {
        for t in 1..6 {
            for (k, (tp, tt)) in stage_pairs(t).into_iter().enumerate() {
                assert_eq!(pair_index(t, tp, tt), k);
            }
            assert_eq!(stage_pairs(t).len(), t * (t + 1) / 2);
        }
    }
}

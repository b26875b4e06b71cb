//! Synthetic multistage data drawn from a known nonnegative factor model.
//!
//! Draw order on the `Simulate` substream, which the tests re-execute:
//! 1. `a_{l,h}` for every `l`, `h`, `k`, then `b_{l,h}`, then `q_t`, each entry `z²` with `z ~ N(0, 1)`;
//! 2. for each observed pair, the user category vector then the item category vector,
//!    redrawing both when the pair is already present;
//! 3. for each stage `t = 1..=T`, one `N(0, 1)` noise draw per pair in pair order.
//!
//! Stage labels follow `y^t = sign(p^t + σ_t · noise_scale · √0.1 · z)` while `y^{t-1} = +1`,
//! with `p^t = (a∘b)·(1 − q_t)` and `σ_t` the population standard deviation of `p^t` over all
//! observed pairs.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, FeatureSchema, Features, Interaction, Label};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{substream, Stream};

/// `N(0, .1)` read as variance 0.1.
pub const NOISE_STD: f64 = 0.316_227_766_016_837_94;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub user_cardinalities: Vec<usize>,
    pub item_cardinalities: Vec<usize>,
    pub k: usize,
    pub stages: usize,
    pub omega0_size: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            user_cardinalities: vec![50, 30, 50],
            item_cardinalities: vec![100, 40],
            k: 20,
            stages: 2,
            omega0_size: 50_000,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn d1(&self) -> usize {
        self.user_cardinalities.len()
    }

    pub fn d2(&self) -> usize {
        self.item_cardinalities.len()
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        FeatureSchema::new(
            0,
            0,
            self.user_cardinalities.clone(),
            self.item_cardinalities.clone(),
            self.stages,
        )
    }

    pub fn user_universe(&self) -> u128 {
        self.user_cardinalities.iter().map(|&n| n as u128).product()
    }

    pub fn item_universe(&self) -> u128 {
        self.item_cardinalities.iter().map(|&m| m as u128).product()
    }

    /// Fraction of the user × item product universe left unobserved.
    pub fn missing_ratio(&self) -> f64 {
        1.0 - self.omega0_size as f64 / (self.user_universe() * self.item_universe()) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.d1() == 0 || self.d2() == 0 {
            return Err(Error::InvalidInput(
                "simulation needs at least one user and one item category".into(),
            ));
        }
        if self
            .user_cardinalities
            .iter()
            .chain(&self.item_cardinalities)
            .any(|&c| c == 0)
        {
            return Err(Error::InvalidInput("cardinalities must be positive".into()));
        }
        if self.k == 0 || self.stages == 0 || self.omega0_size == 0 {
            return Err(Error::InvalidInput(
                "K, T and the number of observed pairs must be positive".into(),
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidInput("noise scale must be nonnegative".into()));
        }
        let universe = self.user_universe().saturating_mul(self.item_universe());
        if (self.omega0_size as u128) > universe {
            return Err(Error::InvalidInput(format!(
                "{} observed pairs requested but only {universe} exist",
                self.omega0_size
            )));
        }
        if u64::try_from(self.user_universe()).is_err() || u64::try_from(self.item_universe()).is_err() {
            return Err(Error::InvalidInput("category universe too large for u64 ids".into()));
        }
        Ok(())
    }
}

/// Mixed-radix id of a 0-based category vector, first category varying fastest.
pub fn encode_id(categories: &[usize], cardinalities: &[usize]) -> u64 {
    let mut id = 0u64;
    for (&c, &n) in categories.iter().zip(cardinalities).rev() {
        id = id * n as u64 + c as u64;
    }
    id
}

pub fn decode_id(mut id: u64, cardinalities: &[usize]) -> Vec<usize> {
    cardinalities
        .iter()
        .map(|&n| {
            let c = (id % n as u64) as usize;
            id /= n as u64;
            c
        })
        .collect()
}

fn chi_square(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * z
}

fn draw_levels(rng: &mut ChaCha8Rng, cardinalities: &[usize], k: usize) -> Vec<Vec<Vec<f64>>> {
    cardinalities
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| (0..k).map(|_| chi_square(rng)).collect())
                .collect()
        })
        .collect()
}

fn draw_categories(rng: &mut ChaCha8Rng, cardinalities: &[usize]) -> Vec<usize> {
    cardinalities.iter().map(|&n| rng.random_range(0..n)).collect()
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: ModelParams,
    /// `σ_1..σ_T`.
    pub sigma: Vec<f64>,
}

pub fn generate_dataset(config: &SimConfig) -> Result<Simulation> {
    config.validate()?;
    let schema = config.schema()?;
    let k = config.k;
    let mut rng = substream(config.seed, Stream::Simulate);

    let mut truth = ModelParams::zeros(&schema, k);
    truth.user_factors = draw_levels(&mut rng, &config.user_cardinalities, k);
    truth.item_factors = draw_levels(&mut rng, &config.item_cardinalities, k);
    truth.stage_factors = (0..config.stages)
        .map(|_| (0..k).map(|_| chi_square(&mut rng)).collect())
        .collect();

    let mut seen = HashSet::with_capacity(config.omega0_size);
    let mut pairs = Vec::with_capacity(config.omega0_size);
    while pairs.len() < config.omega0_size {
        let s = draw_categories(&mut rng, &config.user_cardinalities);
        let o = draw_categories(&mut rng, &config.item_cardinalities);
        let key = (
            encode_id(&s, &config.user_cardinalities),
            encode_id(&o, &config.item_cardinalities),
        );
        if seen.insert(key) {
            pairs.push((key, s, o));
        }
    }

    let mut users = BTreeMap::new();
    let mut items = BTreeMap::new();
    let mut ab = Vec::with_capacity(pairs.len());
    for ((uid, iid), s, o) in &pairs {
        let user = Features::new(vec![], s.clone());
        let item = Features::new(vec![], o.clone());
        let a = truth.user_map(&user)?;
        let b = truth.item_map(&item)?;
        ab.push(a.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<f64>>());
        users.entry(*uid).or_insert(user);
        items.entry(*iid).or_insert(item);
    }

    let mut labels = vec![Vec::with_capacity(config.stages); pairs.len()];
    let mut alive = vec![true; pairs.len()];
    let mut sigma = Vec::with_capacity(config.stages);
    for q in &truth.stage_factors {
        let p: Vec<f64> = ab
            .iter()
            .map(|v| v.iter().zip(q).map(|(x, qk)| x * (1.0 - qk)).sum())
            .collect();
        let sd = population_std(&p);
        sigma.push(sd);
        for (idx, pt) in p.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let label = if alive[idx] {
                Label::from_value(pt + sd * config.noise_scale * NOISE_STD * z)
            } else {
                Label::Negative
            };
            alive[idx] = label.is_positive();
            labels[idx].push(label);
        }
    }

    let interactions = pairs
        .iter()
        .zip(labels)
        .map(|(((uid, iid), _, _), y)| Interaction::new(*uid, *iid, y))
        .collect();
    let dataset = Dataset::new(schema, users, items, interactions)?;
    Ok(Simulation {
        dataset,
        truth,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64, noise_scale: f64) -> SimConfig {
        SimConfig {
            user_cardinalities: vec![3],
            item_cardinalities: vec![2],
            k: 2,
            stages: 2,
            omega0_size: 6,
            noise_scale,
            seed,
        }
    }

    #[test]
    fn ids_round_trip() {
        let card = [50, 30, 50];
        for cats in [[0, 0, 0], [49, 29, 49], [3, 17, 8]] {
            assert_eq!(decode_id(encode_id(&cats, &card), &card), cats.to_vec());
        }
        assert_eq!(encode_id(&[1, 0], &[3, 2]), 1);
        assert_eq!(encode_id(&[0, 1], &[3, 2]), 3);
    }

    #[test]
    fn default_missing_ratio() {
        let r = SimConfig::default().missing_ratio();
        assert!((r - 0.9998).abs() < 5e-5, "{r}");
    }

    #[test]
    fn exhausts_tiny_universe_without_duplicates() {
        let sim = generate_dataset(&tiny(3, 1.0)).unwrap();
        assert_eq!(sim.dataset.len(), 6);
        assert!(sim.dataset.validate_chain().is_clean());
        assert!(generate_dataset(&SimConfig {
            omega0_size: 7,
            ..tiny(3, 1.0)
        })
        .is_err());
    }

    #[test]
    fn noiseless_labels_follow_the_truth() {
        let sim = generate_dataset(&SimConfig {
            omega0_size: 200,
            user_cardinalities: vec![5, 4],
            item_cardinalities: vec![6, 3],
            ..tiny(11, 0.0)
        })
        .unwrap();
        let d = &sim.dataset;
        for x in d.interactions() {
            let f = sim
                .truth
                .decision_values_for(d.user(x.user).unwrap(), d.item(x.item).unwrap())
                .unwrap();
            // f^{01} and f^{12}
            let expect1 = Label::from_value(f[0]);
            assert_eq!(x.label(1), expect1);
            let expect2 = if expect1.is_positive() {
                Label::from_value(f[2])
            } else {
                Label::Negative
            };
            assert_eq!(x.label(2), expect2);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_dataset(&SimConfig {
            k: 0,
            ..tiny(0, 1.0)
        })
        .is_err());
        assert!(generate_dataset(&SimConfig {
            noise_scale: -1.0,
            ..tiny(0, 1.0)
        })
        .is_err());
        assert!(generate_dataset(&SimConfig {
            item_cardinalities: vec![],
            ..tiny(0, 1.0)
        })
        .is_err());
    }
}

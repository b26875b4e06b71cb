use std::collections::BTreeMap;

use mmrs::data::{Dataset, FeatureSchema, Features, Interaction, Label};
use mmrs::model::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small chain-valid dataset with numeric and categorical features on both sides, T = 2.
pub fn numeric_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = FeatureSchema::new(2, 1, vec![3, 2], vec![3], 2).unwrap();
    let users: BTreeMap<u64, Features> = (0..5)
        .map(|i| {
            let u = vec![rng.random::<f64>(), rng.random::<f64>()];
            let s = vec![rng.random_range(0..3), rng.random_range(0..2)];
            (i, Features::new(u, s))
        })
        .collect();
    let items: BTreeMap<u64, Features> = (0..4)
        .map(|j| (j, Features::new(vec![rng.random::<f64>()], vec![rng.random_range(0..3)])))
        .collect();
    let mut interactions = Vec::new();
    for i in 0..5 {
        for j in 0..4 {
            if rng.random_bool(0.6) {
                let y1 = rng.random_bool(0.6);
                let y2 = y1 && rng.random_bool(0.5);
                let lab = |b: bool| if b { Label::Positive } else { Label::Negative };
                interactions.push(Interaction::new(i, j, vec![lab(y1), lab(y2)]));
            }
        }
    }
    if interactions.is_empty() {
        interactions.push(Interaction::new(0, 0, vec![Label::Positive, Label::Negative]));
    }
    Dataset::new(schema, users, items, interactions).unwrap()
}

/// Entrywise uniform [0, 1) parameters; q entries in [0, 0.6).
pub fn random_params(schema: &FeatureSchema, k: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = ModelParams::zeros(schema, k);
    for v in p
        .user_linear
        .iter_mut()
        .chain(p.item_linear.iter_mut())
        .chain(p.user_factors.iter_mut().flatten())
        .chain(p.item_factors.iter_mut().flatten())
        .flatten()
    {
        *v = rng.random::<f64>();
    }
    for v in p.stage_factors.iter_mut().flatten() {
        *v = 0.6 * rng.random::<f64>();
    }
    p
}

/// Random chain-valid dataset on a random small schema with `stages` stages.
pub fn chain_dataset(seed: u64, stages: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p1 = rng.random_range(0..3);
    let p2 = rng.random_range(0..2);
    let user_cards: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect();
    let item_cards: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect();
    let schema = FeatureSchema::new(p1, p2, user_cards.clone(), item_cards.clone(), stages).unwrap();
    let n_users = rng.random_range(2..8);
    let n_items = rng.random_range(2..8);
    let features = |p: usize, cards: &[usize], rng: &mut ChaCha8Rng| {
        Features::new(
            (0..p).map(|_| rng.random::<f64>()).collect(),
            cards.iter().map(|&n| rng.random_range(0..n)).collect(),
        )
    };
    let users: BTreeMap<u64, Features> = (0..n_users).map(|i| (i, features(p1, &user_cards, &mut rng))).collect();
    let items: BTreeMap<u64, Features> = (0..n_items).map(|j| (j, features(p2, &item_cards, &mut rng))).collect();
    let mut interactions = Vec::new();
    for i in 0..n_users {
        for j in 0..n_items {
            if rng.random_bool(0.7) {
                let mut alive = true;
                let labels = (0..stages)
                    .map(|_| {
                        alive = alive && rng.random_bool(0.7);
                        if alive {
                            Label::Positive
                        } else {
                            Label::Negative
                        }
                    })
                    .collect();
                interactions.push(Interaction::new(i, j, labels));
            }
        }
    }
    if interactions.is_empty() {
        interactions.push(Interaction::new(0, 0, vec![Label::Positive; stages]));
    }
    Dataset::new(schema, users, items, interactions).unwrap()
}

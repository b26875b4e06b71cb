mod common;

use mmrs::data::{stage_pairs, Dataset};
use mmrs::model::{model_objective, HyperParams, LossWeights, ModelParams, StageWeights};
use mmrs::simgen::{generate_dataset, SimConfig};
use mmrs::solver::{hinge, primal_objective};
use mmrs::trainer::{assemble_block, block_value, fit_with, init_params, BlockId, Execution};
use proptest::prelude::*;

use common::fixtures::{numeric_dataset, random_params};

/// Loss of the cells selected by `keep`, summed through the public decision function.
fn partial_loss(dataset: &Dataset, params: &ModelParams, hyper: &HyperParams, keep: impl Fn(usize) -> bool) -> f64 {
    let w = LossWeights::new(dataset, &hyper.weights, hyper.class_balance).unwrap();
    let pairs = stage_pairs(dataset.stages());
    let mut total = 0.0;
    for (cell, x) in dataset.interactions().iter().enumerate() {
        if !keep(cell) {
            continue;
        }
        for &(tp, t) in &pairs {
            if x.label(tp).is_positive() {
                let f = params.decision_value(dataset, x.user, x.item, tp, t).unwrap();
                let y = x.label(t);
                total += w.cost(tp, t, y) * hinge(y.as_f64() * f);
            }
        }
    }
    total
}

fn block_penalty(params: &ModelParams, hyper: &HyperParams, block: BlockId) -> f64 {
    let v = block_value(params, block);
    let ridge = match block {
        BlockId::UserLinear | BlockId::ItemLinear => hyper.lambda1,
        BlockId::UserLevel { .. } | BlockId::ItemLevel { .. } => hyper.lambda2,
        BlockId::Stage(_) => hyper.lambda3,
    };
    ridge * v.iter().map(|x| x * x).sum::<f64>()
}

fn cell_in_block(dataset: &Dataset, block: BlockId, cell: usize) -> bool {
    let x = &dataset.interactions()[cell];
    match block {
        BlockId::UserLevel { feature, level } => dataset.user(x.user).unwrap().categories[feature] == level,
        BlockId::ItemLevel { feature, level } => dataset.item(x.item).unwrap().categories[feature] == level,
        _ => true,
    }
}

fn check_consistency(dataset: &Dataset, params: &ModelParams, hyper: &HyperParams) {
    let total = model_objective(dataset, params, hyper).unwrap();
    let full_penalty = params.penalty(hyper.lambda1, hyper.lambda2, hyper.lambda3);
    for block in BlockId::all(dataset.schema()) {
        let spec = assemble_block(block, params, dataset, hyper).unwrap();
        let value = block_value(params, block);
        let block_obj = primal_objective(&spec, &value).unwrap();
        let excluded = match block {
            // q_r only enters pairs with t' < r ≤ t
            BlockId::Stage(r) => {
                let w = LossWeights::new(dataset, &hyper.weights, hyper.class_balance).unwrap();
                let mut s = 0.0;
                for x in dataset.interactions() {
                    for (tp, t) in stage_pairs(dataset.stages()) {
                        if x.label(tp).is_positive() && !(tp < r && r <= t) {
                            let f = params.decision_value(dataset, x.user, x.item, tp, t).unwrap();
                            let y = x.label(t);
                            s += w.cost(tp, t, y) * hinge(y.as_f64() * f);
                        }
                    }
                }
                s
            }
            _ => partial_loss(dataset, params, hyper, |c| !cell_in_block(dataset, block, c)),
        };
        let rebuilt = block_obj + (full_penalty - block_penalty(params, hyper, block)) + excluded;
        assert!(
            (rebuilt - total).abs() < 1e-9,
            "block {block}: {rebuilt} vs {total}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_objectives_rebuild_the_model_objective(seed in any::<u64>(), balance in any::<bool>()) {
        let dataset = numeric_dataset(seed);
        let params = random_params(dataset.schema(), 3, seed);
        let mut hyper = HyperParams::new(3, dataset.stages()).with_lambdas(0.3, 0.07, 0.02);
        hyper.class_balance = balance;
        check_consistency(&dataset, &params, &hyper);
        let mut next = hyper.clone();
        next.weights = StageWeights::next_stage(dataset.stages());
        check_consistency(&dataset, &params, &next);
    }
}

#[test]
fn single_sample_level_block_matches_expansion() {
    let dataset = numeric_dataset(3);
    let one = dataset.with_interactions(vec![dataset.interactions()[0].clone()]).unwrap();
    let x = &one.interactions()[0];
    let user = one.user(x.user).unwrap();
    let params = random_params(one.schema(), 2, 8);
    let hyper = HyperParams::new(2, one.stages());
    let block = BlockId::UserLevel { feature: 0, level: user.categories[0] };
    let spec = assemble_block(block, &params, &one, &hyper).unwrap();
    let b = params.item_map(one.item(x.item).unwrap()).unwrap();
    let mut expected = Vec::new();
    for (tp, t) in stage_pairs(one.stages()) {
        if !x.label(tp).is_positive() {
            continue;
        }
        let q = params.stage_vector(tp, t).unwrap();
        let feature: Vec<f64> = b.iter().zip(&q).map(|(u, v)| u * v).collect();
        let mut rest = params.user_map(user).unwrap();
        for (r, a) in rest.iter_mut().zip(&params.user_factors[0][user.categories[0]]) {
            *r -= a;
        }
        let drift: f64 = rest.iter().zip(&feature).map(|(u, v)| u * v).sum();
        expected.push((feature, drift, tp, t));
    }
    assert_eq!(spec.samples.len(), expected.len());
    for (s, (feature, drift, tp, t)) in spec.samples.iter().zip(&expected) {
        for (u, v) in s.x.iter().zip(feature) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((s.drift - drift).abs() < 1e-12);
        let margin: f64 = s.x.iter().zip(&block_value(&params, block)).map(|(u, v)| u * v).sum::<f64>() + s.drift;
        let f = params.decision_value(&one, x.user, x.item, *tp, *t).unwrap();
        assert!((margin - f).abs() < 1e-12);
    }
}

#[test]
fn parallel_levels_equal_sequential() {
    let sim = generate_dataset(&SimConfig {
        user_cardinalities: vec![6, 3],
        item_cardinalities: vec![5],
        k: 3,
        stages: 2,
        omega0_size: 80,
        noise_scale: 1.0,
        seed: 4,
    })
    .unwrap();
    let hyper = HyperParams::new(3, 2);
    let (a, _) = fit_with(&sim.dataset, &hyper, Execution::Sequential).unwrap();
    let (b, _) = fit_with(&sim.dataset, &hyper, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let init = init_params(sim.dataset.schema(), 3, 0).unwrap();
    assert!(init.values().all(|v| v >= 0.0));
}

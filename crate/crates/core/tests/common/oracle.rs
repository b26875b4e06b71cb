//! Brute-force reference solutions.

use mmrs::data::Label;
use mmrs::solver::{Bound, Sample, SubproblemSpec};
use rand::Rng;

/// Direct transcription of the block objective, summed naively.
pub fn naive_objective(spec: &SubproblemSpec, beta: &[f64]) -> f64 {
    let mut total = 0.0;
    for s in &spec.samples {
        let mut margin = s.drift;
        for j in 0..beta.len() {
            margin += beta[j] * s.x[j];
        }
        let y = if s.y == Label::Positive { 1.0 } else { -1.0 };
        let h = 1.0 - y * margin;
        if h > 0.0 {
            total += s.cost * h;
        }
    }
    let mut norm = 0.0;
    for b in beta {
        norm += b * b;
    }
    total + spec.ridge * norm
}

/// Projected subgradient descent with diminishing steps `1 / (2λ (k + 1))`.
///
/// Returns the best iterate seen, comparing plain iterates and running
/// suffix averages.
pub fn projected_subgradient(spec: &SubproblemSpec, iterations: usize) -> (Vec<f64>, f64) {
    let dim = spec.dim;
    let mut beta = vec![0.0; dim];
    let mut best = beta.clone();
    let mut best_value = naive_objective(spec, &beta);
    let mut avg = vec![0.0; dim];
    let mut avg_count = 0.0;
    let mut grad = vec![0.0; dim];
    let strong = 2.0 * spec.ridge;
    let check_every = 1000;
    for k in 0..iterations {
        for j in 0..dim {
            grad[j] = strong * beta[j];
        }
        for s in &spec.samples {
            let y = if s.y == Label::Positive { 1.0 } else { -1.0 };
            let mut margin = s.drift;
            for j in 0..dim {
                margin += beta[j] * s.x[j];
            }
            if 1.0 - y * margin > 0.0 {
                for j in 0..dim {
                    grad[j] -= s.cost * y * s.x[j];
                }
            }
        }
        let step = 1.0 / (strong * (k as f64 + 1.0));
        for j in 0..dim {
            beta[j] -= step * grad[j];
            if spec.bounds[j] == Bound::NonNegative && beta[j] < 0.0 {
                beta[j] = 0.0;
            }
        }
        if k >= iterations / 2 {
            avg_count += 1.0;
            for j in 0..dim {
                avg[j] += (beta[j] - avg[j]) / avg_count;
            }
        }
        if k % check_every == 0 || k + 1 == iterations {
            for candidate in [&beta, &avg] {
                if avg_count == 0.0 && std::ptr::eq(candidate, &avg) {
                    continue;
                }
                let v = naive_objective(spec, candidate);
                if v < best_value {
                    best_value = v;
                    best = candidate.clone();
                }
            }
        }
    }
    (best, best_value)
}

/// Random spec with at most 6 samples, dimension at most 3 and mixed bounds.
pub fn random_small_spec<R: Rng>(rng: &mut R) -> SubproblemSpec {
    let dim = rng.random_range(1..=3);
    let n = rng.random_range(1..=6);
    let bounds = (0..dim)
        .map(|_| {
            if rng.random_bool(0.5) {
                Bound::NonNegative
            } else {
                Bound::Free
            }
        })
        .collect();
    let samples = (0..n)
        .map(|_| {
            Sample::new(
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                if rng.random_bool(0.5) {
                    Label::Positive
                } else {
                    Label::Negative
                },
                rng.random_range(0.0..2.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    SubproblemSpec::new(dim, rng.random_range(0.1..1.0), bounds)
        .with_samples(samples)
        .with_tolerance(1e-10, 100_000)
}

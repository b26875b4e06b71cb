//! Weighted, drifted, bound-constrained linear hinge-loss classifier.
//!
//! Every training block reduces to
//!
//! ```text
//! minimize   Σ_k c_k · max(0, 1 − y_k (β·x_k + d_k)) + λ ‖β‖²
//! subject to β_j ≥ 0 for coordinates flagged nonnegative
//! ```
//!
//! solved by coordinate ascent on the dual. With `s = Σ_k α_k y_k x_k` the
//! primal is `β_j = s_j / 2λ` on free coordinates and `max(0, s_j / 2λ)` on
//! nonnegative ones, and the dual is
//! `D(α) = Σ_k α_k (1 − y_k d_k) − Σ_j φ_j(s_j) / 4λ` with `0 ≤ α_k ≤ c_k`,
//! where `φ_j(s) = s²` (free) or `max(0, s)²` (nonnegative).

use rand::seq::SliceRandom;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// V(u) = (1 − u)₊
pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    NonNegative,
    Free,
}

impl Bound {
    #[inline]
    fn project(self, v: f64) -> f64 {
        match self {
            Bound::NonNegative => v.max(0.0),
            Bound::Free => v,
        }
    }

    #[inline]
    fn phi(self, s: f64) -> f64 {
        let p = self.project(s);
        p * p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Label,
    pub cost: f64,
    pub drift: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Label, cost: f64, drift: f64) -> Self {
        Sample { x, y, cost, drift }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisitOrder {
    Cyclic,
    Shuffled { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct SubproblemSpec {
    pub dim: usize,
    pub samples: Vec<Sample>,
    pub ridge: f64,
    pub bounds: Vec<Bound>,
    pub tol: f64,
    pub max_iter: usize,
    pub order: VisitOrder,
}

impl SubproblemSpec {
    pub fn new(dim: usize, ridge: f64, bounds: Vec<Bound>) -> Self {
        SubproblemSpec {
            dim,
            samples: Vec::new(),
            ridge,
            bounds,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            order: VisitOrder::Cyclic,
        }
    }

    pub fn nonnegative(dim: usize, ridge: f64) -> Self {
        Self::new(dim, ridge, vec![Bound::NonNegative; dim])
    }

    pub fn free(dim: usize, ridge: f64) -> Self {
        Self::new(dim, ridge, vec![Bound::Free; dim])
    }

    pub fn with_samples(mut self, samples: Vec<Sample>) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_tolerance(mut self, tol: f64, max_iter: usize) -> Self {
        self.tol = tol;
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ridge.is_finite() {
            return Err(Error::NonFinite("ridge"));
        }
        if self.ridge <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "ridge must be positive, got {}",
                self.ridge
            )));
        }
        if self.bounds.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.bounds.len(),
            });
        }
        for s in &self.samples {
            if s.x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: s.x.len(),
                });
            }
            if !s.cost.is_finite() || !s.drift.is_finite() || s.x.iter().any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("sample"));
            }
            if s.cost < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "sample cost must be nonnegative, got {}",
                    s.cost
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution {
    pub beta: Vec<f64>,
    /// Dual variables in sample order, `0 ≤ α_k ≤ c_k`.
    pub alpha: Vec<f64>,
    pub primal_objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Best primal objective seen: the starting point, then one entry per sweep.
    pub objective_trace: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unchecked_objective(spec: &SubproblemSpec, beta: &[f64]) -> f64 {
    let loss: f64 = spec
        .samples
        .iter()
        .filter(|s| s.cost > 0.0)
        .map(|s| s.cost * hinge(s.y.as_f64() * (dot(beta, &s.x) + s.drift)))
        .sum();
    loss + spec.ridge * dot(beta, beta)
}

/// F(β) = Σ c_k (1 − y_k(β·x_k + d_k))₊ + λ‖β‖².
pub fn primal_objective(spec: &SubproblemSpec, beta: &[f64]) -> Result<f64> {
    if beta.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: beta.len(),
        });
    }
    Ok(unchecked_objective(spec, beta))
}

/// Largest violation of the optimality conditions at `(β, α)`; zero at an exact optimum.
///
/// Joins the projected dual gradient `g_k = 1 − y_k d_k − y_k x_k·β` (clipped
/// by whichever bound of `[0, c_k]` is active) with the primal stationarity
/// gap `2λ |β_j − proj_j(s_j / 2λ)|`.
pub fn kkt_residual(spec: &SubproblemSpec, beta: &[f64], alpha: &[f64]) -> Result<f64> {
    if beta.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: beta.len(),
        });
    }
    if alpha.len() != spec.samples.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.samples.len(),
            got: alpha.len(),
        });
    }
    let mut s = vec![0.0; spec.dim];
    let mut worst: f64 = 0.0;
    for (sample, &a) in spec.samples.iter().zip(alpha) {
        let y = sample.y.as_f64();
        for (sj, xj) in s.iter_mut().zip(&sample.x) {
            *sj += a * y * xj;
        }
        let g = 1.0 - y * sample.drift - y * dot(&sample.x, beta);
        worst = worst.max(projected_gradient(g, a, sample.cost).abs());
    }
    let two_lambda = 2.0 * spec.ridge;
    for ((b, sj), bound) in beta.iter().zip(&s).zip(&spec.bounds) {
        worst = worst.max(two_lambda * (b - bound.project(sj / two_lambda)).abs());
    }
    Ok(worst)
}

#[inline]
fn projected_gradient(g: f64, alpha: f64, cost: f64) -> f64 {
    if cost <= 0.0 {
        0.0
    } else if alpha <= 0.0 {
        g.max(0.0)
    } else if alpha >= cost {
        g.min(0.0)
    } else {
        g
    }
}

struct DualState<'a> {
    spec: &'a SubproblemSpec,
    alpha: Vec<f64>,
    s: Vec<f64>,
    beta: Vec<f64>,
}

impl<'a> DualState<'a> {
    fn new(spec: &'a SubproblemSpec, alpha: Vec<f64>) -> Self {
        let mut s = vec![0.0; spec.dim];
        for (sample, a) in spec.samples.iter().zip(&alpha) {
            let ya = sample.y.as_f64() * a;
            for (sj, xj) in s.iter_mut().zip(&sample.x) {
                *sj += ya * xj;
            }
        }
        let mut state = DualState {
            spec,
            alpha,
            s,
            beta: vec![0.0; spec.dim],
        };
        state.refresh_beta();
        state
    }

    fn refresh_beta(&mut self) {
        let two_lambda = 2.0 * self.spec.ridge;
        for ((b, sj), bound) in self.beta.iter_mut().zip(&self.s).zip(&self.spec.bounds) {
            *b = bound.project(sj / two_lambda);
        }
    }

    /// Change of the dual objective when α_k moves by `delta`.
    fn dual_change(&self, k: usize, delta: f64) -> f64 {
        let sample = &self.spec.samples[k];
        let y = sample.y.as_f64();
        let mut quad = 0.0;
        for ((sj, xj), bound) in self.s.iter().zip(&sample.x).zip(&self.spec.bounds) {
            if *xj != 0.0 {
                quad += bound.phi(sj + delta * y * xj) - bound.phi(*sj);
            }
        }
        delta * (1.0 - y * sample.drift) - quad / (4.0 * self.spec.ridge)
    }

    /// Upper bound on the dual curvature along coordinate k in the direction `dir`.
    fn curvature(&self, k: usize, dir: f64) -> f64 {
        let sample = &self.spec.samples[k];
        let y = sample.y.as_f64();
        let mut q = 0.0;
        for ((sj, xj), bound) in self.s.iter().zip(&sample.x).zip(&self.spec.bounds) {
            let active = match bound {
                Bound::Free => true,
                Bound::NonNegative => *sj > 0.0 || dir * y * xj > 0.0,
            };
            if active {
                q += xj * xj;
            }
        }
        q / (2.0 * self.spec.ridge)
    }

    fn apply(&mut self, k: usize, delta: f64) {
        let sample = &self.spec.samples[k];
        let y = sample.y.as_f64();
        let two_lambda = 2.0 * self.spec.ridge;
        self.alpha[k] += delta;
        for (j, xj) in sample.x.iter().enumerate() {
            if *xj != 0.0 {
                self.s[j] += delta * y * xj;
                self.beta[j] = self.spec.bounds[j].project(self.s[j] / two_lambda);
            }
        }
    }

    fn update(&mut self, k: usize) {
        let sample = &self.spec.samples[k];
        let c = sample.cost;
        let a = self.alpha[k];
        let y = sample.y.as_f64();
        let g = 1.0 - y * sample.drift - y * dot(&sample.x, &self.beta);
        if projected_gradient(g, a, c) == 0.0 {
            return;
        }
        let q = self.curvature(k, g.signum());
        let target = if q > 0.0 {
            (a + g / q).clamp(0.0, c)
        } else if g > 0.0 {
            c
        } else {
            0.0
        };
        let mut delta = target - a;
        let mut halvings = 0;
        while self.dual_change(k, delta) < 0.0 {
            if halvings == 60 {
                return;
            }
            delta *= 0.5;
            halvings += 1;
        }
        if delta != 0.0 {
            self.apply(k, delta);
            // keep the box exact after rounding
            self.alpha[k] = self.alpha[k].clamp(0.0, c);
        }
    }
}

/// Solves from α = 0.
pub fn solve_subproblem(spec: &SubproblemSpec) -> Result<SubproblemSolution> {
    solve_subproblem_warm(spec, None)
}

/// Solves starting from the dual point `warm` (clipped into the box).
pub fn solve_subproblem_warm(
    spec: &SubproblemSpec,
    warm: Option<&[f64]>,
) -> Result<SubproblemSolution> {
    spec.validate()?;
    let n = spec.samples.len();
    let mut alpha = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            })
        }
        None => vec![0.0; n],
    };
    for (a, s) in alpha.iter_mut().zip(&spec.samples) {
        *a = if a.is_finite() { a.clamp(0.0, s.cost) } else { 0.0 };
    }

    let active: Vec<usize> = (0..n).filter(|&k| spec.samples[k].cost > 0.0).collect();
    let mut state = DualState::new(spec, alpha);
    let mut best_objective = unchecked_objective(spec, &state.beta);
    let mut best = (state.alpha.clone(), state.beta.clone());
    let mut trace = vec![best_objective];

    let mut converged = kkt_residual(spec, &state.beta, &state.alpha)? <= spec.tol;
    let mut sweeps = 0;
    if spec.dim > 0 && !active.is_empty() {
        let mut order = active.clone();
        let mut rng = match spec.order {
            VisitOrder::Shuffled { seed } => Some(substream(seed, Stream::SolverOrder)),
            VisitOrder::Cyclic => None,
        };
        while !converged && sweeps < spec.max_iter {
            if let Some(rng) = rng.as_mut() {
                order.shuffle(rng);
            }
            for &k in &order {
                state.update(k);
            }
            sweeps += 1;
            // s drifts under incremental updates; resync every so often
            if sweeps % 64 == 0 {
                state = DualState::new(spec, state.alpha);
            }
            let objective = unchecked_objective(spec, &state.beta);
            converged = kkt_residual(spec, &state.beta, &state.alpha)? <= spec.tol;
            if objective < best_objective {
                best_objective = objective;
                best = (state.alpha.clone(), state.beta.clone());
            }
            trace.push(best_objective);
        }
    }

    // a converged iterate wins over an earlier one that only looks better by rounding
    let (alpha, beta) = if converged { (state.alpha, state.beta) } else { best };
    let kkt = kkt_residual(spec, &beta, &alpha)?;
    Ok(SubproblemSolution {
        primal_objective: unchecked_objective(spec, &beta),
        kkt_residual: kkt,
        converged: kkt <= spec.tol,
        beta,
        alpha,
        sweeps,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    fn one(y: Label, bound: Bound) -> SubproblemSpec {
        SubproblemSpec::new(1, 0.5, vec![bound])
            .with_samples(vec![Sample::new(vec![1.0], y, 1.0, 0.0)])
            .with_tolerance(1e-12, 1000)
    }

    #[test]
    fn closed_form_one_dimensional_cases() {
        // max(0, 1 − β) + 0.5β² is minimized at β = 1
        let sol = solve_subproblem(&one(P, Bound::NonNegative)).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-12);
        assert!((sol.primal_objective - 0.5).abs() < 1e-12);
        assert!(sol.converged);

        let sol = solve_subproblem(&one(N, Bound::NonNegative)).unwrap();
        assert_eq!(sol.beta[0], 0.0);
        assert!((sol.primal_objective - 1.0).abs() < 1e-12);

        let sol = solve_subproblem(&one(N, Bound::Free)).unwrap();
        assert!((sol.beta[0] + 1.0).abs() < 1e-12);
        assert!((sol.primal_objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_costs_give_pure_ridge() {
        let spec = SubproblemSpec::free(2, 0.3).with_samples(vec![
            Sample::new(vec![1.0, -2.0], P, 0.0, 0.0),
            Sample::new(vec![0.5, 1.0], N, 0.0, 0.3),
        ]);
        let sol = solve_subproblem(&spec).unwrap();
        assert_eq!(sol.beta, vec![0.0, 0.0]);
        assert_eq!(sol.alpha, vec![0.0, 0.0]);
        assert_eq!(sol.sweeps, 0);
    }

    #[test]
    fn degenerate_dimensions() {
        let empty = SubproblemSpec::nonnegative(0, 1.0)
            .with_samples(vec![Sample::new(vec![], P, 1.0, 0.5)]);
        let sol = solve_subproblem(&empty).unwrap();
        assert!(sol.beta.is_empty());
        assert!((sol.primal_objective - 0.5).abs() < 1e-15);
        let no_samples = SubproblemSpec::nonnegative(3, 1.0);
        assert_eq!(solve_subproblem(&no_samples).unwrap().beta, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = one(P, Bound::Free);
        spec.ridge = 0.0;
        assert!(solve_subproblem(&spec).is_err());
        let mut spec = one(P, Bound::Free);
        spec.samples[0].x[0] = f64::NAN;
        assert!(matches!(solve_subproblem(&spec), Err(Error::NonFinite(_))));
        let spec = one(P, Bound::Free);
        assert!(matches!(
            primal_objective(&spec, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let spec = SubproblemSpec::free(1, 1.0)
            .with_samples(vec![Sample::new(vec![1.0], P, 1.0, 0.0)]);
        assert_eq!(primal_objective(&spec, &[0.0]).unwrap(), 1.0);
        let spec = SubproblemSpec::free(1, 1.0)
            .with_samples(vec![Sample::new(vec![1.0], P, 1.0, 2.0)]);
        assert_eq!(primal_objective(&spec, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn residual_detects_optimum_and_perturbation() {
        let spec = one(P, Bound::NonNegative);
        let sol = solve_subproblem(&spec).unwrap();
        assert!(kkt_residual(&spec, &sol.beta, &sol.alpha).unwrap() < 1e-12);
        let shifted = [sol.beta[0] + 0.5];
        assert!(kkt_residual(&spec, &shifted, &sol.alpha).unwrap() > 0.1);
    }

    #[test]
    fn shuffled_order_reaches_same_optimum() {
        let samples = vec![
            Sample::new(vec![1.0, 0.2], P, 0.7, 0.1),
            Sample::new(vec![-0.4, 1.0], N, 1.2, -0.3),
            Sample::new(vec![0.3, 0.3], P, 0.5, 0.0),
        ];
        let mut spec = SubproblemSpec::free(2, 0.2)
            .with_samples(samples)
            .with_tolerance(1e-10, 10_000);
        let cyclic = solve_subproblem(&spec).unwrap();
        spec.order = VisitOrder::Shuffled { seed: 9 };
        let shuffled = solve_subproblem(&spec).unwrap();
        assert!((cyclic.primal_objective - shuffled.primal_objective).abs() < 1e-8);
    }

    #[test]
    fn warm_start_is_respected() {
        let spec = one(P, Bound::NonNegative);
        let sol = solve_subproblem_warm(&spec, Some(&[1.0])).unwrap();
        assert_eq!(sol.sweeps, 0);
        assert!((sol.beta[0] - 1.0).abs() < 1e-15);
        assert!(solve_subproblem_warm(&spec, Some(&[1.0, 2.0])).is_err());
    }
}

//! Posterior predictions for `u` and `f`, and max-variance active learning.
//!
//! For a query `x` let `a` hold the covariances between `u(x)` and every
//! observation and `b` those between `f(x)` and every observation. Then
//!
//! ```text
//! ū(x) = a K⁻¹ y      V_u(x) = g(x, x) - a K⁻¹ aᵀ
//! f̄(x) = b K⁻¹ y      V_f(x) = k(x, x) - b K⁻¹ bᵀ
//! ```
//!
//! with `g = ρ² g₁ + g₂` and `k = ρ² k₁ + k₂`.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::benchmarks::{self, ProblemSpec};
use crate::error::check_dim;
use crate::linalg::dot;
use crate::model::{covariance, train, Source, TrainConfig, TrainedModel};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

/// Raw variances below `-VARIANCE_GATE · max(prior, 1)` indicate an
/// assembly error rather than roundoff.
pub const VARIANCE_GATE: f64 = 1e-10;

/// Means and variances at a batch of query points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorPrediction {
    pub mean: Vec<f64>,
    /// Posterior variance, clamped at zero.
    pub variance: Vec<f64>,
    /// Smallest variance before clamping, relative to `max(prior, 1)`.
    /// `+∞` for an empty batch.
    pub min_raw_variance: f64,
}

impl PosteriorPrediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| libm::sqrt(*v)).collect()
    }

    /// `false` if any raw variance fell below the numerical floor.
    pub fn passes_variance_gate(&self) -> bool {
        self.min_raw_variance >= -VARIANCE_GATE
    }
}

fn predict<Q: AsRef<[f64]>>(
    model: &TrainedModel,
    queries: &[Q],
    target: Source,
) -> Result<PosteriorPrediction> {
    let dataset = model.dataset();
    let hp = model.hyperparams();
    let op = model.compiled_operator();
    let chol = model.cholesky();
    let entries: Vec<(Source, &[f64])> = dataset.entries().collect();
    let mut out = PosteriorPrediction {
        mean: Vec::with_capacity(queries.len()),
        variance: Vec::with_capacity(queries.len()),
        min_raw_variance: f64::INFINITY,
    };
    let mut a = Vec::with_capacity(entries.len());
    for q in queries {
        let x = q.as_ref();
        check_dim(dataset.dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query points must be finite"));
        }
        a.clear();
        a.extend(
            entries
                .iter()
                .map(|(s, xs)| covariance(op, hp, target, x, *s, xs)),
        );
        let mean = dot(&a, model.weights());
        let prior = covariance(op, hp, target, x, target, x);
        chol.solve_lower_in_place(&mut a);
        let raw = prior - dot(&a, &a);
        out.min_raw_variance = out.min_raw_variance.min(raw / prior.max(1.0));
        out.mean.push(mean);
        out.variance.push(raw.max(0.0));
    }
    Ok(out)
}

/// Posterior of the solution `u` at each query.
///
/// Requires at least one anchor observation; without anchors the solution is
/// only determined up to the null space of the operator.
pub fn predict_u<Q: AsRef<[f64]>>(
    model: &TrainedModel,
    queries: &[Q],
) -> Result<PosteriorPrediction> {
    if model.dataset().anchors.is_empty() {
        return Err(Error::invalid(
            "a solution posterior needs at least one anchor observation",
        ));
    }
    predict(model, queries, Source::Anchor)
}

/// Posterior of the high-fidelity forcing `f` at each query.
pub fn predict_f<Q: AsRef<[f64]>>(
    model: &TrainedModel,
    queries: &[Q],
) -> Result<PosteriorPrediction> {
    predict(model, queries, Source::High)
}

/// Candidate with the largest forcing variance. Ties go to the lowest index.
pub fn select_next<Q: AsRef<[f64]>>(
    model: &TrainedModel,
    candidates: &[Q],
) -> Result<(usize, Vec<f64>)> {
    let (idx, _) = argmax_variance(model, candidates)?;
    Ok((idx, candidates[idx].as_ref().to_vec()))
}

fn argmax_variance<Q: AsRef<[f64]>>(
    model: &TrainedModel,
    candidates: &[Q],
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidate list is empty"));
    }
    let pred = predict_f(model, candidates)?;
    let mut best = (0, pred.variance[0]);
    for (i, v) in pred.variance.iter().enumerate().skip(1) {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    Ok(best)
}

/// One row of the active-learning history.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveIteration {
    /// 0 for the initial dataset.
    pub iteration: usize,
    /// `(n0, n1, n2)` of the dataset the model was trained on.
    pub sizes: [usize; 3],
    /// The point this iteration's model selects for the next observation.
    pub selected: Vec<f64>,
    /// Largest forcing variance over the candidates.
    pub max_variance_f: f64,
    pub rel_error_u: Option<f64>,
    pub rel_error_f: Option<f64>,
}

/// History of an active-learning run: `budget + 1` entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActiveLearningHistory {
    pub iterations: Vec<ActiveIteration>,
}

/// Successful run: history plus the model trained on the final dataset.
#[derive(Debug, Clone)]
pub struct ActiveLoopOutcome {
    pub history: ActiveLearningHistory,
    pub model: TrainedModel,
}

/// Failed run: the iterations that completed and the error that stopped it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("active learning stopped after {} iterations: {error}", history.iterations.len())]
pub struct ActiveLoopError {
    pub history: ActiveLearningHistory,
    pub error: Error,
}

/// Runs `budget` rounds of train, select, observe, augment.
///
/// The initial dataset is drawn with `config.seed`. Every round retrains from
/// scratch with a seed derived from `config.seed` and the round index, and
/// new observations of the high-fidelity forcing receive the problem's
/// high-fidelity noise.
pub fn run_active_loop<Q: AsRef<[f64]>>(
    problem: &ProblemSpec,
    budget: usize,
    config: &TrainConfig,
    candidates: &[Q],
) -> core::result::Result<ActiveLoopOutcome, ActiveLoopError> {
    let mut history = ActiveLearningHistory::default();
    let fail = |history: ActiveLearningHistory, error: Error| ActiveLoopError { history, error };
    let eval = match benchmarks::evaluation_points(problem) {
        Ok(e) => e,
        Err(e) => return Err(fail(history, e)),
    };
    let exact_u: Option<Vec<f64>> = problem.u_exact.map(|u| eval.iter().map(|x| u(x)).collect());
    let exact_f: Vec<f64> = eval.iter().map(|x| (problem.f_high)(x)).collect();
    let mut dataset = match benchmarks::generate_observations(problem, config.seed) {
        Ok(d) => d,
        Err(e) => return Err(fail(history, e)),
    };
    let noise_std = problem.noise_std[2];

    for iteration in 0..=budget {
        let round = TrainConfig {
            seed: derive_seed(config.seed, iteration as u64),
            ..config.clone()
        };
        let step = (|| -> Result<(TrainedModel, ActiveIteration)> {
            let model = train(dataset.clone(), &problem.operator, &round)?;
            let (idx, max_variance_f) = argmax_variance(&model, candidates)?;
            let rel_error_u = match &exact_u {
                Some(exact) if !model.dataset().anchors.is_empty() => Some(
                    benchmarks::rel_l2_error(&predict_u(&model, &eval)?.mean, exact)?,
                ),
                _ => None,
            };
            let rel_error_f =
                benchmarks::rel_l2_error(&predict_f(&model, &eval)?.mean, &exact_f).ok();
            let entry = ActiveIteration {
                iteration,
                sizes: dataset.sizes(),
                selected: candidates[idx].as_ref().to_vec(),
                max_variance_f,
                rel_error_u,
                rel_error_f,
            };
            Ok((model, entry))
        })();
        let (model, entry) = match step {
            Ok(s) => s,
            Err(e) => return Err(fail(history, e)),
        };
        if iteration == budget {
            history.iterations.push(entry);
            return Ok(ActiveLoopOutcome { history, model });
        }
        let x = &entry.selected;
        let eps: f64 =
            StandardNormal.sample(&mut stream_rng(config.seed, (1 << 32) + iteration as u64));
        let y = (problem.f_high)(x) + noise_std * eps;
        if let Err(e) = dataset.high.push(x, y) {
            return Err(fail(history, e));
        }
        history.iterations.push(entry);
    }
    Err(fail(
        history,
        Error::Numerical("active loop ended without a final model".into()),
    ))
}

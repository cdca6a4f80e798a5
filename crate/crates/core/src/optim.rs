//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The objective is a closure `f(x, grad) -> Option<value>`; returning `None`
//! marks `x` as infeasible (for example a covariance matrix that cannot be
//! factorized) and the line search backs off.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of correction pairs kept.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `max_i |∂f/∂x_i|` falls below this.
    pub gradient_tolerance: f64,
    /// Stop once the relative decrease of `f` over one iteration falls below this.
    pub function_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            function_tolerance: 1e-13,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions could be found.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

struct Point {
    step: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

struct Probe<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    trial: Vec<f64>,
    grad: Vec<f64>,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> Option<f64>> Probe<'_, F> {
    fn eval(&mut self, step: f64) -> Option<Point> {
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.dir) {
            *t = x + step * d;
        }
        self.evaluations += 1;
        let value = (self.f)(&self.trial, &mut self.grad)?;
        if !value.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(Point {
            step,
            value,
            slope: dot(&self.grad, self.dir),
            grad: self.grad.clone(),
        })
    }
}

/// Minimizes `f` starting from `x0`.
///
/// Fails only if `f` cannot be evaluated at `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &LbfgsConfig) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad).filter(|v| v.is_finite()).ok_or_else(|| {
        Error::Numerical("objective cannot be evaluated at the initial point".into())
    })?;
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; config.memory.max(1)];

    let max_abs = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if max_abs(&grad) <= config.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        // Two-loop recursion: dir = -H g.
        dir.copy_from_slice(&grad);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= alpha[k] * yi;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha[k] - beta) * si;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope0 = dot(&dir, &grad);
        if !(slope0 < 0.0) {
            history.clear();
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope0 = dot(&dir, &grad);
        }
        let initial_step = if history.is_empty() {
            (1.0 / libm::sqrt(dot(&grad, &grad))).min(1.0)
        } else {
            1.0
        };

        let mut probe = Probe {
            f: &mut f,
            x: &x,
            dir: &dir,
            trial: vec![0.0; n],
            grad: vec![0.0; n],
            evaluations: 0,
        };
        let accepted = line_search(&mut probe, value, slope0, initial_step, config);
        evaluations += probe.evaluations;
        let Some(point) = accepted else {
            if history.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            history.clear();
            continue;
        };
        let new_x: Vec<f64> = x
            .iter()
            .zip(&dir)
            .map(|(a, d)| a + point.step * d)
            .collect();
        let new_grad = point.grad;
        let new_value = point.value;
        iterations += 1;

        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = value - new_value;
        x = new_x;
        grad = new_grad;
        value = new_value;
        if libm::fabs(decrease) <= config.function_tolerance * libm::fabs(value).max(1.0) {
            termination = if max_abs(&grad) <= config.gradient_tolerance {
                Termination::GradientTolerance
            } else {
                Termination::FunctionTolerance
            };
            break;
        }
    }
    Ok(LbfgsOutcome {
        x,
        value,
        gradient: grad,
        iterations,
        evaluations,
        termination,
    })
}

/// Strong-Wolfe line search (bracketing followed by zoom).
fn line_search<F>(
    probe: &mut Probe<'_, F>,
    f0: f64,
    slope0: f64,
    initial_step: f64,
    config: &LbfgsConfig,
) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let armijo = |p: &Point| p.value <= f0 + config.c1 * p.step * slope0;
    let curvature = |p: &Point| libm::fabs(p.slope) <= -config.c2 * slope0;

    let mut prev = Point {
        step: 0.0,
        value: f0,
        slope: slope0,
        grad: Vec::new(),
    };
    let mut step = initial_step;
    let mut steps = 0;
    while steps < config.max_line_search_steps {
        steps += 1;
        let Some(p) = probe.eval(step) else {
            // Infeasible: shrink towards the last good point.
            step = prev.step + 0.5 * (step - prev.step);
            if step - prev.step < 1e-16 * step.max(1.0) {
                break;
            }
            continue;
        };
        if !armijo(&p) || (prev.step > 0.0 && p.value >= prev.value) {
            return zoom(probe, prev, p, f0, slope0, config, steps);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.slope >= 0.0 {
            return zoom(probe, p, prev, f0, slope0, config, steps);
        }
        prev = p;
        step *= 2.0;
    }
    (prev.step > 0.0).then_some(prev)
}

fn zoom<F>(
    probe: &mut Probe<'_, F>,
    mut lo: Point,
    mut hi: Point,
    f0: f64,
    slope0: f64,
    config: &LbfgsConfig,
    mut steps: usize,
) -> Option<Point>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    while steps < config.max_line_search_steps {
        steps += 1;
        let width = hi.step - lo.step;
        if libm::fabs(width) <= 1e-14 * lo.step.max(hi.step).max(1e-300) {
            break;
        }
        let mut step = cubic_minimizer(&lo, &hi).unwrap_or(lo.step + 0.5 * width);
        let (a, b) = if lo.step < hi.step {
            (lo.step, hi.step)
        } else {
            (hi.step, lo.step)
        };
        let margin = 0.1 * (b - a);
        if !(step > a + margin && step < b - margin) {
            step = 0.5 * (a + b);
        }
        let Some(p) = probe.eval(step) else {
            hi = Point {
                step,
                value: f64::INFINITY,
                slope: f64::NAN,
                grad: Vec::new(),
            };
            continue;
        };
        if p.value > f0 + config.c1 * step * slope0 || p.value >= lo.value {
            hi = p;
        } else {
            if libm::fabs(p.slope) <= -config.c2 * slope0 {
                return Some(p);
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = core::mem::replace(&mut lo, p);
            } else {
                lo = p;
            }
        }
    }
    // Accept a point with sufficient decrease even if curvature is not met.
    (lo.step > 0.0 && lo.value < f0).then_some(lo)
}

fn cubic_minimizer(a: &Point, b: &Point) -> Option<f64> {
    if !(a.value.is_finite() && b.value.is_finite() && a.slope.is_finite() && b.slope.is_finite()) {
        return None;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = libm::copysign(libm::sqrt(disc), b.step - a.step);
    let denom = b.slope - a.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let step = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
    step.is_finite().then_some(step)
}

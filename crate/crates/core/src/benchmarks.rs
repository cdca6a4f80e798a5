//! Reference problems with known solutions, seeded data generation and
//! error metrics.
//!
//! | name | operator | `D` | `(n0, n1, n2)` |
//! |------|----------|-----|----------------|
//! | `integro1d` | `u' + ∫₀ˣ u` | 1 | 1, 15, 3 |
//! | `poisson2d` | `Δu` | 2 | 100, 0, 4 |
//! | `adr1d` | `u_t + u_x - u_xx - u` | 2 | 10, 30, 10 |
//! | `poisson10d` | `Δu` | 10 | 40, 60, 20 |
//! | `fractional1d` | `D^0.3 u - u` | 1 | 2, 15, 4 |

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::check_dim;
use crate::model::{Frozen, MultiFidelityDataset, ObservationBlock, TrainedModel};
use crate::operators::{apply_operator_numeric, LinearOperatorSpec, QuadratureSpec};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// A scalar function on the domain.
pub type ScalarField = fn(&[f64]) -> f64;

/// Names accepted by [`make_problem`].
pub const PROBLEM_NAMES: [&str; 5] = [
    "integro1d",
    "poisson2d",
    "adr1d",
    "poisson10d",
    "fractional1d",
];

/// Seed of the random evaluation points used for `D >= 3`.
pub const EVAL_SEED: u64 = 20_170_301;

/// Noise variance held fixed for data known to be noise-free.
pub const NOISE_FREE_VARIANCE: f64 = 1e-8;

/// Fractional order of `fractional1d`.
pub const FRACTIONAL_ALPHA: f64 = 0.3;

/// Where anchor observations of `u` are placed.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorPolicy {
    /// Uniform points on the faces `x[dim] = value`. With `stratified` the
    /// anchors are split evenly over the faces; otherwise every anchor picks
    /// a face uniformly at random.
    Boundary {
        faces: Vec<(usize, f64)>,
        stratified: bool,
    },
    /// Uniform points in the interior of the domain.
    InteriorRandom,
    /// Fixed locations.
    FixedList(Vec<Vec<f64>>),
}

/// A candidate `(u, f)` pair that was considered and rejected because it
/// fails the operator identity.
#[derive(Debug, Clone)]
pub struct RejectedReading {
    pub description: &'static str,
    pub u_exact: ScalarField,
    pub f_high: ScalarField,
}

/// Complete definition of a reference problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: &'static str,
    pub operator: LinearOperatorSpec,
    pub f_high: ScalarField,
    pub f_low: ScalarField,
    pub u_exact: Option<ScalarField>,
    /// Noise standard deviations `(anchor, low, high)`.
    pub noise_std: [f64; 3],
    /// `(n0, n1, n2)`.
    pub sample_sizes: [usize; 3],
    /// Per-dimension `(lower, upper)` bounds.
    pub domain: Vec<(f64, f64)>,
    pub anchor_policy: AnchorPolicy,
    /// Parameters the reference setup holds fixed during training.
    pub frozen: Frozen,
    pub rejected_readings: Vec<RejectedReading>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.operator.validate()?;
        if self.domain.is_empty() {
            return Err(Error::invalid(
                "problem domain must have at least one dimension",
            ));
        }
        if let Some(d) = self.operator.input_dim() {
            check_dim(d, self.dim())?;
        }
        if self
            .domain
            .iter()
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(Error::invalid(
                "domain bounds must be finite with lower < upper",
            ));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(
                "noise standard deviations must be finite and >= 0",
            ));
        }
        match &self.anchor_policy {
            AnchorPolicy::Boundary { faces, stratified } => {
                if faces.is_empty() || faces.iter().any(|(d, _)| *d >= self.dim()) {
                    return Err(Error::invalid("boundary faces must name valid dimensions"));
                }
                if *stratified && !self.sample_sizes[0].is_multiple_of(faces.len()) {
                    return Err(Error::invalid(
                        "stratified anchors must divide evenly over the faces",
                    ));
                }
            }
            AnchorPolicy::InteriorRandom => {}
            AnchorPolicy::FixedList(points) => {
                check_dim(points.len(), self.sample_sizes[0])?;
                for p in points {
                    check_dim(self.dim(), p.len())?;
                }
            }
        }
        if self.sample_sizes.iter().sum::<usize>() == 0 {
            return Err(Error::invalid(
                "problem must request at least one observation",
            ));
        }
        Ok(())
    }

    /// Same problem without low-fidelity data.
    pub fn single_fidelity(&self) -> Self {
        let mut p = self.clone();
        p.sample_sizes[1] = 0;
        p
    }

    fn uniform_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.domain
            .iter()
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect()
    }
}

fn integro_u(x: &[f64]) -> f64 {
    libm::sin(2.0 * PI * x[0])
}

fn integro_f2(x: &[f64]) -> f64 {
    let s = libm::sin(PI * x[0]);
    2.0 * PI * libm::cos(2.0 * PI * x[0]) + s * s / PI
}

fn integro_f1(x: &[f64]) -> f64 {
    0.8 * integro_f2(x) - 5.0 * x[0]
}

fn poisson2d_u(x: &[f64]) -> f64 {
    libm::sin(PI * x[0]) * libm::sin(PI * x[1])
}

fn poisson2d_f(x: &[f64]) -> f64 {
    -2.0 * PI * PI * poisson2d_u(x)
}

/// Inputs are `(t, x)`.
fn adr_u(x: &[f64]) -> f64 {
    libm::exp(-x[0]) * libm::sin(2.0 * PI * x[1])
}

fn adr_f2(x: &[f64]) -> f64 {
    let k = 2.0 * PI * x[1];
    libm::exp(-x[0]) * (2.0 * PI * libm::cos(k) + 2.0 * (2.0 * PI * PI - 1.0) * libm::sin(k))
}

fn adr_f1(x: &[f64]) -> f64 {
    0.8 * adr_f2(x) - 5.0 * x[0] * x[1] - 20.0
}

fn adr_u_half_frequency(x: &[f64]) -> f64 {
    libm::exp(-x[0]) * libm::sin(PI * x[1])
}

fn poisson10d_u(x: &[f64]) -> f64 {
    libm::sin(2.0 * PI * x[0]) * libm::sin(2.0 * PI * x[2])
}

fn poisson10d_f2(x: &[f64]) -> f64 {
    -8.0 * PI * PI * poisson10d_u(x)
}

fn poisson10d_f1(x: &[f64]) -> f64 {
    0.8 * poisson10d_f2(x) - 40.0 * x.iter().product::<f64>() + 30.0
}

fn fractional_u(x: &[f64]) -> f64 {
    fractional_exact_complex(x[0], FRACTIONAL_ALPHA).re
}

fn fractional_f2(x: &[f64]) -> f64 {
    2.0 * PI * libm::cos(2.0 * PI * x[0]) - libm::sin(2.0 * PI * x[0])
}

fn fractional_f1(x: &[f64]) -> f64 {
    0.8 * fractional_f2(x) - 5.0 * x[0]
}

/// Exact solution of `D^α u - u = 2π cos 2πx - sin 2πx`, evaluated in
/// complex arithmetic with principal-branch powers. The imaginary part is
/// zero up to roundoff.
pub fn fractional_exact_complex(x: f64, alpha: f64) -> Complex64 {
    let i = Complex64::i();
    let two_pi = 2.0 * PI;
    let minus = (-i + two_pi) / (Complex64::new(0.0, -two_pi).powf(alpha) - 1.0);
    let plus = (i + two_pi) / (Complex64::new(0.0, two_pi).powf(alpha) - 1.0);
    0.5 * (-i * two_pi * x).exp() * (minus + (i * 2.0 * two_pi * x).exp() * plus)
}

/// Builds a named reference problem.
pub fn make_problem(name: &str) -> Result<ProblemSpec> {
    let unit = |d: usize| vec![(0.0, 1.0); d];
    let v01 = libm::sqrt(0.01);
    let v3 = libm::sqrt(0.3);
    let v05 = libm::sqrt(0.05);
    let spec = match name {
        "integro1d" => ProblemSpec {
            name: "integro1d",
            operator: LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
            f_high: integro_f2,
            f_low: integro_f1,
            u_exact: Some(integro_u),
            noise_std: [0.0, v3, v05],
            sample_sizes: [1, 15, 3],
            domain: unit(1),
            anchor_policy: AnchorPolicy::FixedList(vec![vec![0.0]]),
            frozen: Frozen::default(),
            rejected_readings: Vec::new(),
        },
        "poisson2d" => ProblemSpec {
            name: "poisson2d",
            operator: LinearOperatorSpec::Laplacian { dim: 2 },
            f_high: poisson2d_f,
            f_low: poisson2d_f,
            u_exact: Some(poisson2d_u),
            noise_std: [0.0; 3],
            sample_sizes: [100, 0, 4],
            domain: unit(2),
            anchor_policy: AnchorPolicy::Boundary {
                faces: vec![(0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)],
                stratified: true,
            },
            frozen: Frozen {
                rho: Some(0.0),
                noise_u: Some(NOISE_FREE_VARIANCE),
                noise_f1: Some(NOISE_FREE_VARIANCE),
                noise_f2: Some(NOISE_FREE_VARIANCE),
            },
            rejected_readings: Vec::new(),
        },
        "adr1d" => ProblemSpec {
            name: "adr1d",
            operator: LinearOperatorSpec::AdvectionDiffusionReaction,
            f_high: adr_f2,
            f_low: adr_f1,
            u_exact: Some(adr_u),
            noise_std: [v01, v3, v05],
            sample_sizes: [10, 30, 10],
            domain: unit(2),
            anchor_policy: AnchorPolicy::Boundary { faces: vec![(0, 0.0), (1, 0.0), (1, 1.0)], stratified: false },
            frozen: Frozen::default(),
            rejected_readings: vec![RejectedReading {
                description: "u = exp(-t) sin(pi x) with forcing exp(-t)(2 pi cos(2 pi x) + 2(2 pi^2 - 1) sin(2 pi x))",
                u_exact: adr_u_half_frequency,
                f_high: adr_f2,
            }],
        },
        "poisson10d" => ProblemSpec {
            name: "poisson10d",
            operator: LinearOperatorSpec::Laplacian { dim: 10 },
            f_high: poisson10d_f2,
            f_low: poisson10d_f1,
            u_exact: Some(poisson10d_u),
            noise_std: [v01, v3, v05],
            sample_sizes: [40, 60, 20],
            domain: unit(10),
            anchor_policy: AnchorPolicy::InteriorRandom,
            frozen: Frozen::default(),
            rejected_readings: Vec::new(),
        },
        "fractional1d" => ProblemSpec {
            name: "fractional1d",
            operator: LinearOperatorSpec::FractionalRL { alpha: FRACTIONAL_ALPHA, quadrature: QuadratureSpec::default() },
            f_high: fractional_f2,
            f_low: fractional_f1,
            u_exact: Some(fractional_u),
            noise_std: [0.0, v3, v05],
            sample_sizes: [2, 15, 4],
            domain: unit(1),
            anchor_policy: AnchorPolicy::InteriorRandom,
            frozen: Frozen::default(),
            rejected_readings: Vec::new(),
        },
        other => {
            return Err(Error::InvalidArgument(alloc::format!(
                "unknown problem `{other}`; expected one of {}",
                PROBLEM_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}

fn sample_block(
    problem: &ProblemSpec,
    n: usize,
    std: f64,
    stream: u64,
    seed: u64,
    mut location: impl FnMut(usize, &mut rand_chacha::ChaCha8Rng) -> Vec<f64>,
    value: ScalarField,
) -> Result<ObservationBlock> {
    let mut rng = stream_rng(seed, stream);
    let mut block = ObservationBlock::empty(problem.dim());
    for i in 0..n {
        let x = location(i, &mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        block.push(&x, value(&x) + std * eps)?;
    }
    Ok(block)
}

/// Draws a dataset: uniform forcing locations, anchors per the problem's
/// policy, independent Gaussian noise. Each block uses its own random
/// stream, so changing one block's size leaves the others unchanged.
pub fn generate_observations(problem: &ProblemSpec, seed: u64) -> Result<MultiFidelityDataset> {
    problem.validate()?;
    let [n0, n1, n2] = problem.sample_sizes;
    let u = match problem.u_exact {
        Some(u) => u,
        None if n0 == 0 => problem.f_high,
        None => return Err(Error::invalid("anchor observations need an exact solution")),
    };
    let anchors = sample_block(
        problem,
        n0,
        problem.noise_std[0],
        0,
        seed,
        |i, rng| match &problem.anchor_policy {
            AnchorPolicy::FixedList(points) => points[i].clone(),
            AnchorPolicy::InteriorRandom => problem.uniform_point(rng),
            AnchorPolicy::Boundary { faces, stratified } => {
                let face = if *stratified {
                    i / (n0 / faces.len())
                } else {
                    rng.random_range(0..faces.len())
                };
                let mut p = problem.uniform_point(rng);
                p[faces[face].0] = faces[face].1;
                p
            }
        },
        u,
    )?;
    let low = sample_block(
        problem,
        n1,
        problem.noise_std[1],
        1,
        seed,
        |_, r| problem.uniform_point(r),
        problem.f_low,
    )?;
    let high = sample_block(
        problem,
        n2,
        problem.noise_std[2],
        2,
        seed,
        |_, r| problem.uniform_point(r),
        problem.f_high,
    )?;
    MultiFidelityDataset::new(anchors, low, high)
}

/// `‖predicted - exact‖₂ / ‖exact‖₂`.
pub fn rel_l2_error(predicted: &[f64], exact: &[f64]) -> Result<f64> {
    check_dim(exact.len(), predicted.len())?;
    if exact.is_empty() {
        return Err(Error::invalid("error metric needs at least one point"));
    }
    let norm: f64 = exact.iter().map(|e| e * e).sum();
    if !(norm > 0.0) {
        return Err(Error::invalid("reference values have zero norm"));
    }
    let diff: f64 = predicted
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e) * (p - e))
        .sum();
    Ok(libm::sqrt(diff / norm))
}

/// Evaluation points: 200 uniform points in 1D, a 50×50 grid in 2D and
/// 2000 uniform random points (seed [`EVAL_SEED`]) otherwise.
pub fn evaluation_points(problem: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
    problem.validate()?;
    Ok(evaluation_points_in(&problem.domain))
}

pub fn evaluation_points_in(domain: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let lin = |(a, b): (f64, f64), n: usize, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    match domain.len() {
        1 => (0..200).map(|i| vec![lin(domain[0], 200, i)]).collect(),
        2 => grid_2d(domain, 50, 50),
        _ => {
            let mut rng = stream_rng(EVAL_SEED, 0);
            (0..2000)
                .map(|_| {
                    domain
                        .iter()
                        .map(|(a, b)| a + (b - a) * rng.random::<f64>())
                        .collect()
                })
                .collect()
        }
    }
}

/// Row-major `n0 × n1` grid including the bounds; the last coordinate varies fastest.
pub fn grid_2d(domain: &[(f64, f64)], n0: usize, n1: usize) -> Vec<Vec<f64>> {
    let lin = |(a, b): (f64, f64), n: usize, i: usize| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            pts.push(vec![lin(domain[0], n0, i), lin(domain[1], n1, j)]);
        }
    }
    pts
}

/// Learned ARD weights per dimension for both levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ArdReport {
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
    /// `level1[d] / median(level1)`.
    pub level1_ratio: Vec<f64>,
    pub level2_ratio: Vec<f64>,
}

fn ranked(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    idx
}

impl ArdReport {
    /// Dimensions (0-based) ordered by decreasing level-1 weight.
    pub fn ranked_level1(&self) -> Vec<usize> {
        ranked(&self.level1)
    }

    /// Dimensions (0-based) ordered by decreasing level-2 weight.
    pub fn ranked_level2(&self) -> Vec<usize> {
        ranked(&self.level2)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn ard_report(model: &TrainedModel) -> ArdReport {
    let hp = model.hyperparams();
    let ratio = |w: &[f64]| {
        let m = median(w);
        w.iter().map(|x| x / m).collect()
    };
    let (l1, l2) = (
        hp.level1.ard_weights().to_vec(),
        hp.level2.ard_weights().to_vec(),
    );
    ArdReport {
        level1_ratio: ratio(&l1),
        level2_ratio: ratio(&l2),
        level1: l1,
        level2: l2,
    }
}

/// Relative L2 residual of `L u = f` over `n` uniform random points of the
/// domain, with `L` applied by finite differences and quadrature.
pub fn identity_residual(
    op: &LinearOperatorSpec,
    u: ScalarField,
    f: ScalarField,
    domain: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream_rng(seed, 7);
    let steps = vec![0.1; domain.len()];
    let mut lhs = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = domain
            .iter()
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        lhs.push(match op {
            LinearOperatorSpec::FractionalRL { alpha, .. } => {
                fractional_apply_periodic(*alpha, u, x[0])
            }
            _ => apply_operator_numeric(op, &|p: &[f64]| u(p), &x, &steps)?,
        });
        rhs.push(f(&x));
    }
    rel_l2_error(&lhs, &rhs)
}

/// Modes `-8..=8` and samples per period used by [`fractional_apply_periodic`].
const FOURIER_MODES: i32 = 8;
const FOURIER_SAMPLES: usize = 64;

/// `D^α u - u` at `x` for a 1-periodic `u`: the Fourier coefficients of `u`
/// are computed by the trapezoidal rule and each mode `e^{2πikx}` is
/// multiplied by its symbol `(2πik)^α - 1`.
pub fn fractional_apply_periodic(alpha: f64, u: ScalarField, x: f64) -> f64 {
    let samples: Vec<f64> = (0..FOURIER_SAMPLES)
        .map(|j| u(&[j as f64 / FOURIER_SAMPLES as f64]))
        .collect();
    let mut total = Complex64::new(0.0, 0.0);
    for k in -FOURIER_MODES..=FOURIER_MODES {
        let kappa = 2.0 * PI * k as f64;
        let coeff: Complex64 = samples
            .iter()
            .enumerate()
            .map(|(j, s)| {
                *s * Complex64::from_polar(1.0, -kappa * j as f64 / FOURIER_SAMPLES as f64)
            })
            .sum::<Complex64>()
            / FOURIER_SAMPLES as f64;
        let symbol = if k == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, kappa).powf(alpha)
        } - 1.0;
        total += coeff * symbol * Complex64::from_polar(1.0, kappa * x);
    }
    total.re
}

/// Residual of `L u_exact = f_high` for a problem (see [`identity_residual`]).
pub fn operator_identity_error(problem: &ProblemSpec, n_points: usize, seed: u64) -> Result<f64> {
    problem.validate()?;
    let u = problem
        .u_exact
        .ok_or_else(|| Error::invalid("problem has no exact solution"))?;
    identity_residual(
        &problem.operator,
        u,
        problem.f_high,
        &problem.domain,
        n_points,
        seed,
    )
}

/// Human-readable notes on readings rejected by the identity check, with
/// their residuals.
pub fn rejected_reading_notes(
    problem: &ProblemSpec,
    n_points: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    problem
        .rejected_readings
        .iter()
        .map(|r| {
            let res = identity_residual(
                &problem.operator,
                r.u_exact,
                r.f_high,
                &problem.domain,
                n_points,
                seed,
            )?;
            Ok((String::from(r.description), res))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_values() {
        let p = make_problem("integro1d").unwrap();
        assert!(((p.f_high)(&[0.0]) - 2.0 * PI).abs() < 1e-14);
        assert!(((p.u_exact.unwrap())(&[0.25]) - 1.0).abs() < 1e-15);
        for x in [0.0, 0.1, 0.5, 0.9] {
            assert_eq!((p.f_low)(&[x]), 0.8 * (p.f_high)(&[x]) - 5.0 * x);
        }
        assert!(make_problem("heat3d").unwrap_err().is_usage());
        // The shipped ADR solution peaks at x = 1/4, not 1/2.
        let adr = make_problem("adr1d").unwrap();
        assert!(((adr.u_exact.unwrap())(&[0.0, 0.25]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fractional_exact_is_real() {
        for i in 0..100 {
            let z = fractional_exact_complex(i as f64 / 99.0, FRACTIONAL_ALPHA);
            assert!(z.im.abs() < 1e-12, "{z}");
        }
    }

    #[test]
    fn operator_identities_hold() {
        for name in PROBLEM_NAMES {
            let p = make_problem(name).unwrap();
            let tol = if name == "fractional1d" { 1e-3 } else { 1e-4 };
            let err = operator_identity_error(&p, 50, 1).unwrap();
            assert!(err < tol, "{name}: {err}");
        }
        let notes = rejected_reading_notes(&make_problem("adr1d").unwrap(), 50, 1).unwrap();
        assert!(notes[0].1 > 0.1);
    }

    #[test]
    fn generation_sizes_and_determinism() {
        for name in PROBLEM_NAMES {
            let p = make_problem(name).unwrap();
            let a = generate_observations(&p, 5).unwrap();
            assert_eq!(a.sizes(), p.sample_sizes);
            assert_eq!(a, generate_observations(&p, 5).unwrap());
            assert_ne!(a, generate_observations(&p, 6).unwrap());
            for x in a.entries().flat_map(|(_, x)| x.iter()) {
                assert!((0.0..=1.0).contains(x));
            }
        }
    }

    #[test]
    fn noise_free_values_are_exact() {
        let mut p = make_problem("adr1d").unwrap();
        p.noise_std = [0.0; 3];
        let ds = generate_observations(&p, 3).unwrap();
        for (i, x) in ds.low.points().enumerate() {
            assert_eq!(ds.low.values()[i], (p.f_low)(x));
        }
        for (i, x) in ds.anchors.points().enumerate() {
            assert_eq!(ds.anchors.values()[i], (p.u_exact.unwrap())(x));
            assert!(x[0] == 0.0 || x[1] == 0.0 || x[1] == 1.0);
        }
    }

    #[test]
    fn boundary_anchors_are_stratified() {
        let p = make_problem("poisson2d").unwrap();
        let ds = generate_observations(&p, 1).unwrap();
        let on = |d: usize, v: f64| ds.anchors.points().filter(|x| x[d] == v).count();
        assert_eq!([on(0, 0.0), on(0, 1.0), on(1, 0.0), on(1, 1.0)], [25; 4]);
    }

    #[test]
    fn single_fidelity_keeps_other_blocks() {
        let p = make_problem("integro1d").unwrap();
        let mf = generate_observations(&p, 11).unwrap();
        let sf = generate_observations(&p.single_fidelity(), 11).unwrap();
        assert_eq!(sf.anchors, mf.anchors);
        assert_eq!(sf.high, mf.high);
        assert!(sf.low.is_empty());
    }

    #[test]
    fn error_metric() {
        let e = [1.0, -2.0, 3.0];
        assert_eq!(rel_l2_error(&e, &e).unwrap(), 0.0);
        assert!((rel_l2_error(&[2.0, -4.0, 6.0], &e).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rel_l2_error(&[0.0; 3], &e).unwrap(), 1.0);
        assert!(rel_l2_error(&[1.0; 3], &[0.0; 3]).unwrap_err().is_usage());
        assert!(rel_l2_error(&[1.0], &e).is_err());
    }

    #[test]
    fn evaluation_grids() {
        assert_eq!(
            evaluation_points(&make_problem("integro1d").unwrap())
                .unwrap()
                .len(),
            200
        );
        let g = evaluation_points(&make_problem("adr1d").unwrap()).unwrap();
        assert_eq!(g.len(), 2500);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[2499], vec![1.0, 1.0]);
        let p10 = make_problem("poisson10d").unwrap();
        assert_eq!(
            evaluation_points(&p10).unwrap(),
            evaluation_points(&p10).unwrap()
        );
        assert_eq!(evaluation_points(&p10).unwrap().len(), 2000);
    }
}

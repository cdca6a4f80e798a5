//! Two-level autoregressive Gaussian process model.
//!
//! The solution is `u = ρ u₁ + δ₂` with independent priors `u₁ ~ GP(0, g₁)`
//! and `δ₂ ~ GP(0, g₂)`, so `u ~ GP(0, ρ² g₁ + g₂)`. Applying the operator
//! gives the forcing levels `f₁ = L u₁` and `f = ρ f₁ + L δ₂`. Observations
//! come in three blocks: anchors of `u`, low-fidelity forcing `f₁`, and
//! high-fidelity forcing `f`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::check_dim;
use crate::kernels::KernelParams;
use crate::linalg::{Cholesky, Matrix};
use crate::operators::{LinearOperatorSpec, Operator, Transform};
use crate::optim::{self, LbfgsConfig};
use crate::{Error, Result};

/// Which observation block a data point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    /// Observation of the solution `u`.
    Anchor,
    /// Observation of the low-fidelity forcing `f₁`.
    Low,
    /// Observation of the high-fidelity forcing `f`.
    High,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Anchor, Source::Low, Source::High];

    fn is_forcing(self) -> bool {
        self != Source::Anchor
    }

    /// Anchors and high-fidelity forcing both observe the top level.
    fn is_top_level(self) -> bool {
        self != Source::Low
    }

    fn index(self) -> usize {
        match self {
            Source::Anchor => 0,
            Source::Low => 1,
            Source::High => 2,
        }
    }
}

/// All trainable quantities: kernel parameters of both levels, the
/// cross-correlation `ρ` and three noise variances.
///
/// Noise variances are stored as logarithms; a zero variance is represented
/// by `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub level1: KernelParams,
    pub level2: KernelParams,
    pub rho: f64,
    log_noise: [f64; 3],
}

impl HyperParams {
    /// `noise` holds the variances `(σ²_{n0}, σ²_{n1}, σ²_{n2})`.
    pub fn new(
        level1: KernelParams,
        level2: KernelParams,
        rho: f64,
        noise: [f64; 3],
    ) -> Result<Self> {
        check_dim(level1.dim(), level2.dim())?;
        if !rho.is_finite() {
            return Err(Error::invalid("rho must be finite"));
        }
        if noise.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise variances must be finite and >= 0"));
        }
        Ok(Self {
            level1,
            level2,
            rho,
            log_noise: noise.map(libm::log),
        })
    }

    /// Input dimension `D`.
    pub fn dim(&self) -> usize {
        self.level1.dim()
    }

    /// Noise variance of one observation block.
    pub fn noise(&self, source: Source) -> f64 {
        libm::exp(self.log_noise[source.index()])
    }

    /// Logarithms of the three noise variances; `-∞` encodes zero.
    pub fn log_noise(&self) -> [f64; 3] {
        self.log_noise
    }

    pub fn noise_u(&self) -> f64 {
        self.noise(Source::Anchor)
    }

    pub fn noise_f1(&self) -> f64 {
        self.noise(Source::Low)
    }

    pub fn noise_f2(&self) -> f64 {
        self.noise(Source::High)
    }

    pub fn set_noise(&mut self, source: Source, variance: f64) -> Result<()> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::invalid("noise variance must be finite and >= 0"));
        }
        self.log_noise[source.index()] = libm::log(variance);
        Ok(())
    }

    /// Length of the unconstrained encoding for input dimension `dim`.
    pub fn vector_len(dim: usize) -> usize {
        2 * (dim + 1) + 4
    }

    /// Unconstrained encoding:
    /// `[log σ₁², log w₁.., log σ₂², log w₂.., ρ, log σ²_{n0}, log σ²_{n1}, log σ²_{n2}]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v = vec![0.0; Self::vector_len(d)];
        self.level1.write_log(&mut v[..d + 1]);
        self.level2.write_log(&mut v[d + 1..2 * d + 2]);
        v[2 * d + 2] = self.rho;
        v[2 * d + 3..].copy_from_slice(&self.log_noise);
        v
    }

    /// Inverse of [`HyperParams::to_vector`]; exact round trip.
    pub fn from_vector(v: &[f64], dim: usize) -> Result<Self> {
        check_dim(Self::vector_len(dim), v.len())?;
        let level1 = KernelParams::from_log(v[0], v[1..dim + 1].to_vec())?;
        let level2 = KernelParams::from_log(v[dim + 1], v[dim + 2..2 * dim + 2].to_vec())?;
        let rho = v[2 * dim + 2];
        if !rho.is_finite() {
            return Err(Error::invalid("rho must be finite"));
        }
        let mut log_noise = [0.0; 3];
        log_noise.copy_from_slice(&v[2 * dim + 3..]);
        if log_noise.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::invalid("log noise variances must be < +inf"));
        }
        Ok(Self {
            level1,
            level2,
            rho,
            log_noise,
        })
    }

    /// Prior variance of `u` at any point: `ρ² σ₁² + σ₂²`.
    pub fn prior_variance_u(&self) -> f64 {
        self.rho * self.rho * self.level1.variance() + self.level2.variance()
    }
}

/// One block of observations: `n` points of dimension `D` and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock {
    dim: usize,
    /// Row-major `n × D` inputs.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl ObservationBlock {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    /// Builds a block from row-major inputs.
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        check_dim(y.len() * dim, x.len())?;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(Self { dim, x, y })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        check_dim(rows.len(), y.len())?;
        for r in rows {
            check_dim(dim, r.len())?;
        }
        Self::new(dim, rows.concat(), y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::invalid("observations must be finite"));
        }
        self.x.extend_from_slice(x);
        self.y.push(y);
        Ok(())
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            x: self.x.clone(),
            y: self.y.iter().map(|v| v * c).collect(),
        }
    }
}

/// Anchor, low-fidelity and high-fidelity observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFidelityDataset {
    pub anchors: ObservationBlock,
    pub low: ObservationBlock,
    pub high: ObservationBlock,
}

impl MultiFidelityDataset {
    pub fn new(
        anchors: ObservationBlock,
        low: ObservationBlock,
        high: ObservationBlock,
    ) -> Result<Self> {
        let ds = Self { anchors, low, high };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.dim == 0 {
            return Err(Error::invalid("input dimension must be >= 1"));
        }
        check_dim(self.anchors.dim, self.low.dim)?;
        check_dim(self.anchors.dim, self.high.dim)?;
        if self.is_empty() {
            return Err(Error::invalid(
                "dataset must contain at least one observation",
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.anchors.dim
    }

    /// Total number of observations `n = n0 + n1 + n2`.
    pub fn len(&self) -> usize {
        self.anchors.len() + self.low.len() + self.high.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.anchors.len(), self.low.len(), self.high.len()]
    }

    pub fn block(&self, source: Source) -> &ObservationBlock {
        match source {
            Source::Anchor => &self.anchors,
            Source::Low => &self.low,
            Source::High => &self.high,
        }
    }

    /// Stacked observation vector `y = [y0; y1; y2]`.
    pub fn stacked_values(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len());
        for s in Source::ALL {
            y.extend_from_slice(self.block(s).values());
        }
        y
    }

    /// `(source, point)` for every observation in stacking order.
    pub fn entries(&self) -> impl Iterator<Item = (Source, &[f64])> {
        Source::ALL
            .into_iter()
            .flat_map(move |s| self.block(s).points().map(move |p| (s, p)))
    }

    /// Copy with every observed value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            anchors: self.anchors.scaled(c),
            low: self.low.scaled(c),
            high: self.high.scaled(c),
        }
    }
}

/// Covariance between an observation of type `a` at `xa` and one of type `b`
/// at `xb`, noise excluded.
#[inline]
pub(crate) fn covariance(
    op: &Operator,
    hp: &HyperParams,
    a: Source,
    xa: &[f64],
    b: Source,
    xb: &[f64],
) -> f64 {
    let t = Transform::between(a.is_forcing(), b.is_forcing());
    let power = a.is_top_level() as i32 + b.is_top_level() as i32;
    let mut v = libm::pow(hp.rho, power as f64) * op.value(t, &hp.level1, xa, xb);
    if a.is_top_level() && b.is_top_level() {
        v += op.value(t, &hp.level2, xa, xb);
    }
    v
}

fn check_compatible(dataset: &MultiFidelityDataset, hp: &HyperParams, op: &Operator) -> Result<()> {
    dataset.validate()?;
    check_dim(dataset.dim(), hp.dim())?;
    if let Some(d) = op.input_dim() {
        check_dim(d, dataset.dim())?;
    }
    Ok(())
}

fn assemble(dataset: &MultiFidelityDataset, hp: &HyperParams, op: &Operator) -> Matrix {
    let entries: Vec<(Source, &[f64])> = dataset.entries().collect();
    let n = entries.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        let (si, xi) = entries[i];
        for j in i..n {
            let (sj, xj) = entries[j];
            let v = covariance(op, hp, si, xi, sj, xj);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hp.noise(si);
    }
    k
}

/// Assembles the block covariance matrix `K` of the stacked observations.
///
/// Only the upper triangle is computed and then mirrored, so `K` is exactly
/// symmetric.
pub fn assemble_k(
    dataset: &MultiFidelityDataset,
    hp: &HyperParams,
    op: &LinearOperatorSpec,
) -> Result<Matrix> {
    let op = op.compile()?;
    check_compatible(dataset, hp, &op)?;
    Ok(assemble(dataset, hp, &op))
}

/// Factorizes `K` with the jitter ladder of [`Cholesky::with_jitter`].
pub fn cholesky_with_jitter(k: &Matrix) -> Result<Cholesky> {
    if !k.is_symmetric() {
        return Err(Error::invalid(
            "matrix to factorize must be square and symmetric",
        ));
    }
    Cholesky::with_jitter(k)
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

struct Fit {
    chol: Cholesky,
    weights: Vec<f64>,
    nlml: f64,
}

fn fit(dataset: &MultiFidelityDataset, hp: &HyperParams, op: &Operator) -> Result<Fit> {
    let k = assemble(dataset, hp, op);
    let chol = Cholesky::with_jitter(&k)?;
    let y = dataset.stacked_values();
    let weights = chol.solve(&y)?;
    let quad: f64 = y.iter().zip(&weights).map(|(a, b)| a * b).sum();
    let nlml = 0.5 * quad + 0.5 * chol.log_det() + y.len() as f64 * HALF_LOG_2PI;
    Ok(Fit {
        chol,
        weights,
        nlml,
    })
}

/// Negative log marginal likelihood
/// `½ yᵀK⁻¹y + ½ log|K| + (n/2) log 2π`.
pub fn nlml(
    hp: &HyperParams,
    dataset: &MultiFidelityDataset,
    op: &LinearOperatorSpec,
) -> Result<f64> {
    let op = op.compile()?;
    check_compatible(dataset, hp, &op)?;
    Ok(fit(dataset, hp, &op)?.nlml)
}

/// Gradient of the NLML over the encoding of [`HyperParams::to_vector`].
pub fn nlml_grad(
    hp: &HyperParams,
    dataset: &MultiFidelityDataset,
    op: &LinearOperatorSpec,
) -> Result<Vec<f64>> {
    let op = op.compile()?;
    check_compatible(dataset, hp, &op)?;
    Ok(nlml_value_grad(dataset, hp, &op)?.1)
}

/// NLML and `∂NLML/∂ψ = ½ tr((K⁻¹ - ααᵀ) ∂K/∂ψ)` with `α = K⁻¹y`.
pub(crate) fn nlml_value_grad(
    dataset: &MultiFidelityDataset,
    hp: &HyperParams,
    op: &Operator,
) -> Result<(f64, Vec<f64>)> {
    let Fit {
        chol,
        weights: alpha,
        nlml,
    } = fit(dataset, hp, op)?;
    let entries: Vec<(Source, &[f64])> = dataset.entries().collect();
    let n = entries.len();
    let d = hp.dim();
    let np = d + 1;
    let rho_idx = 2 * np;
    let mut grad = vec![0.0; HyperParams::vector_len(d)];

    let mut w = chol.inverse();
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] -= alpha[i] * alpha[j];
        }
    }

    let mut g1 = vec![0.0; np];
    let mut g2 = vec![0.0; np];
    for i in 0..n {
        let (si, xi) = entries[i];
        for j in i..n {
            let (sj, xj) = entries[j];
            // Off-diagonal entries appear twice in the trace.
            let c = if i == j { 0.5 } else { 1.0 } * w[(i, j)];
            if c == 0.0 {
                continue;
            }
            let t = Transform::between(si.is_forcing(), sj.is_forcing());
            let power = si.is_top_level() as i32 + sj.is_top_level() as i32;
            let scale = libm::pow(hp.rho, power as f64);
            let k1 = op.value_grad(t, &hp.level1, xi, xj, Some(&mut g1));
            for (acc, g) in grad[..np].iter_mut().zip(&g1) {
                *acc += c * scale * g;
            }
            let dscale = match power {
                0 => 0.0,
                1 => 1.0,
                _ => 2.0 * hp.rho,
            };
            grad[rho_idx] += c * dscale * k1;
            if si.is_top_level() && sj.is_top_level() {
                op.value_grad(t, &hp.level2, xi, xj, Some(&mut g2));
                for (acc, g) in grad[np..2 * np].iter_mut().zip(&g2) {
                    *acc += c * g;
                }
            }
        }
        grad[rho_idx + 1 + si.index()] += 0.5 * w[(i, i)] * hp.noise(si);
    }
    Ok((nlml, grad))
}

/// Parameters held fixed during training. `None` means trained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Frozen {
    pub rho: Option<f64>,
    pub noise_u: Option<f64>,
    pub noise_f1: Option<f64>,
    pub noise_f2: Option<f64>,
}

impl Frozen {
    fn noise(&self, s: Source) -> Option<f64> {
        match s {
            Source::Anchor => self.noise_u,
            Source::Low => self.noise_f1,
            Source::High => self.noise_f2,
        }
    }
}

/// Training options.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of randomized L-BFGS starts.
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Gradient max-norm tolerance.
    pub tolerance: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Lower bound added to every trained noise variance.
    pub noise_floor: f64,
    pub frozen: Frozen,
    /// Optional extra starting point, tried before the random ones.
    pub warm_start: Option<HyperParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            max_iterations: 1000,
            tolerance: 1e-6,
            memory: 10,
            noise_floor: 1e-8,
            frozen: Frozen::default(),
            warm_start: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if self.max_iterations == 0 || self.memory == 0 {
            return Err(Error::invalid("max_iterations and memory must be >= 1"));
        }
        if !(self.tolerance > 0.0) || !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::invalid("tolerance must be > 0 and noise_floor >= 0"));
        }
        if let Some(r) = self.frozen.rho {
            if !r.is_finite() {
                return Err(Error::invalid("frozen rho must be finite"));
            }
        }
        for s in Source::ALL {
            if let Some(v) = self.frozen.noise(s) {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(
                        "frozen noise variances must be finite and >= 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A conditioned model: hyperparameters plus the factorized covariance.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    hyperparams: HyperParams,
    operator: Operator,
    dataset: MultiFidelityDataset,
    chol: Cholesky,
    weights: Vec<f64>,
    nlml: f64,
}

impl TrainedModel {
    /// Conditions on `dataset` with fixed hyperparameters (no training).
    pub fn condition(
        dataset: MultiFidelityDataset,
        op: &LinearOperatorSpec,
        hp: HyperParams,
    ) -> Result<Self> {
        let operator = op.compile()?;
        check_compatible(&dataset, &hp, &operator)?;
        let Fit {
            chol,
            weights,
            nlml,
        } = fit(&dataset, &hp, &operator)?;
        Ok(Self {
            hyperparams: hp,
            operator,
            dataset,
            chol,
            weights,
            nlml,
        })
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hyperparams
    }

    pub fn operator(&self) -> &LinearOperatorSpec {
        self.operator.spec()
    }

    pub(crate) fn compiled_operator(&self) -> &Operator {
        &self.operator
    }

    pub fn dataset(&self) -> &MultiFidelityDataset {
        &self.dataset
    }

    /// Cholesky factor of `K` (including any jitter).
    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// `K⁻¹ y`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    /// The covariance matrix `K` without jitter.
    pub fn covariance_matrix(&self) -> Matrix {
        assemble(&self.dataset, &self.hyperparams, &self.operator)
    }
}

/// Maps the optimizer's free variables onto the full encoding.
struct Layout {
    dim: usize,
    /// For each full-encoding index: `Some(k)` if free variable `k` drives it.
    free: Vec<Option<usize>>,
    fixed: Vec<f64>,
    floor: f64,
}

impl Layout {
    fn new(dim: usize, config: &TrainConfig) -> Self {
        let len = HyperParams::vector_len(dim);
        let mut free = vec![None; len];
        let mut fixed = vec![0.0; len];
        let rho_idx = 2 * (dim + 1);
        let mut k = 0;
        for (idx, slot) in free.iter_mut().enumerate() {
            let frozen = if idx == rho_idx {
                config.frozen.rho
            } else if idx > rho_idx {
                config
                    .frozen
                    .noise(Source::ALL[idx - rho_idx - 1])
                    .map(libm::log)
            } else {
                None
            };
            match frozen {
                Some(v) => fixed[idx] = v,
                None => {
                    *slot = Some(k);
                    k += 1;
                }
            }
        }
        Self {
            dim,
            free,
            fixed,
            floor: config.noise_floor,
        }
    }

    fn n_free(&self) -> usize {
        self.free.iter().filter(|s| s.is_some()).count()
    }

    fn is_noise(&self, idx: usize) -> bool {
        idx > 2 * (self.dim + 1)
    }

    /// Free noise variables parameterize `log(floor + e^z)`.
    fn expand(&self, z: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(idx, slot)| match slot {
                Some(k) if self.is_noise(idx) => libm::log(self.floor + libm::exp(z[*k])),
                Some(k) => z[*k],
                None => self.fixed[idx],
            })
            .collect()
    }

    fn contract_grad(&self, z: &[f64], full: &[f64], out: &mut [f64]) {
        for (idx, slot) in self.free.iter().enumerate() {
            if let Some(k) = slot {
                out[*k] = if self.is_noise(idx) {
                    let e = libm::exp(z[*k]);
                    full[idx] * e / (self.floor + e)
                } else {
                    full[idx]
                };
            }
        }
    }

    fn contract(&self, full: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n_free()];
        for (idx, slot) in self.free.iter().enumerate() {
            if let Some(k) = slot {
                z[*k] = if self.is_noise(idx) {
                    let excess = libm::exp(full[idx]) - self.floor;
                    libm::log(excess.max(self.floor.max(1e-300) * 1e-3))
                } else {
                    full[idx]
                };
            }
        }
        z
    }
}

fn variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var > 1e-12).then_some(var)
}

/// Data-derived centres for the random initialization.
struct InitScales {
    log_var_u: f64,
    log_weights: Vec<f64>,
    log_noise: [f64; 3],
}

impl InitScales {
    fn from_data(dataset: &MultiFidelityDataset) -> Self {
        let dim = dataset.dim();
        let log_var_u = libm::log(variance(dataset.anchors.values()).unwrap_or(1.0));
        let pts: Vec<&[f64]> = dataset.entries().map(|(_, p)| p).collect();
        let log_weights = (0..dim)
            .map(|d| {
                let mut sq: Vec<f64> = Vec::new();
                for i in 0..pts.len() {
                    for j in i + 1..pts.len() {
                        let r = pts[i][d] - pts[j][d];
                        if r != 0.0 {
                            sq.push(r * r);
                        }
                    }
                }
                if sq.is_empty() {
                    return 0.0;
                }
                sq.sort_by(f64::total_cmp);
                -libm::log(sq[sq.len() / 2])
            })
            .collect();
        let log_noise = Source::ALL
            .map(|s| libm::log(1e-2 * variance(dataset.block(s).values()).unwrap_or(1.0)));
        Self {
            log_var_u,
            log_weights,
            log_noise,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let dim = self.log_weights.len();
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let mut v = Vec::with_capacity(HyperParams::vector_len(dim));
        for _level in 0..2 {
            v.push(self.log_var_u + normal());
            for lw in &self.log_weights {
                v.push(lw + normal());
            }
        }
        v.push(rng.random_range(0.5..1.5));
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        for ln in self.log_noise {
            v.push(ln + normal());
        }
        v
    }
}

/// Summary of one optimizer start.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartRecord {
    pub restart: usize,
    /// NLML at the initial point, `None` if it could not be evaluated.
    pub initial_nlml: Option<f64>,
    /// NLML after optimization.
    pub final_nlml: Option<f64>,
    pub iterations: usize,
}

/// Trained model plus per-restart diagnostics.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub restarts: Vec<RestartRecord>,
}

/// Fits hyperparameters by minimizing the NLML with L-BFGS from several
/// random starting points and keeps the best.
pub fn train(
    dataset: MultiFidelityDataset,
    op: &LinearOperatorSpec,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    Ok(train_with_diagnostics(dataset, op, config)?.model)
}

pub fn train_with_diagnostics(
    dataset: MultiFidelityDataset,
    op: &LinearOperatorSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let operator = op.compile()?;
    dataset.validate()?;
    let dim = dataset.dim();
    if let Some(d) = operator.input_dim() {
        check_dim(d, dim)?;
    }
    let layout = Layout::new(dim, config);
    let scales = InitScales::from_data(&dataset);
    let lbfgs = LbfgsConfig {
        memory: config.memory,
        max_iterations: config.max_iterations,
        gradient_tolerance: config.tolerance,
        ..LbfgsConfig::default()
    };

    let objective = |z: &[f64], g: &mut [f64]| -> Option<f64> {
        let full = layout.expand(z);
        let hp = HyperParams::from_vector(&full, dim).ok()?;
        let (v, full_grad) = nlml_value_grad(&dataset, &hp, &operator).ok()?;
        layout.contract_grad(z, &full_grad, g);
        Some(v)
    };

    let mut records = Vec::with_capacity(config.restarts);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for restart in 0..config.restarts {
        let full0 = match (&config.warm_start, restart) {
            (Some(hp), 0) if hp.dim() == dim => hp.to_vector(),
            _ => scales.sample(&mut crate::rng::stream_rng(config.seed, restart as u64)),
        };
        let z0 = layout.contract(&full0);
        let mut g = vec![0.0; z0.len()];
        let initial_nlml = objective(&z0, &mut g);
        let outcome = initial_nlml.and_then(|_| optim::minimize(objective, &z0, &lbfgs).ok());
        records.push(RestartRecord {
            restart,
            initial_nlml,
            final_nlml: outcome.as_ref().map(|o| o.value),
            iterations: outcome.as_ref().map_or(0, |o| o.iterations),
        });
        if let Some(o) = outcome {
            if best.as_ref().is_none_or(|(v, _)| o.value < *v) {
                best = Some((o.value, o.x));
            }
        }
    }
    let (_, z) = best.ok_or_else(|| {
        Error::Numerical(format!(
            "all {} training restarts failed to factorize the covariance",
            config.restarts
        ))
    })?;
    let hp = HyperParams::from_vector(&layout.expand(&z), dim)?;
    let model = TrainedModel::condition(dataset, op, hp)?;
    Ok(TrainOutcome {
        model,
        restarts: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::QuadratureSpec;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hp(dim: usize, rho: f64, noise: [f64; 3]) -> HyperParams {
        HyperParams::new(
            KernelParams::isotropic(0.7, 3.0, dim).unwrap(),
            KernelParams::isotropic(1.3, 8.0, dim).unwrap(),
            rho,
            noise,
        )
        .unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, dim: usize, sizes: [usize; 3]) -> MultiFidelityDataset {
        let mut block = |n: usize| {
            let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            ObservationBlock::new(dim, x, y).unwrap()
        };
        let (a, l, h) = (block(sizes[0]), block(sizes[1]), block(sizes[2]));
        MultiFidelityDataset::new(a, l, h).unwrap()
    }

    fn random_hp(rng: &mut ChaCha8Rng, dim: usize) -> HyperParams {
        let mut v: Vec<f64> = (0..HyperParams::vector_len(dim))
            .map(|_| rng.random_range(-0.5..1.5))
            .collect();
        let rho_idx = 2 * dim + 2;
        v[rho_idx] = rng.random_range(0.3..1.2);
        for n in &mut v[rho_idx + 1..] {
            *n = rng.random_range(-4.0..-2.0);
        }
        HyperParams::from_vector(&v, dim).unwrap()
    }

    #[test]
    fn vector_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hp(&mut rng, 3);
        let v = h.to_vector();
        assert_eq!(HyperParams::from_vector(&v, 3).unwrap(), h);
        assert_eq!(HyperParams::from_vector(&v, 3).unwrap().to_vector(), v);
        assert!(HyperParams::from_vector(&v, 2).is_err());
    }

    #[test]
    fn single_anchor_matrix() {
        let x0 = [0.25];
        let anchors = ObservationBlock::new(1, x0.to_vec(), vec![0.3]).unwrap();
        let ds = MultiFidelityDataset::new(
            anchors,
            ObservationBlock::empty(1),
            ObservationBlock::empty(1),
        )
        .unwrap();
        let h = hp(1, 0.8, [0.01, 0.2, 0.3]);
        let k = assemble_k(
            &ds,
            &h,
            &LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
        )
        .unwrap();
        assert_eq!(k.rows(), 1);
        let expected = 0.8 * 0.8 * 0.7 + 1.3 + 0.01;
        assert!((k[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_rho_decouples_level_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = random_dataset(&mut rng, 2, [3, 4, 2]);
        let k = assemble_k(
            &ds,
            &hp(2, 0.0, [0.1; 3]),
            &LinearOperatorSpec::Laplacian { dim: 2 },
        )
        .unwrap();
        for i in 0..3 {
            for j in 3..7 {
                assert_eq!(k[(i, j)], 0.0);
            }
        }
        for i in 3..7 {
            for j in 7..9 {
                assert_eq!(k[(i, j)], 0.0);
            }
        }
        // K02 = L g2 remains.
        assert!(k[(0, 7)] != 0.0);
    }

    #[test]
    fn assembly_matches_entrywise_oracle() {
        use crate::kernels::se_eval;
        use crate::operators::{op_kernel_ff, op_kernel_uf};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, 2, [4, 5, 3]);
        let h = random_hp(&mut rng, 2);
        let op = LinearOperatorSpec::Laplacian { dim: 2 };
        let k = assemble_k(&ds, &h, &op).unwrap();
        let (r, p1, p2) = (h.rho, &h.level1, &h.level2);
        let blocks = [&ds.anchors, &ds.low, &ds.high];
        let offs = [0, 4, 9];
        for (bi, a) in blocks.iter().enumerate() {
            for (bj, b) in blocks.iter().enumerate() {
                for i in 0..a.len() {
                    for j in 0..b.len() {
                        let (x, y) = (a.point(i), b.point(j));
                        let g = |p| se_eval(x, y, p).unwrap();
                        let uf = |p, x: &[f64], y: &[f64]| op_kernel_uf(&op, p, x, y).unwrap();
                        let ff = |p| op_kernel_ff(&op, p, x, y).unwrap();
                        let expected = match (bi, bj) {
                            (0, 0) => r * r * g(p1) + g(p2),
                            (0, 1) => r * uf(p1, x, y),
                            (1, 0) => r * uf(p1, y, x),
                            (0, 2) => r * r * uf(p1, x, y) + uf(p2, x, y),
                            (2, 0) => r * r * uf(p1, y, x) + uf(p2, y, x),
                            (1, 1) => ff(p1),
                            (1, 2) | (2, 1) => r * ff(p1),
                            _ => r * r * ff(p1) + ff(p2),
                        };
                        let noise = if bi == bj && i == j {
                            h.noise(Source::ALL[bi])
                        } else {
                            0.0
                        };
                        let got = k[(offs[bi] + i, offs[bj] + j)];
                        assert!((got - expected - noise).abs() <= 1e-12 * expected.abs().max(1.0));
                    }
                }
            }
        }
        assert!(k.is_symmetric());
    }

    #[test]
    fn single_anchor_nlml_closed_form() {
        let anchors = ObservationBlock::new(1, vec![0.0], vec![0.0]).unwrap();
        let ds = MultiFidelityDataset::new(
            anchors,
            ObservationBlock::empty(1),
            ObservationBlock::empty(1),
        )
        .unwrap();
        // ρ²σ₁² + σ₂² + σ_n0² = 0.25·1 + 0.5 + 0.25 = 1
        let h = HyperParams::new(
            KernelParams::new(1.0, vec![1.0]).unwrap(),
            KernelParams::new(0.5, vec![1.0]).unwrap(),
            0.5,
            [0.25, 1.0, 1.0],
        )
        .unwrap();
        let v = nlml(&h, &ds, &LinearOperatorSpec::Identity).unwrap();
        assert!((v - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v - 0.9189385).abs() < 1e-7);

        let y = 1.7;
        let ds = ds.scaled(0.0);
        let ds = MultiFidelityDataset {
            anchors: ObservationBlock::new(1, vec![0.0], vec![y]).unwrap(),
            ..ds
        };
        let var = 1.0;
        let expected = 0.5 * y * y / var + 0.5 * var.ln() + 0.5 * (2.0 * PI).ln();
        assert!((nlml(&h, &ds, &LinearOperatorSpec::Identity).unwrap() - expected).abs() < 1e-14);
        let g = nlml_grad(&h, &ds, &LinearOperatorSpec::Identity).unwrap();
        let dn0 = 0.25 * 0.5 * (1.0 / var - y * y / (var * var));
        assert!((g[2 + 3] - dn0).abs() < 1e-14);
    }

    #[test]
    fn nlml_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, 1, [2, 2, 1]);
        let h = random_hp(&mut rng, 1);
        let op = LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 };
        let k = assemble_k(&ds, &h, &op).unwrap();
        let (inv, det) = gauss_jordan(&k);
        let y = ds.stacked_values();
        let quad: f64 = (0..5)
            .map(|i| (0..5).map(|j| y[i] * inv[(i, j)] * y[j]).sum::<f64>())
            .sum();
        let expected = 0.5 * quad + 0.5 * det.ln() + 2.5 * (2.0 * PI).ln();
        let got = nlml(&h, &ds, &op).unwrap();
        assert!(
            (got - expected).abs() < 1e-10 * expected.abs(),
            "{got} vs {expected}"
        );
    }

    /// Inverse and determinant by Gauss–Jordan elimination with partial pivoting.
    fn gauss_jordan(k: &Matrix) -> (Matrix, f64) {
        let n = k.rows();
        let mut a = k.clone();
        let mut inv = Matrix::identity(n);
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
                .unwrap();
            if p != c {
                for j in 0..n {
                    let t = a[(c, j)];
                    a[(c, j)] = a[(p, j)];
                    a[(p, j)] = t;
                    let t = inv[(c, j)];
                    inv[(c, j)] = inv[(p, j)];
                    inv[(p, j)] = t;
                }
                det = -det;
            }
            let piv = a[(c, c)];
            det *= piv;
            for j in 0..n {
                a[(c, j)] /= piv;
                inv[(c, j)] /= piv;
            }
            for i in 0..n {
                if i != c {
                    let f = a[(i, c)];
                    for j in 0..n {
                        a[(i, j)] -= f * a[(c, j)];
                        inv[(i, j)] -= f * inv[(c, j)];
                    }
                }
            }
        }
        (inv, det)
    }

    fn fd_grad_check(op: &LinearOperatorSpec, dim: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, dim, [3, 4, 3]);
        let h = random_hp(&mut rng, dim);
        let g = nlml_grad(&h, &ds, op).unwrap();
        let v = h.to_vector();
        let step = 1e-5;
        for k in 0..v.len() {
            let at = |s: f64| {
                let mut w = v.clone();
                w[k] += s;
                nlml(&HyperParams::from_vector(&w, dim).unwrap(), &ds, op).unwrap()
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            let err = (fd - g[k]).abs() / g[k].abs().max(1e-3);
            assert!(err < 1e-5, "{op:?} param {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_grad_check(&LinearOperatorSpec::Identity, 2, 10);
        fd_grad_check(
            &LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
            1,
            11,
        );
        fd_grad_check(&LinearOperatorSpec::Laplacian { dim: 2 }, 2, 12);
        fd_grad_check(&LinearOperatorSpec::AdvectionDiffusionReaction, 2, 13);
        fd_grad_check(
            &LinearOperatorSpec::FractionalRL {
                alpha: 0.3,
                quadrature: QuadratureSpec::default(),
            },
            1,
            14,
        );
    }

    #[test]
    fn nlml_invariant_under_block_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 1, [3, 5, 4]);
        let h = random_hp(&mut rng, 1);
        let op = LinearOperatorSpec::FirstDerivative1D;
        let base = nlml(&h, &ds, &op).unwrap();
        let mut perm = ds.clone();
        let n = perm.low.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let x: Vec<f64> = order
            .iter()
            .flat_map(|&i| ds.low.point(i).to_vec())
            .collect();
        let y: Vec<f64> = order.iter().map(|&i| ds.low.values()[i]).collect();
        perm.low = ObservationBlock::new(1, x, y).unwrap();
        let v = nlml(&h, &perm, &op).unwrap();
        assert!((v - base).abs() <= 1e-12 * base.abs());
    }

    #[test]
    fn frozen_parameters_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, 1, [2, 0, 5]);
        let config = TrainConfig {
            restarts: 2,
            frozen: Frozen {
                rho: Some(0.0),
                noise_u: Some(1e-6),
                ..Frozen::default()
            },
            ..TrainConfig::default()
        };
        let m = train(ds, &LinearOperatorSpec::Identity, &config).unwrap();
        assert_eq!(m.hyperparams().rho, 0.0);
        assert!((m.hyperparams().noise_u() - 1e-6).abs() < 1e-20);
        assert!(m.hyperparams().noise_f2() >= 1e-8);
    }

    #[test]
    fn train_beats_every_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = random_dataset(&mut rng, 1, [2, 6, 3]);
        let config = TrainConfig {
            restarts: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let out =
            train_with_diagnostics(ds, &LinearOperatorSpec::FirstDerivative1D, &config).unwrap();
        for r in &out.restarts {
            if let Some(init) = r.initial_nlml {
                assert!(out.model.nlml() <= init + 1e-9, "{r:?}");
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let ds = MultiFidelityDataset::new(
            ObservationBlock::new(1, vec![0.0], vec![1.0]).unwrap(),
            ObservationBlock::empty(2),
            ObservationBlock::empty(1),
        );
        assert!(ds.unwrap_err().is_usage());
        assert!(MultiFidelityDataset::new(
            ObservationBlock::empty(1),
            ObservationBlock::empty(1),
            ObservationBlock::empty(1)
        )
        .is_err());
        assert!(ObservationBlock::new(1, vec![f64::NAN], vec![1.0]).is_err());
        let ds = MultiFidelityDataset::new(
            ObservationBlock::new(1, vec![0.0], vec![1.0]).unwrap(),
            ObservationBlock::empty(1),
            ObservationBlock::empty(1),
        )
        .unwrap();
        let bad = TrainConfig {
            restarts: 0,
            ..TrainConfig::default()
        };
        assert!(train(ds.clone(), &LinearOperatorSpec::Identity, &bad).is_err());
        assert!(train(
            ds,
            &LinearOperatorSpec::Laplacian { dim: 2 },
            &TrainConfig::default()
        )
        .unwrap_err()
        .is_usage());
    }
}

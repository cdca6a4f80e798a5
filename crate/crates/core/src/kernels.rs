//! Squared-exponential kernel with automatic relevance determination (ARD).
//!
//! ```text
//! g(x, x') = σ² exp(-½ Σ_d w_d (x_d - x'_d)²)
//! ```
//!
//! Parameters are held both in natural units and as logarithms; the
//! logarithms are the unconstrained coordinates used during training.

use alloc::vec::Vec;

use crate::error::check_dim;
use crate::{Error, Result};

/// Variance and per-dimension ARD weights of one squared-exponential kernel.
///
/// The log values are the source of truth; natural values are cached
/// `exp` of them, so `from_log(p.log_variance(), p.log_weights())` reproduces
/// `p` bit for bit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(try_from = "LogKernelParams", into = "LogKernelParams")
)]
pub struct KernelParams {
    log_variance: f64,
    log_weights: Vec<f64>,
    variance: f64,
    weights: Vec<f64>,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct LogKernelParams {
    log_variance: f64,
    log_ard_weights: Vec<f64>,
}

#[cfg(feature = "serde")]
impl TryFrom<LogKernelParams> for KernelParams {
    type Error = Error;

    fn try_from(raw: LogKernelParams) -> Result<Self> {
        KernelParams::from_log(raw.log_variance, raw.log_ard_weights)
    }
}

#[cfg(feature = "serde")]
impl From<KernelParams> for LogKernelParams {
    fn from(p: KernelParams) -> Self {
        LogKernelParams {
            log_variance: p.log_variance,
            log_ard_weights: p.log_weights,
        }
    }
}

impl KernelParams {
    /// Builds parameters from natural units. Variance and weights must be
    /// finite and strictly positive.
    pub fn new(variance: f64, ard_weights: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid("kernel variance must be finite and > 0"));
        }
        if ard_weights.is_empty() {
            return Err(Error::invalid("kernel needs at least one ARD weight"));
        }
        if ard_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("ARD weights must be finite and > 0"));
        }
        let log_weights = ard_weights.iter().map(|w| libm::log(*w)).collect();
        Ok(Self {
            log_variance: libm::log(variance),
            log_weights,
            variance,
            weights: ard_weights,
        })
    }

    /// Builds parameters from log-variance and log-weights.
    pub fn from_log(log_variance: f64, log_weights: Vec<f64>) -> Result<Self> {
        if !log_variance.is_finite() || log_weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("log kernel parameters must be finite"));
        }
        if log_weights.is_empty() {
            return Err(Error::invalid("kernel needs at least one ARD weight"));
        }
        let variance = libm::exp(log_variance);
        let weights: Vec<f64> = log_weights.iter().map(|v| libm::exp(*v)).collect();
        if !(variance > 0.0 && variance.is_finite())
            || weights.iter().any(|w| !(*w > 0.0 && w.is_finite()))
        {
            return Err(Error::invalid(
                "kernel parameters overflow in natural units",
            ));
        }
        Ok(Self {
            log_variance,
            log_weights,
            variance,
            weights,
        })
    }

    /// Isotropic parameters: the same weight in every dimension.
    pub fn isotropic(variance: f64, weight: f64, dim: usize) -> Result<Self> {
        Self::new(variance, alloc::vec![weight; dim])
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn ard_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_variance(&self) -> f64 {
        self.log_variance
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Per-dimension length scales `1/√w_d`.
    pub fn length_scales(&self) -> Vec<f64> {
        self.weights.iter().map(|w| 1.0 / libm::sqrt(*w)).collect()
    }

    /// Input dimension `D`.
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Number of log-parameters, `D + 1`.
    pub fn n_params(&self) -> usize {
        self.weights.len() + 1
    }

    /// Writes `(log σ², log w_1, …, log w_D)` into `out`.
    pub fn write_log(&self, out: &mut [f64]) {
        out[0] = self.log_variance;
        out[1..].copy_from_slice(&self.log_weights);
    }

    pub(crate) fn check_points(&self, x: &[f64], y: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())
    }
}

/// `exp(-½ Σ w_d r_d²)` without the variance factor.
#[inline]
pub(crate) fn se_correlation(x: &[f64], y: &[f64], weights: &[f64]) -> f64 {
    let mut q = 0.0;
    for ((a, b), w) in x.iter().zip(y).zip(weights) {
        let r = a - b;
        q += w * r * r;
    }
    libm::exp(-0.5 * q)
}

/// Evaluates `g(x, x')`.
pub fn se_eval(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<f64> {
    params.check_points(x, x_prime)?;
    Ok(params.variance * se_correlation(x, x_prime, &params.weights))
}

/// Gradient of `g(x, x')` with respect to `(log σ², log w_1, …, log w_D)`.
///
/// `∂g/∂log σ² = g` and `∂g/∂log w_d = -½ w_d r_d² g`.
pub fn se_grad(x: &[f64], x_prime: &[f64], params: &KernelParams) -> Result<Vec<f64>> {
    params.check_points(x, x_prime)?;
    let g = params.variance * se_correlation(x, x_prime, &params.weights);
    let mut out = Vec::with_capacity(params.n_params());
    out.push(g);
    for ((a, b), w) in x.iter().zip(x_prime).zip(&params.weights) {
        let r = a - b;
        out.push(-0.5 * w * r * r * g);
    }
    Ok(out)
}

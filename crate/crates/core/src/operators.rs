//! Linear operators `L` and the covariance kernels they induce.
//!
//! For a prior `u ~ GP(0, g)` and a linear operator `L`, the forcing
//! `f = L u` is a Gaussian process with covariance `L_x L_x' g` and the
//! solution–forcing cross covariance is `L_x' g`. This module evaluates those
//! kernels in closed form for the squared-exponential `g`:
//!
//! * constant-coefficient differential operators whose terms each act on a
//!   single input dimension (identity, `d/dx`, Laplacian, advection–diffusion–
//!   reaction) reduce to Hermite polynomials times the Gaussian;
//! * `d/dx + ∫_a^x` adds error-function terms;
//! * the Riemann–Liouville operator `D^α - I` is handled in the frequency
//!   domain with a Gauss–Legendre quadrature over the spectral density.
//!
//! [`op_kernel_numeric_oracle`] applies the operators by finite differences
//! and quadrature instead; it exists to check the closed forms.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::ddouble::{Dd, Scalar};
use crate::error::check_dim;
use crate::kernels::{se_correlation, KernelParams};
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// Description of a supported linear operator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)
)]
pub enum LinearOperatorSpec {
    /// `L u = u`, any input dimension.
    Identity,
    /// `L u = du/dx` in one dimension.
    #[cfg_attr(feature = "serde", serde(rename = "first-derivative"))]
    FirstDerivative1D,
    /// `L u = du/dx + ∫_{lower_bound}^x u(ξ) dξ`.
    #[cfg_attr(feature = "serde", serde(rename = "integro-differential"))]
    IntegroDifferential1D { lower_bound: f64 },
    /// `L u = Σ_d ∂²u/∂x_d²` in `dim` dimensions.
    Laplacian {
        #[cfg_attr(feature = "serde", serde(rename = "dimension"))]
        dim: usize,
    },
    /// `L u = ∂u/∂t + ∂u/∂x - ∂²u/∂x² - u` with inputs ordered `(t, x)`.
    AdvectionDiffusionReaction,
    /// `L u = D^α u - u` with the Riemann–Liouville derivative from `-∞`.
    #[cfg_attr(feature = "serde", serde(rename = "fractional"))]
    FractionalRL {
        alpha: f64,
        quadrature: QuadratureSpec,
    },
}

/// Frequency quadrature used by the fractional operator.
///
/// The spectral integral is truncated at `frequency_cutoff · √w`, i.e. the
/// cutoff is measured in standard deviations of the kernel's spectral
/// density.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct QuadratureSpec {
    pub node_count: usize,
    pub frequency_cutoff: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            node_count: 200,
            frequency_cutoff: 9.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 16 {
            return Err(Error::invalid(format!(
                "quadrature node_count must be >= 16, got {}",
                self.node_count
            )));
        }
        if !(self.frequency_cutoff > 0.0 && self.frequency_cutoff.is_finite()) {
            return Err(Error::invalid(
                "quadrature frequency_cutoff must be finite and > 0",
            ));
        }
        Ok(())
    }

    /// The same rule with twice the nodes and twice the cutoff.
    pub fn refined(&self) -> Self {
        Self {
            node_count: 2 * self.node_count,
            frequency_cutoff: 2.0 * self.frequency_cutoff,
        }
    }
}

impl LinearOperatorSpec {
    /// Short identifier, as used in configuration files.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::FirstDerivative1D => "first-derivative",
            Self::IntegroDifferential1D { .. } => "integro-differential",
            Self::Laplacian { .. } => "laplacian",
            Self::AdvectionDiffusionReaction => "advection-diffusion-reaction",
            Self::FractionalRL { .. } => "fractional",
        }
    }

    /// Required input dimension, `None` when any dimension is accepted.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Self::Identity => None,
            Self::FirstDerivative1D
            | Self::IntegroDifferential1D { .. }
            | Self::FractionalRL { .. } => Some(1),
            Self::Laplacian { dim } => Some(*dim),
            Self::AdvectionDiffusionReaction => Some(2),
        }
    }

    /// `true` for every variant except the fractional one.
    pub fn has_closed_form(&self) -> bool {
        !matches!(self, Self::FractionalRL { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::IntegroDifferential1D { lower_bound } if !lower_bound.is_finite() => Err(
                Error::invalid("integro-differential lower_bound must be finite"),
            ),
            Self::Laplacian { dim: 0 } => Err(Error::invalid("laplacian dimension must be >= 1")),
            Self::FractionalRL { alpha, quadrature } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(Error::invalid(format!(
                        "fractional order alpha must lie in the open interval (0, 2), got {alpha}"
                    )));
                }
                quadrature.validate()
            }
            _ => Ok(()),
        }
    }

    /// Validates and precomputes everything needed for fast evaluation.
    pub fn compile(&self) -> Result<Operator> {
        self.validate()?;
        let kind = match self {
            Self::Identity => Kind::Separable(Separable {
                constant: 1.0,
                terms: Vec::new(),
            }),
            Self::FirstDerivative1D => Kind::Separable(Separable {
                constant: 0.0,
                terms: alloc::vec![alloc::vec![(1, 1.0)]],
            }),
            Self::IntegroDifferential1D { lower_bound } => Kind::Integro {
                lower_bound: *lower_bound,
            },
            Self::Laplacian { dim } => Kind::Separable(Separable {
                constant: 0.0,
                terms: (0..*dim).map(|_| alloc::vec![(2, 1.0)]).collect(),
            }),
            Self::AdvectionDiffusionReaction => Kind::Separable(Separable {
                constant: -1.0,
                terms: alloc::vec![alloc::vec![(1, 1.0)], alloc::vec![(1, 1.0), (2, -1.0)]],
            }),
            Self::FractionalRL { alpha, quadrature } => {
                Kind::Fractional(Box::new(Fractional::new(*alpha, *quadrature)))
            }
        };
        Ok(Operator {
            spec: self.clone(),
            kind,
        })
    }
}

/// Which kernel arguments the operator is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    /// `g(x, x')`: solution–solution.
    None,
    /// `L_x' g(x, x')`: solution at `x`, forcing at `x'`.
    Right,
    /// `L_x g(x, x')`: forcing at `x`, solution at `x'`.
    Left,
    /// `L_x L_x' g(x, x')`: forcing–forcing.
    Both,
}

impl Transform {
    /// Transform for a covariance between a `left_is_forcing` and a
    /// `right_is_forcing` observation.
    pub fn between(left_is_forcing: bool, right_is_forcing: bool) -> Self {
        match (left_is_forcing, right_is_forcing) {
            (false, false) => Self::None,
            (false, true) => Self::Right,
            (true, false) => Self::Left,
            (true, true) => Self::Both,
        }
    }
}

/// A validated operator ready for kernel evaluation.
///
/// Immutable after construction; quadrature nodes for the fractional
/// operator are computed once here.
#[derive(Debug, Clone)]
pub struct Operator {
    spec: LinearOperatorSpec,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Separable(Separable),
    Integro { lower_bound: f64 },
    Fractional(Box<Fractional>),
}

/// `constant + Σ_d Σ_k c_{dk} ∂^{o_{dk}}/∂x_d^{o_{dk}}`.
#[derive(Debug, Clone)]
struct Separable {
    constant: f64,
    /// Per input dimension: `(derivative order, coefficient)` pairs.
    terms: Vec<Vec<(usize, f64)>>,
}

impl Operator {
    pub fn spec(&self) -> &LinearOperatorSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.spec.input_dim()
    }

    fn check(&self, params: &KernelParams, x: &[f64], y: &[f64]) -> Result<()> {
        if let Some(d) = self.input_dim() {
            check_dim(d, params.dim())?;
        }
        params.check_points(x, y)
    }

    /// Evaluates the transformed kernel.
    pub fn eval(&self, t: Transform, params: &KernelParams, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(params, x, y)?;
        Ok(self.value(t, params, x, y))
    }

    /// Evaluates the transformed kernel and writes its gradient with respect
    /// to `(log σ², log w_1, …, log w_D)` into `grad`.
    pub fn eval_grad(
        &self,
        t: Transform,
        params: &KernelParams,
        x: &[f64],
        y: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(params, x, y)?;
        check_dim(params.n_params(), grad.len())?;
        Ok(self.value_grad(t, params, x, y, Some(grad)))
    }

    #[inline]
    pub(crate) fn value(&self, t: Transform, params: &KernelParams, x: &[f64], y: &[f64]) -> f64 {
        self.value_grad(t, params, x, y, None)
    }

    pub(crate) fn value_grad(
        &self,
        t: Transform,
        params: &KernelParams,
        x: &[f64],
        y: &[f64],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        if t == Transform::None {
            let g = params.variance() * se_correlation(x, y, params.ard_weights());
            if let Some(grad) = grad {
                grad[0] = g;
                for (d, w) in params.ard_weights().iter().enumerate() {
                    let r = x[d] - y[d];
                    grad[d + 1] = -0.5 * w * r * r * g;
                }
            }
            return g;
        }
        match &self.kind {
            Kind::Separable(s) => s.value_grad(t, params, x, y, grad),
            Kind::Integro { lower_bound } => {
                let (v, dv) = integro_unit(t, params.ard_weights()[0], *lower_bound, x[0], y[0]);
                let s2 = params.variance();
                if let Some(grad) = grad {
                    grad[0] = s2 * v;
                    grad[1] = s2 * dv;
                }
                s2 * v
            }
            Kind::Fractional(f) => {
                let (v, dv) = f.unit(t, params.ard_weights()[0], x[0] - y[0]);
                let s2 = params.variance();
                if let Some(grad) = grad {
                    grad[0] = s2 * v;
                    grad[1] = s2 * dv;
                }
                s2 * v
            }
        }
    }
}

/// Probabilists' Hermite polynomials `He_0..He_{N-1}` at `u`.
#[inline]
fn hermite<const N: usize>(u: f64) -> [f64; N] {
    let mut he = [0.0; N];
    he[0] = 1.0;
    if N > 1 {
        he[1] = u;
    }
    for n in 1..N.saturating_sub(1) {
        he[n + 1] = u * he[n] - n as f64 * he[n - 1];
    }
    he
}

impl Separable {
    /// `∂^a_x ∂^b_x' exp(-w r²/2) = h_ab · exp(-w r²/2)` with
    /// `h_ab = (-1)^a w^{(a+b)/2} He_{a+b}(√w r)`; `dh` is `w ∂h/∂w`.
    #[inline]
    fn factors(he: &[f64; 6], sw_pow: &[f64; 5], u: f64, a: usize, b: usize) -> (f64, f64) {
        let n = a + b;
        let sign = if a.is_multiple_of(2) { 1.0 } else { -1.0 };
        let h = sign * sw_pow[n] * he[n];
        let dh = if n == 0 {
            0.0
        } else {
            sign * sw_pow[n] * 0.5 * n as f64 * (he[n] + u * he[n - 1])
        };
        (h, dh)
    }

    fn value_grad(
        &self,
        t: Transform,
        params: &KernelParams,
        x: &[f64],
        y: &[f64],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let weights = params.ard_weights();
        let dim = weights.len();
        let c0 = self.constant;
        let (left, right) = match t {
            Transform::None => (false, false),
            Transform::Right => (false, true),
            Transform::Left => (true, false),
            Transform::Both => (true, true),
        };

        let mut q = 0.0;
        let mut sum_a = c0;
        let mut sum_b = c0;
        let mut sum_ab = 0.0;
        let mut sum_c = 0.0;
        // Per-dimension (A, B, dA, dB, dC) for the gradient pass.
        let mut per_dim: [(f64, f64, f64, f64, f64); 16] = [(0.0, 0.0, 0.0, 0.0, 0.0); 16];
        let mut spill: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
        if dim > per_dim.len() && grad.is_some() {
            spill.resize(dim, (0.0, 0.0, 0.0, 0.0, 0.0));
        }
        for d in 0..dim {
            let r = x[d] - y[d];
            let w = weights[d];
            q += w * r * r;
            let terms = match self.terms.get(d) {
                Some(t) if !t.is_empty() => t,
                _ => continue,
            };
            let sw = libm::sqrt(w);
            let u = sw * r;
            let he = hermite::<6>(u);
            let sw_pow = [1.0, sw, w, w * sw, w * w];
            let (mut a, mut b, mut c, mut da, mut db, mut dc) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for &(oi, ci) in terms {
                if left {
                    let (h, dh) = Self::factors(&he, &sw_pow, u, oi, 0);
                    a += ci * h;
                    da += ci * dh;
                }
                if right {
                    let (h, dh) = Self::factors(&he, &sw_pow, u, 0, oi);
                    b += ci * h;
                    db += ci * dh;
                }
                if left && right {
                    for &(oj, cj) in terms {
                        let (h, dh) = Self::factors(&he, &sw_pow, u, oi, oj);
                        c += ci * cj * h;
                        dc += ci * cj * dh;
                    }
                }
            }
            sum_a += a;
            sum_b += b;
            sum_ab += a * b;
            sum_c += c;
            let slot = (a, b, da, db, dc);
            if d < per_dim.len() {
                per_dim[d] = slot;
            } else if !spill.is_empty() {
                spill[d] = slot;
            }
        }
        let poly = match t {
            Transform::None => 1.0,
            Transform::Right => sum_b,
            Transform::Left => sum_a,
            Transform::Both => sum_a * sum_b - sum_ab + sum_c,
        };
        let e = params.variance() * libm::exp(-0.5 * q);
        let value = e * poly;
        if let Some(grad) = grad {
            grad[0] = value;
            for d in 0..dim {
                let r = x[d] - y[d];
                let half_u2 = 0.5 * weights[d] * r * r;
                let (a, b, da, db, dc) = if d < per_dim.len() {
                    per_dim[d]
                } else {
                    spill[d]
                };
                let dpoly = match t {
                    Transform::None => 0.0,
                    Transform::Right => db,
                    Transform::Left => da,
                    Transform::Both => da * sum_b + sum_a * db - (da * b + a * db) + dc,
                };
                grad[d + 1] = e * (dpoly - half_u2 * poly);
            }
        }
        value
    }
}

/// Unit-variance kernel pieces for `L = d/dx + ∫_lb^x`, with `w ∂/∂w`.
fn integro_unit(t: Transform, w: f64, lb: f64, x: f64, y: f64) -> (f64, f64) {
    let sqrt_half_w = libm::sqrt(0.5 * w);
    let k0 = libm::sqrt(PI / (2.0 * w));
    let e = |z: f64| libm::exp(-0.5 * w * z * z);
    let de = |z: f64| -0.5 * w * z * z * e(z);
    // G(z) = ∫_0^z exp(-w s²/2) ds
    let big_g = |z: f64| k0 * libm::erf(sqrt_half_w * z);
    let dbig_g = |z: f64| -0.5 * big_g(z) + 0.5 * z * e(z);
    // Ψ'' = exp(-w z²/2), Ψ even
    let psi = |z: f64| z * big_g(z) + e(z) / w;
    let dpsi = |z: f64| -0.5 * z * big_g(z) - e(z) / w;

    let r = x - y;
    let er = e(r);
    match t {
        Transform::None => (er, de(r)),
        Transform::Right => {
            let v = w * r * er + big_g(y - x) - big_g(lb - x);
            let dv = w * r * er * (1.0 - 0.5 * w * r * r) + dbig_g(y - x) - dbig_g(lb - x);
            (v, dv)
        }
        Transform::Left => {
            let v = -w * r * er + big_g(x - y) - big_g(lb - y);
            let dv = -w * r * er * (1.0 - 0.5 * w * r * r) + dbig_g(x - y) - dbig_g(lb - y);
            (v, dv)
        }
        Transform::Both => {
            let wr2 = w * r * r;
            let v =
                w * (1.0 - wr2) * er + e(x - lb) + e(y - lb) - 2.0 * er + psi(x - lb) + psi(y - lb)
                    - psi(r)
                    - 1.0 / w;
            let dv = w * (1.0 - 2.0 * wr2) * er - w * (1.0 - wr2) * 0.5 * wr2 * er
                + de(x - lb)
                + de(y - lb)
                - 2.0 * de(r)
                + dpsi(x - lb)
                + dpsi(y - lb)
                - dpsi(r)
                + 1.0 / w;
            (v, dv)
        }
    }
}

#[derive(Debug, Clone)]
struct FracNode {
    /// Node on `[0, 1]` of the substituted variable `t`, `ω = W t²`.
    t: f64,
    /// Gauss–Legendre weight times the Jacobian factor `2t`.
    weight: f64,
    /// `t^{2α}`, so that `ω^α = W^α t^{2α}`.
    t_pow: f64,
}

#[derive(Debug, Clone)]
struct Fractional {
    alpha: f64,
    cutoff: f64,
    cos_half: f64,
    sin_half: f64,
    nodes: Vec<FracNode>,
}

impl Fractional {
    fn new(alpha: f64, quad: QuadratureSpec) -> Self {
        let gl = GaussLegendre::new(quad.node_count);
        let nodes = gl
            .mapped(0.0, 1.0)
            .map(|(t, w)| FracNode {
                t,
                weight: 2.0 * t * w,
                t_pow: libm::pow(t, 2.0 * alpha),
            })
            .collect();
        Self {
            alpha,
            cutoff: quad.frequency_cutoff,
            cos_half: libm::cos(0.5 * PI * alpha),
            sin_half: libm::sin(0.5 * PI * alpha),
            nodes,
        }
    }

    /// Unit-variance kernel and `w ∂/∂w` of it, for offset `r = x - x'`.
    ///
    /// All transforms reduce to `2∫_0^∞ S(ω) [c(ω) cos ωr + s(ω) sin ωr] dω`
    /// with `S` the spectral density of the unit-variance squared exponential.
    fn unit(&self, t: Transform, w: f64, r: f64) -> (f64, f64) {
        let big_w = self.cutoff * libm::sqrt(w);
        let w_alpha = libm::pow(big_w, self.alpha);
        let norm = 1.0 / libm::sqrt(2.0 * PI * w);
        let mut v = 0.0;
        let mut dv = 0.0;
        for node in &self.nodes {
            let omega = big_w * node.t * node.t;
            let s = norm * libm::exp(-0.5 * omega * omega / w);
            let oa = w_alpha * node.t_pow;
            let (sin, cos) = libm::sincos(omega * r);
            let integrand = match t {
                Transform::None => cos,
                Transform::Both => (oa * oa - 2.0 * oa * self.cos_half + 1.0) * cos,
                Transform::Right => (oa * self.cos_half - 1.0) * cos + oa * self.sin_half * sin,
                Transform::Left => (oa * self.cos_half - 1.0) * cos - oa * self.sin_half * sin,
            };
            let term = node.weight * big_w * s * integrand;
            v += term;
            dv += term * (0.5 * omega * omega / w - 0.5);
        }
        (2.0 * v, 2.0 * dv)
    }
}

fn check_alpha_for_kernel(alpha: f64) -> Result<()> {
    // α = 0 is accepted here (the kernel vanishes identically); operator
    // specs still require α in (0, 2).
    if !(0.0..2.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "fractional order alpha must lie in (0, 2), got {alpha}"
        )));
    }
    Ok(())
}

fn fractional_1d(
    t: Transform,
    alpha: f64,
    params: &KernelParams,
    x: f64,
    y: f64,
    quad: QuadratureSpec,
) -> Result<f64> {
    check_alpha_for_kernel(alpha)?;
    quad.validate()?;
    check_dim(1, params.dim())?;
    let (v, _) = Fractional::new(alpha, quad).unit(t, params.ard_weights()[0], x - y);
    Ok(params.variance() * v)
}

/// Forcing–forcing kernel of `D^α - I`, by frequency-domain quadrature.
pub fn fractional_kernel_ff(
    alpha: f64,
    params: &KernelParams,
    x: f64,
    x_prime: f64,
    quad: QuadratureSpec,
) -> Result<f64> {
    fractional_1d(Transform::Both, alpha, params, x, x_prime, quad)
}

/// Solution–forcing kernel of `D^α - I` (operator on the second argument).
pub fn fractional_kernel_uf(
    alpha: f64,
    params: &KernelParams,
    x_u: f64,
    x_f: f64,
    quad: QuadratureSpec,
) -> Result<f64> {
    fractional_1d(Transform::Right, alpha, params, x_u, x_f, quad)
}

/// Relative change of a fractional kernel value when the quadrature is
/// refined (nodes and cutoff doubled).
pub fn fractional_refinement_gap(
    t: Transform,
    alpha: f64,
    params: &KernelParams,
    x: f64,
    x_prime: f64,
    quad: QuadratureSpec,
) -> Result<f64> {
    let coarse = fractional_1d(t, alpha, params, x, x_prime, quad)?;
    let fine = fractional_1d(t, alpha, params, x, x_prime, quad.refined())?;
    Ok(libm::fabs(coarse - fine) / libm::fabs(fine).max(1e-300))
}

/// Full-line complex quadrature sum of the fractional kernel integrand,
/// with the multipliers formed from the complex powers `(-iω)^α` directly.
///
/// Only used to check that the real reduction in the main path is faithful:
/// the imaginary part must cancel.
pub fn fractional_spectral_sum(
    t: Transform,
    alpha: f64,
    params: &KernelParams,
    x: f64,
    x_prime: f64,
    quad: QuadratureSpec,
) -> Result<Complex64> {
    check_alpha_for_kernel(alpha)?;
    quad.validate()?;
    check_dim(1, params.dim())?;
    let w = params.ard_weights()[0];
    let big_w = quad.frequency_cutoff * libm::sqrt(w);
    let norm = params.variance() / libm::sqrt(2.0 * PI * w);
    let gl = GaussLegendre::new(quad.node_count);
    let r = x - x_prime;
    let sym = |om: f64| -> Complex64 {
        if om == 0.0 {
            Complex64::new(if alpha == 0.0 { 1.0 } else { 0.0 }, 0.0)
        } else {
            Complex64::new(0.0, -om).powf(alpha)
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let mut total = Complex64::new(0.0, 0.0);
    for (tn, wt) in gl.mapped(0.0, 1.0) {
        for sign in [1.0, -1.0] {
            let om = sign * big_w * tn * tn;
            let om_p = -om;
            let s = norm * libm::exp(-0.5 * om * om / w);
            let mult = match t {
                Transform::None => one,
                Transform::Both => sym(om) * sym(om_p) - sym(om) - sym(om_p) + one,
                Transform::Right => sym(om_p) - one,
                Transform::Left => sym(om) - one,
            };
            let phase = Complex64::new(0.0, -om * r).exp();
            total += mult * phase * (s * 2.0 * tn * wt * big_w);
        }
    }
    Ok(total)
}

fn compiled_for(
    op: &LinearOperatorSpec,
    params: &KernelParams,
    x: &[f64],
    y: &[f64],
) -> Result<Operator> {
    let compiled = op.compile()?;
    compiled.check(params, x, y)?;
    Ok(compiled)
}

/// `L_x L_x' g(x, x')`.
pub fn op_kernel_ff(
    op: &LinearOperatorSpec,
    params: &KernelParams,
    x: &[f64],
    x_prime: &[f64],
) -> Result<f64> {
    compiled_for(op, params, x, x_prime)?.eval(Transform::Both, params, x, x_prime)
}

/// `L_x' g(x_u, x_f)`: the operator acts on the second argument only.
pub fn op_kernel_uf(
    op: &LinearOperatorSpec,
    params: &KernelParams,
    x_u: &[f64],
    x_f: &[f64],
) -> Result<f64> {
    compiled_for(op, params, x_u, x_f)?.eval(Transform::Right, params, x_u, x_f)
}

/// Which arguments the numeric oracle transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Both,
}

/// Oracle step for first differences, in units of the length scale `1/√w_d`.
pub const FD_FIRST_STEP: f64 = 1e-4;
/// Oracle step for second differences, in length-scale units.
pub const FD_SECOND_STEP: f64 = 1e-4;
/// First-difference step of [`apply_operator_numeric`], in units of the
/// supplied length scales.
pub const F64_FIRST_STEP: f64 = 2e-3;
/// Second-difference step of [`apply_operator_numeric`].
pub const F64_SECOND_STEP: f64 = 3e-2;
/// Gauss–Legendre nodes for the oracle's integral terms.
pub const ORACLE_QUAD_NODES: usize = 64;

fn partial<T: Scalar>(f: &dyn Fn(&[T]) -> T, at: &[T], dim: usize, order: usize, h: f64) -> T {
    let mut p = at.to_vec();
    let mut eval = |k: f64| {
        p[dim] = at[dim] + T::from_f64(k * h);
        f(&p)
    };
    match order {
        0 => f(at),
        1 => (eval(-2.0) - eval(2.0) + (eval(1.0) - eval(-1.0)).scale(8.0)).div(12.0 * h),
        2 => {
            let outer = (eval(3.0) + eval(-3.0)).scale(2.0);
            let mid = (eval(2.0) + eval(-2.0)).scale(27.0);
            let inner = (eval(1.0) + eval(-1.0)).scale(270.0);
            (outer - mid + inner - f(at).scale(490.0)).div(180.0 * h * h)
        }
        _ => panic!("numeric partial derivatives support orders 0..=2"),
    }
}

/// `L f` at `at`. `h1`/`h2` are the per-dimension first/second difference steps.
fn apply_numeric<T: Scalar>(
    op: &LinearOperatorSpec,
    f: &dyn Fn(&[T]) -> T,
    at: &[T],
    h1: &[f64],
    h2: &[f64],
) -> T {
    let d1 = |d: usize| partial(f, at, d, 1, h1[d]);
    let d2 = |d: usize| partial(f, at, d, 2, h2[d]);
    match op {
        LinearOperatorSpec::Identity => f(at),
        LinearOperatorSpec::FirstDerivative1D => d1(0),
        LinearOperatorSpec::IntegroDifferential1D { lower_bound } => {
            let gl = GaussLegendre::new(ORACLE_QUAD_NODES);
            let lb = T::from_f64(*lower_bound);
            let half = (at[0] - lb).scale(0.5);
            let mid = (at[0] + lb).scale(0.5);
            let mut integral = T::from_f64(0.0);
            for (t, w) in gl.nodes().iter().zip(gl.weights()) {
                integral = integral + f(&[mid + half.scale(*t)]).scale(*w);
            }
            d1(0) + integral * half
        }
        LinearOperatorSpec::Laplacian { dim } => (1..*dim).fold(d2(0), |acc, d| acc + d2(d)),
        LinearOperatorSpec::AdvectionDiffusionReaction => d1(0) + d1(1) - d2(1) - f(at),
        LinearOperatorSpec::FractionalRL { .. } => unreachable!("rejected by callers"),
    }
}

fn reject_fractional(op: &LinearOperatorSpec) -> Result<()> {
    if op.has_closed_form() {
        Ok(())
    } else {
        Err(Error::invalid(
            "the numeric oracle does not support the fractional operator",
        ))
    }
}

/// Numerical partial derivative of order 0, 1 or 2 along dimension `dim`.
///
/// Order 1 uses the fourth-order five-point central stencil, order 2 the
/// sixth-order seven-point stencil.
pub fn numeric_partial(
    f: &dyn Fn(&[f64]) -> f64,
    at: &[f64],
    dim: usize,
    order: usize,
    step: f64,
) -> f64 {
    partial(f, at, dim, order, step)
}

/// Applies `op` to `f` at `at` by finite differences and quadrature in
/// double precision.
///
/// Steps are [`F64_FIRST_STEP`] and [`F64_SECOND_STEP`] times
/// `length_scales[d]`. The fractional operator has no numeric counterpart
/// here.
pub fn apply_operator_numeric(
    op: &LinearOperatorSpec,
    f: &dyn Fn(&[f64]) -> f64,
    at: &[f64],
    length_scales: &[f64],
) -> Result<f64> {
    op.validate()?;
    reject_fractional(op)?;
    if let Some(d) = op.input_dim() {
        check_dim(d, at.len())?;
    }
    check_dim(at.len(), length_scales.len())?;
    let h1: Vec<f64> = length_scales.iter().map(|l| F64_FIRST_STEP * l).collect();
    let h2: Vec<f64> = length_scales.iter().map(|l| F64_SECOND_STEP * l).collect();
    Ok(apply_numeric(op, f, at, &h1, &h2))
}

/// Operator-transformed kernel computed numerically from `g`.
///
/// Derivatives are central differences with steps [`FD_FIRST_STEP`] and
/// [`FD_SECOND_STEP`] times the length scale, integrals use
/// [`ORACLE_QUAD_NODES`]-point Gauss–Legendre. Everything is evaluated in
/// double-double arithmetic so that nested differences keep about 15
/// correct digits even where the kernel value cancels to a tiny fraction of
/// its individual terms.
pub fn op_kernel_numeric_oracle(
    op: &LinearOperatorSpec,
    params: &KernelParams,
    x: &[f64],
    x_prime: &[f64],
    side: Side,
) -> Result<f64> {
    op.validate()?;
    reject_fractional(op)?;
    if let Some(d) = op.input_dim() {
        check_dim(d, params.dim())?;
    }
    params.check_points(x, x_prime)?;
    if *op == LinearOperatorSpec::Identity {
        return Ok(params.variance() * se_correlation(x, x_prime, params.ard_weights()));
    }
    let ls = params.length_scales();
    let h1: Vec<f64> = ls.iter().map(|l| FD_FIRST_STEP * l).collect();
    let h2: Vec<f64> = ls.iter().map(|l| FD_SECOND_STEP * l).collect();
    let w = params.ard_weights();
    let g = |a: &[Dd], b: &[Dd]| {
        let mut q = Dd::new(0.0);
        for d in 0..w.len() {
            let r = a[d] - b[d];
            q = q + (r * r).mul_f64(w[d]);
        }
        q.mul_f64(-0.5).exp().mul_f64(params.variance())
    };
    let xd: Vec<Dd> = x.iter().map(|v| Dd::new(*v)).collect();
    let yd: Vec<Dd> = x_prime.iter().map(|v| Dd::new(*v)).collect();
    let v = match side {
        Side::Right => apply_numeric(op, &|b: &[Dd]| g(&xd, b), &yd, &h1, &h2),
        Side::Left => apply_numeric(op, &|a: &[Dd]| g(a, &yd), &xd, &h1, &h2),
        Side::Both => {
            let inner = |a: &[Dd]| apply_numeric(op, &|b: &[Dd]| g(a, b), &yd, &h1, &h2);
            apply_numeric(op, &inner, &xd, &h1, &h2)
        }
    };
    Ok(v.to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::se_eval;
    use crate::linalg::{symmetric_eigenvalues, Matrix};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (b.abs() + 1e-12)
    }

    fn closed_form_catalog() -> Vec<LinearOperatorSpec> {
        vec![
            LinearOperatorSpec::Identity,
            LinearOperatorSpec::FirstDerivative1D,
            LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 },
            LinearOperatorSpec::Laplacian { dim: 2 },
            LinearOperatorSpec::AdvectionDiffusionReaction,
        ]
    }

    fn random_params(rng: &mut ChaCha8Rng, dim: usize) -> KernelParams {
        let lv = rng.random_range(-1.0..1.0);
        let lw = (0..dim).map(|_| rng.random_range(-1.0..3.0)).collect();
        KernelParams::from_log(lv, lw).unwrap()
    }

    #[test]
    fn identity_equals_base_kernel() {
        let p = KernelParams::new(1.4, vec![2.0, 0.3]).unwrap();
        let (x, y) = ([0.1, 0.7], [0.4, -0.2]);
        let g = se_eval(&x, &y, &p).unwrap();
        assert_eq!(
            op_kernel_ff(&LinearOperatorSpec::Identity, &p, &x, &y).unwrap(),
            g
        );
        assert_eq!(
            op_kernel_uf(&LinearOperatorSpec::Identity, &p, &x, &y).unwrap(),
            g
        );
        let oracle =
            op_kernel_numeric_oracle(&LinearOperatorSpec::Identity, &p, &x, &y, Side::Both)
                .unwrap();
        assert_eq!(oracle, g);
    }

    #[test]
    fn first_derivative_values() {
        let p = KernelParams::new(1.0, vec![1.0]).unwrap();
        let op = LinearOperatorSpec::FirstDerivative1D;
        assert!((op_kernel_ff(&op, &p, &[0.3], &[0.3]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(op_kernel_uf(&op, &p, &[0.3], &[0.3]).unwrap(), 0.0);
        for (x, y) in [(0.0, 0.5), (0.2, -1.3), (1.0, 2.5)] {
            let r: f64 = x - y;
            let exact = (1.0 - r * r) * (-0.5 * r * r).exp();
            let oracle = op_kernel_numeric_oracle(&op, &p, &[x], &[y], Side::Both).unwrap();
            assert!(rel(oracle, exact) < 1e-6, "oracle {oracle} exact {exact}");
            assert!(rel(op_kernel_ff(&op, &p, &[x], &[y]).unwrap(), exact) < 1e-14);
        }
    }

    #[test]
    fn integro_oracle_at_lower_bound_is_derivative_only() {
        let p = KernelParams::new(0.8, vec![5.0]).unwrap();
        let op = LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 };
        let x = 0.37;
        let oracle = op_kernel_numeric_oracle(&op, &p, &[x], &[0.0], Side::Right).unwrap();
        let dg = 5.0 * (x - 0.0) * se_eval(&[x], &[0.0], &p).unwrap();
        assert!(rel(oracle, dg) < 1e-7);
    }

    #[test]
    fn closed_forms_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for op in closed_form_catalog() {
            let dim = op.input_dim().unwrap_or(3);
            for _ in 0..25 {
                let p = random_params(&mut rng, dim);
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let ff = op_kernel_ff(&op, &p, &x, &y).unwrap();
                let ff_o = op_kernel_numeric_oracle(&op, &p, &x, &y, Side::Both).unwrap();
                assert!(rel(ff, ff_o) < 1e-5, "{op:?} ff {ff} oracle {ff_o}");
                let uf = op_kernel_uf(&op, &p, &x, &y).unwrap();
                let uf_o = op_kernel_numeric_oracle(&op, &p, &x, &y, Side::Right).unwrap();
                assert!(rel(uf, uf_o) < 1e-5, "{op:?} uf {uf} oracle {uf_o}");
                let c = op.compile().unwrap();
                let fu = c.eval(Transform::Left, &p, &x, &y).unwrap();
                let fu_o = op_kernel_numeric_oracle(&op, &p, &x, &y, Side::Left).unwrap();
                assert!(rel(fu, fu_o) < 1e-5, "{op:?} fu {fu} oracle {fu_o}");
                // Left and right transforms are mirror images.
                assert_eq!(fu, c.eval(Transform::Right, &p, &y, &x).unwrap());
            }
        }
    }

    #[test]
    fn ff_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for op in closed_form_catalog() {
            let dim = op.input_dim().unwrap_or(2);
            let p = random_params(&mut rng, dim);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let a = op_kernel_ff(&op, &p, &x, &y).unwrap();
            let b = op_kernel_ff(&op, &p, &y, &x).unwrap();
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-12), "{op:?}");
        }
    }

    #[test]
    fn ff_gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for op in closed_form_catalog() {
            let dim = op.input_dim().unwrap_or(2);
            let c = op.compile().unwrap();
            for _ in 0..5 {
                let p = random_params(&mut rng, dim);
                let n = rng.random_range(2..=15);
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
                    .collect();
                let k = Matrix::from_fn(n, n, |i, j| {
                    c.eval(Transform::Both, &p, &pts[i], &pts[j]).unwrap()
                });
                let eig = symmetric_eigenvalues(&k);
                assert!(eig[0] >= -1e-8 * eig[n - 1], "{op:?}: {eig:?}");
            }
        }
    }

    #[test]
    fn laplacian_is_sum_of_fourth_derivative_pairs() {
        let p = KernelParams::new(1.2, vec![3.0, 0.7, 1.9]).unwrap();
        let x = [0.2, 0.5, 0.9];
        let y = [0.6, 0.1, 0.4];
        let ls = p.length_scales();
        let g = |a: &[f64], b: &[f64]| se_eval(a, b, &p).unwrap();
        let mut total = 0.0;
        for d in 0..3 {
            for e in 0..3 {
                let inner = |a: &[f64]| {
                    numeric_partial(&|b: &[f64]| g(a, b), &y, e, 2, F64_SECOND_STEP * ls[e])
                };
                total += numeric_partial(&inner, &x, d, 2, F64_SECOND_STEP * ls[d]);
            }
        }
        let closed = op_kernel_ff(&LinearOperatorSpec::Laplacian { dim: 3 }, &p, &x, &y).unwrap();
        assert!(rel(closed, total) < 1e-5, "closed {closed} pairs {total}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ops = closed_form_catalog();
        ops.push(LinearOperatorSpec::IntegroDifferential1D { lower_bound: -0.3 });
        ops.push(LinearOperatorSpec::FractionalRL {
            alpha: 0.3,
            quadrature: QuadratureSpec::default(),
        });
        ops.push(LinearOperatorSpec::FractionalRL {
            alpha: 1.4,
            quadrature: QuadratureSpec::default(),
        });
        for op in ops {
            let dim = op.input_dim().unwrap_or(2);
            let c = op.compile().unwrap();
            for t in [
                Transform::None,
                Transform::Right,
                Transform::Left,
                Transform::Both,
            ] {
                let p = random_params(&mut rng, dim);
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
                let mut grad = vec![0.0; dim + 1];
                let v = c.eval_grad(t, &p, &x, &y, &mut grad).unwrap();
                assert_eq!(v, c.eval(t, &p, &x, &y).unwrap());
                let mut theta = vec![p.log_variance()];
                theta.extend_from_slice(p.log_weights());
                for k in 0..=dim {
                    let at = |shift: f64| {
                        let mut th = theta.clone();
                        th[k] += shift;
                        let q = KernelParams::from_log(th[0], th[1..].to_vec()).unwrap();
                        c.eval(t, &q, &x, &y).unwrap()
                    };
                    let h = 1e-5;
                    let fd = (at(h) - at(-h)) / (2.0 * h);
                    let scale = grad[k].abs().max(1e-6 * v.abs()).max(1e-9);
                    assert!(
                        (fd - grad[k]).abs() / scale < 1e-5,
                        "{op:?} {t:?} k={k}: fd {fd} an {}",
                        grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn fractional_alpha_zero_vanishes() {
        let p = KernelParams::new(1.3, vec![2.0]).unwrap();
        let q = QuadratureSpec::default();
        for (x, y) in [(0.0, 0.0), (0.2, 0.9), (1.0, -0.4)] {
            assert_eq!(fractional_kernel_ff(0.0, &p, x, y, q).unwrap(), 0.0);
            assert_eq!(fractional_kernel_uf(0.0, &p, x, y, q).unwrap(), 0.0);
        }
    }

    #[test]
    fn fractional_alpha_one_matches_first_order_closed_form() {
        // L = d/dx - I: ff = g (1 + w(1 - w r²)), uf = g (w r - 1) with r = x_u - x_f.
        let q = QuadratureSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s2 = rng.random_range(0.5..2.0);
            let w = libm::exp(rng.random_range(-1.0..4.0));
            let p = KernelParams::new(s2, vec![w]).unwrap();
            let x = rng.random_range(0.0..1.0);
            let y = rng.random_range(0.0..1.0);
            let r = x - y;
            let g = s2 * (-0.5 * w * r * r).exp();
            let ff = g * (1.0 + w * (1.0 - w * r * r));
            let uf = g * (w * r - 1.0);
            assert!(rel(fractional_kernel_ff(1.0, &p, x, y, q).unwrap(), ff) < 1e-4);
            assert!(rel(fractional_kernel_uf(1.0, &p, x, y, q).unwrap(), uf) < 1e-4);
        }
    }

    #[test]
    fn fractional_quadrature_self_refinement() {
        let p = KernelParams::new(1.0, vec![1.0]).unwrap();
        let q = QuadratureSpec::default();
        let gap = fractional_refinement_gap(Transform::Both, 0.3, &p, 0.5, 0.5, q).unwrap();
        assert!(gap < 1e-6, "gap {gap}");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_params(&mut rng, 1);
            let x = rng.random_range(0.0..1.0);
            let y = rng.random_range(0.0..1.0);
            for t in [Transform::Both, Transform::Right] {
                let gap = fractional_refinement_gap(t, 0.3, &p, x, y, q).unwrap();
                assert!(gap < 1e-6, "{t:?} gap {gap}");
            }
        }
    }

    #[test]
    fn fractional_complex_sum_is_real_and_matches() {
        let q = QuadratureSpec::default();
        let p = KernelParams::new(1.1, vec![6.0]).unwrap();
        for t in [Transform::Both, Transform::Right, Transform::Left] {
            for (x, y) in [(0.1, 0.8), (0.5, 0.5), (0.9, 0.2)] {
                let z = fractional_spectral_sum(t, 0.3, &p, x, y, q).unwrap();
                assert!(z.im.abs() < 1e-12 * z.re.abs(), "{t:?}: {z}");
                let c = LinearOperatorSpec::FractionalRL {
                    alpha: 0.3,
                    quadrature: q,
                }
                .compile()
                .unwrap();
                let v = c.eval(t, &p, &[x], &[y]).unwrap();
                assert!(rel(v, z.re) < 1e-10, "{t:?}: {v} vs {}", z.re);
            }
        }
    }

    #[test]
    fn fractional_gram_is_psd() {
        let c = LinearOperatorSpec::FractionalRL {
            alpha: 0.3,
            quadrature: QuadratureSpec::default(),
        }
        .compile()
        .unwrap();
        let p = KernelParams::new(1.0, vec![20.0]).unwrap();
        let pts: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let k = Matrix::from_fn(12, 12, |i, j| {
            c.eval(Transform::Both, &p, &[pts[i]], &[pts[j]]).unwrap()
        });
        let eig = symmetric_eigenvalues(&k);
        assert!(eig[0] >= -1e-8 * eig[11]);
    }

    #[test]
    fn validation_errors() {
        let bad = LinearOperatorSpec::FractionalRL {
            alpha: 2.5,
            quadrature: QuadratureSpec::default(),
        };
        let msg = alloc::string::ToString::to_string(&bad.validate().unwrap_err());
        assert!(msg.contains("(0, 2)"), "{msg}");
        assert!(LinearOperatorSpec::Laplacian { dim: 0 }.validate().is_err());
        assert!(LinearOperatorSpec::IntegroDifferential1D {
            lower_bound: f64::NAN
        }
        .validate()
        .is_err());
        let q = QuadratureSpec {
            node_count: 8,
            frequency_cutoff: 9.0,
        };
        assert!(q.validate().is_err());
        assert!(fractional_kernel_ff(
            2.0,
            &KernelParams::new(1.0, vec![1.0]).unwrap(),
            0.0,
            0.0,
            QuadratureSpec::default()
        )
        .is_err());
        let p2 = KernelParams::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(op_kernel_ff(
            &LinearOperatorSpec::FirstDerivative1D,
            &p2,
            &[0.0, 0.0],
            &[0.0, 0.0]
        )
        .unwrap_err()
        .is_usage());
        let p1 = KernelParams::new(1.0, vec![1.0]).unwrap();
        assert!(op_kernel_numeric_oracle(&bad, &p1, &[0.0], &[0.0], Side::Both).is_err());
    }
}

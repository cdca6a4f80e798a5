//! Operator kernels checked against formulas derived by hand, before any
//! comparison with the numeric oracle.

use mfgp_core::kernels::se_eval;
use mfgp_core::operators::{op_kernel_ff, op_kernel_numeric_oracle, op_kernel_uf, Side, Transform};
use mfgp_core::{KernelParams, LinearOperatorSpec, QuadratureSpec};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-12)
}

fn se(var: f64, w: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let q: f64 = (0..w.len()).map(|d| w[d] * (x[d] - y[d]).powi(2)).sum();
    var * (-0.5 * q).exp()
}

const PAIRS_1D: [(f64, f64); 5] = [
    (0.0, 0.0),
    (0.3, 0.1),
    (-0.4, 0.9),
    (1.2, 1.25),
    (2.0, -1.0),
];

#[test]
fn se_kernel_values() {
    let p = KernelParams::new(1.7, vec![2.0, 0.5]).unwrap();
    let v = se_eval(&[0.2, 1.0], &[0.7, -1.0], &p).unwrap();
    // 1.7 * exp(-0.5 * (2 * 0.25 + 0.5 * 4))
    assert!(close(v, 1.7 * (-1.25f64).exp(), 1e-15));
    assert_eq!(se_eval(&[0.4, 0.4], &[0.4, 0.4], &p).unwrap(), 1.7);
}

#[test]
fn first_derivative_kernels() {
    let (var, w) = (1.3, 4.0);
    let p = KernelParams::new(var, vec![w]).unwrap();
    let op = LinearOperatorSpec::FirstDerivative1D;
    for (x, y) in PAIRS_1D {
        let r = x - y;
        let g = se(var, &[w], &[x], &[y]);
        let uf = op_kernel_uf(&op, &p, &[x], &[y]).unwrap();
        let ff = op_kernel_ff(&op, &p, &[x], &[y]).unwrap();
        assert!(close(uf, w * r * g, 1e-13), "uf at ({x}, {y})");
        assert!(
            close(ff, w * (1.0 - w * r * r) * g, 1e-13),
            "ff at ({x}, {y})"
        );
    }
}

#[test]
fn laplacian_kernels_with_ard() {
    let (var, w) = (0.8, [3.0, 0.7]);
    let p = KernelParams::new(var, w.to_vec()).unwrap();
    let op = LinearOperatorSpec::Laplacian { dim: 2 };
    let pts = [
        ([0.1, 0.2], [0.4, -0.3]),
        ([0.0, 0.0], [0.0, 0.0]),
        ([1.0, -0.5], [0.2, 0.9]),
    ];
    for (x, y) in pts {
        let g = se(var, &w, &x, &y);
        let second = |d: usize| {
            let r = x[d] - y[d];
            w[d] * w[d] * r * r - w[d]
        };
        let fourth = |d: usize| {
            let r2 = (x[d] - y[d]).powi(2);
            w[d] * w[d] * (3.0 - 6.0 * w[d] * r2 + w[d] * w[d] * r2 * r2)
        };
        let uf_hand = (second(0) + second(1)) * g;
        let ff_hand = (fourth(0) + fourth(1) + 2.0 * second(0) * second(1)) * g;
        assert!(close(
            op_kernel_uf(&op, &p, &x, &y).unwrap(),
            uf_hand,
            1e-12
        ));
        assert!(close(
            op_kernel_ff(&op, &p, &x, &y).unwrap(),
            ff_hand,
            1e-12
        ));
    }
}

#[test]
fn advection_diffusion_reaction_uf() {
    // L = ∂t + ∂x - ∂xx - 1 applied to the second argument.
    let (var, w) = (1.1, [2.0, 5.0]);
    let p = KernelParams::new(var, w.to_vec()).unwrap();
    let op = LinearOperatorSpec::AdvectionDiffusionReaction;
    let (x, y) = ([0.3, 0.1], [0.5, 0.45]);
    let g = se(var, &w, &x, &y);
    let (rt, rx) = (x[0] - y[0], x[1] - y[1]);
    let hand = (w[0] * rt + w[1] * rx - (w[1] * w[1] * rx * rx - w[1]) - 1.0) * g;
    assert!(close(op_kernel_uf(&op, &p, &x, &y).unwrap(), hand, 1e-13));
}

#[test]
fn fractional_order_one_is_first_derivative_minus_identity() {
    // With alpha = 1 the operator is d/dx - 1.
    let (var, w) = (0.9, 6.0);
    let p = KernelParams::new(var, vec![w]).unwrap();
    let op = LinearOperatorSpec::FractionalRL {
        alpha: 1.0,
        quadrature: QuadratureSpec::default(),
    };
    for (x, y) in PAIRS_1D {
        let r = x - y;
        let g = se(var, &[w], &[x], &[y]);
        let uf = op_kernel_uf(&op, &p, &[x], &[y]).unwrap();
        let ff = op_kernel_ff(&op, &p, &[x], &[y]).unwrap();
        assert!((uf - (w * r - 1.0) * g).abs() < 1e-7, "uf at ({x}, {y})");
        assert!(
            (ff - (w * (1.0 - w * r * r) + 1.0) * g).abs() < 1e-7,
            "ff at ({x}, {y})"
        );
    }
}

#[test]
fn integro_differential_matches_numeric_oracle() {
    let p = KernelParams::new(1.4, vec![3.0]).unwrap();
    let op = LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.0 };
    for (x, y) in [(0.2, 0.7), (0.9, 0.1), (0.5, 0.5), (0.0, 0.3)] {
        let ff = op_kernel_ff(&op, &p, &[x], &[y]).unwrap();
        let uf = op_kernel_uf(&op, &p, &[x], &[y]).unwrap();
        let ff_ref = op_kernel_numeric_oracle(&op, &p, &[x], &[y], Side::Both).unwrap();
        let uf_ref = op_kernel_numeric_oracle(&op, &p, &[x], &[y], Side::Right).unwrap();
        assert!(close(ff, ff_ref, 1e-8), "ff {ff} vs {ff_ref}");
        assert!(close(uf, uf_ref, 1e-8), "uf {uf} vs {uf_ref}");
    }
}

#[test]
fn integro_differential_at_lower_bound() {
    // At x = x' = lower bound both integrals vanish and only d/dx remains.
    let p = KernelParams::new(2.0, vec![1.5]).unwrap();
    let op = LinearOperatorSpec::IntegroDifferential1D { lower_bound: 0.25 };
    let ff = op_kernel_ff(&op, &p, &[0.25], &[0.25]).unwrap();
    assert!(close(ff, 2.0 * 1.5, 1e-14));
    assert!(op_kernel_uf(&op, &p, &[0.25], &[0.25]).unwrap().abs() < 1e-15);
}

#[test]
fn left_transform_mirrors_right() {
    let p = KernelParams::new(1.0, vec![2.0, 0.4]).unwrap();
    let op = LinearOperatorSpec::AdvectionDiffusionReaction
        .compile()
        .unwrap();
    let (x, y) = ([0.1, 0.6], [0.8, 0.2]);
    let l = op.eval(Transform::Left, &p, &x, &y).unwrap();
    let r = op.eval(Transform::Right, &p, &y, &x).unwrap();
    assert!(close(l, r, 1e-14));
}

#[test]
fn fractional_is_rejected_by_the_oracle() {
    let p = KernelParams::new(1.0, vec![1.0]).unwrap();
    let op = LinearOperatorSpec::FractionalRL {
        alpha: 0.5,
        quadrature: QuadratureSpec::default(),
    };
    assert!(op_kernel_numeric_oracle(&op, &p, &[0.0], &[0.1], Side::Both).is_err());
}

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use ssarx_core::control::QpProblem;
use ssarx_core::rng::{gaussian_matrix, stream, Stream};

pub struct DualOracle {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Accelerated projected gradient on the dual of
/// `min ½xᵀHx + fᵀx s.t. Gx ≤ h`, with adaptive restart. Stops once the
/// primal point `x(λ)` is feasible and complementary to `tol`.
pub fn dual_projected_gradient(qp: &QpProblem, max_iter: usize, tol: f64) -> DualOracle {
    let h_inv = qp
        .h_mat
        .clone()
        .cholesky()
        .expect("test QPs are strictly convex")
        .inverse();
    let k = qp.constraints();
    let x_of = |lam: &DVector<f64>| -(&h_inv * (&qp.f + qp.g.transpose() * lam));
    if k == 0 {
        let x = x_of(&DVector::zeros(0));
        return DualOracle {
            objective: qp.objective(&x),
            x,
            lambda: DVector::zeros(0),
            iterations: 0,
        };
    }
    let m = &qp.g * &h_inv * qp.g.transpose();
    let lip = m.symmetric_eigenvalues().max().max(1e-300);
    let mut lam = DVector::zeros(k);
    let mut y = lam.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut phi_prev = f64::INFINITY;
    for it in 0..max_iter {
        iterations = it + 1;
        // ∇φ(λ) = h − G x(λ) for φ = −(dual function)
        let grad = &qp.h - &qp.g * x_of(&y);
        let next = (&y - grad / lip).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x = x_of(&next);
        let slack = &qp.h - &qp.g * &x;
        let phi = -(qp.objective(&x) - next.dot(&slack));
        if phi > phi_prev {
            // restart momentum
            y = next.clone();
            t = 1.0;
        } else {
            y = &next + (&next - &lam) * ((t - 1.0) / t_next);
            t = t_next;
        }
        phi_prev = phi;
        lam = next;
        let infeas = slack.iter().fold(0.0_f64, |a, &s| a.max(-s));
        let comp = lam.dot(&slack).abs();
        if infeas <= tol && comp <= tol {
            break;
        }
    }
    let x = x_of(&lam);
    DualOracle {
        objective: qp.objective(&x),
        x,
        lambda: lam,
        iterations,
    }
}

/// Feasible random QP with `m` variables, moderate conditioning and a
/// linear term large enough that constraints bind.
pub fn random_feasible_qp(seed: u64, m: usize, k: usize) -> QpProblem {
    let mut rng = stream(seed, Stream::Input);
    let q = gaussian_matrix(&mut rng, m, m, 1.0).qr().q();
    let eig = DVector::from_fn(m, |_, _| rng.random_range(0.1..10.0));
    let h_mat = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let h_mat = 0.5 * (&h_mat + h_mat.transpose());
    let f = gaussian_matrix(&mut rng, m, 1, 5.0).column(0).into_owned();
    let g = gaussian_matrix(&mut rng, k, m, 1.0);
    let x0 = gaussian_matrix(&mut rng, m, 1, 0.5).column(0).into_owned();
    let slack = DVector::from_fn(k, |_, _| rng.random_range(0.0..1.0));
    let h = &g * x0 + slack;
    QpProblem::new(h_mat, f, g, h).unwrap()
}

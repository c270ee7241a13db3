//! Dense strictly convex QP `min ½ xᵀHx + fᵀx  s.t.  Gx ≤ h`.
//!
//! Dual active-set method of Goldfarb and Idnani. It starts from the
//! unconstrained minimiser and adds violated constraints one at a time,
//! dropping active ones whose multipliers would turn negative. No feasible
//! starting point is needed and infeasibility is detected when a violated
//! constraint cannot be satisfied by any primal or dual step.
//!
//! The projections are recomputed from a fresh QR factorisation of the
//! whitened active normals on every step; problems here have at most a few
//! dozen variables, so the incremental updates of the original method buy
//! little.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h_mat: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h_mat: DMatrix<f64>,
        f: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self> {
        let m = f.len();
        if h_mat.shape() != (m, m) {
            return Err(Error::dim(
                "QP Hessian",
                format!("{m}x{m}"),
                format!("{:?}", h_mat.shape()),
            ));
        }
        if g.ncols() != m || g.nrows() != h.len() {
            return Err(Error::dim(
                "QP constraints",
                format!("{}x{m}", h.len()),
                format!("{}x{}", g.nrows(), g.ncols()),
            ));
        }
        Ok(Self { h_mat, f, g, h })
    }

    pub fn unconstrained(h_mat: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let m = f.len();
        Self::new(h_mat, f, DMatrix::zeros(0, m), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn constraints(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h_mat * x)) + self.f.dot(x)
    }

    /// Largest constraint violation `max(G x − h)⁺`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.g * x - &self.h)
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Primal feasibility tolerance for accepting the current iterate.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `G x ≤ h`, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible { violated: usize },
}

/// KKT residuals in max-abs norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &QpProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let grad = &qp.h_mat * x + &qp.f + qp.g.transpose() * lambda;
    let slack = &qp.h - &qp.g * x;
    KktResiduals {
        stationarity: grad.amax(),
        primal: slack.iter().fold(0.0_f64, |m, &s| m.max(-s)),
        dual: lambda.iter().fold(0.0_f64, |m, &l| m.max(-l)),
        complementarity: lambda
            .iter()
            .zip(slack.iter())
            .fold(0.0_f64, |m, (&l, &s)| m.max((l * s).abs())),
    }
}

struct Projections {
    /// Primal step direction in the null space of the active normals.
    z: DVector<f64>,
    /// Change of the active multipliers per unit of the new one.
    r: DVector<f64>,
    /// Share of the whitened normal outside the span of the active normals.
    independent: f64,
}

/// `z = H⁻¹(I − N N*) n`, `r = N* n` with `N* = (Nᵀ H⁻¹ N)⁻¹ Nᵀ H⁻¹`,
/// evaluated in coordinates whitened by the Cholesky factor of `H`.
fn projections(chol: &Cholesky<f64, Dyn>, normals: &DMatrix<f64>, n: &DVector<f64>) -> Projections {
    let l = chol.l();
    let d = l
        .solve_lower_triangular(n)
        .expect("Cholesky factor is nonsingular");
    let (reduced, r) = if normals.ncols() == 0 {
        (d.clone(), DVector::zeros(0))
    } else {
        let b = l
            .solve_lower_triangular(normals)
            .expect("Cholesky factor is nonsingular");
        let qr = b.qr();
        let q = qr.q();
        let coeff = q.transpose() * &d;
        let r = qr
            .r()
            .solve_upper_triangular(&coeff)
            .unwrap_or_else(|| DVector::zeros(normals.ncols()));
        (&d - &q * coeff, r)
    };
    let independent = reduced.norm() / d.norm().max(f64::MIN_POSITIVE);
    let z = l
        .transpose()
        .solve_upper_triangular(&reduced)
        .expect("Cholesky factor is nonsingular");
    Projections { z, r, independent }
}

pub fn solve_qp(qp: &QpProblem, opts: &QpOptions) -> Result<QpOutcome> {
    let m = qp.dim();
    let chol = qp
        .h_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Config("QP Hessian is not positive definite".into()))?;
    let mut x = -chol.solve(&qp.f);
    let n_con = qp.constraints();
    // constraint i in the form n_iᵀ x ≥ b_i with n_i = −G_i, b_i = −h_i
    let slack = |x: &DVector<f64>, i: usize| qp.h[i] - qp.g.row(i).dot(&x.transpose());
    let normal = |i: usize| -qp.g.row(i).transpose();

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        // most violated constraint, scaled by its row norm
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..n_con {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&x, i);
            let scale = qp.g.row(i).norm().max(1.0);
            if s < -opts.feas_tol * scale {
                let score = s / scale;
                if pick.is_none_or(|(_, best)| score < best) {
                    pick = Some((i, score));
                }
            }
        }
        let Some((p, _)) = pick else {
            let mut multipliers = DVector::zeros(n_con);
            for (&i, &ui) in active.iter().zip(u.iter()) {
                multipliers[i] = ui;
            }
            return Ok(QpOutcome::Optimal(QpSolution {
                objective: qp.objective(&x),
                x,
                multipliers,
                active,
                iterations,
            }));
        };
        let n_p = normal(p);
        let mut u_new = 0.0;

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                return Err(Error::NotConverged {
                    what: "QP active-set iteration",
                    iterations,
                    residual: -slack(&x, p),
                });
            }
            let normals = DMatrix::from_fn(m, active.len(), |r, c| -qp.g[(active[c], r)]);
            let proj = projections(&chol, &normals, &n_p);
            let z_dot = proj.z.dot(&n_p);
            let primal_step = proj.independent > 1e-10 && z_dot > 0.0;

            // partial step: first active multiplier to hit zero
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in proj.r.iter().enumerate() {
                if rk > 1e-14 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let t2 = if primal_step {
                -slack(&x, p) / z_dot
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(QpOutcome::Infeasible { violated: p });
            }
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t * proj.r[k];
            }
            u_new += t;
            if primal_step {
                x += &proj.z * t;
            }
            if primal_step && t2 <= t1 {
                active.push(p);
                u.push(u_new);
                break;
            }
            let k = drop_at.expect("partial step has a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }
}

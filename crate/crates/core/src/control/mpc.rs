//! Condensed tracking QP over the future horizon and its per-step solve.

use nalgebra::{DMatrix, DVector};

use super::qp::{kkt_residuals, solve_qp, QpOptions, QpOutcome, QpProblem};
use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::predictor::CondensedPredictor;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Output weight per step, `n_y × n_y`.
    pub q: DMatrix<f64>,
    /// Input weight per step, `n_u × n_u`.
    pub r: DMatrix<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub y_min: DVector<f64>,
    pub y_max: DVector<f64>,
    pub l_p: usize,
    pub l_f: usize,
    /// L1 weight on output-bound slacks in the fallback problem.
    pub soft_weight: f64,
    /// Small quadratic weight on the slacks keeping the fallback Hessian definite.
    pub soft_quadratic: f64,
    pub qp: QpOptions,
    /// Accepted KKT residual for a solve to count as optimal.
    pub kkt_tol: f64,
}

impl ControllerConfig {
    /// Scalar weights and symmetric bounds applied to every channel.
    pub fn uniform(
        n_u: usize,
        n_y: usize,
        q: f64,
        r: f64,
        u_bound: f64,
        y_bound: f64,
        l_p: usize,
        l_f: usize,
    ) -> Self {
        Self {
            q: DMatrix::identity(n_y, n_y) * q,
            r: DMatrix::identity(n_u, n_u) * r,
            u_min: DVector::from_element(n_u, -u_bound),
            u_max: DVector::from_element(n_u, u_bound),
            y_min: DVector::from_element(n_y, -y_bound),
            y_max: DVector::from_element(n_y, y_bound),
            l_p,
            l_f,
            soft_weight: 1e4,
            soft_quadratic: 1e-3,
            qp: QpOptions::default(),
            kkt_tol: 1e-6,
        }
    }

    /// `Q = 1`, `R = 0.01`, `|u|, |y| ≤ 2`, `L_p = 10`, `L_f = 15`.
    pub fn benchmark() -> Self {
        Self::uniform(1, 1, 1.0, 0.01, 2.0, 2.0, 10, 15)
    }

    pub fn n_u(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n_u, n_y) = (self.n_u(), self.n_y());
        if self.q.shape() != (n_y, n_y) || self.r.shape() != (n_u, n_u) {
            return Err(Error::Config("Q and R must be square".into()));
        }
        check_len("u_min", &self.u_min, n_u)?;
        check_len("u_max", &self.u_max, n_u)?;
        check_len("y_min", &self.y_min, n_y)?;
        check_len("y_max", &self.y_max, n_y)?;
        if self.l_p == 0 || self.l_f == 0 {
            return Err(Error::Config(
                "horizons L_p and L_f must be positive".into(),
            ));
        }
        let q_sym = 0.5 * (&self.q + self.q.transpose());
        if q_sym.symmetric_eigenvalues().iter().any(|&e| e < -1e-12) {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        let r_sym = 0.5 * (&self.r + self.r.transpose());
        if r_sym.symmetric_eigenvalues().iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("R must be positive definite".into()));
        }
        for (lo, hi, what) in [
            (&self.u_min, &self.u_max, "input"),
            (&self.y_min, &self.y_max, "output"),
        ] {
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                return Err(Error::Config(format!(
                    "{what} bounds must satisfy min < max"
                )));
            }
        }
        if !(self.soft_weight > 0.0) || !(self.soft_quadratic > 0.0) {
            return Err(Error::Config(
                "soft-constraint weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn block_diag(m: &DMatrix<f64>, reps: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * reps, c * reps);
    for k in 0..reps {
        out.view_mut((k * r, k * c), (r, c)).copy_from(m);
    }
    out
}

fn repeat(v: &DVector<f64>, reps: usize) -> DVector<f64> {
    DVector::from_iterator(v.len() * reps, (0..reps).flat_map(|_| v.iter().copied()))
}

/// Tracking QP for predictions `ŷ_f = free + P_u u_f`.
///
/// Rows of the constraint system are ordered `u ≤ u_max`, `−u ≤ −u_min`,
/// `ŷ ≤ y_max`, `−ŷ ≤ −y_min`.
pub fn build_qp_affine(
    free: &DVector<f64>,
    p_u: &DMatrix<f64>,
    r_window: &DVector<f64>,
    cfg: &ControllerConfig,
) -> Result<QpProblem> {
    let (n_u, n_y, l_f) = (cfg.n_u(), cfg.n_y(), cfg.l_f);
    let (my, mu) = (n_y * l_f, n_u * l_f);
    check_len("free response", free, my)?;
    check_len("reference window", r_window, my)?;
    if p_u.shape() != (my, mu) {
        return Err(Error::dim(
            "P_u",
            format!("{my}x{mu}"),
            format!("{:?}", p_u.shape()),
        ));
    }
    let q_bar = block_diag(&cfg.q, l_f);
    let r_bar = block_diag(&cfg.r, l_f);
    let qp_u = &q_bar * p_u;
    let mut h_mat = (p_u.transpose() * &qp_u + r_bar) * 2.0;
    h_mat = 0.5 * (&h_mat + h_mat.transpose());
    let f = qp_u.transpose() * (free - r_window) * 2.0;

    let mut g = DMatrix::zeros(2 * mu + 2 * my, mu);
    g.view_mut((0, 0), (mu, mu)).fill_with_identity();
    g.view_mut((mu, 0), (mu, mu))
        .copy_from(&-DMatrix::identity(mu, mu));
    g.view_mut((2 * mu, 0), (my, mu)).copy_from(p_u);
    g.view_mut((2 * mu + my, 0), (my, mu)).copy_from(&-p_u);
    let mut h = DVector::zeros(2 * mu + 2 * my);
    h.rows_mut(0, mu).copy_from(&repeat(&cfg.u_max, l_f));
    h.rows_mut(mu, mu).copy_from(&-repeat(&cfg.u_min, l_f));
    h.rows_mut(2 * mu, my)
        .copy_from(&(repeat(&cfg.y_max, l_f) - free));
    h.rows_mut(2 * mu + my, my)
        .copy_from(&(free - repeat(&cfg.y_min, l_f)));
    QpProblem::new(h_mat, f, g, h)
}

pub fn build_qp(
    cp: &CondensedPredictor,
    z_p: &DVector<f64>,
    r_window: &DVector<f64>,
    cfg: &ControllerConfig,
) -> Result<QpProblem> {
    if cp.l_f != cfg.l_f || cp.n_u != cfg.n_u() || cp.n_y != cfg.n_y() {
        return Err(Error::dim(
            "predictor vs controller (L_f, n_u, n_y)",
            format!("({}, {}, {})", cfg.l_f, cfg.n_u(), cfg.n_y()),
            format!("({}, {}, {})", cp.l_f, cp.n_u, cp.n_y),
        ));
    }
    let free = cp.free_response(z_p)?;
    build_qp_affine(&free, &cp.p_u, r_window, cfg)
}

/// Output bounds become `y_min − s ≤ ŷ ≤ y_max + s`, `s ≥ 0`, with one slack
/// per output sample priced at `soft_weight·s + soft_quadratic·s²`.
/// Decision vector is `[u_f; s]`.
pub fn soften_output_bounds(hard: &QpProblem, cfg: &ControllerConfig) -> QpProblem {
    let mu = hard.dim();
    let my = cfg.n_y() * cfg.l_f;
    let m = mu + my;
    let mut h_mat = DMatrix::zeros(m, m);
    h_mat.view_mut((0, 0), (mu, mu)).copy_from(&hard.h_mat);
    h_mat
        .view_mut((mu, mu), (my, my))
        .fill_diagonal(2.0 * cfg.soft_quadratic);
    let mut f = DVector::from_element(m, cfg.soft_weight);
    f.rows_mut(0, mu).copy_from(&hard.f);

    let rows = hard.constraints() + my;
    let mut g = DMatrix::zeros(rows, m);
    g.view_mut((0, 0), (hard.constraints(), mu))
        .copy_from(&hard.g);
    for k in 0..my {
        g[(2 * mu + k, mu + k)] = -1.0;
        g[(2 * mu + my + k, mu + k)] = -1.0;
        g[(hard.constraints() + k, mu + k)] = -1.0;
    }
    let mut h = DVector::zeros(rows);
    h.rows_mut(0, hard.constraints()).copy_from(&hard.h);
    QpProblem { h_mat, f, g, h }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    /// The hard problem was infeasible and the softened one was solved.
    SoftFallback,
    /// No usable solution; the previous input was held.
    Failed,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::SoftFallback => "soft_fallback",
            StepStatus::Failed => "failed",
        }
    }
}

impl std::str::FromStr for StepStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(StepStatus::Optimal),
            "soft_fallback" => Ok(StepStatus::SoftFallback),
            "failed" => Ok(StepStatus::Failed),
            other => Err(Error::Config(format!("unknown QP status '{other}'"))),
        }
    }
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub u_f: DVector<f64>,
    pub status: StepStatus,
    /// Largest output-bound violation of the prediction at the chosen `u_f`.
    pub predicted_violation: f64,
    /// Largest KKT residual of the accepted QP (NaN when failed).
    pub kkt: f64,
}

fn output_violation(pred: &DVector<f64>, cfg: &ControllerConfig) -> f64 {
    let n_y = cfg.n_y();
    pred.iter().enumerate().fold(0.0_f64, |m, (i, &y)| {
        let j = i % n_y;
        m.max(y - cfg.y_max[j]).max(cfg.y_min[j] - y)
    })
}

/// Solves the hard QP, falls back to the softened one on infeasibility and
/// to holding `prev_u` (clamped) when neither yields a solution.
pub fn solve_horizon(
    free: &DVector<f64>,
    p_u: &DMatrix<f64>,
    r_window: &DVector<f64>,
    cfg: &ControllerConfig,
    prev_u: &DVector<f64>,
) -> Result<StepSolution> {
    let hard = build_qp_affine(free, p_u, r_window, cfg)?;
    let mu = hard.dim();
    let accept = |qp: &QpProblem, status| -> Option<(DVector<f64>, StepStatus, f64)> {
        match solve_qp(qp, &cfg.qp) {
            Ok(QpOutcome::Optimal(sol)) => {
                let kkt = kkt_residuals(qp, &sol.x, &sol.multipliers).max();
                if kkt <= cfg.kkt_tol {
                    Some((sol.x.rows(0, mu).into_owned(), status, kkt))
                } else {
                    log::warn!("QP solution rejected, KKT residual {kkt:e}");
                    None
                }
            }
            Ok(QpOutcome::Infeasible { .. }) => None,
            Err(e) => {
                log::warn!("QP solve failed: {e}");
                None
            }
        }
    };
    let solved = accept(&hard, StepStatus::Optimal).or_else(|| {
        log::debug!("hard QP infeasible, softening output bounds");
        accept(&soften_output_bounds(&hard, cfg), StepStatus::SoftFallback)
    });
    let (u_f, status, kkt) = solved.unwrap_or_else(|| {
        let held = DVector::from_fn(prev_u.len(), |i, _| {
            prev_u[i].clamp(cfg.u_min[i], cfg.u_max[i])
        });
        (repeat(&held, cfg.l_f), StepStatus::Failed, f64::NAN)
    });
    let predicted_violation = output_violation(&(free + p_u * &u_f), cfg);
    Ok(StepSolution {
        u_f,
        status,
        predicted_violation,
        kkt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::qp::QpOptions;

    fn scalar_cfg(q: f64, r: f64, l_f: usize) -> ControllerConfig {
        ControllerConfig::uniform(1, 1, q, r, 2.0, 2.0, 1, l_f)
    }

    #[test]
    fn benchmark_row_count() {
        let cfg = ControllerConfig::benchmark();
        cfg.validate().unwrap();
        let qp = build_qp_affine(
            &DVector::zeros(15),
            &DMatrix::zeros(15, 15),
            &DVector::zeros(15),
            &cfg,
        )
        .unwrap();
        assert_eq!(qp.constraints(), 2 * 15 + 2 * 15);
        assert_eq!(qp.dim(), 15);
    }

    #[test]
    fn zero_output_weight_gives_zero_input() {
        let cfg = scalar_cfg(0.0, 0.01, 4);
        let p_u = DMatrix::from_fn(4, 4, |i, j| if j < i { 0.3 } else { 0.0 });
        let free = DVector::from_element(4, 0.5);
        let r = DVector::from_element(4, 1.0);
        let step = solve_horizon(&free, &p_u, &r, &cfg, &DVector::zeros(1)).unwrap();
        assert_eq!(step.status, StepStatus::Optimal);
        assert!(step.u_f.amax() < 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        let (q, r, pz_z, p_u, rf) = (2.0, 0.5, 0.3, 0.8, 0.4);
        let mut cfg = scalar_cfg(q, r, 1);
        cfg.u_max[0] = 1e6;
        cfg.u_min[0] = -1e6;
        cfg.y_max[0] = 1e6;
        cfg.y_min[0] = -1e6;
        let qp = build_qp_affine(
            &DVector::from_element(1, pz_z),
            &DMatrix::from_element(1, 1, p_u),
            &DVector::from_element(1, rf),
            &cfg,
        )
        .unwrap();
        let expected = -(p_u * q * (pz_z - rf)) / (p_u * q * p_u + r);
        match solve_qp(&qp, &QpOptions::default()).unwrap() {
            QpOutcome::Optimal(sol) => assert!((sol.x[0] - expected).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_output_bound_triggers_soft_fallback() {
        let cfg = scalar_cfg(1.0, 0.01, 3);
        // first predicted output is beyond the bound and unaffected by inputs
        let p_u = DMatrix::from_fn(3, 3, |i, j| if j < i { 0.5 } else { 0.0 });
        let free = DVector::from_column_slice(&[2.5, 1.0, 0.0]);
        let step =
            solve_horizon(&free, &p_u, &DVector::zeros(3), &cfg, &DVector::zeros(1)).unwrap();
        assert_eq!(step.status, StepStatus::SoftFallback);
        assert!((step.predicted_violation - 0.5).abs() < 1e-9);
        assert!(step.u_f.iter().all(|&u| u.abs() <= 2.0 + 1e-12));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = ControllerConfig::benchmark();
        cfg.r[(0, 0)] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ControllerConfig::benchmark();
        cfg.u_min[0] = 3.0;
        assert!(cfg.validate().is_err());
    }
}

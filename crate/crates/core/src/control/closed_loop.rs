//! Receding-horizon simulation against the plant, for data-driven and
//! oracle predictors alike.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::mpc::{solve_horizon, ControllerConfig, StepStatus};
use crate::error::{Error, Result};
use crate::linalg::{check_len, check_shape, set_block};
use crate::predictor::CondensedPredictor;
use crate::rng::{gaussian_matrix, stream, Stream};
use crate::sim::{
    solve_dare, DareSolution, NoiseConfig, NoiseRecord, StateSpaceModel, SteadyStateKalman,
    TrajectoryData,
};

/// Supplies horizon predictions `ŷ(t..t+L_f−1) = free + P_u u(t..t+L_f−1)`.
pub trait HorizonPredictor {
    fn l_f(&self) -> usize;

    /// Receives `y(t)` before `u(t)` is chosen; only called when the plant is
    /// strictly proper.
    fn observe(&mut self, _y: &DVector<f64>) {}

    fn free_response(&self) -> Result<DVector<f64>>;

    fn input_map(&self) -> &DMatrix<f64>;

    fn after_step(&mut self, u: &DVector<f64>, y: &DVector<f64>);
}

/// Predictor driven by the last `L_p` measured input/output pairs.
#[derive(Debug, Clone)]
pub struct DataDrivenController {
    cp: CondensedPredictor,
    past_u: VecDeque<DVector<f64>>,
    past_y: VecDeque<DVector<f64>>,
}

impl DataDrivenController {
    /// Seeds the past window with the last `L_p` samples of `warmup`.
    pub fn new(cp: CondensedPredictor, warmup: &TrajectoryData) -> Result<Self> {
        if warmup.len() < cp.l_p {
            return Err(Error::InsufficientData {
                what: "warmup samples for the past window",
                needed: cp.l_p,
                available: warmup.len(),
            });
        }
        if warmup.n_u() != cp.n_u || warmup.n_y() != cp.n_y {
            return Err(Error::dim(
                "warmup (n_u, n_y)",
                format!("({}, {})", cp.n_u, cp.n_y),
                format!("({}, {})", warmup.n_u(), warmup.n_y()),
            ));
        }
        let start = warmup.len() - cp.l_p;
        let past_u = (start..warmup.len())
            .map(|t| warmup.u.column(t).into_owned())
            .collect();
        let past_y = (start..warmup.len())
            .map(|t| warmup.y.column(t).into_owned())
            .collect();
        Ok(Self { cp, past_u, past_y })
    }

    pub fn predictor(&self) -> &CondensedPredictor {
        &self.cp
    }

    /// `[y(t−L_p); …; y(t−1); u(t−L_p); …; u(t−1)]`.
    pub fn z_p(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.cp.past_dim(),
            self.past_y
                .iter()
                .chain(self.past_u.iter())
                .flat_map(|v| v.iter().copied()),
        )
    }
}

impl HorizonPredictor for DataDrivenController {
    fn l_f(&self) -> usize {
        self.cp.l_f
    }

    fn free_response(&self) -> Result<DVector<f64>> {
        self.cp.free_response(&self.z_p())
    }

    fn input_map(&self) -> &DMatrix<f64> {
        &self.cp.p_u
    }

    fn after_step(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        self.past_u.pop_front();
        self.past_u.push_back(u.clone());
        self.past_y.pop_front();
        self.past_y.push_back(y.clone());
    }
}

/// True model with a steady-state Kalman estimate; innovations are zero over
/// the horizon.
#[derive(Debug, Clone)]
pub struct OracleController {
    model: StateSpaceModel,
    kf: SteadyStateKalman,
    observability: DMatrix<f64>,
    toeplitz: DMatrix<f64>,
    l_f: usize,
    measured: bool,
}

impl OracleController {
    /// Filter started at `x̂ = 0` and run over `history`.
    pub fn new(
        model: StateSpaceModel,
        dare: &DareSolution,
        l_f: usize,
        history: &TrajectoryData,
    ) -> Result<Self> {
        let (n, n_u, n_y) = (model.n(), model.n_u(), model.n_y());
        let mut kf = SteadyStateKalman::new(model.clone(), dare, DVector::zeros(n))?;
        if !history.is_empty() {
            if history.n_u() != n_u || history.n_y() != n_y {
                return Err(Error::dim(
                    "filter history (n_u, n_y)",
                    format!("({n_u}, {n_y})"),
                    format!("({}, {})", history.n_u(), history.n_y()),
                ));
            }
            kf.run(history);
        }
        let mut observability = DMatrix::zeros(n_y * l_f, n);
        let mut powers = Vec::with_capacity(l_f);
        let mut ca = model.c.clone();
        for i in 0..l_f {
            observability.rows_mut(i * n_y, n_y).copy_from(&ca);
            powers.push(ca.clone());
            ca = &ca * &model.a;
        }
        let mut toeplitz = DMatrix::zeros(n_y * l_f, n_u * l_f);
        for i in 0..l_f {
            set_block(&mut toeplitz, i, i, &model.d);
            for k in 0..i {
                set_block(&mut toeplitz, i, k, &(&powers[i - k - 1] * &model.b));
            }
        }
        Ok(Self {
            model,
            kf,
            observability,
            toeplitz,
            l_f,
            measured: false,
        })
    }

    pub fn estimate(&self) -> &DVector<f64> {
        self.kf.state()
    }
}

impl HorizonPredictor for OracleController {
    fn l_f(&self) -> usize {
        self.l_f
    }

    fn observe(&mut self, y: &DVector<f64>) {
        // strictly proper: `u(t)` does not enter `y(t)`
        self.kf
            .measurement_update(y, &DVector::zeros(self.model.n_u()));
        self.measured = true;
    }

    fn free_response(&self) -> Result<DVector<f64>> {
        Ok(&self.observability * self.kf.state())
    }

    fn input_map(&self) -> &DMatrix<f64> {
        &self.toeplitz
    }

    fn after_step(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        if !self.measured {
            self.kf.measurement_update(y, u);
        }
        self.kf.time_update(u);
        self.measured = false;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    /// Applied inputs, `n_u × N_test`.
    pub u: DMatrix<f64>,
    /// Measured outputs.
    pub y: DMatrix<f64>,
    /// Noise-free plant outputs under the same applied inputs.
    pub y_clean: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub status: Vec<StepStatus>,
    pub predicted_violation: Vec<f64>,
    pub kkt: Vec<f64>,
    pub noise: NoiseRecord,
    /// `J` on measured outputs.
    pub cost: f64,
}

impl ClosedLoopResult {
    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, status: StepStatus) -> usize {
        self.status.iter().filter(|&&s| s == status).count()
    }

    /// Fraction of steps whose measured output left the bounds.
    pub fn output_violation_rate(&self, y_min: &DVector<f64>, y_max: &DVector<f64>) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let bad = (0..self.len())
            .filter(|&t| {
                self.y
                    .column(t)
                    .iter()
                    .enumerate()
                    .any(|(i, &y)| y < y_min[i] || y > y_max[i])
            })
            .count();
        bad as f64 / self.len() as f64
    }
}

/// `Σ_t ‖y(t) − r(t)‖²_Q + ‖u(t)‖²_R`.
pub fn tracking_cost(
    y: &DMatrix<f64>,
    r: &DMatrix<f64>,
    u: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_w: &DMatrix<f64>,
) -> f64 {
    (0..y.ncols())
        .map(|t| {
            let e = y.column(t) - r.column(t);
            let ut = u.column(t);
            e.dot(&(q * &e)) + ut.dot(&(r_w * ut))
        })
        .sum()
}

/// Reference samples `t .. t+L_f−1`, holding the final value past the end.
pub fn reference_window(r_seq: &DMatrix<f64>, t: usize, l_f: usize) -> DVector<f64> {
    let (n_y, len) = r_seq.shape();
    DVector::from_iterator(
        n_y * l_f,
        (0..l_f).flat_map(|k| {
            let c = (t + k).min(len - 1);
            (0..n_y).map(move |i| r_seq[(i, c)])
        }),
    )
}

/// Test-phase noise for `n_test` steps from the test streams of `seed`.
pub fn test_noise(
    plant: &StateSpaceModel,
    noise: &NoiseConfig,
    n_test: usize,
    seed: u64,
) -> NoiseRecord {
    NoiseRecord {
        w: gaussian_matrix(
            &mut stream(seed, Stream::TestProcess),
            plant.n(),
            n_test,
            noise.sigma_w,
        ),
        v: gaussian_matrix(
            &mut stream(seed, Stream::TestMeasurement),
            plant.n_y(),
            n_test,
            noise.sigma_v,
        ),
    }
}

/// Runs the loop with explicit noise sequences, starting the plant at `x0`.
pub fn run_with_noise(
    plant: &StateSpaceModel,
    noise: &NoiseRecord,
    controller: &mut dyn HorizonPredictor,
    r_seq: &DMatrix<f64>,
    cfg: &ControllerConfig,
    x0: &DVector<f64>,
    prev_u: &DVector<f64>,
) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let (n, n_u, n_y) = (plant.n(), plant.n_u(), plant.n_y());
    let steps = r_seq.ncols();
    check_shape("reference", r_seq, n_y, steps)?;
    check_shape("process noise", &noise.w, n, steps)?;
    check_shape("measurement noise", &noise.v, n_y, steps)?;
    check_len("initial state", x0, n)?;
    check_len("previous input", prev_u, n_u)?;
    if controller.l_f() != cfg.l_f || cfg.n_u() != n_u || cfg.n_y() != n_y {
        return Err(Error::Config(
            "controller horizon or dimensions disagree with the plant".into(),
        ));
    }
    let proper = plant.is_strictly_proper();
    let mut u = DMatrix::zeros(n_u, steps);
    let mut y = DMatrix::zeros(n_y, steps);
    let mut y_clean = DMatrix::zeros(n_y, steps);
    let mut status = Vec::with_capacity(steps);
    let mut predicted_violation = Vec::with_capacity(steps);
    let mut kkt = Vec::with_capacity(steps);
    let mut x = x0.clone();
    let mut x_clean = x0.clone();
    let mut last_u = prev_u.clone();
    for t in 0..steps {
        let v_t = noise.v.column(t);
        if proper {
            let y_t = &plant.c * &x + v_t;
            controller.observe(&y_t);
        }
        let free = controller.free_response()?;
        let window = reference_window(r_seq, t, cfg.l_f);
        let step = solve_horizon(&free, controller.input_map(), &window, cfg, &last_u)?;
        // the QP meets the box only to its feasibility tolerance
        let u_t = DVector::from_fn(n_u, |i, _| step.u_f[i].clamp(cfg.u_min[i], cfg.u_max[i]));
        let y_t = &plant.c * &x + &plant.d * &u_t + v_t;
        y_clean.set_column(t, &(&plant.c * &x_clean + &plant.d * &u_t));
        x = &plant.a * &x + &plant.b * &u_t + noise.w.column(t);
        x_clean = &plant.a * &x_clean + &plant.b * &u_t;
        controller.after_step(&u_t, &y_t);
        u.set_column(t, &u_t);
        y.set_column(t, &y_t);
        status.push(step.status);
        predicted_violation.push(step.predicted_violation);
        kkt.push(step.kkt);
        last_u = u_t;
    }
    let cost = tracking_cost(&y, r_seq, &u, &cfg.q, &cfg.r);
    Ok(ClosedLoopResult {
        u,
        y,
        y_clean,
        r: r_seq.clone(),
        status,
        predicted_violation,
        kkt,
        noise: noise.clone(),
        cost,
    })
}

fn warm_start(plant: &StateSpaceModel, warmup: &TrajectoryData) -> (DVector<f64>, DVector<f64>) {
    let x0 = warmup
        .final_state
        .clone()
        .unwrap_or_else(|| DVector::zeros(plant.n()));
    let prev_u = if warmup.is_empty() {
        DVector::zeros(plant.n_u())
    } else {
        warmup.u.column(warmup.len() - 1).into_owned()
    };
    (x0, prev_u)
}

/// Closed loop with a data-driven predictor. The plant continues from
/// `warmup.final_state` and the past window is the tail of `warmup`.
pub fn receding_horizon_run(
    plant: &StateSpaceModel,
    noise: &NoiseConfig,
    predictor: &CondensedPredictor,
    r_seq: &DMatrix<f64>,
    cfg: &ControllerConfig,
    seed: u64,
    warmup: &TrajectoryData,
) -> Result<ClosedLoopResult> {
    noise.validate()?;
    let mut ctrl = DataDrivenController::new(predictor.clone(), warmup)?;
    let (x0, prev_u) = warm_start(plant, warmup);
    let record = test_noise(plant, noise, r_seq.ncols(), seed);
    run_with_noise(plant, &record, &mut ctrl, r_seq, cfg, &x0, &prev_u)
}

/// Oracle closed loop with the true model and its steady-state Kalman filter,
/// fed by the same test noise as [`receding_horizon_run`] for equal `seed`.
pub fn mpc_sskf_run(
    plant: &StateSpaceModel,
    noise: &NoiseConfig,
    r_seq: &DMatrix<f64>,
    cfg: &ControllerConfig,
    seed: u64,
    warmup: &TrajectoryData,
) -> Result<ClosedLoopResult> {
    noise.validate()?;
    let dare = solve_dare(
        plant,
        &noise.process_covariance(plant.n()),
        &noise.measurement_covariance(plant.n_y()),
    )?;
    let mut ctrl = OracleController::new(plant.clone(), &dare, cfg.l_f, warmup)?;
    let (x0, prev_u) = warm_start(plant, warmup);
    let record = test_noise(plant, noise, r_seq.ncols(), seed);
    run_with_noise(plant, &record, &mut ctrl, r_seq, cfg, &x0, &prev_u)
}

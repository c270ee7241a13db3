//! Discrete-time LTI simulation, closed-loop data collection and the
//! steady-state Kalman filter used by the oracle controller.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_len, check_shape, max_abs, spectral_radius};
use crate::rng::{gaussian_matrix, stream, Stream};

/// `x(t+1) = A x(t) + B u(t) [+ K e(t)]`, `y(t) = C x(t) + D u(t) [+ e(t)]`.
///
/// With `k` present the model can be read in innovations form; without it
/// the noise enters through separate process and measurement terms.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: Option<DMatrix<f64>>,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_shape("A", &a, n, n)?;
        let n_u = b.ncols();
        let n_y = c.nrows();
        check_shape("B", &b, n, n_u)?;
        check_shape("C", &c, n_y, n)?;
        check_shape("D", &d, n_y, n_u)?;
        Ok(Self {
            a,
            b,
            c,
            d,
            k: None,
        })
    }

    /// The second-order benchmark plant.
    #[allow(clippy::approx_constant)]
    pub fn benchmark() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.7326, -0.0861, 0.1722, 0.9909]),
            b: DMatrix::from_row_slice(2, 1, &[0.0609, 0.0064]),
            c: DMatrix::from_row_slice(1, 2, &[0.0, 1.4142]),
            d: DMatrix::zeros(1, 1),
            k: None,
        }
    }

    pub fn with_kalman_gain(mut self, k: DMatrix<f64>) -> Result<Self> {
        check_shape("K", &k, self.n(), self.n_y())?;
        self.k = Some(k);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|&x| x == 0.0)
    }

    /// `(Ã, B̃) = (A − K C, B − K D)`.
    pub fn predictor_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let k = self.gain()?;
        Ok((&self.a - k * &self.c, &self.b - k * &self.d))
    }

    pub(crate) fn gain(&self) -> Result<&DMatrix<f64>> {
        self.k
            .as_ref()
            .ok_or_else(|| Error::Config("model has no Kalman gain K".into()))
    }
}

/// Process/measurement noise levels for one experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_w: f64,
    pub sigma_v: f64,
    #[serde(default)]
    pub label: String,
}

impl NoiseConfig {
    pub fn new(sigma_w: f64, sigma_v: f64, label: impl Into<String>) -> Result<Self> {
        let cfg = Self {
            sigma_w,
            sigma_v,
            label: label.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn noiseless() -> Self {
        Self {
            sigma_w: 0.0,
            sigma_v: 0.0,
            label: "noiseless".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w >= 0.0 && self.sigma_v >= 0.0) {
            return Err(Error::Config(format!(
                "noise standard deviations must be non-negative (sigma_w={}, sigma_v={})",
                self.sigma_w, self.sigma_v
            )));
        }
        Ok(())
    }

    pub fn process_covariance(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * self.sigma_w.powi(2)
    }

    pub fn measurement_covariance(&self, n_y: usize) -> DMatrix<f64> {
        DMatrix::identity(n_y, n_y) * self.sigma_v.powi(2)
    }
}

/// Noise realisation that produced a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    /// Process noise, `n × N` (or `n_y × N` innovations for the innovations form).
    pub w: DMatrix<f64>,
    /// Measurement noise, `n_y × N`.
    pub v: DMatrix<f64>,
}

/// Recorded input/output samples; column `t` holds time step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub y_clean: Option<DMatrix<f64>>,
    pub noise: Option<NoiseRecord>,
    /// State after the last sample, `x(N)`.
    pub final_state: Option<DVector<f64>>,
    pub seed: Option<u64>,
}

impl TrajectoryData {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != y.ncols() {
            return Err(Error::dim("trajectory length", u.ncols(), y.ncols()));
        }
        Ok(Self {
            u,
            y,
            y_clean: None,
            noise: None,
            final_state: None,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.y.nrows()
    }

    /// The last `len` samples (clean output and noise are sliced alongside).
    pub fn tail(&self, len: usize) -> TrajectoryData {
        let len = len.min(self.len());
        let start = self.len() - len;
        TrajectoryData {
            u: self.u.columns(start, len).into_owned(),
            y: self.y.columns(start, len).into_owned(),
            y_clean: self
                .y_clean
                .as_ref()
                .map(|m| m.columns(start, len).into_owned()),
            noise: self.noise.as_ref().map(|n| NoiseRecord {
                w: n.w.columns(start, len).into_owned(),
                v: n.v.columns(start, len).into_owned(),
            }),
            final_state: self.final_state.clone(),
            seed: self.seed,
        }
    }
}

fn check_inputs(model: &StateSpaceModel, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<()> {
    if u.nrows() != model.n_u() {
        return Err(Error::dim("input dimension", model.n_u(), u.nrows()));
    }
    check_len("initial state", x0, model.n())
}

/// Runs the innovations form driven by `e`; `y_clean` is the `e = 0` twin.
pub fn simulate_innovations(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<TrajectoryData> {
    check_inputs(model, u, x0)?;
    let k = model.gain()?;
    check_shape("innovations", e, model.n_y(), u.ncols())?;
    let steps = u.ncols();
    let mut y = DMatrix::zeros(model.n_y(), steps);
    let mut y_clean = DMatrix::zeros(model.n_y(), steps);
    let mut x = x0.clone();
    let mut x_clean = x0.clone();
    for t in 0..steps {
        let ut = u.column(t);
        let et = e.column(t);
        y.set_column(t, &(&model.c * &x + &model.d * ut + et));
        y_clean.set_column(t, &(&model.c * &x_clean + &model.d * ut));
        x = &model.a * &x + &model.b * ut + k * et;
        x_clean = &model.a * &x_clean + &model.b * ut;
    }
    Ok(TrajectoryData {
        u: u.clone(),
        y,
        y_clean: Some(y_clean),
        noise: Some(NoiseRecord {
            w: e.clone(),
            v: DMatrix::zeros(model.n_y(), steps),
        }),
        final_state: Some(x),
        seed: None,
    })
}

/// Runs the process/measurement-noise form; `y_clean` is the `w = v = 0`
/// twin driven by the same inputs from the same initial state.
pub fn simulate_plant(
    model: &StateSpaceModel,
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<TrajectoryData> {
    check_inputs(model, u, x0)?;
    let steps = u.ncols();
    check_shape("process noise", w, model.n(), steps)?;
    check_shape("measurement noise", v, model.n_y(), steps)?;
    let mut y = DMatrix::zeros(model.n_y(), steps);
    let mut y_clean = DMatrix::zeros(model.n_y(), steps);
    let mut x = x0.clone();
    let mut x_clean = x0.clone();
    for t in 0..steps {
        let ut = u.column(t);
        y.set_column(t, &(&model.c * &x + &model.d * ut + v.column(t)));
        y_clean.set_column(t, &(&model.c * &x_clean + &model.d * ut));
        x = &model.a * &x + &model.b * ut + w.column(t);
        x_clean = &model.a * &x_clean + &model.b * ut;
    }
    Ok(TrajectoryData {
        u: u.clone(),
        y,
        y_clean: Some(y_clean),
        noise: Some(NoiseRecord {
            w: w.clone(),
            v: v.clone(),
        }),
        final_state: Some(x),
        seed: None,
    })
}

/// Square wave starting with `+amplitude` for the first `⌊period/2⌋` steps,
/// plus i.i.d. Gaussian jitter of variance `jitter_var`.
pub fn square_wave_reference(
    period: usize,
    amplitude: f64,
    jitter_var: f64,
    len: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream(seed, Stream::TrainReference);
    square_wave_with_rng(period, amplitude, jitter_var, len, &mut rng)
}

pub fn square_wave_with_rng<R: Rng + ?Sized>(
    period: usize,
    amplitude: f64,
    jitter_var: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if period == 0 || len == 0 {
        return Err(Error::Range {
            what: "square wave",
            bound: format!("period ({period}) and length ({len}) must be positive"),
        });
    }
    if jitter_var < 0.0 {
        return Err(Error::Config(format!(
            "negative jitter variance {jitter_var}"
        )));
    }
    let half = period / 2;
    let jitter_std = jitter_var.sqrt();
    Ok((0..len)
        .map(|t| {
            let level = if t % period < half {
                amplitude
            } else {
                -amplitude
            };
            let z: f64 = StandardNormal.sample(rng);
            level + jitter_std * z
        })
        .collect())
}

/// Collects training data under the unit output feedback `u(t) = r(t) − y(t)`
/// starting from `x0 = 0`. The applied input uses the measured (noisy) output
/// of the same step. Noise is drawn from the training streams of `seed`.
pub fn collect_closed_loop(
    model: &StateSpaceModel,
    r_train: &DMatrix<f64>,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<TrajectoryData> {
    noise.validate()?;
    let steps = r_train.ncols();
    let w = gaussian_matrix(
        &mut stream(seed, Stream::TrainProcess),
        model.n(),
        steps,
        noise.sigma_w,
    );
    let v = gaussian_matrix(
        &mut stream(seed, Stream::TrainMeasurement),
        model.n_y(),
        steps,
        noise.sigma_v,
    );
    let mut traj = output_feedback_loop(model, r_train, &w, &v, &DVector::zeros(model.n()))?;
    traj.seed = Some(seed);
    Ok(traj)
}

/// The closed loop `u = r − y` with explicit noise sequences.
pub fn output_feedback_loop(
    model: &StateSpaceModel,
    r: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<TrajectoryData> {
    let (n, n_u, n_y) = (model.n(), model.n_u(), model.n_y());
    if n_u != n_y {
        return Err(Error::Config(format!(
            "unit output feedback needs n_u == n_y (got {n_u} and {n_y})"
        )));
    }
    let steps = r.ncols();
    check_shape("reference", r, n_y, steps)?;
    check_shape("process noise", w, n, steps)?;
    check_shape("measurement noise", v, n_y, steps)?;
    check_len("initial state", x0, n)?;
    // u = r − (C x + D u + v)  ⇒  (I + D) u = r − C x − v
    let feed = (DMatrix::identity(n_u, n_u) + &model.d)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Config("I + D is singular; feedback loop is ill-posed".into()))?;
    let a_cl = &model.a - &model.b * &feed * &model.c;
    let rho = spectral_radius(&a_cl);
    if rho >= 1.0 {
        return Err(Error::UnstableLoop {
            spectral_radius: rho,
        });
    }
    let mut u = DMatrix::zeros(n_u, steps);
    let mut y = DMatrix::zeros(n_y, steps);
    let mut y_clean = DMatrix::zeros(n_y, steps);
    let mut x = x0.clone();
    let mut x_clean = x0.clone();
    for t in 0..steps {
        let ut = &feed * (r.column(t) - &model.c * &x - v.column(t));
        let yt = &model.c * &x + &model.d * &ut + v.column(t);
        y_clean.set_column(t, &(&model.c * &x_clean + &model.d * &ut));
        x = &model.a * &x + &model.b * &ut + w.column(t);
        x_clean = &model.a * &x_clean + &model.b * &ut;
        u.set_column(t, &ut);
        y.set_column(t, &yt);
    }
    Ok(TrajectoryData {
        u,
        y,
        y_clean: Some(y_clean),
        noise: Some(NoiseRecord {
            w: w.clone(),
            v: v.clone(),
        }),
        final_state: Some(x),
        seed: None,
    })
}

/// `10 log10(P[y⁰] / P[y − y⁰])` with `P` the mean square over all samples.
///
/// Returns `+∞` when the noise power is zero.
pub fn empirical_snr(y_noisy: &DMatrix<f64>, y_clean: &DMatrix<f64>) -> Result<f64> {
    if y_noisy.shape() != y_clean.shape() {
        return Err(Error::dim(
            "empirical_snr",
            format!("{:?}", y_clean.shape()),
            format!("{:?}", y_noisy.shape()),
        ));
    }
    let count = y_clean.len().max(1) as f64;
    let signal = y_clean.norm_squared() / count;
    let noise = (y_noisy - y_clean).norm_squared() / count;
    if signal == 0.0 {
        return Err(Error::ZeroSignalPower);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Stabilising solution of the filtering Riccati equation.
#[derive(Debug, Clone)]
pub struct DareSolution {
    /// One-step prediction error covariance `P`.
    pub p: DMatrix<f64>,
    /// Innovations-form (predictor) gain `K = A P Cᵀ (C P Cᵀ + Σ_v)⁻¹`.
    pub k: DMatrix<f64>,
    /// Measurement-update gain `M = P Cᵀ (C P Cᵀ + Σ_v)⁻¹`.
    pub filter_gain: DMatrix<f64>,
    /// Innovation covariance `C P Cᵀ + Σ_v`.
    pub innovation_cov: DMatrix<f64>,
    pub iterations: usize,
    /// Max-abs residual of the Riccati equation at `p`.
    pub residual: f64,
}

const DARE_MAX_ITER: usize = 200_000;
const DARE_RESIDUAL_TOL: f64 = 1e-10;

fn riccati_map(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let s = c * p * c.transpose() + sigma_v;
    let s_inv = s.cholesky()?.inverse();
    let apc = a * p * c.transpose();
    let next = a * p * a.transpose() + sigma_w - &apc * s_inv * apc.transpose();
    Some((&next + next.transpose()) * 0.5)
}

/// Solves the filtering DARE by fixed-point iteration from `P = 0`.
pub fn solve_dare(
    model: &StateSpaceModel,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<DareSolution> {
    let (n, n_y) = (model.n(), model.n_y());
    check_shape("Sigma_w", sigma_w, n, n)?;
    check_shape("Sigma_v", sigma_v, n_y, n_y)?;
    let (a, c) = (&model.a, &model.c);
    let gains = |p: &DMatrix<f64>| -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let s = c * p * c.transpose() + sigma_v;
        let s_inv = s.clone().cholesky()?.inverse();
        let m = p * c.transpose() * s_inv;
        Some((a * &m, m, s))
    };

    // Without process noise the zero covariance is the stabilising fixed point
    // whenever A itself is stable; Σ_v may then be singular (noiseless data).
    if max_abs(sigma_w) == 0.0 && spectral_radius(a) < 1.0 {
        let p = DMatrix::zeros(n, n);
        return Ok(DareSolution {
            k: DMatrix::zeros(n, n_y),
            filter_gain: DMatrix::zeros(n, n_y),
            innovation_cov: sigma_v.clone(),
            p,
            iterations: 0,
            residual: 0.0,
        });
    }
    if sigma_v.clone().cholesky().is_none() {
        return Err(Error::Config("Sigma_v must be positive definite".into()));
    }

    let mut p = DMatrix::zeros(n, n);
    let mut iterations = 0;
    let mut step = f64::INFINITY;
    while iterations < DARE_MAX_ITER {
        let next = riccati_map(a, c, sigma_w, sigma_v, &p)
            .ok_or_else(|| Error::Config("innovation covariance lost definiteness".into()))?;
        step = max_abs(&(&next - &p));
        p = next;
        iterations += 1;
        if step <= 1e-15 * max_abs(&p).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let residual = riccati_map(a, c, sigma_w, sigma_v, &p)
        .map(|next| max_abs(&(&next - &p)))
        .unwrap_or(f64::INFINITY);
    if residual > DARE_RESIDUAL_TOL || !residual.is_finite() {
        return Err(Error::NotConverged {
            what: "Riccati iteration",
            iterations,
            residual: residual.max(step),
        });
    }
    let (k, filter_gain, innovation_cov) =
        gains(&p).ok_or_else(|| Error::Config("innovation covariance singular".into()))?;
    Ok(DareSolution {
        p,
        k,
        filter_gain,
        innovation_cov,
        iterations,
        residual,
    })
}

/// Steady-state Kalman filter for the process/measurement-noise form.
///
/// Holds the one-step prediction `x̂(t|t−1)`; [`measurement_update`] turns it
/// into `x̂(t|t)` and [`time_update`] advances to `x̂(t+1|t)`.
///
/// [`measurement_update`]: SteadyStateKalman::measurement_update
/// [`time_update`]: SteadyStateKalman::time_update
#[derive(Debug, Clone)]
pub struct SteadyStateKalman {
    model: StateSpaceModel,
    filter_gain: DMatrix<f64>,
    x_pred: DVector<f64>,
    x_filt: Option<DVector<f64>>,
}

impl SteadyStateKalman {
    pub fn new(model: StateSpaceModel, dare: &DareSolution, x0: DVector<f64>) -> Result<Self> {
        check_len("filter initial state", &x0, model.n())?;
        check_shape("filter gain", &dare.filter_gain, model.n(), model.n_y())?;
        Ok(Self {
            model,
            filter_gain: dare.filter_gain.clone(),
            x_pred: x0,
            x_filt: None,
        })
    }

    pub fn predicted_state(&self) -> &DVector<f64> {
        &self.x_pred
    }

    /// Latest filtered estimate, falling back to the prediction before any
    /// measurement has been processed in the current step.
    pub fn state(&self) -> &DVector<f64> {
        self.x_filt.as_ref().unwrap_or(&self.x_pred)
    }

    /// Innovation `y − C x̂(t|t−1) − D u` and the corrected estimate.
    pub fn measurement_update(&mut self, y: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let innovation = y - &self.model.c * &self.x_pred - &self.model.d * u;
        self.x_filt = Some(&self.x_pred + &self.filter_gain * &innovation);
        innovation
    }

    pub fn time_update(&mut self, u: &DVector<f64>) {
        let x = self.x_filt.take().unwrap_or_else(|| self.x_pred.clone());
        self.x_pred = &self.model.a * x + &self.model.b * u;
    }

    /// Full step over a recorded trajectory; returns the innovation sequence.
    pub fn run(&mut self, traj: &TrajectoryData) -> DMatrix<f64> {
        let mut innov = DMatrix::zeros(traj.n_y(), traj.len());
        for t in 0..traj.len() {
            let u = traj.u.column(t).into_owned();
            let e = self.measurement_update(&traj.y.column(t).into_owned(), &u);
            innov.set_column(t, &e);
            self.time_update(&u);
        }
        innov
    }
}

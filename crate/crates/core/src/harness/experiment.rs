use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method, ReferenceSpec};
use super::metrics::{clean_cost, control_cost, stationary_error};
use crate::control::{
    mpc_sskf_run, receding_horizon_run, ClosedLoopResult, ControllerConfig, StepStatus,
};
use crate::error::{Error, Result};
use crate::ident::{identify_ssarx, spc_fit, Variant};
use crate::predictor::{condense, CondensedPredictor};
use crate::rng::{run_seed, stream, Stream};
use crate::sim::{
    collect_closed_loop, square_wave_with_rng, NoiseConfig, StateSpaceModel, TrajectoryData,
};
use crate::stacking::build_hankels;

/// One method in one Monte Carlo run at one (noise, N_train) point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub method: Method,
    pub noise_label: String,
    pub n_train: usize,
    /// Cost on measured outputs.
    pub cost: f64,
    /// Stationary-window mean of `y − r`, one entry per output.
    pub e_n: Vec<f64>,
    pub cost_clean: f64,
    /// `J − J(MPC-SSKF)` for the same run; NaN when the oracle is not run.
    pub cost_minus_oracle: f64,
    pub fallback_steps: usize,
    pub failed_steps: usize,
    pub max_abs_u: f64,
    /// Largest predicted output-bound violation over steps solved with hard
    /// constraints.
    pub max_pred_violation: f64,
    pub train_hash: String,
    pub test_hash: String,
    /// Empty on success.
    pub error: String,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

/// Per-run records in deterministic order (noise point, N_train, run, method)
/// together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    /// Closed-loop traces keyed like `records`, kept when `save_traces` is set.
    pub traces: Vec<Option<ClosedLoopResult>>,
}

fn hash_matrices(ms: &[&DMatrix<f64>]) -> String {
    let mut h = Sha256::new();
    for m in ms {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for x in m.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

/// Training data for one run: square-wave reference with jitter under the
/// unit output feedback.
pub fn training_data(
    cfg: &ExperimentConfig,
    plant: &StateSpaceModel,
    noise: &NoiseConfig,
    n_train: usize,
    seed: u64,
) -> Result<TrajectoryData> {
    let mut rng = stream(seed, Stream::TrainReference);
    let mut r = DMatrix::zeros(plant.n_y(), n_train);
    for ch in 0..plant.n_y() {
        let wave = square_wave_with_rng(
            cfg.training.period,
            cfg.training.amplitude,
            cfg.training.jitter_var,
            n_train,
            &mut rng,
        )?;
        r.set_row(ch, &nalgebra::RowDVector::from_vec(wave));
    }
    collect_closed_loop(plant, &r, noise, seed)
}

pub fn test_reference(spec: &ReferenceSpec, n_y: usize, n_test: usize) -> DMatrix<f64> {
    let r = spec.samples(n_test);
    DMatrix::from_fn(n_y, n_test, |_, t| r[t])
}

/// Fits the predictor a data-driven method uses.
pub fn fit_method(
    cfg: &ExperimentConfig,
    method: Method,
    train: &TrajectoryData,
) -> Result<CondensedPredictor> {
    match method {
        Method::Spc => {
            let h = build_hankels(train, cfg.l_p, cfg.l_f, cfg.l_p)?;
            Ok(CondensedPredictor::from(&spc_fit(
                &h,
                cfg.identification.rank_policy,
            )?))
        }
        Method::Ssarx => Ok(condense(&identify_ssarx(
            train,
            &cfg.ssarx(Variant::LeastSquares),
        )?)),
        Method::SsarxLowRank => Ok(condense(&identify_ssarx(
            train,
            &cfg.ssarx(Variant::LowRank(cfg.rank)),
        )?)),
        Method::MpcSskf => Err(Error::Config("MPC-SSKF uses the true model".into())),
    }
}

pub fn run_method(
    cfg: &ExperimentConfig,
    ctrl: &ControllerConfig,
    plant: &StateSpaceModel,
    noise: &NoiseConfig,
    method: Method,
    train: &TrajectoryData,
    r_test: &DMatrix<f64>,
    seed: u64,
) -> Result<ClosedLoopResult> {
    match method {
        Method::MpcSskf => mpc_sskf_run(plant, noise, r_test, ctrl, seed, train),
        _ => {
            let cp = fit_method(cfg, method, train)?;
            receding_horizon_run(plant, noise, &cp, r_test, ctrl, seed, train)
        }
    }
}

struct Point {
    noise: NoiseConfig,
    n_train: usize,
    run: usize,
}

fn record_from(
    cfg: &ExperimentConfig,
    ctrl: &ControllerConfig,
    base: RunRecord,
    train_hash: &str,
    res: Result<ClosedLoopResult>,
) -> (RunRecord, Option<ClosedLoopResult>) {
    let res = res.and_then(|r| {
        let [s, e] = cfg.stationary_window;
        let en = stationary_error(&r, s, e)?;
        Ok((r, en))
    });
    match res {
        Ok((r, e_n)) => {
            let max_pred_violation = r
                .status
                .iter()
                .zip(r.predicted_violation.iter())
                .filter(|(s, _)| **s == StepStatus::Optimal)
                .fold(0.0_f64, |m, (_, &v)| m.max(v));
            let rec = RunRecord {
                cost: control_cost(&r, &ctrl.q, &ctrl.r),
                e_n: e_n.iter().copied().collect(),
                cost_clean: clean_cost(&r, &ctrl.q, &ctrl.r),
                fallback_steps: r.count(StepStatus::SoftFallback),
                failed_steps: r.count(StepStatus::Failed),
                max_abs_u: r.u.amax(),
                max_pred_violation,
                train_hash: train_hash.to_string(),
                test_hash: hash_matrices(&[&r.noise.w, &r.noise.v]),
                ..base
            };
            (rec, cfg.save_traces.then_some(r))
        }
        Err(e) => (
            RunRecord {
                train_hash: train_hash.to_string(),
                error: e.to_string(),
                ..base
            },
            None,
        ),
    }
}

fn run_point(
    cfg: &ExperimentConfig,
    ctrl: &ControllerConfig,
    plant: &StateSpaceModel,
    r_test: &DMatrix<f64>,
    pt: &Point,
) -> Vec<(RunRecord, Option<ClosedLoopResult>)> {
    let seed = run_seed(cfg.master_seed, pt.run as u64);
    let base = |method| RunRecord {
        run_id: pt.run,
        seed,
        method,
        noise_label: pt.noise.label.clone(),
        n_train: pt.n_train,
        cost: f64::NAN,
        e_n: Vec::new(),
        cost_clean: f64::NAN,
        cost_minus_oracle: f64::NAN,
        fallback_steps: 0,
        failed_steps: 0,
        max_abs_u: f64::NAN,
        max_pred_violation: f64::NAN,
        train_hash: String::new(),
        test_hash: String::new(),
        error: String::new(),
    };
    let train = match training_data(cfg, plant, &pt.noise, pt.n_train, seed) {
        Ok(t) => t,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| {
                    (
                        RunRecord {
                            error: format!("training data: {e}"),
                            ..base(m)
                        },
                        None,
                    )
                })
                .collect()
        }
    };
    let train_hash = hash_matrices(&[&train.u, &train.y]);
    let mut out: Vec<(RunRecord, Option<ClosedLoopResult>)> = cfg
        .methods
        .iter()
        .map(|&m| {
            let res = run_method(cfg, ctrl, plant, &pt.noise, m, &train, r_test, seed);
            record_from(cfg, ctrl, base(m), &train_hash, res)
        })
        .collect();
    let oracle = out
        .iter()
        .find(|(r, _)| r.method == Method::MpcSskf && r.ok())
        .map(|(r, _)| r.cost);
    if let Some(j0) = oracle {
        for (r, _) in out.iter_mut().filter(|(r, _)| r.ok()) {
            r.cost_minus_oracle = r.cost - j0;
        }
    }
    for (r, _) in &out {
        if !r.ok() {
            log::warn!(
                "run {} {} at {} N_train={}: {}",
                r.run_id,
                r.method,
                r.noise_label,
                r.n_train,
                r.error
            );
        }
    }
    out
}

/// Runs every configured noise point, training length, Monte Carlo run and
/// method. Runs are distributed over the rayon pool; within a run all
/// methods share the training trajectory and the test noise.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<McResult> {
    cfg.validate()?;
    let plant = cfg.plant_model()?;
    let ctrl = cfg.controller()?;
    let r_test = test_reference(&cfg.reference, plant.n_y(), cfg.n_test);
    let mut points = Vec::new();
    for noise in cfg.noise_points()? {
        for &n_train in &cfg.n_train {
            for run in 0..cfg.n_mc {
                points.push(Point {
                    noise: noise.clone(),
                    n_train,
                    run,
                });
            }
        }
    }
    let rows: Vec<Vec<(RunRecord, Option<ClosedLoopResult>)>> = points
        .par_iter()
        .map(|pt| run_point(cfg, &ctrl, &plant, &r_test, pt))
        .collect();
    let (records, traces) = rows.into_iter().flatten().unzip();
    Ok(McResult {
        config: cfg.clone(),
        records,
        traces,
    })
}

/// [`run_experiment`] for a sinusoid reference.
pub fn run_cost_experiment(cfg: &ExperimentConfig) -> Result<McResult> {
    if !matches!(cfg.reference, ReferenceSpec::Sinusoid { .. }) {
        return Err(Error::Config(
            "cost experiment expects a sinusoid reference".into(),
        ));
    }
    run_experiment(cfg)
}

/// [`run_experiment`] for a constant reference.
pub fn run_bias_experiment(cfg: &ExperimentConfig) -> Result<McResult> {
    if !matches!(cfg.reference, ReferenceSpec::Constant { .. }) {
        return Err(Error::Config(
            "bias experiment expects a constant reference".into(),
        ));
    }
    run_experiment(cfg)
}

/// Stationary errors of successful runs as vectors for [`super::bias_variance`].
pub fn errors_of<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Vec<DVector<f64>> {
    records
        .into_iter()
        .filter(|r| r.ok())
        .map(|r| DVector::from_column_slice(&r.e_n))
        .collect()
}

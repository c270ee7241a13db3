//! Receding-horizon predictive control on condensed predictors.

mod closed_loop;
mod mpc;
pub mod qp;

pub use closed_loop::{
    mpc_sskf_run, receding_horizon_run, reference_window, run_with_noise, test_noise,
    tracking_cost, ClosedLoopResult, DataDrivenController, HorizonPredictor, OracleController,
};
pub use mpc::{
    build_qp, build_qp_affine, soften_output_bounds, solve_horizon, ControllerConfig, StepSolution,
    StepStatus,
};
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpOptions, QpOutcome, QpProblem, QpSolution};

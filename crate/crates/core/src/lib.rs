//! Multi-step predictor identification from closed-loop data (SSARX and
//! SPC), condensed receding-horizon control, and a Monte Carlo benchmark
//! harness around a second-order plant.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod control;
pub mod error;
pub mod format;
pub mod harness;
pub mod ident;
pub mod linalg;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod stacking;

pub use control::{ClosedLoopResult, ControllerConfig, QpProblem, StepStatus};
pub use error::{Error, Result};
pub use ident::{identify_ssarx, PredictorModel, SsarxConfig, Variant};
pub use linalg::RankPolicy;
pub use predictor::{condense, CondensedPredictor};
pub use sim::{NoiseConfig, StateSpaceModel, TrajectoryData};

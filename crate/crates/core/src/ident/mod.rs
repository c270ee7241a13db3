//! SSARX identification of the multi-step predictor
//! `y_f = Γ𝒦 z_p + Φ_u u_f + Φ_y y_f + e_f`, and the SPC baseline.

mod arx;
mod regression;
mod spc;

pub use arx::{
    assemble_toeplitz, fit_high_order_arx, true_markov_parameters, ArxEstimate, ArxOptions,
    MarkovParameters,
};
pub use regression::{
    ls_regression, reduced_rank_regression, residual_future, whitened_singular_values, RrrOptions,
};
pub use spc::{spc_fit, SpcPredictor};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block, check_shape, RankPolicy};
use crate::sim::TrajectoryData;
use crate::stacking::build_hankels;

/// How `Γ𝒦̂` is obtained in Stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    LeastSquares,
    LowRank(usize),
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::LeastSquares => write!(f, "ls"),
            Variant::LowRank(r) => write!(f, "low_rank({r})"),
        }
    }
}

/// Which data feeds the covariances of the reduced-rank regression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    /// `Ȳ̂_f`, the actual regression target.
    #[default]
    CorrectedFuture,
    /// The raw future block `Y_f`.
    RawFuture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsarxConfig {
    pub l_p: usize,
    pub l_f: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub variant: Variant,
    pub include_feedthrough: bool,
    /// Applies to the Stage 2 least-squares solve.
    pub rank_policy: RankPolicy,
    pub rrr: RrrOptions,
    pub covariance_source: CovarianceSource,
}

impl SsarxConfig {
    /// `L_p = 10`, `L_f = 15`, `n_a = n_b = L_f`.
    pub fn benchmark(variant: Variant) -> Self {
        Self {
            l_p: 10,
            l_f: 15,
            n_a: 15,
            n_b: 15,
            variant,
            include_feedthrough: false,
            rank_policy: RankPolicy::Reject,
            rrr: RrrOptions::default(),
            covariance_source: CovarianceSource::default(),
        }
    }
}

/// Identified SSARX predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    /// `Γ𝒦̂`, `n_y L_f × (n_y + n_u) L_p`.
    pub gamma_k: DMatrix<f64>,
    /// `Φ̂_u`, `n_y L_f × n_u L_f`.
    pub phi_u: DMatrix<f64>,
    /// `Φ̂_y`, `n_y L_f × n_y L_f`.
    pub phi_y: DMatrix<f64>,
    pub l_p: usize,
    pub l_f: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub variant: Variant,
    pub include_feedthrough: bool,
}

impl PredictorModel {
    /// Checks shapes together with the causal block-Toeplitz structure.
    pub fn validate(&self) -> Result<()> {
        let (ny, nu, lf, lp) = (self.n_y, self.n_u, self.l_f, self.l_p);
        check_shape("Gamma_K", &self.gamma_k, ny * lf, (ny + nu) * lp)?;
        check_shape("Phi_u", &self.phi_u, ny * lf, nu * lf)?;
        check_shape("Phi_y", &self.phi_y, ny * lf, ny * lf)?;
        for i in 0..lf {
            for k in 0..lf {
                let by = block(&self.phi_y, i, k, ny, ny);
                let bu = block(&self.phi_u, i, k, ny, nu);
                if k >= i && by.iter().any(|&x| x != 0.0) {
                    return Err(Error::Config(format!(
                        "Phi_y block ({i},{k}) on/above the diagonal is nonzero"
                    )));
                }
                if k > i && bu.iter().any(|&x| x != 0.0) {
                    return Err(Error::Config(format!(
                        "Phi_u block ({i},{k}) above the diagonal is nonzero"
                    )));
                }
                if k < i {
                    let ry = block(&self.phi_y, i - k, 0, ny, ny);
                    let ru = block(&self.phi_u, i - k, 0, ny, nu);
                    if by != ry || bu != ru {
                        return Err(Error::Config(format!(
                            "Phi blocks are not Toeplitz at ({i},{k})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs the full two-stage identification on one trajectory.
pub fn identify_ssarx(traj: &TrajectoryData, cfg: &SsarxConfig) -> Result<PredictorModel> {
    if cfg.n_a < cfg.l_f || cfg.n_b < cfg.l_f {
        return Err(Error::Config(format!(
            "ARX orders n_a = {}, n_b = {} must be at least L_f = {}",
            cfg.n_a, cfg.n_b, cfg.l_f
        )));
    }
    let h = build_hankels(traj, cfg.l_p, cfg.l_f, cfg.l_p)?;
    let arx = fit_high_order_arx(
        traj,
        cfg.n_a,
        cfg.n_b,
        ArxOptions {
            include_feedthrough: cfg.include_feedthrough,
        },
    )?;
    let (phi_u, phi_y) = assemble_toeplitz(&arx.markov, cfg.l_f)?;
    let ybar = residual_future(&h, &phi_u, &phi_y)?;
    let gamma_k = match cfg.variant {
        Variant::LeastSquares => ls_regression(&ybar, &h.z_p, cfg.rank_policy)?,
        Variant::LowRank(r) => {
            let target = match cfg.covariance_source {
                CovarianceSource::CorrectedFuture => &ybar,
                CovarianceSource::RawFuture => &h.y_f,
            };
            reduced_rank_regression(target, &h.z_p, r, cfg.rrr)?
        }
    };
    Ok(PredictorModel {
        gamma_k,
        phi_u,
        phi_y,
        l_p: cfg.l_p,
        l_f: cfg.l_f,
        n_u: traj.n_u(),
        n_y: traj.n_y(),
        n_a: cfg.n_a,
        n_b: cfg.n_b,
        variant: cfg.variant,
        include_feedthrough: cfg.include_feedthrough,
    })
}

/// Singular-value profile of the whitened cross-covariance for `traj`,
/// computed on the ARX-corrected future block.
pub fn stage2_singular_values(traj: &TrajectoryData, cfg: &SsarxConfig) -> Result<Vec<f64>> {
    let h = build_hankels(traj, cfg.l_p, cfg.l_f, cfg.l_p)?;
    let arx = fit_high_order_arx(
        traj,
        cfg.n_a,
        cfg.n_b,
        ArxOptions {
            include_feedthrough: cfg.include_feedthrough,
        },
    )?;
    let (phi_u, phi_y) = assemble_toeplitz(&arx.markov, cfg.l_f)?;
    let ybar = residual_future(&h, &phi_u, &phi_y)?;
    let target = match cfg.covariance_source {
        CovarianceSource::CorrectedFuture => &ybar,
        CovarianceSource::RawFuture => &h.y_f,
    };
    whitened_singular_values(target, &h.z_p, cfg.rrr)
}

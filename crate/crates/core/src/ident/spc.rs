//! Subspace predictive control baseline: one least-squares map
//! `y_f ≈ L [z_p; u_f]`.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{lstsq, RankPolicy};
use crate::stacking::HankelSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SpcPredictor {
    /// Columns of `L` acting on `z_p`.
    pub l_z: DMatrix<f64>,
    /// Columns of `L` acting on `u_f`. Not causal in general.
    pub l_u: DMatrix<f64>,
    pub l_p: usize,
    pub l_f: usize,
    pub n_u: usize,
    pub n_y: usize,
}

pub fn spc_fit(h: &HankelSet, policy: RankPolicy) -> Result<SpcPredictor> {
    let zp_rows = h.z_p.nrows();
    let mut regressor = DMatrix::zeros(zp_rows + h.u_f.nrows(), h.cols());
    regressor.rows_mut(0, zp_rows).copy_from(&h.z_p);
    regressor.rows_mut(zp_rows, h.u_f.nrows()).copy_from(&h.u_f);
    let sol = lstsq(
        "SPC regressor [Z_p; U_f]",
        &regressor.transpose(),
        &h.y_f.transpose(),
        policy,
    )?;
    let l = sol.x.transpose();
    Ok(SpcPredictor {
        l_z: l.columns(0, zp_rows).into_owned(),
        l_u: l.columns(zp_rows, h.u_f.nrows()).into_owned(),
        l_p: h.l_p,
        l_f: h.l_f,
        n_u: h.n_u,
        n_y: h.n_y,
    })
}

//! Dense linear-algebra helpers shared by the identification and control code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below `RANK_RTOL * sigma_max` are treated as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Relative eigenvalue floor used when forming symmetric square roots.
pub const EIG_FLOOR_RTOL: f64 = 1e-12;

/// How a least-squares solve reacts to a rank-deficient design matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Return [`Error::RankDeficient`].
    #[default]
    Reject,
    /// Minimum-norm solution through the truncated pseudoinverse.
    MinNorm,
    /// Tikhonov regularisation with the given absolute weight.
    Ridge(f64),
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// Minimiser of `‖a x − b‖_F`.
    pub x: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl LstsqSolution {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.singular_values.len()
    }
}

/// Solves `a x ≈ b` in the least-squares sense.
///
/// Tall systems are first reduced with a thin QR factorisation; the rank
/// decision and the solve then use the SVD of the small triangular factor.
pub fn lstsq(
    what: &'static str,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    policy: RankPolicy,
) -> Result<LstsqSolution> {
    if a.nrows() != b.nrows() {
        return Err(Error::dim("lstsq", a.nrows(), b.nrows()));
    }
    let n = a.ncols();
    let (core, rhs) = if a.nrows() > n {
        let qr = a.clone().qr();
        let rhs = qr.q().transpose() * b;
        (qr.r(), rhs)
    } else {
        (a.clone(), b.clone())
    };
    let svd = core.svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    // nalgebra does not promise an ordering
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let s_max = order.first().map_or(0.0, |&i| sv[i]);
    let tol = RANK_RTOL * s_max;
    let rank = sv.iter().filter(|&&s| s > tol && s > 0.0).count();
    let full = n.min(a.nrows());
    if rank < n && policy == RankPolicy::Reject {
        return Err(Error::RankDeficient {
            what,
            rank,
            expected: n,
        });
    }
    let utb = u.transpose() * rhs;
    let mut scaled = utb;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let gain = match policy {
            RankPolicy::Ridge(lambda) => s / (s * s + lambda),
            _ if s > tol && s > 0.0 => 1.0 / s,
            _ => 0.0,
        };
        scaled.row_mut(k).scale_mut(gain);
    }
    let x = v_t.transpose() * scaled;
    let mut sorted: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    sorted.resize(full, 0.0);
    sv = sorted;
    Ok(LstsqSolution {
        x,
        rank,
        singular_values: sv,
    })
}

/// Symmetric square root and inverse square root of a PSD matrix.
#[derive(Debug, Clone)]
pub struct SymmetricRoots {
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
    pub min_eig: f64,
    pub floor: f64,
    /// Number of eigenvalues at or below the floor.
    pub truncated: usize,
}

/// Computes `S^{1/2}` and `S^{-1/2}` by eigendecomposition. Eigenvalues at or
/// below `EIG_FLOOR_RTOL · λ_max` are treated as zero in both roots, so the
/// inverse root is a pseudoinverse root on the retained subspace.
pub fn symmetric_roots(s: &DMatrix<f64>) -> SymmetricRoots {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let floor = EIG_FLOOR_RTOL * lambda_max;
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut root = DVector::zeros(eig.eigenvalues.len());
    let mut inv_root = DVector::zeros(eig.eigenvalues.len());
    let mut truncated = 0;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > floor && l > 0.0 {
            root[k] = l.sqrt();
            inv_root[k] = 1.0 / l.sqrt();
        } else {
            truncated += 1;
        }
    }
    let v = &eig.eigenvectors;
    SymmetricRoots {
        sqrt: v * DMatrix::from_diagonal(&root) * v.transpose(),
        inv_sqrt: v * DMatrix::from_diagonal(&inv_root) * v.transpose(),
        min_eig,
        floor,
        truncated,
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F` (absolute when `b = 0`).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom > 0.0 {
        diff / denom
    } else {
        diff
    }
}

/// Copy of the `(i, j)` block of a matrix partitioned into
/// `block_rows × block_cols` tiles.
pub fn block(
    m: &DMatrix<f64>,
    i: usize,
    j: usize,
    block_rows: usize,
    block_cols: usize,
) -> DMatrix<f64> {
    m.view((i * block_rows, j * block_cols), (block_rows, block_cols))
        .into_owned()
}

pub fn set_block(m: &mut DMatrix<f64>, i: usize, j: usize, value: &DMatrix<f64>) {
    let (r, c) = value.shape();
    m.view_mut((i * r, j * c), (r, c)).copy_from(value);
}

pub(crate) fn check_shape(
    context: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub(crate) fn check_len(context: &'static str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(context, len, v.len()));
    }
    Ok(())
}

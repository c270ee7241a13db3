//! Stage 2: regression of the ARX-corrected future block onto past data.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_shape, lstsq, symmetric_roots, RankPolicy};
use crate::stacking::HankelSet;

/// `Ȳ_f = Y_f − Φ̂_u U_f − Φ̂_y Y_f`, the part of the future explained by the past.
pub fn residual_future(
    h: &HankelSet,
    phi_u: &DMatrix<f64>,
    phi_y: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let rows = h.y_f.nrows();
    check_shape("Phi_u", phi_u, rows, h.u_f.nrows())?;
    check_shape("Phi_y", phi_y, rows, rows)?;
    Ok(&h.y_f - phi_u * &h.u_f - phi_y * &h.y_f)
}

/// `Γ𝒦̂ = argmin_M ‖Ȳ_f − M Z_p‖_F`, solved as `Z_pᵀ Mᵀ ≈ Ȳ_fᵀ`.
pub fn ls_regression(
    ybar: &DMatrix<f64>,
    z_p: &DMatrix<f64>,
    policy: RankPolicy,
) -> Result<DMatrix<f64>> {
    if ybar.ncols() != z_p.ncols() {
        return Err(Error::dim("regression columns", z_p.ncols(), ybar.ncols()));
    }
    let sol = lstsq("past data Z_p", &z_p.transpose(), &ybar.transpose(), policy)?;
    Ok(sol.x.transpose())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RrrOptions {
    /// Accept covariance matrices with eigenvalues under the floor, treating
    /// those directions as absent instead of failing.
    pub allow_singular: bool,
}

struct Whitened {
    syy_roots: crate::linalg::SymmetricRoots,
    szz_roots: crate::linalg::SymmetricRoots,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    singular_values: Vec<f64>,
}

fn whiten(target: &DMatrix<f64>, z_p: &DMatrix<f64>, opts: RrrOptions) -> Result<Whitened> {
    if target.ncols() != z_p.ncols() {
        return Err(Error::dim(
            "regression columns",
            z_p.ncols(),
            target.ncols(),
        ));
    }
    let n = target.ncols().max(1) as f64;
    let s_yy = target * target.transpose() / n;
    let s_zz = z_p * z_p.transpose() / n;
    let s_yz = target * z_p.transpose() / n;
    let syy_roots = symmetric_roots(&s_yy);
    let szz_roots = symmetric_roots(&s_zz);
    if !opts.allow_singular {
        for (which, r) in [("S_yy", &syy_roots), ("S_zz", &szz_roots)] {
            if r.truncated > 0 {
                return Err(Error::SingularCovariance {
                    which,
                    min_eig: r.min_eig,
                    floor: r.floor,
                });
            }
        }
    }
    let w = &syy_roots.inv_sqrt * s_yz * &szz_roots.inv_sqrt;
    let svd = w.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(Whitened {
        syy_roots,
        szz_roots,
        u,
        v_t,
        singular_values,
    })
}

/// Singular values of `S_yy^{-1/2} S_yz S_zz^{-1/2}`, non-increasing. Used to
/// choose the rank of the reduced-rank regression.
pub fn whitened_singular_values(
    target: &DMatrix<f64>,
    z_p: &DMatrix<f64>,
    opts: RrrOptions,
) -> Result<Vec<f64>> {
    Ok(whiten(target, z_p, opts)?.singular_values)
}

/// Rank-`r` regression `Γ𝒦̂ = S_yy^{1/2} U_r Σ_r V_rᵀ S_zz^{-1/2}`.
///
/// The sample covariances are formed from `target` and `z_p`. With `r` equal
/// to `min(rows(target), rows(z_p))` this reproduces [`ls_regression`].
pub fn reduced_rank_regression(
    target: &DMatrix<f64>,
    z_p: &DMatrix<f64>,
    rank: usize,
    opts: RrrOptions,
) -> Result<DMatrix<f64>> {
    let max_rank = target.nrows().min(z_p.nrows());
    if rank == 0 || rank > max_rank {
        return Err(Error::Range {
            what: "reduced rank r",
            bound: format!("r = {rank} must lie in 1..={max_rank}"),
        });
    }
    let w = whiten(target, z_p, opts)?;
    let u_r = w.u.columns(0, rank);
    let v_r_t = w.v_t.rows(0, rank);
    let sigma_r = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        rank,
        w.singular_values.iter().take(rank).copied(),
    ));
    Ok(&w.syy_roots.sqrt * u_r * sigma_r * v_r_t * &w.szz_roots.inv_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use crate::rng::{gaussian_matrix, stream, Stream};
    use proptest::prelude::*;

    fn random(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
        gaussian_matrix(&mut stream(seed, Stream::Input), rows, cols, 1.0)
    }

    #[test]
    fn ls_exact_recovery() {
        let z = random(1, 6, 50);
        let m = random(2, 4, 6);
        let y = &m * &z;
        let est = ls_regression(&y, &z, RankPolicy::Reject).unwrap();
        assert!(rel_frobenius(&est, &m) < 1e-10);
    }

    #[test]
    fn ls_with_orthogonal_square_regressor() {
        let q = random(3, 5, 5).qr().q();
        let y = random(4, 3, 5);
        let est = ls_regression(&y, &q, RankPolicy::Reject).unwrap();
        assert!(rel_frobenius(&est, &(&y * q.transpose())) < 1e-12);
    }

    #[test]
    fn ls_rejects_rank_deficiency() {
        let mut z = random(5, 4, 30);
        let r0 = z.row(0).into_owned();
        z.set_row(3, &(r0 * 3.0));
        let y = random(6, 2, 30);
        assert!(matches!(
            ls_regression(&y, &z, RankPolicy::Reject),
            Err(Error::RankDeficient {
                rank: 3,
                expected: 4,
                ..
            })
        ));
        assert!(ls_regression(&y, &z, RankPolicy::Ridge(1e-6)).is_ok());
        assert!(ls_regression(&y, &z, RankPolicy::MinNorm).is_ok());
    }

    #[test]
    fn ls_single_column_needs_a_policy() {
        let z = random(7, 3, 1);
        let y = random(8, 2, 1);
        assert!(ls_regression(&y, &z, RankPolicy::Reject).is_err());
        let est = ls_regression(&y, &z, RankPolicy::MinNorm).unwrap();
        assert!(rel_frobenius(&(&est * &z), &y) < 1e-12);
    }

    #[test]
    fn rrr_full_rank_equals_ls() {
        let z = random(9, 6, 80);
        let y = random(10, 4, 6) * &z + random(11, 4, 80) * 0.3;
        let ls = ls_regression(&y, &z, RankPolicy::Reject).unwrap();
        let rrr = reduced_rank_regression(&y, &z, 4, RrrOptions::default()).unwrap();
        assert!(rel_frobenius(&rrr, &ls) < 1e-8);
    }

    #[test]
    fn rrr_rank_one_exact() {
        let z = random(12, 5, 60);
        let a = random(13, 4, 1);
        let b = random(14, 5, 1);
        let m = &a * b.transpose();
        let y = &m * &z;
        // S_yy has rank one here
        assert!(matches!(
            reduced_rank_regression(&y, &z, 1, RrrOptions::default()),
            Err(Error::SingularCovariance { which: "S_yy", .. })
        ));
        let est = reduced_rank_regression(
            &y,
            &z,
            1,
            RrrOptions {
                allow_singular: true,
            },
        )
        .unwrap();
        assert!(rel_frobenius(&est, &m) < 1e-8);
    }

    #[test]
    fn rrr_rank_bounds() {
        let z = random(15, 3, 20);
        let y = random(16, 2, 20);
        assert!(reduced_rank_regression(&y, &z, 0, RrrOptions::default()).is_err());
        assert!(reduced_rank_regression(&y, &z, 3, RrrOptions::default()).is_err());
    }

    #[test]
    fn rrr_has_requested_rank() {
        let z = random(17, 8, 200);
        let y = random(18, 6, 200);
        let est = reduced_rank_regression(&y, &z, 2, RrrOptions::default()).unwrap();
        let sv = est.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[1] > 1e-6);
        assert!(sv[2] <= 1e-10 * sv[0].max(1.0));
    }

    #[test]
    fn whitened_singular_values_are_canonical_correlations() {
        let z = random(19, 4, 500);
        let y = random(20, 3, 500);
        let sv = whitened_singular_values(&y, &z, RrrOptions::default()).unwrap();
        assert_eq!(sv.len(), 3);
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        assert!(sv.iter().all(|&s| s <= 1.0 + 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // first-order optimality: small perturbations never improve the fit
        #[test]
        fn ls_is_a_minimiser(seed in 0u64..10_000, scale in 1e-6f64..1e-2) {
            let z = random(seed, 4, 40);
            let y = random(seed + 1, 3, 40);
            let est = ls_regression(&y, &z, RankPolicy::Reject).unwrap();
            let base = (&y - &est * &z).norm_squared();
            let delta = random(seed + 2, 3, 4) * scale;
            let perturbed = (&y - (&est + delta) * &z).norm_squared();
            prop_assert!(perturbed >= base - 1e-12 * base.max(1.0));
        }
    }
}

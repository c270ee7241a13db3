//! Stage 1: high-order ARX estimate of the one-step predictor coefficients.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, set_block, RankPolicy};
use crate::sim::{StateSpaceModel, TrajectoryData};

/// Predictor (observer) Markov parameters, index `i` holding the lag-`i`
/// block. `phi_y[0]` is structurally zero and `phi_u[0]` is the feedthrough.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParameters {
    pub phi_y: Vec<DMatrix<f64>>,
    pub phi_u: Vec<DMatrix<f64>>,
}

impl MarkovParameters {
    pub fn n_y(&self) -> usize {
        self.phi_y.first().map_or(0, |m| m.nrows())
    }

    pub fn n_u(&self) -> usize {
        self.phi_u.first().map_or(0, |m| m.ncols())
    }

    pub fn zeros(n_a: usize, n_b: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            phi_y: vec![DMatrix::zeros(n_y, n_y); n_a],
            phi_u: vec![DMatrix::zeros(n_y, n_u); n_b],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArxOptions {
    /// Regress on `u(t)` as well, estimating a feedthrough term `D`.
    pub include_feedthrough: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArxEstimate {
    pub markov: MarkovParameters,
    pub n_a: usize,
    pub n_b: usize,
    pub include_feedthrough: bool,
    pub residual_covariance: DMatrix<f64>,
    /// The regressor matrix was rank deficient and the minimum-norm solution
    /// was returned. Expected for noiseless data.
    pub rank_deficient: bool,
    pub samples: usize,
}

impl ArxEstimate {
    /// One-step predictions `ŷ(t)` for every `t ≥ max(n_a, n_b)`.
    pub fn one_step_predictions(&self, traj: &TrajectoryData) -> DMatrix<f64> {
        let start = self.n_a.max(self.n_b);
        let n_y = traj.n_y();
        let mut out = DMatrix::zeros(n_y, traj.len().saturating_sub(start));
        for t in start..traj.len() {
            let mut pred = nalgebra::DVector::zeros(n_y);
            for (i, phi) in self.markov.phi_y.iter().enumerate().skip(1) {
                pred += phi * traj.y.column(t - i);
            }
            for (j, phi) in self.markov.phi_u.iter().enumerate() {
                pred += phi * traj.u.column(t - j);
            }
            out.set_column(t - start, &pred);
        }
        out
    }
}

/// Least-squares fit of `y(t)` on `y(t−1..t−n_a+1)` and `u(t−1..t−n_b+1)`
/// (plus `u(t)` with feedthrough) over `t = max(n_a, n_b) .. N−1`.
///
/// Rank-deficient regressors are solved with the pseudoinverse and flagged.
pub fn fit_high_order_arx(
    traj: &TrajectoryData,
    n_a: usize,
    n_b: usize,
    opts: ArxOptions,
) -> Result<ArxEstimate> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Range {
            what: "ARX orders",
            bound: format!("n_a = {n_a}, n_b = {n_b}; both must be at least 1"),
        });
    }
    let (n_u, n_y) = (traj.n_u(), traj.n_y());
    let first_u_lag = usize::from(!opts.include_feedthrough);
    let y_lags = n_a - 1;
    let u_lags = n_b - first_u_lag;
    let params = n_y * y_lags + n_u * u_lags;
    let start = n_a.max(n_b);
    let rows = traj.len().saturating_sub(start);
    if rows <= params {
        return Err(Error::InsufficientData {
            what: "high-order ARX",
            needed: start + params + 1,
            available: traj.len(),
        });
    }

    let mut regressors = DMatrix::zeros(rows, params);
    let mut target = DMatrix::zeros(rows, n_y);
    for (row, t) in (start..traj.len()).enumerate() {
        let mut col = 0;
        for i in 1..n_a {
            for k in 0..n_y {
                regressors[(row, col)] = traj.y[(k, t - i)];
                col += 1;
            }
        }
        for j in first_u_lag..n_b {
            for k in 0..n_u {
                regressors[(row, col)] = traj.u[(k, t - j)];
                col += 1;
            }
        }
        for k in 0..n_y {
            target[(row, k)] = traj.y[(k, t)];
        }
    }

    let sol = lstsq("ARX regressor", &regressors, &target, RankPolicy::MinNorm)?;
    if sol.rank_deficient() {
        log::warn!(
            "ARX regressor rank deficient ({} of {}); using minimum-norm solution",
            sol.rank,
            params
        );
    }
    let theta = sol.x.transpose();
    let mut markov = MarkovParameters::zeros(n_a, n_b, n_y, n_u);
    let mut col = 0;
    for i in 1..n_a {
        markov.phi_y[i] = theta.columns(col, n_y).into_owned();
        col += n_y;
    }
    for j in first_u_lag..n_b {
        markov.phi_u[j] = theta.columns(col, n_u).into_owned();
        col += n_u;
    }

    let resid = &target - &regressors * &sol.x;
    let dof = (rows - params).max(1) as f64;
    Ok(ArxEstimate {
        markov,
        n_a,
        n_b,
        include_feedthrough: opts.include_feedthrough,
        residual_covariance: resid.transpose() * &resid / dof,
        rank_deficient: sol.rank_deficient(),
        samples: rows,
    })
}

/// Exact predictor Markov parameters `φ_{y,i} = C Ã^{i−1} K`,
/// `φ_{u,j} = C Ã^{j−1} B̃` for lags `0 .. count−1`.
pub fn true_markov_parameters(model: &StateSpaceModel, count: usize) -> Result<MarkovParameters> {
    if count == 0 {
        return Err(Error::Range {
            what: "Markov parameter count",
            bound: "must be at least 1".into(),
        });
    }
    let k = model.gain()?;
    let (a_t, b_t) = model.predictor_matrices()?;
    let mut out = MarkovParameters::zeros(count, count, model.n_y(), model.n_u());
    out.phi_u[0] = model.d.clone();
    let mut c_pow = model.c.clone(); // C Ã^{i−1}
    for i in 1..count {
        out.phi_y[i] = &c_pow * k;
        out.phi_u[i] = &c_pow * &b_t;
        c_pow = &c_pow * &a_t;
    }
    Ok(out)
}

/// Block-Toeplitz `(Φ̂_u, Φ̂_y)` over a horizon of `l_f` blocks; lag `i − k`
/// fills block `(i, k)`. `Φ̂_y` is strictly block lower triangular.
pub fn assemble_toeplitz(
    markov: &MarkovParameters,
    l_f: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if l_f == 0 {
        return Err(Error::Range {
            what: "future horizon L_f",
            bound: "must be at least 1".into(),
        });
    }
    if markov.phi_y.len() < l_f || markov.phi_u.len() < l_f {
        return Err(Error::Range {
            what: "ARX orders",
            bound: format!(
                "n_a = {}, n_b = {} must be at least L_f = {l_f}",
                markov.phi_y.len(),
                markov.phi_u.len()
            ),
        });
    }
    let (n_y, n_u) = (markov.n_y(), markov.n_u());
    let mut phi_u = DMatrix::zeros(n_y * l_f, n_u * l_f);
    let mut phi_y = DMatrix::zeros(n_y * l_f, n_y * l_f);
    for i in 0..l_f {
        for k in 0..=i {
            set_block(&mut phi_u, i, k, &markov.phi_u[i - k]);
            if k < i {
                set_block(&mut phi_y, i, k, &markov.phi_y[i - k]);
            }
        }
    }
    Ok((phi_u, phi_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::block;
    use crate::rng::{gaussian_matrix, stream, Stream};
    use crate::sim::{simulate_plant, StateSpaceModel};
    use nalgebra::DVector;

    #[test]
    fn toeplitz_unrolled() {
        let markov = MarkovParameters {
            phi_y: vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 0.7)],
            phi_u: vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 0.3)],
        };
        let (pu, py) = assemble_toeplitz(&markov, 2).unwrap();
        assert_eq!(pu, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.3, 0.0]));
        assert_eq!(py, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.7, 0.0]));
    }

    #[test]
    fn toeplitz_zero_and_shortfall() {
        let z = MarkovParameters::zeros(4, 4, 2, 1);
        let (pu, py) = assemble_toeplitz(&z, 3).unwrap();
        assert_eq!(pu, DMatrix::zeros(6, 3));
        assert_eq!(py, DMatrix::zeros(6, 6));
        assert!(assemble_toeplitz(&z, 5).is_err());
    }

    #[test]
    fn toeplitz_matches_formula_for_true_parameters() {
        let k = DMatrix::from_row_slice(2, 1, &[0.06, 0.71]);
        let model = StateSpaceModel::benchmark()
            .with_kalman_gain(k.clone())
            .unwrap();
        let a_t = &model.a - &k * &model.c;
        for l_f in 1..=6 {
            let markov = true_markov_parameters(&model, l_f).unwrap();
            let (pu, py) = assemble_toeplitz(&markov, l_f).unwrap();
            for i in 0..l_f {
                for j in 0..l_f {
                    let (eu, ey) = if i > j {
                        let pow = a_t.pow((i - j - 1) as u32);
                        (&model.c * &pow * &model.b, &model.c * &pow * &k)
                    } else if i == j {
                        (model.d.clone(), DMatrix::zeros(1, 1))
                    } else {
                        (DMatrix::zeros(1, 1), DMatrix::zeros(1, 1))
                    };
                    assert!((block(&pu, i, j, 1, 1) - eu).norm() < 1e-15);
                    assert!((block(&py, i, j, 1, 1) - ey).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gain_zero_markov_parameters() {
        let model = StateSpaceModel::benchmark()
            .with_kalman_gain(DMatrix::zeros(2, 1))
            .unwrap();
        let m = true_markov_parameters(&model, 5).unwrap();
        assert!(m.phi_y.iter().all(|b| b.iter().all(|&x| x == 0.0)));
        assert_eq!(m.phi_u[0], DMatrix::zeros(1, 1));
        for j in 1..5 {
            let expected = &model.c * model.a.pow((j - 1) as u32) * &model.b;
            assert!((&m.phi_u[j] - expected).norm() < 1e-15);
        }
        assert!((m.phi_u[1][(0, 0)] - 0.009_050_88).abs() < 1e-12);
    }

    fn white_input_data(len: usize, seed: u64) -> TrajectoryData {
        let model = StateSpaceModel::benchmark();
        let u = gaussian_matrix(&mut stream(seed, Stream::Input), 1, len, 1.0);
        simulate_plant(
            &model,
            &u,
            &DMatrix::zeros(2, len),
            &DMatrix::zeros(1, len),
            &DVector::zeros(2),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_arx_is_exact() {
        let traj = white_input_data(2000, 4);
        let arx = fit_high_order_arx(&traj, 15, 15, ArxOptions::default()).unwrap();
        assert!(arx.rank_deficient);
        let pred = arx.one_step_predictions(&traj);
        let actual = traj.y.columns(15, traj.len() - 15);
        let rms = ((&pred - actual).norm_squared() / pred.len() as f64).sqrt();
        assert!(rms <= 1e-8, "rms = {rms}");
    }

    #[test]
    fn white_output_gives_null_model() {
        let len = 20_000;
        let y = gaussian_matrix(&mut stream(9, Stream::Innovation), 1, len, 1.0);
        let traj = TrajectoryData::new(DMatrix::zeros(1, len), y).unwrap();
        let arx = fit_high_order_arx(&traj, 6, 6, ArxOptions::default()).unwrap();
        let worst = arx
            .markov
            .phi_y
            .iter()
            .chain(arx.markov.phi_u.iter())
            .map(|b| b.amax())
            .fold(0.0, f64::max);
        // coefficient sd ≈ 1/sqrt(N) ≈ 0.007
        assert!(worst < 0.04, "worst = {worst}");
        assert!((arx.residual_covariance[(0, 0)] - 1.0).abs() < 0.05);
    }

    #[test]
    fn arx_insufficient_samples() {
        let traj = white_input_data(30, 1);
        assert!(matches!(
            fit_high_order_arx(&traj, 15, 15, ArxOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
        assert!(fit_high_order_arx(&traj, 0, 2, ArxOptions::default()).is_err());
    }

    #[test]
    fn feedthrough_is_estimated_when_requested() {
        let mut model = StateSpaceModel::benchmark();
        model.d = DMatrix::from_element(1, 1, 0.5);
        let len = 400;
        let u = gaussian_matrix(&mut stream(2, Stream::Input), 1, len, 1.0);
        let traj = simulate_plant(
            &model,
            &u,
            &DMatrix::zeros(2, len),
            &DMatrix::zeros(1, len),
            &DVector::zeros(2),
        )
        .unwrap();
        let arx = fit_high_order_arx(
            &traj,
            4,
            4,
            ArxOptions {
                include_feedthrough: true,
            },
        )
        .unwrap();
        assert!((arx.markov.phi_u[0][(0, 0)] - 0.5).abs() < 1e-8);
        let strict = fit_high_order_arx(&traj, 4, 4, ArxOptions::default()).unwrap();
        assert_eq!(strict.markov.phi_u[0], DMatrix::zeros(1, 1));
    }
}

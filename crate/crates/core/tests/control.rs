mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ssarx_core::control::{
    build_qp, kkt_residuals, mpc_sskf_run, receding_horizon_run, solve_qp, QpOptions, QpOutcome,
};
use ssarx_core::harness::{
    grid_point, stationary_error, test_reference, training_data, ExperimentConfig, ReferenceSpec,
};
use ssarx_core::sim::{NoiseConfig, StateSpaceModel, TrajectoryData};
use ssarx_core::stacking::stack_window;
use ssarx_core::{condense, identify_ssarx, ControllerConfig, SsarxConfig, StepStatus, Variant};

use common::{dual_projected_gradient, random_feasible_qp};

fn warmup(noise: &NoiseConfig, seed: u64) -> TrajectoryData {
    training_data(
        &ExperimentConfig::default(),
        &StateSpaceModel::benchmark(),
        noise,
        200,
        seed,
    )
    .unwrap()
}

fn sinusoid(n: usize) -> DMatrix<f64> {
    test_reference(&ReferenceSpec::Sinusoid { amplitude: 1.0 }, 1, n)
}

/// Noise-free MPC built directly from simulated responses of the true model.
fn hand_built_mpc(
    plant: &StateSpaceModel,
    x0: &DVector<f64>,
    r: &DMatrix<f64>,
    cfg: &ControllerConfig,
) -> (Vec<f64>, Vec<f64>) {
    let l_f = cfg.l_f;
    let response = |x: &DVector<f64>, u: &[f64]| -> DVector<f64> {
        let mut x = x.clone();
        DVector::from_fn(l_f, |k, _| {
            let y = (&plant.c * &x)[0];
            x = &plant.a * &x + &plant.b * u[k];
            y
        })
    };
    let zeros = vec![0.0; l_f];
    let mut p_u = DMatrix::zeros(l_f, l_f);
    for j in 0..l_f {
        let mut e = zeros.clone();
        e[j] = 1.0;
        p_u.set_column(j, &response(&DVector::zeros(plant.n()), &e));
    }
    let mut x = x0.clone();
    let (mut us, mut ys) = (Vec::new(), Vec::new());
    for t in 0..r.ncols() {
        let free = response(&x, &zeros);
        let r_win = DVector::from_fn(l_f, |k, _| r[(0, (t + k).min(r.ncols() - 1))]);
        let qp = ssarx_core::control::build_qp_affine(&free, &p_u, &r_win, cfg).unwrap();
        let u = match solve_qp(&qp, &QpOptions::default()).unwrap() {
            QpOutcome::Optimal(s) => s.x[0].clamp(cfg.u_min[0], cfg.u_max[0]),
            QpOutcome::Infeasible { .. } => panic!("hand-built QP infeasible at t = {t}"),
        };
        ys.push((&plant.c * &x)[0]);
        us.push(u);
        x = &plant.a * &x + &plant.b * u;
    }
    (us, ys)
}

#[test]
fn noiseless_oracle_matches_hand_built_mpc() {
    let plant = StateSpaceModel::benchmark();
    let noise = NoiseConfig::noiseless();
    let train = warmup(&noise, 1);
    let r = sinusoid(100);
    for cfg in [
        ControllerConfig::benchmark(),
        ControllerConfig::uniform(1, 1, 1.0, 0.01, 0.4, 0.8, 10, 15),
    ] {
        let res = mpc_sskf_run(&plant, &noise, &r, &cfg, 3, &train).unwrap();
        let (u, y) = hand_built_mpc(&plant, train.final_state.as_ref().unwrap(), &r, &cfg);
        for t in 0..r.ncols() {
            assert!(
                (res.u[t] - u[t]).abs() <= 1e-8,
                "t = {t}: {} vs {}",
                res.u[t],
                u[t]
            );
            assert!((res.y[t] - y[t]).abs() <= 1e-8);
        }
    }
}

#[test]
fn noiseless_oracle_respects_output_bounds() {
    let plant = StateSpaceModel::benchmark();
    let noise = NoiseConfig::noiseless();
    let train = warmup(&noise, 2);
    let cfg = ControllerConfig::uniform(1, 1, 1.0, 0.01, 2.0, 0.8, 10, 15);
    let res = mpc_sskf_run(&plant, &noise, &sinusoid(100), &cfg, 4, &train).unwrap();
    assert!(
        res.y.iter().skip(1).all(|&y| y <= 0.8 + 1e-6),
        "max y {}",
        res.y.max()
    );
    assert!(res.y.max() > 0.79);
    assert_eq!(res.count(StepStatus::Optimal), 100);
}

#[test]
fn stationary_offset_grows_with_input_weight() {
    let plant = StateSpaceModel::benchmark();
    let noise = NoiseConfig::noiseless();
    let train = warmup(&noise, 5);
    let r = test_reference(&ReferenceSpec::Constant { value: 1.0 }, 1, 100);
    let mut last = 0.0;
    for r_w in [1e-3, 1e-2, 1e-1, 1.0] {
        let cfg = ControllerConfig::uniform(1, 1, 1.0, r_w, 2.0, 2.0, 10, 15);
        let res = mpc_sskf_run(&plant, &noise, &r, &cfg, 6, &train).unwrap();
        let e = stationary_error(&res, 50, 100).unwrap()[0];
        assert!(e < 0.0, "R = {r_w}: e = {e}");
        assert!(
            e.abs() > last,
            "R = {r_w}: |e| = {} not above {last}",
            e.abs()
        );
        last = e.abs();
    }
}

#[test]
fn input_bounds_hold_under_noise() {
    let plant = StateSpaceModel::benchmark();
    let noise = grid_point("15dB-group3").unwrap();
    let train = warmup(&noise, 7);
    let cp =
        condense(&identify_ssarx(&train, &SsarxConfig::benchmark(Variant::LeastSquares)).unwrap());
    let cfg = ControllerConfig::uniform(1, 1, 1.0, 0.01, 0.3, 2.0, 10, 15);
    let res = receding_horizon_run(&plant, &noise, &cp, &sinusoid(100), &cfg, 8, &train).unwrap();
    assert!(res.u.amax() <= 0.3);
    assert!(res.u.amax() > 0.29);
    assert_eq!(res.count(StepStatus::Failed), 0);
}

#[test]
fn runs_are_deterministic_and_share_test_noise() {
    let plant = StateSpaceModel::benchmark();
    let noise = grid_point("20dB-group3").unwrap();
    let train = warmup(&noise, 9);
    let cp =
        condense(&identify_ssarx(&train, &SsarxConfig::benchmark(Variant::LowRank(2))).unwrap());
    let cfg = ControllerConfig::benchmark();
    let r = sinusoid(100);
    let a = receding_horizon_run(&plant, &noise, &cp, &r, &cfg, 10, &train).unwrap();
    let b = receding_horizon_run(&plant, &noise, &cp, &r, &cfg, 10, &train).unwrap();
    let o = mpc_sskf_run(&plant, &noise, &r, &cfg, 10, &train).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.noise, o.noise);
}

#[test]
fn tracking_qps_match_dual_oracle() {
    let noise = grid_point("20dB-group3").unwrap();
    let train = warmup(&noise, 11);
    let cp =
        condense(&identify_ssarx(&train, &SsarxConfig::benchmark(Variant::LeastSquares)).unwrap());
    let cfg = ControllerConfig::uniform(1, 1, 1.0, 0.01, 0.5, 0.9, 10, 15);
    let r = DVector::from_element(15, 1.0);
    let mut active = 0;
    for t in [20, 60, 110, 170] {
        let w = stack_window(&train, t, 10, 15).unwrap();
        let qp = build_qp(&cp, &w.z_p, &r, &cfg).unwrap();
        let QpOutcome::Optimal(sol) = solve_qp(&qp, &QpOptions::default()).unwrap() else {
            continue;
        };
        assert!(kkt_residuals(&qp, &sol.x, &sol.multipliers).max() <= 1e-8);
        active += sol.active.len();
        let oracle = dual_projected_gradient(&qp, 2_000_000, 1e-11);
        assert!(
            (oracle.objective - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()),
            "t = {t}: {} vs {}",
            sol.objective,
            oracle.objective
        );
    }
    assert!(active > 0, "no constraint was active");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_solution_satisfies_kkt(seed in 0u64..100_000, m in 1usize..10, extra in 0usize..20) {
        let qp = random_feasible_qp(seed, m, m + extra);
        match solve_qp(&qp, &QpOptions::default()).unwrap() {
            QpOutcome::Optimal(sol) => {
                prop_assert!(kkt_residuals(&qp, &sol.x, &sol.multipliers).max() <= 1e-8);
                prop_assert!(qp.max_violation(&sol.x) <= 1e-9);
            }
            QpOutcome::Infeasible { .. } => prop_assert!(false, "feasible by construction"),
        }
    }
}

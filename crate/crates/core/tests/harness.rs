use nalgebra::DVector;
use ssarx_core::harness::{
    bias_variance, emit_results, read_runs_csv, read_summary_csv, run_experiment, summarize,
    ExperimentConfig, McResult, Method, NoiseSpec, RUN_COLUMNS, SUMMARY_COLUMNS,
};
use ssarx_core::rng::{gaussian_matrix, stream, Stream};
use ssarx_core::RankPolicy;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        n_mc: 6,
        n_train: vec![150, 250],
        noise: vec![
            NoiseSpec::Label("20dB-group3".into()),
            NoiseSpec::Label("30dB-group1".into()),
        ],
        save_traces: true,
        ..ExperimentConfig::default()
    }
}

#[test]
fn empty_result_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let res = McResult {
        config: ExperimentConfig::default(),
        records: Vec::new(),
        traces: Vec::new(),
    };
    let files = emit_results(&res, dir.path()).unwrap();
    let runs = std::fs::read_to_string(&files.runs).unwrap();
    let summary = std::fs::read_to_string(&files.summary).unwrap();
    assert_eq!(runs, format!("{}\n", RUN_COLUMNS.join(",")));
    assert_eq!(summary, format!("{}\n", SUMMARY_COLUMNS.join(",")));
    assert!(files.traces.is_empty());
}

#[test]
fn csv_headers_match_schema() {
    assert_eq!(
        RUN_COLUMNS.join(","),
        "run_id,seed,method,noise_label,N_train,J,e_n,J_clean,J_minus_oracle,\
         fallback_steps,failed_steps,max_abs_u,max_pred_violation,train_hash,test_hash,error"
    );
    assert_eq!(
        SUMMARY_COLUMNS.join(","),
        "method,noise_label,N_train,mean_J,median_J,Bias,Var,\
         runs_ok,runs_failed,median_J_minus_oracle,mean_J_clean"
    );
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn reread_records_reproduce_summary() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&small_config()).unwrap();
    let files = emit_results(&res, dir.path()).unwrap();
    let records = read_runs_csv(std::fs::File::open(&files.runs).unwrap()).unwrap();
    assert_eq!(records, res.records);
    let emitted = read_summary_csv(std::fs::File::open(&files.summary).unwrap()).unwrap();
    let recomputed = summarize(&records);
    assert_eq!(emitted.len(), 2 * 2 * Method::ALL.len());
    for (a, b) in emitted.iter().zip(&recomputed) {
        assert_eq!(
            (a.method, &a.noise_label, a.n_train),
            (b.method, &b.noise_label, b.n_train)
        );
        for (x, y) in [
            (a.mean_cost, b.mean_cost),
            (a.median_cost, b.median_cost),
            (a.bias, b.bias),
            (a.var, b.var),
            (a.median_cost_minus_oracle, b.median_cost_minus_oracle),
            (a.mean_cost_clean, b.mean_cost_clean),
        ] {
            assert!(close(x, y), "{x} vs {y}");
        }
    }
    assert_eq!(files.traces.len(), res.records.len());
}

#[test]
fn config_echo_reproduces_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        master_seed: 987,
        n_mc: 2,
        ..small_config()
    };
    let res = run_experiment(&cfg).unwrap();
    let files = emit_results(&res, dir.path()).unwrap();
    let echo = std::fs::read_to_string(files.config).unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&echo).unwrap(), cfg);
}

#[test]
fn methods_share_training_and_test_noise() {
    let res = run_experiment(&small_config()).unwrap();
    for chunk in res.records.chunks(Method::ALL.len()) {
        assert!(chunk.iter().all(|r| r.run_id == chunk[0].run_id && r.ok()));
        assert!(chunk.iter().all(|r| r.train_hash == chunk[0].train_hash));
        assert!(chunk.iter().all(|r| r.test_hash == chunk[0].test_hash));
    }
}

#[test]
fn noiseless_single_run_costs_match_oracle() {
    let mut cfg = ExperimentConfig {
        n_mc: 1,
        noise: vec![NoiseSpec::Label("noiseless".into())],
        ..ExperimentConfig::default()
    };
    cfg.identification.rank_policy = RankPolicy::MinNorm;
    cfg.identification.rrr_allow_singular = true;
    let res = run_experiment(&cfg).unwrap();
    let oracle = res
        .records
        .iter()
        .find(|r| r.method == Method::MpcSskf)
        .unwrap()
        .cost;
    for r in &res.records {
        assert!(r.ok(), "{}: {}", r.method, r.error);
        assert!(
            (r.cost - oracle).abs() <= 0.01 * oracle,
            "{}: {} vs {oracle}",
            r.method,
            r.cost
        );
    }
}

#[test]
fn bias_variance_of_synthetic_errors() {
    let n = 100_000;
    let sigma = 0.3;
    let draws = gaussian_matrix(&mut stream(77, Stream::Input), 1, n, sigma);
    let errors: Vec<DVector<f64>> = draws.iter().map(|&e| DVector::from_element(1, e)).collect();
    let (bias, var) = bias_variance(&errors).unwrap();
    let s2 = sigma * sigma;
    assert!(bias <= 3.0 * s2 / n as f64 * 3.0, "bias {bias}");
    assert!((var / s2 - 1.0).abs() <= 0.02, "var {var}");
}

#[test]
fn bias_estimate_settles_between_250_and_500_runs() {
    let base = ExperimentConfig {
        methods: vec![
            Method::Spc,
            Method::Ssarx,
            Method::SsarxLowRank,
            Method::MpcSskf,
        ],
        ..ExperimentConfig::bias_benchmark()
    };
    let bias = |n_mc| {
        let res = run_experiment(&ExperimentConfig {
            n_mc,
            ..base.clone()
        })
        .unwrap();
        summarize(&res.records)
    };
    let (a, b) = (bias(250), bias(500));
    for (x, y) in a.iter().zip(&b) {
        let change = (y.bias - x.bias).abs() / x.bias;
        println!(
            "{}: {:.3e} -> {:.3e} ({:.1}%)",
            x.method,
            x.bias,
            y.bias,
            100.0 * change
        );
        assert!(
            change < 0.25,
            "{}: {:.3e} -> {:.3e}",
            x.method,
            x.bias,
            y.bias
        );
    }
}

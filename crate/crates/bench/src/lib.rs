//! Shared fixtures for the benchmarks.

use nalgebra::DVector;
use ssarx_core::harness::{grid_point, training_data, ExperimentConfig};
use ssarx_core::{StateSpaceModel, TrajectoryData};

/// Closed-loop training data at the 20 dB, high process noise point.
pub fn benchmark_training(n_train: usize, seed: u64) -> TrajectoryData {
    let noise = grid_point("20dB-group3").expect("grid label");
    training_data(
        &ExperimentConfig::default(),
        &StateSpaceModel::benchmark(),
        &noise,
        n_train,
        seed,
    )
    .expect("training data")
}

/// Constant tracking target over the benchmark horizon.
pub fn unit_reference(l_f: usize) -> DVector<f64> {
    DVector::from_element(l_f, 1.0)
}

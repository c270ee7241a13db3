use crate::sim::NoiseConfig;

/// `(SNR dB, [(σ_v, σ_w) for groups 1, 2, 3])`. Group 1 has measurement
/// noise only; group 3 is dominated by process noise.
const TABLE: [(u32, [(f64, f64); 3]); 4] = [
    (30, [(1.3e-2, 0.0), (0.75e-2, 0.187e-2), (0.2e-2, 0.25e-2)]),
    (25, [(2.3e-2, 0.0), (1.5e-2, 0.37e-2), (0.2e-2, 0.50e-2)]),
    (20, [(4.2e-2, 0.0), (2.5e-2, 0.62e-2), (0.2e-2, 0.89e-2)]),
    (15, [(7.4e-2, 0.0), (4.5e-2, 1.13e-2), (0.2e-2, 1.37e-2)]),
];

pub fn noise_label(snr_db: u32, group: usize) -> String {
    format!("{snr_db}dB-group{group}")
}

/// The twelve benchmark noise settings, ordered by SNR (high to low) and
/// then by group.
pub fn noise_grid() -> Vec<NoiseConfig> {
    TABLE
        .iter()
        .flat_map(|&(snr, groups)| {
            groups
                .into_iter()
                .enumerate()
                .map(move |(g, (sv, sw))| NoiseConfig {
                    sigma_w: sw,
                    sigma_v: sv,
                    label: noise_label(snr, g + 1),
                })
        })
        .collect()
}

pub fn grid_point(label: &str) -> Option<NoiseConfig> {
    noise_grid().into_iter().find(|n| n.label == label)
}

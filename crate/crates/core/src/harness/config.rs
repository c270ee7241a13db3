use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{grid_point, noise_grid};
use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::ident::RrrOptions;
use crate::ident::{CovarianceSource, SsarxConfig, Variant};
use crate::linalg::RankPolicy;
use crate::sim::{NoiseConfig, StateSpaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "spc")]
    Spc,
    #[serde(rename = "ssarx")]
    Ssarx,
    #[serde(rename = "ssarx-lr")]
    SsarxLowRank,
    #[serde(rename = "mpc-sskf")]
    MpcSskf,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Spc,
        Method::Ssarx,
        Method::SsarxLowRank,
        Method::MpcSskf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Spc => "spc",
            Method::Ssarx => "ssarx",
            Method::SsarxLowRank => "ssarx-lr",
            Method::MpcSskf => "mpc-sskf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// A grid label such as `"20dB-group3"` or explicit standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Label(String),
    Custom(NoiseConfig),
}

impl NoiseSpec {
    pub fn resolve(&self) -> Result<NoiseConfig> {
        match self {
            NoiseSpec::Label(l) if l == "all" => Err(Error::Config(
                "'all' expands to several points; use ExperimentConfig::noise_points".into(),
            )),
            NoiseSpec::Label(l) if l == "noiseless" => Ok(NoiseConfig::noiseless()),
            NoiseSpec::Label(l) => {
                grid_point(l).ok_or_else(|| Error::Config(format!("unknown noise label '{l}'")))
            }
            NoiseSpec::Custom(n) => {
                n.validate()?;
                if n.label.is_empty() {
                    return Err(Error::Config("custom noise points need a label".into()));
                }
                Ok(n.clone())
            }
        }
    }
}

/// Test reference over `t = 0..N_test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// `amplitude · sin(2πt / N_test)`.
    Sinusoid {
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
    /// Noise-free square wave starting high.
    Square {
        period: usize,
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ReferenceSpec {
    pub fn samples(&self, n_test: usize) -> Vec<f64> {
        match *self {
            ReferenceSpec::Sinusoid { amplitude } => (0..n_test)
                .map(|t| amplitude * (2.0 * std::f64::consts::PI * t as f64 / n_test as f64).sin())
                .collect(),
            ReferenceSpec::Constant { value } => vec![value; n_test],
            ReferenceSpec::Square { period, amplitude } => (0..n_test)
                .map(|t| {
                    if t % period < period / 2 {
                        amplitude
                    } else {
                        -amplitude
                    }
                })
                .collect(),
        }
    }
}

/// Closed-loop square-wave excitation used to collect training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub period: usize,
    /// Half the peak-to-peak swing of the square wave.
    pub amplitude: f64,
    /// Variance of the additive reference jitter.
    pub jitter_var: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            period: 50,
            amplitude: 1.0,
            jitter_var: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    pub rank_policy: RankPolicy,
    pub rrr_allow_singular: bool,
    pub covariance_source: CovarianceSource,
    pub include_feedthrough: bool,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            rank_policy: RankPolicy::Reject,
            rrr_allow_singular: false,
            covariance_source: CovarianceSource::CorrectedFuture,
            include_feedthrough: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub soft_weight: f64,
    pub soft_quadratic: f64,
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            soft_weight: 1e4,
            soft_quadratic: 1e-3,
            kkt_tol: 1e-6,
            feas_tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Row-major plant matrices; defaults to the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "plant matrix {name} must be a nonempty rectangle"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl PlantConfig {
    pub fn model(&self) -> Result<StateSpaceModel> {
        StateSpaceModel::new(
            rows_to_matrix("a", &self.a)?,
            rows_to_matrix("b", &self.b)?,
            rows_to_matrix("c", &self.c)?,
            rows_to_matrix("d", &self.d)?,
        )
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        let m = StateSpaceModel::benchmark();
        Self {
            a: matrix_to_rows(&m.a),
            b: matrix_to_rows(&m.b),
            c: matrix_to_rows(&m.c),
            d: matrix_to_rows(&m.d),
        }
    }
}

/// Everything that determines a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_mc: usize,
    /// Training lengths; more than one entry gives a sweep.
    pub n_train: Vec<usize>,
    pub n_test: usize,
    pub l_p: usize,
    pub l_f: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub q: f64,
    pub r: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub methods: Vec<Method>,
    /// Rank of the low-rank SSARX variant.
    pub rank: usize,
    /// Grid labels, `"all"`, or explicit `{ sigma_w, sigma_v, label }` tables.
    pub noise: Vec<NoiseSpec>,
    pub reference: ReferenceSpec,
    /// Half-open window `[start, end)` for the stationary tracking error.
    pub stationary_window: [usize; 2],
    /// Write one closed-loop CSV per run and method next to the summaries.
    pub save_traces: bool,
    pub training: TrainingConfig,
    pub identification: IdentificationConfig,
    pub solver: SolverConfig,
    pub plant: PlantConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            n_mc: 100,
            n_train: vec![200],
            n_test: 100,
            l_p: 10,
            l_f: 15,
            n_a: 15,
            n_b: 15,
            q: 1.0,
            r: 0.01,
            u_min: -2.0,
            u_max: 2.0,
            y_min: -2.0,
            y_max: 2.0,
            methods: Method::ALL.to_vec(),
            rank: 2,
            noise: vec![NoiseSpec::Label("20dB-group3".into())],
            reference: ReferenceSpec::Sinusoid { amplitude: 1.0 },
            stationary_window: [50, 100],
            save_traces: false,
            training: TrainingConfig::default(),
            identification: IdentificationConfig::default(),
            solver: SolverConfig::default(),
            plant: PlantConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sinusoid tracking at the four group-3 points.
    pub fn cost_benchmark() -> Self {
        Self {
            noise: [30, 25, 20, 15]
                .iter()
                .map(|snr| NoiseSpec::Label(format!("{snr}dB-group3")))
                .collect(),
            ..Self::default()
        }
    }

    /// Constant reference `r ≡ 1` at 20 dB group 3.
    pub fn bias_benchmark() -> Self {
        Self {
            reference: ReferenceSpec::Constant { value: 1.0 },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serialises to TOML")
    }

    pub fn noise_points(&self) -> Result<Vec<NoiseConfig>> {
        let mut out = Vec::new();
        for spec in &self.noise {
            match spec {
                NoiseSpec::Label(l) if l == "all" => out.extend(noise_grid()),
                other => out.push(other.resolve()?),
            }
        }
        Ok(out)
    }

    pub fn plant_model(&self) -> Result<StateSpaceModel> {
        self.plant.model()
    }

    pub fn controller(&self) -> Result<ControllerConfig> {
        let plant = self.plant_model()?;
        let mut c = ControllerConfig::uniform(
            plant.n_u(),
            plant.n_y(),
            self.q,
            self.r,
            0.0,
            0.0,
            self.l_p,
            self.l_f,
        );
        c.u_min.fill(self.u_min);
        c.u_max.fill(self.u_max);
        c.y_min.fill(self.y_min);
        c.y_max.fill(self.y_max);
        c.soft_weight = self.solver.soft_weight;
        c.soft_quadratic = self.solver.soft_quadratic;
        c.kkt_tol = self.solver.kkt_tol;
        c.qp.feas_tol = self.solver.feas_tol;
        c.qp.max_iter = self.solver.max_iter;
        c.validate()?;
        Ok(c)
    }

    pub fn ssarx(&self, variant: Variant) -> SsarxConfig {
        SsarxConfig {
            l_p: self.l_p,
            l_f: self.l_f,
            n_a: self.n_a,
            n_b: self.n_b,
            variant,
            include_feedthrough: self.identification.include_feedthrough,
            rank_policy: self.identification.rank_policy,
            rrr: RrrOptions {
                allow_singular: self.identification.rrr_allow_singular,
            },
            covariance_source: self.identification.covariance_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_mc == 0 {
            return fail("n_mc must be at least 1".into());
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty".into());
        }
        if self.n_train.is_empty() || self.n_train.contains(&0) {
            return fail("n_train must list positive lengths".into());
        }
        if self.n_test == 0 || self.l_p == 0 || self.l_f == 0 {
            return fail("n_test, l_p and l_f must be positive".into());
        }
        if self.n_a < self.l_f || self.n_b < self.l_f {
            return fail(format!("n_a and n_b must be at least l_f = {}", self.l_f));
        }
        if self.methods.contains(&Method::SsarxLowRank) && self.rank == 0 {
            return fail("rank must be positive".into());
        }
        let [s, e] = self.stationary_window;
        if s >= e || e > self.n_test {
            return fail(format!(
                "stationary_window [{s}, {e}) must be nonempty and end by n_test = {}",
                self.n_test
            ));
        }
        if self.training.period < 2 {
            return fail("training.period must be at least 2".into());
        }
        if !(self.training.jitter_var >= 0.0) {
            return fail("training.jitter_var must be non-negative".into());
        }
        if let ReferenceSpec::Square { period, .. } = self.reference {
            if period < 2 {
                return fail("reference period must be at least 2".into());
            }
        }
        if let RankPolicy::Ridge(l) = self.identification.rank_policy {
            if !(l > 0.0) {
                return fail("ridge weight must be positive".into());
            }
        }
        let mut seen = std::collections::HashSet::new();
        for n in self.noise_points()? {
            if !seen.insert(n.label.clone()) {
                return fail(format!("noise label '{}' appears twice", n.label));
            }
        }
        let mut methods = std::collections::HashSet::new();
        if !self.methods.iter().all(|m| methods.insert(*m)) {
            return fail("methods must not repeat".into());
        }
        self.controller()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml_str("n_mcc = 3").is_err());
        assert!(ExperimentConfig::from_toml_str("[training]\nperiod = 10\nwidth = 2").is_err());
        assert!(ExperimentConfig::from_toml_str(
            "[reference]\nkind = \"constant\"\nvalue = 1.0\nextra = 2"
        )
        .is_err());
    }

    #[test]
    fn nested_fields_addressable() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            master_seed = 9
            methods = ["spc", "mpc-sskf"]
            noise = ["30dB-group1", { sigma_w = 0.0, sigma_v = 0.05, label = "custom" }]
            reference = { kind = "constant", value = 1.0 }
            [identification]
            rank_policy = { ridge = 1e-6 }
            covariance_source = "raw_future"
            [solver]
            kkt_tol = 1e-7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.methods, vec![Method::Spc, Method::MpcSskf]);
        assert_eq!(cfg.identification.rank_policy, RankPolicy::Ridge(1e-6));
        assert_eq!(
            cfg.identification.covariance_source,
            CovarianceSource::RawFuture
        );
        let pts = cfg.noise_points().unwrap();
        assert_eq!(pts[0].sigma_v, 1.3e-2);
        assert_eq!(pts[1].label, "custom");
        assert_eq!(cfg.solver.kkt_tol, 1e-7);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("n_mc = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("methods = []").is_err());
        assert!(ExperimentConfig::from_toml_str("noise = [\"99dB-group1\"]").is_err());
        assert!(ExperimentConfig::from_toml_str("u_min = 3.0").is_err());
        assert!(ExperimentConfig::from_toml_str("n_a = 5").is_err());
    }

    #[test]
    fn sinusoid_has_one_period() {
        let r = ReferenceSpec::Sinusoid { amplitude: 1.0 }.samples(100);
        assert_eq!(r[0], 0.0);
        assert!((r[25] - 1.0).abs() < 1e-15);
        assert!((r[75] + 1.0).abs() < 1e-15);
    }
}

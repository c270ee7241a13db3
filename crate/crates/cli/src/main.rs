use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::DVector;

use ssarx_core::format::{
    predictor_from_str, predictor_to_string, read_trajectory_csv, write_closed_loop_csv,
    write_trajectory_csv, SavedPredictor,
};
use ssarx_core::harness::{
    emit_results, noise_grid, run_experiment, run_method, summarize, test_reference, training_data,
    ExperimentConfig, Method, NoiseSpec,
};
use ssarx_core::ident::{identify_ssarx, spc_fit, stage2_singular_values, Variant};
use ssarx_core::rng::run_seed;
use ssarx_core::stacking::build_hankels;

#[derive(Parser)]
#[command(
    name = "ssarx",
    version,
    about = "SSARX identification and data-driven predictive control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the benchmark noise grid.
    Noisegrid,
    /// Collect closed-loop training data as a trajectory CSV.
    Collect {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Noise grid label or "noiseless".
        #[arg(long, default_value = "20dB-group3")]
        noise: String,
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a predictor to a trajectory CSV and write its text dump.
    Identify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ssarx")]
        method: String,
        /// Supplies horizons, ARX orders, rank and identification options.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a stored predictor on a window of `L_p + L_f` samples.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Trajectory CSV; the first `L_p` rows are past data, the inputs of
        /// the next `L_f` rows are the future inputs.
        #[arg(long)]
        window: PathBuf,
    },
    /// One closed-loop run of one method, written as CSV.
    Control {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "ssarx")]
        method: String,
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        n_train: Option<usize>,
        /// Monte Carlo run index; the seed derives from it and master_seed.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment and write per-run and summary CSVs.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Use 500 runs instead of the configured count.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        n_mc: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn resolve_noise(label: &str) -> Result<ssarx_core::NoiseConfig> {
    Ok(NoiseSpec::Label(label.to_string()).resolve()?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Noisegrid => {
            println!("label,sigma_v,sigma_w");
            for n in noise_grid() {
                println!("{},{},{}", n.label, n.sigma_v, n.sigma_w);
            }
        }
        Command::Collect {
            config,
            noise,
            n_train,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let plant = cfg.plant_model()?;
            let traj = training_data(&cfg, &plant, &resolve_noise(&noise)?, n_train, seed)?;
            write_trajectory_csv(&traj, output(out.as_deref())?)?;
        }
        Command::Identify {
            data,
            method,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traj = read_trajectory_csv(open(&data)?)?;
            let method: Method = method.parse()?;
            let saved = match method {
                Method::Spc => {
                    let h = build_hankels(&traj, cfg.l_p, cfg.l_f, cfg.l_p)?;
                    SavedPredictor::Spc(spc_fit(&h, cfg.identification.rank_policy)?)
                }
                Method::Ssarx | Method::SsarxLowRank => {
                    let variant = if method == Method::Ssarx {
                        Variant::LeastSquares
                    } else {
                        Variant::LowRank(cfg.rank)
                    };
                    let scfg = cfg.ssarx(variant);
                    match stage2_singular_values(&traj, &scfg) {
                        Ok(sv) => {
                            let shown: Vec<String> = sv.iter().map(|s| format!("{s:.4}")).collect();
                            eprintln!("whitened singular values: {}", shown.join(" "));
                        }
                        Err(e) => eprintln!("singular-value profile unavailable: {e}"),
                    }
                    SavedPredictor::Ssarx(identify_ssarx(&traj, &scfg)?)
                }
                Method::MpcSskf => bail!("mpc-sskf uses the true model and is not identified"),
            };
            output(out.as_deref())?.write_all(predictor_to_string(&saved).as_bytes())?;
        }
        Command::Predict { model, window } => {
            let text = std::fs::read_to_string(&model)
                .with_context(|| format!("reading {}", model.display()))?;
            let cp = predictor_from_str(&text)?.condensed();
            let w = read_trajectory_csv(open(&window)?)?;
            if w.len() != cp.l_p + cp.l_f {
                bail!(
                    "window has {} rows, expected L_p + L_f = {}",
                    w.len(),
                    cp.l_p + cp.l_f
                );
            }
            let past = w.u.columns(0, cp.l_p);
            let past_y = w.y.columns(0, cp.l_p);
            let z_p = DVector::from_iterator(
                cp.past_dim(),
                past_y.iter().copied().chain(past.iter().copied()),
            );
            let u_f =
                DVector::from_iterator(cp.input_dim(), w.u.columns(cp.l_p, cp.l_f).iter().copied());
            let y_hat = cp.predict(&z_p, &u_f)?;
            let mut out = io::stdout().lock();
            let header: Vec<String> = (1..=cp.n_y).map(|i| format!("yhat_{i}")).collect();
            writeln!(out, "k,{}", header.join(","))?;
            for k in 0..cp.l_f {
                let row: Vec<String> = (0..cp.n_y)
                    .map(|i| format!("{}", y_hat[k * cp.n_y + i]))
                    .collect();
                writeln!(out, "{},{}", cp.l_p + k, row.join(","))?;
            }
        }
        Command::Control {
            config,
            method,
            noise,
            n_train,
            run,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let noise = match noise {
                Some(l) => resolve_noise(&l)?,
                None => cfg
                    .noise_points()?
                    .into_iter()
                    .next()
                    .context("config lists no noise point")?,
            };
            let n_train = n_train.unwrap_or(cfg.n_train[0]);
            let method: Method = method.parse()?;
            let plant = cfg.plant_model()?;
            let ctrl = cfg.controller()?;
            let seed = run_seed(cfg.master_seed, run);
            let train = training_data(&cfg, &plant, &noise, n_train, seed)?;
            let r = test_reference(&cfg.reference, plant.n_y(), cfg.n_test);
            let res = run_method(&cfg, &ctrl, &plant, &noise, method, &train, &r, seed)?;
            eprintln!(
                "J = {}  soft fallbacks = {}  failures = {}",
                res.cost,
                res.count(ssarx_core::StepStatus::SoftFallback),
                res.count(ssarx_core::StepStatus::Failed)
            );
            write_closed_loop_csv(&res, output(out.as_deref())?)?;
        }
        Command::Montecarlo {
            config,
            out,
            full,
            n_mc,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if full {
                cfg.n_mc = 500;
            }
            if let Some(n) = n_mc {
                cfg.n_mc = n;
            }
            let res = run_experiment(&cfg)?;
            let files = emit_results(&res, &out)?;
            let failed = res.records.iter().filter(|r| !r.ok()).count();
            println!("method,noise_label,N_train,mean_J,median_J,Bias,Var");
            for s in summarize(&res.records) {
                println!(
                    "{},{},{},{:.6},{:.6},{:.3e},{:.3e}",
                    s.method, s.noise_label, s.n_train, s.mean_cost, s.median_cost, s.bias, s.var
                );
            }
            eprintln!(
                "wrote {} and {} ({} failed records)",
                files.runs.display(),
                files.summary.display(),
                failed
            );
        }
    }
    Ok(())
}

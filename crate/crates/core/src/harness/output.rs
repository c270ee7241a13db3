use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::config::Method;
use super::experiment::{errors_of, McResult, RunRecord};
use super::metrics::{bias_variance, mean, median};
use crate::error::{Error, Result};
use crate::format::write_closed_loop_csv;

pub const RUN_COLUMNS: [&str; 16] = [
    "run_id",
    "seed",
    "method",
    "noise_label",
    "N_train",
    "J",
    "e_n",
    "J_clean",
    "J_minus_oracle",
    "fallback_steps",
    "failed_steps",
    "max_abs_u",
    "max_pred_violation",
    "train_hash",
    "test_hash",
    "error",
];

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "method",
    "noise_label",
    "N_train",
    "mean_J",
    "median_J",
    "Bias",
    "Var",
    "runs_ok",
    "runs_failed",
    "median_J_minus_oracle",
    "mean_J_clean",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub noise_label: String,
    pub n_train: usize,
    pub mean_cost: f64,
    pub median_cost: f64,
    /// NaN when fewer than two runs succeeded.
    pub bias: f64,
    pub var: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub median_cost_minus_oracle: f64,
    pub mean_cost_clean: f64,
}

/// Aggregates per (noise point, N_train, method) in order of first appearance,
/// over successful runs only.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize, Method)> = Vec::new();
    for r in records {
        let k = (r.noise_label.clone(), r.n_train, r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(label, n_train, method)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.noise_label == label && r.n_train == n_train && r.method == method)
                .collect();
            let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.ok()).collect();
            let costs: Vec<f64> = ok.iter().map(|r| r.cost).collect();
            let rel: Vec<f64> = ok
                .iter()
                .map(|r| r.cost_minus_oracle)
                .filter(|x| !x.is_nan())
                .collect();
            let clean: Vec<f64> = ok.iter().map(|r| r.cost_clean).collect();
            let (bias, var) =
                bias_variance(&errors_of(ok.iter().copied())).unwrap_or((f64::NAN, f64::NAN));
            SummaryRow {
                method,
                noise_label: label,
                n_train,
                mean_cost: mean(&costs),
                median_cost: median(&costs),
                bias,
                var,
                runs_ok: ok.len(),
                runs_failed: group.len() - ok.len(),
                median_cost_minus_oracle: median(&rel),
                mean_cost_clean: mean(&clean),
            }
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_runs_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS)?;
    for r in records {
        w.write_record([
            r.run_id.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            r.noise_label.clone(),
            r.n_train.to_string(),
            format!("{}", r.cost),
            join(&r.e_n),
            format!("{}", r.cost_clean),
            format!("{}", r.cost_minus_oracle),
            r.fallback_steps.to_string(),
            r.failed_steps.to_string(),
            format!("{}", r.max_abs_u),
            format!("{}", r.max_pred_violation),
            r.train_hash.clone(),
            r.test_hash.clone(),
            r.error.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<runs csv>", e))?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in rows {
        w.write_record([
            s.method.to_string(),
            s.noise_label.clone(),
            s.n_train.to_string(),
            format!("{}", s.mean_cost),
            format!("{}", s.median_cost),
            format!("{}", s.bias),
            format!("{}", s.var),
            s.runs_ok.to_string(),
            s.runs_failed.to_string(),
            format!("{}", s.median_cost_minus_oracle),
            format!("{}", s.mean_cost_clean),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec[i].parse().map_err(|_| {
        bad(
            line,
            format!("bad value '{}' in column {}", &rec[i], RUN_COLUMNS[i]),
        )
    })
}

pub fn read_runs_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(RUN_COLUMNS.iter().copied()) {
        return Err(bad(1, "per-run header does not match the schema"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let e_n = if rec[6].is_empty() {
            Vec::new()
        } else {
            rec[6]
                .split(';')
                .map(|s| s.parse().map_err(|_| bad(line, format!("bad e_n '{s}'"))))
                .collect::<Result<_>>()?
        };
        out.push(RunRecord {
            run_id: field(&rec, 0, line)?,
            seed: field(&rec, 1, line)?,
            method: rec[2].parse()?,
            noise_label: rec[3].to_string(),
            n_train: field(&rec, 4, line)?,
            cost: field(&rec, 5, line)?,
            e_n,
            cost_clean: field(&rec, 7, line)?,
            cost_minus_oracle: field(&rec, 8, line)?,
            fallback_steps: field(&rec, 9, line)?,
            failed_steps: field(&rec, 10, line)?,
            max_abs_u: field(&rec, 11, line)?,
            max_pred_violation: field(&rec, 12, line)?,
            train_hash: rec[13].to_string(),
            test_hash: rec[14].to_string(),
            error: rec[15].to_string(),
        });
    }
    Ok(out)
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(SUMMARY_COLUMNS.iter().copied()) {
        return Err(bad(1, "summary header does not match the schema"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| bad(line, format!("bad value '{}'", &rec[k])))
        };
        let count = |k: usize| -> Result<usize> {
            rec[k]
                .parse()
                .map_err(|_| bad(line, format!("bad count '{}'", &rec[k])))
        };
        out.push(SummaryRow {
            method: rec[0].parse()?,
            noise_label: rec[1].to_string(),
            n_train: count(2)?,
            mean_cost: num(3)?,
            median_cost: num(4)?,
            bias: num(5)?,
            var: num(6)?,
            runs_ok: count(7)?,
            runs_failed: count(8)?,
            median_cost_minus_oracle: num(9)?,
            mean_cost_clean: num(10)?,
        });
    }
    Ok(out)
}

/// Paths written by [`emit_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub runs: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub traces: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `runs.csv`, `summary.csv`, the config echo `config.toml` and, if
/// present, one trace per record under `traces/`.
pub fn emit_results(res: &McResult, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let runs = dir.join("runs.csv");
    write_runs_csv(&res.records, create(&runs)?)?;
    let summary = dir.join("summary.csv");
    write_summary_csv(&summarize(&res.records), create(&summary)?)?;
    let config = dir.join("config.toml");
    let echo = format!(
        "# warmup: test runs continue from the final training state with the training tail as past window\n{}",
        res.config.to_toml_string()
    );
    let mut f = create(&config)?;
    f.write_all(echo.as_bytes())
        .map_err(|e| Error::io(&config, e))?;
    f.flush().map_err(|e| Error::io(&config, e))?;
    let mut traces = Vec::new();
    if res.traces.iter().any(Option::is_some) {
        let tdir = dir.join("traces");
        std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for (rec, tr) in res.records.iter().zip(res.traces.iter()) {
            if let Some(tr) = tr {
                let p = tdir.join(format!(
                    "{}_N{}_run{:04}_{}.csv",
                    rec.noise_label, rec.n_train, rec.run_id, rec.method
                ));
                write_closed_loop_csv(tr, create(&p)?)?;
                traces.push(p);
            }
        }
    }
    Ok(EmittedFiles {
        runs,
        summary,
        config,
        traces,
    })
}

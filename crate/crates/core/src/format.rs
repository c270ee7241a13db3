//! Plain-text predictor dumps and CSV exchange of trajectories and
//! closed-loop runs. Floats use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::control::{ClosedLoopResult, StepStatus};
use crate::error::{Error, Result};
use crate::ident::{PredictorModel, SpcPredictor, Variant};
use crate::predictor::{condense, CondensedPredictor};
use crate::sim::TrajectoryData;

/// A fitted predictor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedPredictor {
    Ssarx(PredictorModel),
    Spc(SpcPredictor),
}

impl SavedPredictor {
    pub fn condensed(&self) -> CondensedPredictor {
        match self {
            SavedPredictor::Ssarx(m) => condense(m),
            SavedPredictor::Spc(s) => CondensedPredictor::from(s),
        }
    }

    pub fn l_p(&self) -> usize {
        match self {
            SavedPredictor::Ssarx(m) => m.l_p,
            SavedPredictor::Spc(s) => s.l_p,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ls" {
            return Ok(Variant::LeastSquares);
        }
        s.strip_prefix("low_rank(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|r| r.trim().parse().ok())
            .map(Variant::LowRank)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn predictor_to_string(p: &SavedPredictor) -> String {
    let mut out = String::new();
    match p {
        SavedPredictor::Ssarx(m) => {
            out.push_str("# multi-step predictor\n");
            let _ = writeln!(out, "method = ssarx");
            let _ = writeln!(out, "n_y = {}", m.n_y);
            let _ = writeln!(out, "n_u = {}", m.n_u);
            let _ = writeln!(out, "l_p = {}", m.l_p);
            let _ = writeln!(out, "l_f = {}", m.l_f);
            let _ = writeln!(out, "variant = {}", m.variant);
            let _ = writeln!(out, "n_a = {}", m.n_a);
            let _ = writeln!(out, "n_b = {}", m.n_b);
            let _ = writeln!(out, "include_feedthrough = {}", m.include_feedthrough);
            write_matrix(&mut out, "gamma_k", &m.gamma_k);
            write_matrix(&mut out, "phi_u", &m.phi_u);
            write_matrix(&mut out, "phi_y", &m.phi_y);
        }
        SavedPredictor::Spc(s) => {
            out.push_str("# multi-step predictor\n");
            let _ = writeln!(out, "method = spc");
            let _ = writeln!(out, "n_y = {}", s.n_y);
            let _ = writeln!(out, "n_u = {}", s.n_u);
            let _ = writeln!(out, "l_p = {}", s.l_p);
            let _ = writeln!(out, "l_f = {}", s.l_f);
            write_matrix(&mut out, "l_z", &s.l_z);
            write_matrix(&mut out, "l_u", &s.l_u);
        }
    }
    out
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    header: Vec<(String, String)>,
    matrices: Vec<(String, DMatrix<f64>)>,
}

impl<'a> Parser<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut p = Parser {
            lines: text.lines().enumerate().peekable(),
            header: Vec::new(),
            matrices: Vec::new(),
        };
        while let Some((no, line)) = p.lines.next() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("matrix ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let bad = || Error::Parse {
                    line: no + 1,
                    message: format!("malformed matrix header '{line}'"),
                };
                if parts.len() != 3 {
                    return Err(bad());
                }
                let rows: usize = parts[1].parse().map_err(|_| bad())?;
                let cols: usize = parts[2].parse().map_err(|_| bad())?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rno, row) = p.lines.next().ok_or(Error::Parse {
                        line: no + 1,
                        message: format!("matrix {} ends early", parts[0]),
                    })?;
                    let before = values.len();
                    for tok in row.split_whitespace() {
                        values.push(tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: rno + 1,
                            message: format!("not a number: '{tok}'"),
                        })?);
                    }
                    if values.len() - before != cols {
                        return Err(Error::Parse {
                            line: rno + 1,
                            message: format!("expected {cols} values"),
                        });
                    }
                }
                p.matrices.push((
                    parts[0].to_string(),
                    DMatrix::from_row_slice(rows, cols, &values),
                ));
            } else if let Some((k, v)) = line.split_once('=') {
                p.header.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(Error::Parse {
                    line: no + 1,
                    message: format!("unrecognised line '{line}'"),
                });
            }
        }
        Ok(p)
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Config(format!("predictor file lacks '{key}'")))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let idx = self
            .matrices
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Config(format!("predictor file lacks matrix '{name}'")))?;
        Ok(self.matrices.swap_remove(idx).1)
    }
}

pub fn predictor_from_str(text: &str) -> Result<SavedPredictor> {
    let mut p = Parser::parse(text)?;
    let (n_y, n_u, l_p, l_f) = (p.num("n_y")?, p.num("n_u")?, p.num("l_p")?, p.num("l_f")?);
    let saved = match p.get("method")? {
        "ssarx" => {
            let model = PredictorModel {
                variant: p.get("variant")?.parse()?,
                n_a: p.num("n_a")?,
                n_b: p.num("n_b")?,
                include_feedthrough: p.num("include_feedthrough")?,
                gamma_k: p.matrix("gamma_k")?,
                phi_u: p.matrix("phi_u")?,
                phi_y: p.matrix("phi_y")?,
                l_p,
                l_f,
                n_u,
                n_y,
            };
            model.validate()?;
            SavedPredictor::Ssarx(model)
        }
        "spc" => {
            let spc = SpcPredictor {
                l_z: p.matrix("l_z")?,
                l_u: p.matrix("l_u")?,
                l_p,
                l_f,
                n_u,
                n_y,
            };
            if spc.l_z.shape() != (n_y * l_f, (n_y + n_u) * l_p)
                || spc.l_u.shape() != (n_y * l_f, n_u * l_f)
            {
                return Err(Error::Config(
                    "SPC matrix shapes disagree with the header".into(),
                ));
            }
            SavedPredictor::Spc(spc)
        }
        other => return Err(Error::Config(format!("unknown predictor method '{other}'"))),
    };
    if let Some((name, _)) = p.matrices.first() {
        return Err(Error::Config(format!("unexpected matrix '{name}'")));
    }
    Ok(saved)
}

fn channel_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Columns `t, u_1.., y_1.., y0_1..`; `y0` cells are empty without a clean output.
pub fn write_trajectory_csv<W: Write>(traj: &TrajectoryData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(channel_names("u", traj.n_u()));
    header.extend(channel_names("y", traj.n_y()));
    header.extend(channel_names("y0", traj.n_y()));
    w.write_record(&header)?;
    for t in 0..traj.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(traj.u.column(t).iter().map(|x| format!("{x}")));
        rec.extend(traj.y.column(t).iter().map(|x| format!("{x}")));
        match &traj.y_clean {
            Some(yc) => rec.extend(yc.column(t).iter().map(|x| format!("{x}"))),
            None => rec.extend(std::iter::repeat_n(String::new(), traj.n_y())),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

fn parse_cell(s: &str, row: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line: row + 2,
        message: format!("not a number: '{s}'"),
    })
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryData> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be 't'".into(),
        });
    }
    let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
    let n_u = count("u_");
    let n_y = count("y_");
    let n_y0 = count("y0_");
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain(channel_names("u", n_u))
        .chain(channel_names("y", n_y))
        .chain(channel_names("y0", n_y0))
        .collect();
    if header != expected || n_u == 0 || n_y == 0 || (n_y0 != 0 && n_y0 != n_y) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected trajectory header {header:?}"),
        });
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut y0 = Vec::new();
    let mut have_clean = n_y0 > 0;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for k in 0..n_u {
            u.push(parse_cell(&rec[1 + k], i)?);
        }
        for k in 0..n_y {
            y.push(parse_cell(&rec[1 + n_u + k], i)?);
        }
        for k in 0..n_y0 {
            let cell = &rec[1 + n_u + n_y + k];
            if cell.trim().is_empty() {
                have_clean = false;
            } else {
                y0.push(parse_cell(cell, i)?);
            }
        }
        rows += 1;
    }
    let mut traj = TrajectoryData::new(
        DMatrix::from_column_slice(n_u, rows, &u),
        DMatrix::from_column_slice(n_y, rows, &y),
    )?;
    if have_clean && y0.len() == n_y * rows {
        traj.y_clean = Some(DMatrix::from_column_slice(n_y, rows, &y0));
    }
    Ok(traj)
}

fn loop_names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        channel_names(prefix, n)
    }
}

/// Columns `t, r, u, y, y0, qp_status, pred_violation`; multichannel signals
/// get `_1, _2, …` suffixes.
pub fn write_closed_loop_csv<W: Write>(res: &ClosedLoopResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (n_u, n_y) = (res.u.nrows(), res.y.nrows());
    let mut header = vec!["t".to_string()];
    header.extend(loop_names("r", n_y));
    header.extend(loop_names("u", n_u));
    header.extend(loop_names("y", n_y));
    header.extend(loop_names("y0", n_y));
    header.push("qp_status".into());
    header.push("pred_violation".into());
    w.write_record(&header)?;
    for t in 0..res.len() {
        let mut rec = vec![t.to_string()];
        for m in [&res.r, &res.u, &res.y, &res.y_clean] {
            rec.extend(m.column(t).iter().map(|x| format!("{x}")));
        }
        rec.push(res.status[t].to_string());
        rec.push(format!("{}", res.predicted_violation[t]));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<closed-loop csv>", e))?;
    Ok(())
}

/// Rows of a closed-loop CSV as read back; used to audit emitted runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub r: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub y_clean: DMatrix<f64>,
    pub status: Vec<StepStatus>,
    pub predicted_violation: Vec<f64>,
}

pub fn read_closed_loop_csv<R: Read>(input: R) -> Result<ClosedLoopRecord> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let width = |p: &str| {
        if header.iter().any(|h| h == p) {
            1
        } else {
            header
                .iter()
                .filter(|h| h.starts_with(&format!("{p}_")))
                .count()
        }
    };
    let (n_y, n_u) = (width("r"), width("u"));
    if n_y == 0 || n_u == 0 || header.len() != 3 + 3 * n_y + n_u {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected closed-loop header {header:?}"),
        });
    }
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut status = Vec::new();
    let mut viol = Vec::new();
    let widths = [n_y, n_u, n_y, n_y];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut at = 1;
        for (c, &w) in cols.iter_mut().zip(widths.iter()) {
            for k in 0..w {
                c.push(parse_cell(&rec[at + k], i)?);
            }
            at += w;
        }
        status.push(rec[at].parse()?);
        viol.push(parse_cell(&rec[at + 1], i)?);
    }
    let rows = status.len();
    let [r, u, y, y0] = cols;
    Ok(ClosedLoopRecord {
        r: DMatrix::from_column_slice(n_y, rows, &r),
        u: DMatrix::from_column_slice(n_u, rows, &u),
        y: DMatrix::from_column_slice(n_y, rows, &y),
        y_clean: DMatrix::from_column_slice(n_y, rows, &y0),
        status,
        predicted_violation: viol,
    })
}

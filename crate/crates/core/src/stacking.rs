//! Stacked past/future windows and block-Hankel data matrices.
//!
//! Anchors are 0-based and name the first *future* sample: the window at
//! `t` has past samples `t − L_p .. t − 1` (oldest first) and future samples
//! `t .. t + L_f − 1`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::TrajectoryData;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedWindow {
    pub y_p: DVector<f64>,
    pub u_p: DVector<f64>,
    /// `[y_p; u_p]`.
    pub z_p: DVector<f64>,
    pub y_f: DVector<f64>,
    pub u_f: DVector<f64>,
    pub anchor: usize,
}

fn stack(m: &DMatrix<f64>, start: usize, len: usize) -> DVector<f64> {
    let rows = m.nrows();
    let mut out = DVector::zeros(rows * len);
    for k in 0..len {
        out.rows_mut(k * rows, rows).copy_from(&m.column(start + k));
    }
    out
}

fn check_horizons(l_p: usize, l_f: usize) -> Result<()> {
    if l_p == 0 {
        return Err(Error::Range {
            what: "past horizon L_p",
            bound: "must be at least 1".into(),
        });
    }
    if l_f == 0 {
        return Err(Error::Range {
            what: "future horizon L_f",
            bound: "must be at least 1".into(),
        });
    }
    Ok(())
}

pub fn stack_window(
    traj: &TrajectoryData,
    t: usize,
    l_p: usize,
    l_f: usize,
) -> Result<StackedWindow> {
    check_horizons(l_p, l_f)?;
    if t < l_p {
        return Err(Error::Range {
            what: "window anchor",
            bound: format!("t = {t} < L_p = {l_p}"),
        });
    }
    if t + l_f > traj.len() {
        return Err(Error::Range {
            what: "window anchor",
            bound: format!("t + L_f = {} > trajectory length {}", t + l_f, traj.len()),
        });
    }
    let y_p = stack(&traj.y, t - l_p, l_p);
    let u_p = stack(&traj.u, t - l_p, l_p);
    let z_p = DVector::from_iterator(y_p.len() + u_p.len(), y_p.iter().chain(u_p.iter()).copied());
    Ok(StackedWindow {
        y_f: stack(&traj.y, t, l_f),
        u_f: stack(&traj.u, t, l_f),
        y_p,
        u_p,
        z_p,
        anchor: t,
    })
}

/// Block-Hankel matrices whose column `j` is the window anchored at `t0 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelSet {
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    /// `[Y_p; U_p]`.
    pub z_p: DMatrix<f64>,
    pub t0: usize,
    pub l_p: usize,
    pub l_f: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl HankelSet {
    pub fn cols(&self) -> usize {
        self.y_f.ncols()
    }

    pub fn column(&self, j: usize) -> StackedWindow {
        StackedWindow {
            y_p: self.y_p.column(j).into_owned(),
            u_p: self.u_p.column(j).into_owned(),
            z_p: self.z_p.column(j).into_owned(),
            y_f: self.y_f.column(j).into_owned(),
            u_f: self.u_f.column(j).into_owned(),
            anchor: self.t0 + j,
        }
    }

    /// Writes every matrix as a labelled CSV block (row-major, one matrix row
    /// per line). Debugging aid only.
    pub fn dump_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (name, m) in [
            ("Y_p", &self.y_p),
            ("U_p", &self.u_p),
            ("Z_p", &self.z_p),
            ("Y_f", &self.y_f),
            ("U_f", &self.u_f),
        ] {
            writeln!(out, "# {name} {}x{} t0={}", m.nrows(), m.ncols(), self.t0)?;
            for i in 0..m.nrows() {
                let line: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
                writeln!(out, "{}", line.join(","))?;
            }
        }
        Ok(())
    }
}

/// Builds the maximal Hankel set starting at anchor `t0`.
pub fn build_hankels(
    traj: &TrajectoryData,
    l_p: usize,
    l_f: usize,
    t0: usize,
) -> Result<HankelSet> {
    check_horizons(l_p, l_f)?;
    let needed = t0.max(l_p) + l_f;
    if traj.len() < needed || t0 < l_p {
        if t0 < l_p {
            return Err(Error::Range {
                what: "first anchor t0",
                bound: format!("t0 = {t0} < L_p = {l_p}"),
            });
        }
        return Err(Error::InsufficientData {
            what: "Hankel matrices",
            needed,
            available: traj.len(),
        });
    }
    build_hankels_with_cols(traj, l_p, l_f, t0, traj.len() - t0 - l_f + 1)
}

/// Builds a Hankel set with exactly `cols` columns.
pub fn build_hankels_with_cols(
    traj: &TrajectoryData,
    l_p: usize,
    l_f: usize,
    t0: usize,
    cols: usize,
) -> Result<HankelSet> {
    check_horizons(l_p, l_f)?;
    if t0 < l_p {
        return Err(Error::Range {
            what: "first anchor t0",
            bound: format!("t0 = {t0} < L_p = {l_p}"),
        });
    }
    if cols == 0 || t0 + cols - 1 + l_f > traj.len() {
        return Err(Error::InsufficientData {
            what: "Hankel matrices",
            needed: t0 + cols.max(1) - 1 + l_f,
            available: traj.len(),
        });
    }
    let (n_u, n_y) = (traj.n_u(), traj.n_y());
    let mut y_p = DMatrix::zeros(n_y * l_p, cols);
    let mut u_p = DMatrix::zeros(n_u * l_p, cols);
    let mut y_f = DMatrix::zeros(n_y * l_f, cols);
    let mut u_f = DMatrix::zeros(n_u * l_f, cols);
    for j in 0..cols {
        let t = t0 + j;
        y_p.set_column(j, &stack(&traj.y, t - l_p, l_p));
        u_p.set_column(j, &stack(&traj.u, t - l_p, l_p));
        y_f.set_column(j, &stack(&traj.y, t, l_f));
        u_f.set_column(j, &stack(&traj.u, t, l_f));
    }
    let mut z_p = DMatrix::zeros((n_y + n_u) * l_p, cols);
    z_p.rows_mut(0, n_y * l_p).copy_from(&y_p);
    z_p.rows_mut(n_y * l_p, n_u * l_p).copy_from(&u_p);
    Ok(HankelSet {
        y_p,
        y_f,
        u_p,
        u_f,
        z_p,
        t0,
        l_p,
        l_f,
        n_u,
        n_y,
    })
}

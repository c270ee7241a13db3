use nalgebra::{DMatrix, DVector};

use crate::control::{tracking_cost, ClosedLoopResult};
use crate::error::{Error, Result};

/// `J = Σ_t ‖y(t) − r(t)‖²_Q + ‖u(t)‖²_R` on the measured outputs.
pub fn control_cost(res: &ClosedLoopResult, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    tracking_cost(&res.y, &res.r, &res.u, q, r)
}

/// The same cost on the noise-free twin outputs.
pub fn clean_cost(res: &ClosedLoopResult, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    tracking_cost(&res.y_clean, &res.r, &res.u, q, r)
}

/// Mean of `y(t) − r(t)` over `t ∈ [start, end)`.
pub fn stationary_error(res: &ClosedLoopResult, start: usize, end: usize) -> Result<DVector<f64>> {
    if start >= end || end > res.len() {
        return Err(Error::Range {
            what: "stationary window",
            bound: format!(
                "[{start}, {end}) must be a nonempty part of 0..{}",
                res.len()
            ),
        });
    }
    let mut acc = DVector::zeros(res.y.nrows());
    for t in start..end {
        acc += res.y.column(t) - res.r.column(t);
    }
    Ok(acc / (end - start) as f64)
}

/// `Bias = ‖ē‖²` and `Var = Σ‖e_n − ē‖² / (N − 1)`.
pub fn bias_variance(errors: &[DVector<f64>]) -> Result<(f64, f64)> {
    if errors.len() < 2 {
        return Err(Error::TooFewRuns {
            needed: 2,
            got: errors.len(),
        });
    }
    let dim = errors[0].len();
    if let Some(bad) = errors.iter().find(|e| e.len() != dim) {
        return Err(Error::dim("tracking error", dim, bad.len()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().fold(DVector::zeros(dim), |acc, e| acc + e) / n;
    let var = errors
        .iter()
        .map(|e| (e - &mean).norm_squared())
        .sum::<f64>()
        / (n - 1.0);
    Ok((mean.norm_squared(), var))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Midpoint median; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn constant_errors() {
        let (b, v) = bias_variance(&scalars(&[0.3; 7])).unwrap();
        assert!((b - 0.09).abs() < 1e-15);
        assert!(v.abs() < 1e-30);
    }

    #[test]
    fn symmetric_pair() {
        assert_eq!(bias_variance(&scalars(&[1.0, -1.0])).unwrap(), (0.0, 2.0));
    }

    #[test]
    fn needs_two_runs() {
        assert!(matches!(
            bias_variance(&scalars(&[1.0])),
            Err(Error::TooFewRuns { got: 1, .. })
        ));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}

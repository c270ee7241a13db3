//! Condensed multi-step prediction `ŷ_f = P_z z_p + P_u u_f`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ident::{PredictorModel, SpcPredictor, Variant};
use crate::linalg::{block, check_len};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorSource {
    Ssarx(Variant),
    Spc,
}

impl std::fmt::Display for PredictorSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictorSource::Ssarx(v) => write!(f, "ssarx[{v}]"),
            PredictorSource::Spc => write!(f, "spc"),
        }
    }
}

/// Affine predictor in the future inputs, materialised once per model.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedPredictor {
    pub p_z: DMatrix<f64>,
    pub p_u: DMatrix<f64>,
    pub l_p: usize,
    pub l_f: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub source: PredictorSource,
}

/// Solves `(I − Φ̂_y) P = G` block row by block row. `Φ̂_y` is strictly block
/// lower triangular, so block row `i` only needs rows `0..i` of `P`.
fn forward_substitute(
    phi_y: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    n_y: usize,
    l_f: usize,
) -> DMatrix<f64> {
    let mut out = rhs.clone();
    for i in 1..l_f {
        let mut acc = out.rows(i * n_y, n_y).into_owned();
        for k in 0..i {
            acc += block(phi_y, i, k, n_y, n_y) * out.rows(k * n_y, n_y);
        }
        out.rows_mut(i * n_y, n_y).copy_from(&acc);
    }
    out
}

/// `P_z = (I − Φ̂_y)⁻¹ Γ𝒦̂`, `P_u = (I − Φ̂_y)⁻¹ Φ̂_u`.
pub fn condense(model: &PredictorModel) -> CondensedPredictor {
    CondensedPredictor {
        p_z: forward_substitute(&model.phi_y, &model.gamma_k, model.n_y, model.l_f),
        p_u: forward_substitute(&model.phi_y, &model.phi_u, model.n_y, model.l_f),
        l_p: model.l_p,
        l_f: model.l_f,
        n_u: model.n_u,
        n_y: model.n_y,
        source: PredictorSource::Ssarx(model.variant),
    }
}

impl From<&SpcPredictor> for CondensedPredictor {
    fn from(spc: &SpcPredictor) -> Self {
        CondensedPredictor {
            p_z: spc.l_z.clone(),
            p_u: spc.l_u.clone(),
            l_p: spc.l_p,
            l_f: spc.l_f,
            n_u: spc.n_u,
            n_y: spc.n_y,
            source: PredictorSource::Spc,
        }
    }
}

impl CondensedPredictor {
    pub fn past_dim(&self) -> usize {
        (self.n_u + self.n_y) * self.l_p
    }

    pub fn input_dim(&self) -> usize {
        self.n_u * self.l_f
    }

    pub fn output_dim(&self) -> usize {
        self.n_y * self.l_f
    }

    /// Response to past data with all future inputs at zero.
    pub fn free_response(&self, z_p: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("z_p", z_p, self.past_dim())?;
        Ok(&self.p_z * z_p)
    }

    pub fn predict(&self, z_p: &DVector<f64>, u_f: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("u_f", u_f, self.input_dim())?;
        Ok(self.free_response(z_p)? + &self.p_u * u_f)
    }
}

pub fn predict(
    cp: &CondensedPredictor,
    z_p: &DVector<f64>,
    u_f: &DVector<f64>,
) -> Result<DVector<f64>> {
    cp.predict(z_p, u_f)
}

/// Evaluates the implicit predictor
/// `ŷ_f = Γ𝒦̂ z_p + Φ̂_u u_f + Φ̂_y ŷ_f` one block row at a time, without
/// condensation.
pub fn predict_unrolled(
    model: &PredictorModel,
    z_p: &DVector<f64>,
    u_f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (ny, nu) = (model.n_y, model.n_u);
    check_len("z_p", z_p, (ny + nu) * model.l_p)?;
    check_len("u_f", u_f, nu * model.l_f)?;
    if model.phi_y.nrows() != ny * model.l_f {
        return Err(Error::dim(
            "Phi_y rows",
            ny * model.l_f,
            model.phi_y.nrows(),
        ));
    }
    let base = &model.gamma_k * z_p + &model.phi_u * u_f;
    let mut y = DVector::zeros(ny * model.l_f);
    for i in 0..model.l_f {
        let mut acc = base.rows(i * ny, ny).into_owned();
        for k in 0..i {
            acc += block(&model.phi_y, i, k, ny, ny) * y.rows(k * ny, ny);
        }
        y.rows_mut(i * ny, ny).copy_from(&acc);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{assemble_toeplitz, MarkovParameters};
    use crate::rng::{gaussian_matrix, stream, Stream};

    pub(crate) fn random_model(
        seed: u64,
        n_y: usize,
        n_u: usize,
        l_p: usize,
        l_f: usize,
    ) -> PredictorModel {
        let mut rng = stream(seed, Stream::Input);
        let mut markov = MarkovParameters::zeros(l_f, l_f, n_y, n_u);
        for i in 1..l_f {
            markov.phi_y[i] = gaussian_matrix(&mut rng, n_y, n_y, 0.4 / i as f64);
            markov.phi_u[i] = gaussian_matrix(&mut rng, n_y, n_u, 1.0);
        }
        let (phi_u, phi_y) = assemble_toeplitz(&markov, l_f).unwrap();
        PredictorModel {
            gamma_k: gaussian_matrix(&mut rng, n_y * l_f, (n_y + n_u) * l_p, 1.0),
            phi_u,
            phi_y,
            l_p,
            l_f,
            n_u,
            n_y,
            n_a: l_f,
            n_b: l_f,
            variant: Variant::LeastSquares,
            include_feedthrough: false,
        }
    }

    #[test]
    fn no_output_feedback_is_identity_map() {
        let mut m = random_model(1, 1, 1, 3, 4);
        m.phi_y.fill(0.0);
        let cp = condense(&m);
        assert_eq!(cp.p_z, m.gamma_k);
        assert_eq!(cp.p_u, m.phi_u);
    }

    #[test]
    fn single_step_horizon() {
        let m = random_model(2, 2, 1, 3, 1);
        let cp = condense(&m);
        assert_eq!(cp.p_z, m.gamma_k.rows(0, 2).into_owned());
        assert_eq!(cp.p_u, DMatrix::zeros(2, 1));
    }

    #[test]
    fn condensation_satisfies_defining_identity() {
        for seed in 0..10 {
            let m = random_model(seed, 2, 2, 4, 6);
            let cp = condense(&m);
            let i_minus = DMatrix::identity(12, 12) - &m.phi_y;
            assert!((&i_minus * &cp.p_u - &m.phi_u).amax() <= 1e-12);
            assert!((&i_minus * &cp.p_z - &m.gamma_k).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_inputs_predict_zero() {
        let cp = condense(&random_model(3, 1, 1, 5, 5));
        let y = cp.predict(&DVector::zeros(10), &DVector::zeros(5)).unwrap();
        assert_eq!(y, DVector::zeros(5));
        assert!(cp.predict(&DVector::zeros(9), &DVector::zeros(5)).is_err());
    }

    #[test]
    fn condensed_equals_unrolled() {
        for seed in 0..20 {
            let m = random_model(seed, 1, 1, 10, 15);
            let cp = condense(&m);
            let mut rng = stream(seed + 100, Stream::Input);
            let z = gaussian_matrix(&mut rng, 20, 1, 1.0).column(0).into_owned();
            let u = gaussian_matrix(&mut rng, 15, 1, 1.0).column(0).into_owned();
            let a = cp.predict(&z, &u).unwrap();
            let b = predict_unrolled(&m, &z, &u).unwrap();
            assert!((a - &b).amax() <= 1e-12 * b.amax().max(1.0));
        }
    }

    #[test]
    fn perturbing_future_input_is_causal() {
        let m = random_model(7, 1, 1, 4, 8);
        let cp = condense(&m);
        let z = DVector::from_element(8, 0.3);
        let u = DVector::from_fn(8, |i, _| i as f64 * 0.1);
        let base = cp.predict(&z, &u).unwrap();
        for k in 0..8 {
            let mut bumped = u.clone();
            bumped[k] += 1.0;
            let y = cp.predict(&z, &bumped).unwrap();
            for i in 0..=k {
                assert!((y[i] - base[i]).abs() <= 1e-14);
            }
        }
    }
}

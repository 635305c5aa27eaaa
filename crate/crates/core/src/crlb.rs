//! Fisher information and Cramer-Rao bounds for the linearized model.
//!
//! Vectorization follows the mode-3 unfolding: `y_bar = vec(Y_(3))` with index
//! `p + P n`, and `g_bar = vec(G_(3))` with index `k + K n`, so that the
//! noise-free mean is `Re(z_bar o (I_N kron S^T) g_bar) + |b_bar|`.
//!
//! Two bounds are available. The closed form treats `g_bar` as a complex
//! parameter and reduces to `(1 / 4 sigma^2) I kron (S* S^T)`. The numerical
//! form works over stacked `(Re g_bar, Im g_bar)` with the real noise variance
//! `sigma^2 / 2` that the linearized simulator actually uses. The closed-form
//! bound is about twice the numerical one.

use nalgebra::{Cholesky, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::atomic_model::{ArrayDims, ChannelSet};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, RMatrix};
use crate::measurement::MeasurementSet;

#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedModel {
    pub dims: ArrayDims,
    pub y_bar: DVector<f64>,
    pub z_bar: DVector<Complex64>,
    pub b_bar: DVector<Complex64>,
    pub g_bar: Option<DVector<Complex64>>,
    /// `K x P` pilots; the design operator is `I_N kron S^T`.
    pub s: CMatrix,
}

/// `vec(G_(3))`.
pub fn vectorize_channel(g: &ChannelSet) -> DVector<Complex64> {
    DVector::from_column_slice(g.unfolded().as_slice())
}

/// Reads the `N x K` channel back from `vec(G_(3))`.
pub fn unvectorize_channel(g_bar: &DVector<Complex64>, dims: ArrayDims, users: usize) -> Result<CMatrix> {
    let n = dims.n_cells();
    if g_bar.len() != n * users {
        return Err(Error::Dimension(format!(
            "g_bar has {} entries, expected {}",
            g_bar.len(),
            n * users
        )));
    }
    Ok(CMatrix::from_column_slice(users, n, g_bar.as_slice()).transpose())
}

pub fn build_vectorized(m: &MeasurementSet, truth: Option<&ChannelSet>) -> Result<VectorizedModel> {
    m.validate()?;
    let g_bar = match truth {
        Some(g) => {
            crate::error::ensure_shape("G", g.coefficients.shape(), (m.n_cells(), m.num_users()))?;
            Some(vectorize_channel(g))
        }
        None => None,
    };
    Ok(VectorizedModel {
        dims: m.dims,
        y_bar: DVector::from_column_slice(m.y3().as_slice()),
        z_bar: DVector::from_column_slice(m.z3().as_slice()),
        b_bar: DVector::from_column_slice(m.reference().transpose().as_slice()),
        g_bar,
        s: m.s.clone(),
    })
}

impl VectorizedModel {
    pub fn n_cells(&self) -> usize {
        self.dims.n_cells()
    }

    pub fn users(&self) -> usize {
        self.s.nrows()
    }

    pub fn pilots(&self) -> usize {
        self.s.ncols()
    }

    /// `(I_N kron S^T) g_bar`, applied block by block.
    pub fn design_apply(&self, g_bar: &DVector<Complex64>) -> DVector<Complex64> {
        let (k, p) = self.s.shape();
        let st = self.s.transpose();
        let mut out = DVector::zeros(self.n_cells() * p);
        for n in 0..self.n_cells() {
            let block = st.clone() * g_bar.rows(n * k, k);
            out.rows_mut(n * p, p).copy_from(&block);
        }
        out
    }

    /// Dense `I_N kron S^T`.
    pub fn design_matrix(&self) -> CMatrix {
        CMatrix::identity(self.n_cells(), self.n_cells()).kronecker(&self.s.transpose())
    }

    /// Noise-free mean `Re(z_bar o (I kron S^T) g_bar) + |b_bar|`.
    pub fn mean(&self, g_bar: &DVector<Complex64>) -> DVector<f64> {
        let d = self.design_apply(g_bar);
        DVector::from_fn(d.len(), |i, _| (self.z_bar[i] * d[i]).re + self.b_bar[i].norm())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "sigma must be > 0 for a Fisher information, got {sigma}"
        )))
    }
}

/// `(1 / 4 sigma^4) D^H (sigma^2 I o (z* z^H)) D` with `D = I_N kron S^T`,
/// evaluated densely.
pub fn fim_closed_form(s: &CMatrix, z_bar: &DVector<Complex64>, sigma: f64, dims: ArrayDims) -> Result<CMatrix> {
    check_sigma(sigma)?;
    let n = dims.n_cells();
    if z_bar.len() != n * s.ncols() {
        return Err(Error::Dimension(format!(
            "z_bar has {} entries, expected {}",
            z_bar.len(),
            n * s.ncols()
        )));
    }
    let d = CMatrix::identity(n, n).kronecker(&s.transpose());
    // only the diagonal of z* z^H survives the Hadamard product with I
    let mut weighted = d.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        let w = sigma * sigma * (z_bar[i].conj() * z_bar[i]).re;
        row *= Complex64::new(w, 0.0);
    }
    Ok(d.adjoint() * weighted * Complex64::new(1.0 / (4.0 * sigma.powi(4)), 0.0))
}

/// `(1 / 4 sigma^2) I_N kron (S* S^T)`.
pub fn fim_kronecker(s: &CMatrix, sigma: f64, dims: ArrayDims) -> Result<CMatrix> {
    check_sigma(sigma)?;
    let n = dims.n_cells();
    let block = s.conjugate() * s.transpose() * Complex64::new(1.0 / (4.0 * sigma * sigma), 0.0);
    Ok(CMatrix::identity(n, n).kronecker(&block))
}

/// Inverse of a Hermitian positive definite matrix, or `Unidentifiable` when
/// its numerical rank (`max(sv) * dim * eps` cut) falls short.
fn checked_inverse<T: nalgebra::ComplexField<RealField = f64>>(
    m: &nalgebra::DMatrix<T>,
) -> Result<nalgebra::DMatrix<T>> {
    let dim = m.nrows();
    // Hermitian PSD: eigenvalue magnitudes are the singular values
    let sv: Vec<f64> = m.clone().symmetric_eigenvalues().iter().map(|x| x.abs()).collect();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&x| x > top * dim as f64 * f64::EPSILON).count();
    if rank < dim || top == 0.0 {
        return Err(Error::Unidentifiable { rank, dim });
    }
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::Unidentifiable { rank, dim })
}

/// `CRB = FIM^-1`.
pub fn crlb_matrix(fim: &CMatrix) -> Result<CMatrix> {
    checked_inverse(fim)
}

/// `tr(CRB)` of the closed form, `4 sigma^2 N tr((S* S^T)^-1)`, without
/// materializing the Kronecker product.
pub fn closed_form_crb_trace(s: &CMatrix, sigma: f64, dims: ArrayDims) -> Result<f64> {
    check_sigma(sigma)?;
    let inv = checked_inverse(&(s.conjugate() * s.transpose()))?;
    Ok(4.0 * sigma * sigma * dims.n_cells() as f64 * inv.trace().re)
}

/// Jacobian of [`VectorizedModel::mean`] over stacked `(Re g_bar, Im g_bar)`,
/// probed column by column. The mean is affine, so unit probes are exact.
pub fn mean_jacobian(model: &VectorizedModel) -> RMatrix {
    let nk = model.n_cells() * model.users();
    let base = model.mean(&DVector::zeros(nk));
    let mut jac = RMatrix::zeros(base.len(), 2 * nk);
    let mut probe = DVector::<Complex64>::zeros(nk);
    for col in 0..2 * nk {
        let unit = if col < nk {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 1.0)
        };
        probe[col % nk] = unit;
        let moved = model.mean(&probe);
        probe[col % nk] = Complex64::new(0.0, 0.0);
        jac.column_mut(col).copy_from(&(moved - &base));
    }
    jac
}

/// Real-parameter Fisher information `(2 / sigma^2) J^T J` of
/// `y ~ N(mean, (sigma^2 / 2) I)`.
pub fn fim_numerical(model: &VectorizedModel, sigma: f64) -> Result<RMatrix> {
    check_sigma(sigma)?;
    let jac = mean_jacobian(model);
    Ok(jac.transpose() * &jac * (2.0 / (sigma * sigma)))
}

/// `tr(FIM_real^-1)` assembled from the independent per-cell `2K x 2K` blocks.
/// Equals the trace of the inverse of [`fim_numerical`].
pub fn consistent_crb_trace(m: &MeasurementSet) -> Result<f64> {
    check_sigma(m.sigma)?;
    let (k, p) = m.s.shape();
    let mut total = 0.0;
    let mut jac = RMatrix::zeros(p, 2 * k);
    for n in 0..m.n_cells() {
        for t in 0..p {
            let z = m.z[(n, t)];
            for u in 0..k {
                let w = z * m.s[(u, t)];
                jac[(t, u)] = w.re;
                jac[(t, k + u)] = -w.im;
            }
        }
        let info = jac.transpose() * &jac * (2.0 / (m.sigma * m.sigma));
        total += checked_inverse(&info)?.trace();
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FloorMode {
    /// Divide by the realized `||G||_F^2`.
    PerRealization,
    /// Divide by a profile-level expected channel power.
    ProfileAverage { expected_power: f64 },
}

pub fn nmse_floor_from_trace(crb_trace: f64, truth: &ChannelSet, mode: FloorMode) -> Result<f64> {
    if !crb_trace.is_finite() {
        return Err(Error::NonFinite("CRB trace".into()));
    }
    let power = match mode {
        FloorMode::PerRealization => truth.power(),
        FloorMode::ProfileAverage { expected_power } => expected_power,
    };
    if !(power > 0.0) {
        return Err(Error::ZeroChannelPower);
    }
    Ok(crb_trace / power)
}

/// `tr(CRB) / ||G||^2` (or the profile-average power).
pub fn nmse_floor(crb: &CMatrix, truth: &ChannelSet, mode: FloorMode) -> Result<f64> {
    nmse_floor_from_trace(crb.trace().re, truth, mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrlbResult {
    pub fim: CMatrix,
    pub crb: CMatrix,
    pub nmse_floor: f64,
}

/// Dense closed-form FIM, its inverse and the per-realization NMSE floor.
pub fn crlb(m: &MeasurementSet, truth: &ChannelSet) -> Result<CrlbResult> {
    let model = build_vectorized(m, Some(truth))?;
    let fim = fim_closed_form(&m.s, &model.z_bar, m.sigma, m.dims)?;
    let crb = crlb_matrix(&fim)?;
    let nmse_floor = nmse_floor(&crb, truth, FloorMode::PerRealization)?;
    Ok(CrlbResult { fim, crb, nmse_floor })
}

/// Both NMSE floors of one realization: `(closed form, consistent real model)`.
pub fn nmse_floors(m: &MeasurementSet, truth: &ChannelSet) -> Result<(f64, f64)> {
    let closed = nmse_floor_from_trace(
        closed_form_crb_trace(&m.s, m.sigma, m.dims)?,
        truth,
        FloorMode::PerRealization,
    )?;
    let consistent = nmse_floor_from_trace(consistent_crb_trace(m)?, truth, FloorMode::PerRealization)?;
    Ok((closed, consistent))
}

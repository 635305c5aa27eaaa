//! Gradient descent on the linearized 1D model.

use num_complex::Complex64;

use super::{check_start, initial_channel, pilot_norm2, run_descent, EstimateReport, EstimatorConfig, Objective};
use crate::atomic_model::ChannelSet;
use crate::error::{ensure_shape, Error, Result};
use crate::linalg::{CMatrix, RMatrix};
use crate::measurement::MeasurementSet;

/// `Y - |B| - Re(Z o (G S))`, `N x P`.
pub fn residual_1d(g: &CMatrix, m: &MeasurementSet) -> Result<RMatrix> {
    ensure_shape("G", g.shape(), (m.n_cells(), m.num_users()))?;
    m.validate()?;
    Ok(residual_unchecked(g, m))
}

fn residual_unchecked(g: &CMatrix, m: &MeasurementSet) -> RMatrix {
    let gs = g * &m.s;
    let mut r = m.debiased();
    for ((r, z), a) in r.iter_mut().zip(m.z.iter()).zip(gs.iter()) {
        *r -= (z * a).re;
    }
    r
}

/// `||Y - |B| - Re(Z o (G S))||_F^2`.
pub fn loss_1d(g: &CMatrix, m: &MeasurementSet) -> Result<f64> {
    Ok(residual_1d(g, m)?.norm_squared())
}

/// `-2 ((Y - |B| - Re((G S) o Z)) o Z*) S^H`. Its real and imaginary parts are
/// the partial derivatives of [`loss_1d`] with respect to `Re G` and `Im G`.
pub fn grad_1d(g: &CMatrix, m: &MeasurementSet) -> Result<CMatrix> {
    let r = residual_1d(g, m)?;
    Ok(Linear1d::new(m).gradient(&r))
}

struct Linear1d<'a> {
    m: &'a MeasurementSet,
    s_adj: CMatrix,
}

impl<'a> Linear1d<'a> {
    fn new(m: &'a MeasurementSet) -> Self {
        Self {
            m,
            s_adj: m.s.adjoint(),
        }
    }
}

impl Objective for Linear1d<'_> {
    fn residual(&self, g: &CMatrix) -> RMatrix {
        residual_unchecked(g, self.m)
    }

    fn gradient(&self, r: &RMatrix) -> CMatrix {
        let weighted = self.m.z.zip_map(r, |z, r| z.conj() * r);
        weighted * &self.s_adj * Complex64::new(-2.0, 0.0)
    }

    fn formula_scale(&self) -> f64 {
        2.0
    }

    fn project(&self, g: CMatrix) -> Result<CMatrix> {
        Ok(g)
    }
}

pub fn estimate_gd_1d(m: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let start = initial_channel(m, cfg.init);
    run_1d(m, cfg, start)
}

/// Gradient descent from a given starting channel.
pub fn estimate_gd_1d_from(m: &MeasurementSet, cfg: &EstimatorConfig, start: &ChannelSet) -> Result<EstimateReport> {
    check_start(m, start)?;
    run_1d(m, cfg, start.coefficients.clone())
}

fn run_1d(m: &MeasurementSet, cfg: &EstimatorConfig, start: CMatrix) -> Result<EstimateReport> {
    cfg.validate()?;
    m.validate()?;
    if m.dims.is_planar() {
        return Err(Error::Dimension("estimate_gd_1d needs a linear array".into()));
    }
    let obj = Linear1d::new(m);
    let out = run_descent(&obj, cfg, pilot_norm2(&m.s)?, start)?;
    Ok(EstimateReport {
        estimate: ChannelSet {
            dims: m.dims,
            coefficients: out.estimate,
            rank_budget: 1,
        },
        iterations: out.iterations,
        final_loss: *out.trace.last().unwrap_or(&f64::NAN),
        loss_trace: out.trace,
        converged: out.converged,
    })
}

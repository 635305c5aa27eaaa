//! Gerchberg-Saxton style baseline for the exact magnitude model.
//!
//! Alternates between the measured-magnitude set and the affine set
//! `{G S + B}`: impose `|C| = Y` keeping the current phases, remove the known
//! reference, and refit `G` by least squares. The magnitude residual
//! `||Y - |G S + B|||_F` never increases.

use nalgebra::Cholesky;
use num_complex::Complex64;

use super::{check_start, initial_channel, EstimateReport, EstimatorConfig};
use crate::atomic_model::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, RMatrix};
use crate::measurement::MeasurementSet;

fn field(g: &CMatrix, s: &CMatrix, b: &CMatrix) -> CMatrix {
    g * s + b
}

fn residual2(y: &RMatrix, c: &CMatrix) -> f64 {
    y.iter().zip(c.iter()).map(|(y, c)| (y - c.norm()).powi(2)).sum()
}

/// `||Y - |G S + B|||_F^2`.
pub fn magnitude_residual(g: &CMatrix, m: &MeasurementSet) -> Result<f64> {
    crate::error::ensure_shape("G", g.shape(), (m.n_cells(), m.num_users()))?;
    m.validate()?;
    Ok(residual2(&m.y, &field(g, &m.s, &m.reference())))
}

/// Right pseudo-inverse `S^H (S S^H)^-1`.
fn pilot_pinv(s: &CMatrix) -> Result<CMatrix> {
    let gram = s * s.adjoint();
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular("S S^H is not positive definite".into()))?;
    Ok(s.adjoint() * chol.inverse())
}

pub fn estimate_gs_1d(m: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let start = initial_channel(m, cfg.init);
    run(m, cfg, start)
}

pub fn estimate_gs_1d_from(m: &MeasurementSet, cfg: &EstimatorConfig, start: &ChannelSet) -> Result<EstimateReport> {
    check_start(m, start)?;
    run(m, cfg, start.coefficients.clone())
}

fn run(m: &MeasurementSet, cfg: &EstimatorConfig, start: CMatrix) -> Result<EstimateReport> {
    cfg.validate()?;
    m.validate()?;
    if m.dims.is_planar() {
        return Err(Error::Capability("Gerchberg-Saxton".into()));
    }
    if m.pilot_len() < m.num_users() {
        return Err(Error::Singular(format!(
            "{} pilots cannot resolve {} users",
            m.pilot_len(),
            m.num_users()
        )));
    }
    let pinv = pilot_pinv(&m.s)?;
    let b = m.reference();
    let mut g = start;
    let mut c = field(&g, &m.s, &b);
    let mut res = residual2(&m.y, &c);
    let mut trace = vec![res];
    let mut converged = res == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let imposed = c.zip_map(&m.y, |c, y| {
            let norm = c.norm();
            if norm > 0.0 {
                c * (y / norm)
            } else {
                Complex64::new(y, 0.0)
            }
        });
        g = (imposed - &b) * &pinv;
        c = field(&g, &m.s, &b);
        let next = residual2(&m.y, &c);
        trace.push(next);
        converged = next == 0.0 || (res - next).abs() <= cfg.tol * res;
        res = next;
    }
    Ok(EstimateReport {
        estimate: ChannelSet {
            dims: m.dims,
            coefficients: g,
            rank_budget: 1,
        },
        iterations,
        final_loss: res,
        loss_trace: trace,
        converged,
    })
}

//! Projected gradient descent on the mode-3 unfolded 2D model.
//!
//! The unknown is `G_(3)`, `K x N`, whose row `k` is user `k`'s frontal slice
//! flattened column-major. Each projected step replaces every row by the best
//! rank-`L` approximation of its slice.

use num_complex::Complex64;

use super::{check_start, initial_channel, pilot_norm2, run_descent, EstimateReport, EstimatorConfig, Objective};
use crate::atomic_model::{ArrayDims, ChannelSet};
use crate::error::{ensure_shape, Error, Result};
use crate::linalg::{all_finite, CMatrix, JacobiSvd, RMatrix};
use crate::measurement::MeasurementSet;

/// `Y_(3) - |B_(3)| - Re(Z_(3) o (S^T G_(3)))`, `P x N`.
pub fn residual_2d(g3: &CMatrix, m: &MeasurementSet) -> Result<RMatrix> {
    ensure_shape("G_(3)", g3.shape(), (m.num_users(), m.n_cells()))?;
    m.validate()?;
    Ok(Unfolded::new(m, 1.0, None).residual(g3))
}

pub fn loss_2d(g3: &CMatrix, m: &MeasurementSet) -> Result<f64> {
    Ok(residual_2d(g3, m)?.norm_squared())
}

/// `-scale * S* ((Y_(3) - |B_(3)| - Re(Z_(3) o (S^T G_(3)))) o Z_(3)*)`.
///
/// With `scale = 1` this is half the packed real-parameter gradient of
/// [`loss_2d`]; `scale = 2` makes it match the 1D convention.
pub fn grad_2d(g3: &CMatrix, m: &MeasurementSet, scale: f64) -> Result<CMatrix> {
    let r = residual_2d(g3, m)?;
    Ok(Unfolded::new(m, scale, None).gradient(&r))
}

/// Per-user best rank-`rank` approximation of the rows of `m3` (`K x N`), each
/// row read as a `rows x cols` column-major slice.
pub fn project_rank(m3: &CMatrix, rank: usize, dims: ArrayDims) -> Result<CMatrix> {
    let (rows, cols) = dims.shape();
    if m3.ncols() != rows * cols {
        return Err(Error::Dimension(format!(
            "rows of length {} do not reshape to {rows}x{cols}",
            m3.ncols()
        )));
    }
    if rank > rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "rank budget {rank} exceeds min({rows}, {cols})"
        )));
    }
    if !all_finite(m3) {
        return Err(Error::NonFinite("projection input".into()));
    }
    if rank == rows.min(cols) {
        return Ok(m3.clone());
    }
    let mut out = CMatrix::zeros(m3.nrows(), m3.ncols());
    for k in 0..m3.nrows() {
        let slice = CMatrix::from_iterator(rows, cols, m3.row(k).iter().cloned());
        let low = JacobiSvd::new(&slice).truncate(rank);
        for (j, x) in low.iter().enumerate() {
            out[(k, j)] = *x;
        }
    }
    Ok(out)
}

struct Unfolded {
    y3: RMatrix,
    z3: CMatrix,
    st: CMatrix,
    s_conj: CMatrix,
    scale: f64,
    projection: Option<(usize, ArrayDims)>,
}

impl Unfolded {
    fn new(m: &MeasurementSet, scale: f64, projection: Option<(usize, ArrayDims)>) -> Self {
        Self {
            y3: m.debiased().transpose(),
            z3: m.z3(),
            st: m.s.transpose(),
            s_conj: m.s.conjugate(),
            scale,
            projection,
        }
    }
}

impl Objective for Unfolded {
    fn residual(&self, g3: &CMatrix) -> RMatrix {
        let sg = &self.st * g3;
        let mut r = self.y3.clone();
        for ((r, z), a) in r.iter_mut().zip(self.z3.iter()).zip(sg.iter()) {
            *r -= (z * a).re;
        }
        r
    }

    fn gradient(&self, r: &RMatrix) -> CMatrix {
        let weighted = self.z3.zip_map(r, |z, r| z.conj() * r);
        &self.s_conj * weighted * Complex64::new(-self.scale, 0.0)
    }

    fn formula_scale(&self) -> f64 {
        self.scale
    }

    fn project(&self, g: CMatrix) -> Result<CMatrix> {
        match self.projection {
            Some((rank, dims)) => project_rank(&g, rank, dims),
            None => Ok(g),
        }
    }
}

/// Algorithm: gradient step on `G_(3)`, then per-user rank-`L` projection,
/// until the squared change falls below the relative threshold.
pub fn estimate_pgd_2d(m: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let start = initial_channel(m, cfg.init).transpose();
    run_2d(m, cfg, start, true)
}

pub fn estimate_pgd_2d_from(m: &MeasurementSet, cfg: &EstimatorConfig, start: &ChannelSet) -> Result<EstimateReport> {
    check_start(m, start)?;
    run_2d(m, cfg, start.unfolded(), true)
}

/// Plain gradient descent on the unfolded problem, no rank projection.
pub fn estimate_gd_2d(m: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let start = initial_channel(m, cfg.init).transpose();
    run_2d(m, cfg, start, false)
}

fn run_2d(m: &MeasurementSet, cfg: &EstimatorConfig, start: CMatrix, projected: bool) -> Result<EstimateReport> {
    cfg.validate()?;
    m.validate()?;
    let ArrayDims::Planar { rows, cols } = m.dims else {
        return Err(Error::Dimension("2D estimators need a planar array".into()));
    };
    let projection = if projected {
        if cfg.rank_budget > rows.min(cols) {
            return Err(Error::InvalidConfig(format!(
                "rank budget {} exceeds min({rows}, {cols})",
                cfg.rank_budget
            )));
        }
        Some((cfg.rank_budget, m.dims))
    } else {
        None
    };
    let obj = Unfolded::new(m, cfg.gradient_scale, projection);
    let start = obj.project(start)?;
    let out = run_descent(&obj, cfg, pilot_norm2(&m.s)?, start)?;
    let rank_budget = if projected { cfg.rank_budget } else { rows.min(cols) };
    Ok(EstimateReport {
        estimate: ChannelSet::from_unfolded(m.dims, &out.estimate, rank_budget),
        iterations: out.iterations,
        final_loss: *out.trace.last().unwrap_or(&f64::NAN),
        loss_trace: out.trace,
        converged: out.converged,
    })
}

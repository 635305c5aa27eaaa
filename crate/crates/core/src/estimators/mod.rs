//! Channel estimators.
//!
//! All gradient routines return the packed real-parameter gradient scaled by
//! a formula constant `c`: the real and imaginary parts of the returned
//! matrix are `(c / 2) dL/dRe(G)` and `(c / 2) dL/dIm(G)`. The 1D formula has
//! `c = 2`; the 2D formula has `c = gradient_scale` (default 1). Step sizes
//! are expressed against the returned matrix, so the Lipschitz rule uses
//! `eta = 1 / (c ||S||_2^2)`, which is one over the gradient-Lipschitz bound
//! `2 ||S||_2^2` of the loss.

mod gd;
mod gs;
mod pgd;

pub use gd::{estimate_gd_1d, estimate_gd_1d_from, grad_1d, loss_1d, residual_1d};
pub use gs::{estimate_gs_1d, estimate_gs_1d_from, magnitude_residual};
pub use pgd::{estimate_gd_2d, estimate_pgd_2d, estimate_pgd_2d_from, grad_2d, loss_2d, project_rank, residual_2d};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atomic_model::{complex_normal, ChannelSet};
use crate::error::{Error, Result};
use crate::linalg::{diff_frob2, frob2, spectral_norm, CMatrix, RMatrix};
use crate::measurement::MeasurementSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Gd,
    Pgd,
    Gs,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Gd => "gd",
            EstimatorKind::Pgd => "pgd",
            EstimatorKind::Gs => "gs",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gd" => Ok(Self::Gd),
            "pgd" => Ok(Self::Pgd),
            "gs" => Ok(Self::Gs),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum StepRule {
    Fixed {
        value: f64,
    },
    Lipschitz,
    /// Armijo backtracking, shrink 0.5, sufficient-decrease constant 1e-4.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Init {
    Zeros,
    Random {
        seed: u64,
    },
    /// Matched filter of the de-biased data.
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Relative threshold: stop once `||G_{t+1} - G_t||_F^2 <= tol ||G_{t+1}||_F^2`.
    pub tol: f64,
    pub rank_budget: usize,
    pub init: Init,
    /// Multiplier on the 2D gradient formula.
    pub gradient_scale: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            step_rule: StepRule::Lipschitz,
            max_iters: 5000,
            tol: 1e-10,
            rank_budget: 5,
            init: Init::Zeros,
            gradient_scale: 1.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0".into()));
        }
        if self.rank_budget < 1 {
            return Err(Error::InvalidConfig("rank_budget must be >= 1".into()));
        }
        if !(self.gradient_scale > 0.0) {
            return Err(Error::InvalidConfig("gradient_scale must be > 0".into()));
        }
        if let StepRule::Fixed { value } = self.step_rule {
            if !(value > 0.0) {
                return Err(Error::InvalidConfig("fixed step must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub estimate: ChannelSet,
    pub iterations: usize,
    pub final_loss: f64,
    /// Loss of the initial point followed by the loss after each iteration.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

/// Runs `kind` on `m`, dispatching on the array geometry.
pub fn estimate(kind: EstimatorKind, m: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    match (kind, m.dims.is_planar()) {
        (EstimatorKind::Gd, false) => estimate_gd_1d(m, cfg),
        (EstimatorKind::Gd, true) => estimate_gd_2d(m, cfg),
        (EstimatorKind::Pgd, true) => estimate_pgd_2d(m, cfg),
        (EstimatorKind::Pgd, false) => Err(Error::InvalidConfig(
            "pgd needs a planar array; use gd for linear arrays".into(),
        )),
        (EstimatorKind::Gs, false) => estimate_gs_1d(m, cfg),
        (EstimatorKind::Gs, true) => Err(Error::Capability("Gerchberg-Saxton".into())),
    }
}

/// A least-squares problem `||residual(G)||^2` with a linear residual map.
pub(crate) trait Objective {
    fn residual(&self, g: &CMatrix) -> RMatrix;
    /// Gradient formula evaluated from a residual.
    fn gradient(&self, r: &RMatrix) -> CMatrix;
    /// The constant `c` in the module docs.
    fn formula_scale(&self) -> f64;
    fn project(&self, g: CMatrix) -> Result<CMatrix>;
}

pub(crate) struct Descent {
    pub estimate: CMatrix,
    pub iterations: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const DIVERGENCE_FACTOR: f64 = 1e6;

pub(crate) fn run_descent(
    obj: &impl Objective,
    cfg: &EstimatorConfig,
    s_norm2: f64,
    start: CMatrix,
) -> Result<Descent> {
    let lipschitz_step = 1.0 / (obj.formula_scale() * s_norm2);
    let mut g = start;
    let mut r = obj.residual(&g);
    let mut loss = r.norm_squared();
    let initial = loss;
    let mut trace = Vec::with_capacity(cfg.max_iters.min(1 << 16) + 1);
    trace.push(loss);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let grad = obj.gradient(&r);
        let (g_new, r_new, loss_new) = match cfg.step_rule {
            StepRule::Fixed { value } => step(obj, &g, &grad, value)?,
            StepRule::Lipschitz => step(obj, &g, &grad, lipschitz_step)?,
            StepRule::Backtracking => {
                // true-gradient step eta_t = eta * c / 2; start at twice the Lipschitz step
                let mut eta = 2.0 * lipschitz_step;
                let mut tries = 0;
                loop {
                    let cand = step(obj, &g, &grad, eta)?;
                    let eta_true = eta * obj.formula_scale() / 2.0;
                    let moved = diff_frob2(&cand.0, &g);
                    if cand.2 <= loss - ARMIJO_C / eta_true * moved || tries >= 40 {
                        break cand;
                    }
                    eta *= 0.5;
                    tries += 1;
                }
            }
        };
        if initial > 0.0 && !(loss_new <= DIVERGENCE_FACTOR * initial) {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss_new,
                limit: DIVERGENCE_FACTOR * initial,
            });
        }
        let delta = diff_frob2(&g_new, &g);
        g = g_new;
        r = r_new;
        loss = loss_new;
        trace.push(loss);
        if delta <= cfg.tol * frob2(&g) {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        estimate: g,
        iterations,
        trace,
        converged,
    })
}

fn step(obj: &impl Objective, g: &CMatrix, grad: &CMatrix, eta: f64) -> Result<(CMatrix, RMatrix, f64)> {
    let moved = obj.project(g - grad * Complex64::new(eta, 0.0))?;
    let r = obj.residual(&moved);
    let loss = r.norm_squared();
    Ok((moved, r, loss))
}

pub(crate) fn pilot_norm2(s: &CMatrix) -> Result<f64> {
    let n = spectral_norm(s);
    if !(n > 0.0) {
        return Err(Error::InvalidConfig("pilot matrix is zero".into()));
    }
    Ok(n * n)
}

/// Matched-filter estimate `(2 / (P mean|s|^2)) ((Y - |B|) o Z*) S^H`, `N x K`.
pub(crate) fn matched_filter(m: &MeasurementSet) -> CMatrix {
    let d = m.debiased();
    let weighted = m.z.zip_map(&d, |z, r| z.conj() * r);
    let mean_s = frob2(&m.s) / m.s.len() as f64;
    let scale = 2.0 / (m.pilot_len() as f64 * mean_s);
    weighted * m.s.adjoint() * Complex64::new(scale, 0.0)
}

/// Initial channel in `N x K` orientation.
pub(crate) fn initial_channel(m: &MeasurementSet, init: Init) -> CMatrix {
    let (n, k) = (m.n_cells(), m.num_users());
    match init {
        Init::Zeros => CMatrix::zeros(n, k),
        Init::Spectral => matched_filter(m),
        Init::Random { seed } => {
            let d = m.debiased();
            let mean_s = frob2(&m.s) / m.s.len() as f64;
            let var = 2.0 * d.norm_squared() / d.len() as f64 / (k as f64 * mean_s);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            CMatrix::from_fn(n, k, |_, _| complex_normal(&mut rng, var))
        }
    }
}

pub(crate) fn check_start(m: &MeasurementSet, start: &ChannelSet) -> Result<()> {
    crate::error::ensure_shape(
        "initial channel",
        start.coefficients.shape(),
        (m.n_cells(), m.num_users()),
    )
}

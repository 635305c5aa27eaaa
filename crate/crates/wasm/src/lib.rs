//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string; the page in `www/` does the plotting.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rydberg_core::atomic_model::{synth_channel, synth_reference};
use rydberg_core::bench::{nmse, run_sweep, ExperimentSpec};
use rydberg_core::crlb::nmse_floors;
use rydberg_core::estimators::estimate;
use rydberg_core::linalg::JacobiSvd;
use rydberg_core::measurement::{measure, sigma_from_snr};
use rydberg_core::{
    draw_scene, ArrayDims, ChannelSet, DistributionProfile, EstimatorConfig, EstimatorKind, MeasurementModel, Result,
};

const USERS: usize = 3;
const SIDE: usize = 8;
const TRACE_POINTS: usize = 200;

#[derive(Serialize)]
pub struct Slice {
    /// `|G_k|`, row-major `rows x cols`.
    pub magnitude: Vec<f64>,
    /// Normalized by the largest one.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

#[derive(Serialize)]
pub struct Spectrum {
    pub rows: usize,
    pub cols: usize,
    pub slices: Vec<Slice>,
}

fn slice_of(g: &ChannelSet, k: usize) -> Slice {
    let m = g.slice(k);
    let (rows, cols) = m.shape();
    let magnitude = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|rc| m[rc].norm())
        .collect();
    let sv = JacobiSvd::new(&m).singular_values;
    let top = sv.first().copied().unwrap_or(0.0);
    let singular_values: Vec<f64> = sv.iter().map(|s| if top > 0.0 { s / top } else { 0.0 }).collect();
    let rank = singular_values.iter().filter(|&&s| s > 1e-10).count();
    Slice {
        magnitude,
        singular_values,
        rank,
    }
}

/// Draws an 8x8 planar scene with `paths` paths per user and returns every
/// user's slice magnitude and singular values.
pub fn spectrum(seed: u64, paths: usize) -> Result<Spectrum> {
    let dims = ArrayDims::Planar { rows: SIDE, cols: SIDE };
    let scene = draw_scene(seed, USERS, paths, USERS, dims, &DistributionProfile::standard())?;
    let g = synth_channel(&scene)?;
    Ok(Spectrum {
        rows: SIDE,
        cols: SIDE,
        slices: (0..USERS).map(|k| slice_of(&g, k)).collect(),
    })
}

#[derive(Serialize)]
pub struct Run {
    pub estimator: String,
    pub nmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss relative to its starting value, thinned to at most 200 points.
    pub loss: Vec<f64>,
    /// User 0 estimate, same layout as [`Slice::magnitude`].
    pub user0: Slice,
}

#[derive(Serialize)]
pub struct Recovery {
    pub sigma: f64,
    pub floor: f64,
    pub floor_closed_form: f64,
    pub truth: Slice,
    pub runs: Vec<Run>,
}

fn thin(trace: &[f64]) -> Vec<f64> {
    let first = trace.first().copied().unwrap_or(1.0);
    let step = trace.len().div_ceil(TRACE_POINTS).max(1);
    let mut out: Vec<f64> = trace.iter().step_by(step).map(|l| l / first).collect();
    if !(trace.len() - 1).is_multiple_of(step) {
        out.push(trace[trace.len() - 1] / first);
    }
    out
}

/// One 8x8 instance under the exact magnitude model, estimated by GD and by
/// PGD with the given rank budget.
pub fn recovery(seed: u64, paths: usize, pilots: usize, snr_db: f64, rank: usize) -> Result<Recovery> {
    let dims = ArrayDims::Planar { rows: SIDE, cols: SIDE };
    let scene = draw_scene(seed, USERS, paths, pilots, dims, &DistributionProfile::standard())?;
    let truth = synth_channel(&scene)?;
    let refs = synth_reference(&scene)?;
    let sigma = sigma_from_snr(&truth, &scene.pilots, snr_db)?;
    let m = measure(
        MeasurementModel::Exact,
        &truth,
        &scene.pilots,
        &refs,
        sigma,
        seed ^ 0xA5A5,
    )?;
    let (floor_closed_form, floor) = nmse_floors(&m, &truth).unwrap_or((f64::INFINITY, f64::INFINITY));
    let cfg = EstimatorConfig {
        rank_budget: rank,
        ..Default::default()
    };
    let runs = [EstimatorKind::Gd, EstimatorKind::Pgd]
        .into_iter()
        .map(|kind| {
            let report = estimate(kind, &m, &cfg)?;
            Ok(Run {
                estimator: kind.to_string(),
                nmse: nmse(&report.estimate, &truth)?,
                iterations: report.iterations,
                converged: report.converged,
                loss: thin(&report.loss_trace),
                user0: slice_of(&report.estimate, 0),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Recovery {
        sigma,
        floor,
        floor_closed_form,
        truth: slice_of(&truth, 0),
        runs,
    })
}

#[derive(Serialize)]
pub struct CurvePoint {
    pub snr_db: f64,
    pub gd: f64,
    pub pgd: f64,
    pub floor: f64,
    pub floor_closed_form: f64,
}

/// Mean NMSE over `trials` 8x8 scenes at each SNR in `snr_db`.
pub fn curve(seed: u64, trials: usize, pilots: usize, snr_db: &[f64]) -> Result<Vec<CurvePoint>> {
    let spec = ExperimentSpec {
        name: "demo".into(),
        pilot_lengths: vec![pilots],
        snr_db: snr_db.to_vec(),
        trials,
        base_seed: seed,
        ..ExperimentSpec::fig4()
    };
    let result = run_sweep(&spec, 1)?;
    Ok(result
        .points
        .iter()
        .map(|p| CurvePoint {
            snr_db: p.snr_db,
            gd: p.get(EstimatorKind::Gd).map_or(f64::NAN, |e| e.mean_nmse),
            pgd: p.get(EstimatorKind::Pgd).map_or(f64::NAN, |e| e.mean_nmse),
            floor: p.crlb_floor,
            floor_closed_form: p.crlb_floor_closed_form,
        })
        .collect())
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = channelSpectrum)]
pub fn channel_spectrum(seed: u32, paths: usize) -> std::result::Result<String, JsError> {
    to_js(spectrum(seed.into(), paths))
}

#[wasm_bindgen(js_name = recoverChannel)]
pub fn recover_channel(
    seed: u32,
    paths: usize,
    pilots: usize,
    snr_db: f64,
    rank: usize,
) -> std::result::Result<String, JsError> {
    to_js(recovery(seed.into(), paths, pilots, snr_db, rank))
}

#[wasm_bindgen(js_name = nmseCurve)]
pub fn nmse_curve(seed: u32, trials: usize, pilots: usize, snr_db: Vec<f64>) -> std::result::Result<String, JsError> {
    to_js(curve(seed.into(), trials, pilots, &snr_db))
}

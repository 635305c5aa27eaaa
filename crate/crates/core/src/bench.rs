//! Seeded Monte Carlo NMSE sweeps.
//!
//! Every trial derives its seeds from `(base_seed, trial)` for the scene and
//! `(base_seed, P, snr, trial)` for the noise, through a fixed mixing
//! function. Trial `t` therefore sees the same users at every grid point
//! (common random numbers), shorter pilot blocks are prefixes of longer
//! ones, and extending a grid never changes existing points.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atomic_model::{draw_scene, synth_channel, synth_reference, ArrayDims, ChannelSet, DistributionProfile};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, EstimatorKind};
use crate::linalg::{diff_frob2, pairwise_sum};
use crate::measurement::{measure, sigma_from_snr, MeasurementModel};

/// `||G - G_hat||_F^2 / ||G||_F^2`.
pub fn nmse(estimate: &ChannelSet, truth: &ChannelSet) -> Result<f64> {
    crate::error::ensure_shape("estimate", estimate.coefficients.shape(), truth.coefficients.shape())?;
    let power = truth.power();
    if !(power > 0.0) {
        return Err(Error::ZeroChannelPower);
    }
    Ok(diff_frob2(&estimate.coefficients, &truth.coefficients) / power)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub array: ArrayDims,
    pub users: usize,
    pub paths: usize,
    pub pilot_lengths: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub model: MeasurementModel,
    pub profile: String,
    pub base_seed: u64,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

impl ExperimentSpec {
    fn base(name: &str, array: ArrayDims, estimators: Vec<EstimatorKind>) -> Self {
        Self {
            name: name.into(),
            array,
            users: 3,
            paths: 5,
            pilot_lengths: vec![10, 30],
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 500,
            estimators,
            model: MeasurementModel::Exact,
            profile: "default".into(),
            base_seed: 2024,
            estimator: EstimatorConfig {
                rank_budget: 5,
                ..Default::default()
            },
        }
    }

    /// NMSE versus SNR, 8-cell linear array, GD against the GS baseline.
    pub fn fig3() -> Self {
        Self::base(
            "fig3",
            ArrayDims::Linear { cells: 8 },
            vec![EstimatorKind::Gd, EstimatorKind::Gs],
        )
    }

    /// NMSE versus SNR, 8x8 planar array, PGD against plain GD.
    pub fn fig4() -> Self {
        Self::base(
            "fig4",
            ArrayDims::Planar { rows: 8, cols: 8 },
            vec![EstimatorKind::Gd, EstimatorKind::Pgd],
        )
    }

    /// NMSE versus pilot length at 5 dB, 8x8 planar array.
    pub fn fig5() -> Self {
        Self {
            pilot_lengths: vec![5, 10, 15, 20, 25, 30],
            snr_db: vec![5.0],
            ..Self::base(
                "fig5",
                ArrayDims::Planar { rows: 8, cols: 8 },
                vec![EstimatorKind::Gd, EstimatorKind::Pgd],
            )
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fig3" => Ok(Self::fig3()),
            "fig3-small" => Ok(Self {
                name: "fig3-small".into(),
                trials: 50,
                ..Self::fig3()
            }),
            "fig4" => Ok(Self::fig4()),
            "fig5" => Ok(Self::fig5()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (fig3, fig3-small, fig4, fig5)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.pilot_lengths.is_empty() || self.snr_db.is_empty() || self.estimators.is_empty() {
            return Err(Error::InvalidConfig(
                "grids and estimator list must be non-empty".into(),
            ));
        }
        if self.users < 1 || self.paths < 1 || self.pilot_lengths.contains(&0) {
            return Err(Error::InvalidConfig("K, L and pilot lengths must be >= 1".into()));
        }
        DistributionProfile::by_name(&self.profile)?;
        self.estimator.validate()?;
        for kind in &self.estimators {
            match kind {
                EstimatorKind::Gs if self.array.is_planar() => {
                    return Err(Error::Capability("Gerchberg-Saxton".into()))
                }
                EstimatorKind::Pgd if !self.array.is_planar() => {
                    return Err(Error::InvalidConfig("pgd needs a planar array".into()))
                }
                EstimatorKind::Pgd => {
                    let (r, c) = self.array.shape();
                    if self.estimator.rank_budget > r.min(c) {
                        return Err(Error::InvalidConfig("rank budget exceeds array size".into()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.pilot_lengths.len() * self.snr_db.len());
        for &pilot_len in &self.pilot_lengths {
            for &snr_db in &self.snr_db {
                out.push(GridPoint { pilot_len, snr_db });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub pilot_len: usize,
    pub snr_db: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Order-sensitive mix of a list of words.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5_EED0_FA70_u64, |h, &p| splitmix64(h ^ splitmix64(p)))
}

const SCENE_TAG: u64 = 0x5CE7E;
const NOISE_TAG: u64 = 0x7015E;

pub fn scene_seed(base: u64, trial: usize) -> u64 {
    mix_seed(&[base, SCENE_TAG, trial as u64])
}

pub fn noise_seed(base: u64, point: &GridPoint, trial: usize) -> u64 {
    mix_seed(&[
        base,
        NOISE_TAG,
        point.pilot_len as u64,
        point.snr_db.to_bits(),
        trial as u64,
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    pub nmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pilot_len: usize,
    pub snr_db: f64,
    pub trial: usize,
    pub scene_seed: u64,
    pub noise_seed: u64,
    pub sigma: f64,
    pub channel_power: f64,
    /// Consistent real-model floor; infinite when unidentifiable.
    pub crlb_floor: f64,
    /// Closed-form floor; infinite when unidentifiable.
    pub crlb_floor_closed_form: f64,
    pub outcomes: Vec<EstimatorOutcome>,
    #[serde(skip)]
    pub elapsed_s: f64,
}

pub fn run_trial(spec: &ExperimentSpec, point: &GridPoint, trial: usize) -> Result<TrialRecord> {
    spec.validate()?;
    run_trial_unchecked(spec, point, trial)
}

fn run_trial_unchecked(spec: &ExperimentSpec, point: &GridPoint, trial: usize) -> Result<TrialRecord> {
    let elapsed = stopwatch();
    let profile = DistributionProfile::by_name(&spec.profile)?;
    let scene_seed = scene_seed(spec.base_seed, trial);
    let noise_seed = noise_seed(spec.base_seed, point, trial);
    let scene = draw_scene(
        scene_seed,
        spec.users,
        spec.paths,
        point.pilot_len,
        spec.array,
        &profile,
    )?;
    let truth = synth_channel(&scene)?;
    let refs = synth_reference(&scene)?;
    let sigma = sigma_from_snr(&truth, &scene.pilots, point.snr_db)?;
    let m = measure(spec.model, &truth, &scene.pilots, &refs, sigma, noise_seed)?;

    let (crlb_floor_closed_form, crlb_floor) = if sigma > 0.0 {
        let closed = nmse_floors_or_inf(&m, &truth, true);
        let consistent = nmse_floors_or_inf(&m, &truth, false);
        (closed, consistent)
    } else {
        (0.0, 0.0)
    };

    let outcomes = spec
        .estimators
        .iter()
        .map(|&kind| match estimate(kind, &m, &spec.estimator) {
            Ok(report) => EstimatorOutcome {
                estimator: kind,
                nmse: nmse(&report.estimate, &truth).ok(),
                iterations: report.iterations,
                converged: report.converged,
                error: None,
            },
            Err(e) => EstimatorOutcome {
                estimator: kind,
                nmse: None,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            },
        })
        .collect();

    Ok(TrialRecord {
        pilot_len: point.pilot_len,
        snr_db: point.snr_db,
        trial,
        scene_seed,
        noise_seed,
        sigma,
        channel_power: truth.power(),
        crlb_floor,
        crlb_floor_closed_form,
        outcomes,
        elapsed_s: elapsed(),
    })
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

// No monotonic clock on wasm32-unknown-unknown.
#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

fn nmse_floors_or_inf(m: &crate::measurement::MeasurementSet, truth: &ChannelSet, closed: bool) -> f64 {
    use crate::crlb::{closed_form_crb_trace, consistent_crb_trace, nmse_floor_from_trace, FloorMode};
    let trace = if closed {
        closed_form_crb_trace(&m.s, m.sigma, m.dims)
    } else {
        consistent_crb_trace(m)
    };
    match trace {
        Ok(t) => nmse_floor_from_trace(t, truth, FloorMode::PerRealization).unwrap_or(f64::INFINITY),
        Err(Error::Unidentifiable { .. }) => f64::INFINITY,
        Err(_) => f64::NAN,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_nmse: f64,
    pub stderr: f64,
    /// Trials that produced an NMSE.
    pub trials: usize,
    pub failures: usize,
    pub converged: usize,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub pilot_len: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub crlb_floor: f64,
    pub crlb_floor_closed_form: f64,
    pub estimators: Vec<EstimatorSummary>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PointSummary {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub points: Vec<PointSummary>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentResult {
    pub fn point(&self, pilot_len: usize, snr_db: f64) -> Option<&PointSummary> {
        self.points
            .iter()
            .find(|p| p.pilot_len == pilot_len && p.snr_db == snr_db)
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn summarize(spec: &ExperimentSpec, point: &GridPoint, records: &[TrialRecord]) -> PointSummary {
    let floors: Vec<f64> = records.iter().map(|r| r.crlb_floor).collect();
    let closed: Vec<f64> = records.iter().map(|r| r.crlb_floor_closed_form).collect();
    let estimators = spec
        .estimators
        .iter()
        .enumerate()
        .map(|(slot, &kind)| {
            let outcomes: Vec<&EstimatorOutcome> = records.iter().map(|r| &r.outcomes[slot]).collect();
            let values: Vec<f64> = outcomes.iter().filter_map(|o| o.nmse).collect();
            let iters: Vec<f64> = outcomes.iter().map(|o| o.iterations as f64).collect();
            let (mean_nmse, stderr) = mean_and_stderr(&values);
            EstimatorSummary {
                estimator: kind,
                mean_nmse,
                stderr,
                trials: values.len(),
                failures: outcomes.len() - values.len(),
                converged: outcomes.iter().filter(|o| o.converged).count(),
                mean_iterations: mean_and_stderr(&iters).0,
            }
        })
        .collect();
    PointSummary {
        pilot_len: point.pilot_len,
        snr_db: point.snr_db,
        trials: records.len(),
        crlb_floor: mean_and_stderr(&floors).0,
        crlb_floor_closed_form: mean_and_stderr(&closed).0,
        estimators,
        wall_time_s: records.iter().map(|r| r.elapsed_s).sum(),
    }
}

/// Runs every (grid point, trial) pair on `workers` threads (0 picks the
/// rayon default, 1 runs on the calling thread). Results do not depend on the
/// worker count.
pub fn run_sweep(spec: &ExperimentSpec, workers: usize) -> Result<ExperimentResult> {
    spec.validate()?;
    let grid = spec.grid();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let run = |&(g, t): &(usize, usize)| run_trial_unchecked(spec, &grid[g], t);
    let records: Vec<TrialRecord> = if workers == 1 {
        jobs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };
    let points = grid
        .iter()
        .enumerate()
        .map(|(g, point)| summarize(spec, point, &records[g * spec.trials..(g + 1) * spec.trials]))
        .collect();
    Ok(ExperimentResult {
        spec: spec.clone(),
        points,
        trials: records,
    })
}

pub const TABLE_HEADER: [&str; 8] = [
    "estimator",
    "snr_db",
    "P",
    "mean_nmse",
    "stderr",
    "crlb_floor",
    "trials",
    "crlb_floor_closed_form",
];

/// Delimited results table, one row per (grid point, estimator).
pub fn write_table<W: Write>(result: &ExperimentResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for p in &result.points {
        for e in &p.estimators {
            w.write_record(&[
                e.estimator.to_string(),
                p.snr_db.to_string(),
                p.pilot_len.to_string(),
                format!("{:e}", e.mean_nmse),
                format!("{:e}", e.stderr),
                format!("{:e}", p.crlb_floor),
                e.trials.to_string(),
                format!("{:e}", p.crlb_floor_closed_form),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(array: ArrayDims, estimators: Vec<EstimatorKind>) -> ExperimentSpec {
        ExperimentSpec {
            name: "tiny".into(),
            array,
            users: 2,
            paths: 2,
            pilot_lengths: vec![12],
            snr_db: vec![10.0],
            trials: 3,
            estimators,
            model: MeasurementModel::Exact,
            profile: "default".into(),
            base_seed: 9,
            estimator: EstimatorConfig {
                rank_budget: 2,
                max_iters: 300,
                ..Default::default()
            },
        }
    }

    #[test]
    fn nmse_examples() {
        let truth = ChannelSet {
            dims: ArrayDims::Linear { cells: 2 },
            coefficients: crate::linalg::CMatrix::from_fn(2, 2, |i, j| crate::Complex64::new(i as f64 + 1.0, j as f64)),
            rank_budget: 1,
        };
        assert_eq!(nmse(&truth, &truth).unwrap(), 0.0);
        let mut zero = truth.clone();
        zero.coefficients.fill(crate::Complex64::new(0.0, 0.0));
        assert_eq!(nmse(&zero, &truth).unwrap(), 1.0);
        let mut double = truth.clone();
        double.coefficients *= crate::Complex64::new(2.0, 0.0);
        assert!((nmse(&double, &truth).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&truth, &zero), Err(Error::ZeroChannelPower)));
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = GridPoint {
            pilot_len: 10,
            snr_db: 5.0,
        };
        let b = GridPoint {
            pilot_len: 10,
            snr_db: 10.0,
        };
        assert_eq!(noise_seed(1, &a, 3), noise_seed(1, &a, 3));
        assert_ne!(noise_seed(1, &a, 3), noise_seed(1, &b, 3));
        assert_ne!(noise_seed(1, &a, 3), noise_seed(1, &a, 4));
        assert_ne!(scene_seed(1, 0), scene_seed(2, 0));
    }

    #[test]
    fn trial_is_deterministic() {
        let spec = tiny(
            ArrayDims::Linear { cells: 4 },
            vec![EstimatorKind::Gd, EstimatorKind::Gs],
        );
        let p = spec.grid()[0];
        assert_eq!(
            run_trial(&spec, &p, 1).unwrap().outcomes,
            run_trial(&spec, &p, 1).unwrap().outcomes
        );
    }

    #[test]
    fn gs_on_planar_is_rejected() {
        let spec = tiny(ArrayDims::Planar { rows: 3, cols: 3 }, vec![EstimatorKind::Gs]);
        let err = run_trial(&spec, &spec.grid()[0], 0).unwrap_err();
        assert!(err.to_string().contains("baseline is 1D-only"));
    }

    #[test]
    fn single_trial_sweep_matches_trial() {
        let spec = ExperimentSpec {
            trials: 1,
            ..tiny(
                ArrayDims::Planar { rows: 3, cols: 3 },
                vec![EstimatorKind::Gd, EstimatorKind::Pgd],
            )
        };
        let sweep = run_sweep(&spec, 1).unwrap();
        let trial = run_trial(&spec, &spec.grid()[0], 0).unwrap();
        assert_eq!(sweep.trials[0].outcomes, trial.outcomes);
        let point = &sweep.points[0];
        assert_eq!(
            point.get(EstimatorKind::Pgd).unwrap().mean_nmse,
            trial.outcomes[1].nmse.unwrap()
        );
        assert_eq!(point.crlb_floor, trial.crlb_floor);
    }

    #[test]
    fn spec_round_trips_through_json_and_toml() {
        let spec = ExperimentSpec::fig5();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), spec);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<ExperimentSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn presets() {
        for name in ["fig3", "fig3-small", "fig4", "fig5"] {
            ExperimentSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(ExperimentSpec::preset("fig6").is_err());
    }

    #[test]
    fn table_layout() {
        let spec = tiny(
            ArrayDims::Linear { cells: 4 },
            vec![EstimatorKind::Gd, EstimatorKind::Gs],
        );
        let result = run_sweep(&spec, 1).unwrap();
        let mut buf = Vec::new();
        write_table(&result, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "estimator,snr_db,P,mean_nmse,stderr,crlb_floor,trials,crlb_floor_closed_form"
        );
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("gd,10,12,"));
        assert!(lines[2].starts_with("gs,10,12,"));
    }
}

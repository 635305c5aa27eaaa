//! Versioned on-disk formats.
//!
//! Scene configs and frozen scenes are TOML; channels, measurement bundles,
//! estimate reports and sweep manifests are JSON. Every file carries a
//! `schema` tag and complex numbers are stored as `[re, im]` pairs.

use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::atomic_model::{
    draw_scene, ArrayDims, ArrayGeometry, ChannelSet, DistributionProfile, PathComponent, PhysicalConstants,
    ReferenceEmitter, Scene,
};
use crate::bench::{ExperimentResult, ExperimentSpec};
use crate::error::{Error, Result};
use crate::estimators::{EstimateReport, EstimatorKind};
use crate::linalg::{CMatrix, RMatrix};
use crate::measurement::{MeasurementModel, MeasurementSet};

pub const SCENE_SCHEMA: &str = "rydberg-scene/1";
pub const CHANNEL_SCHEMA: &str = "rydberg-channel/1";
pub const MEASUREMENT_SCHEMA: &str = "rydberg-measurement/1";
pub const REPORT_SCHEMA: &str = "rydberg-report/1";
pub const CRLB_SCHEMA: &str = "rydberg-crlb/1";
pub const MANIFEST_SCHEMA: &str = "rydberg-sweep-manifest/1";

fn check_schema(found: &str, want: &str) -> Result<()> {
    if found != want {
        return Err(Error::InvalidConfig(format!("schema `{found}`, expected `{want}`")));
    }
    Ok(())
}

fn rows_of<T: nalgebra::Scalar>(m: &nalgebra::DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows<T: nalgebra::Scalar>(what: &str, rows: &[Vec<T>]) -> Result<nalgebra::DMatrix<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what} has ragged rows")));
    }
    Ok(nalgebra::DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flat_map(|r| r.iter().cloned()),
    ))
}

/// Recipe for drawing a random scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub users: usize,
    pub paths: usize,
    pub pilots: usize,
    pub array: ArrayDims,
    #[serde(default = "default_profile")]
    pub profile: String,
}

fn default_profile() -> String {
    "default".into()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            users: 3,
            paths: 5,
            pilots: 30,
            array: ArrayDims::Planar { rows: 8, cols: 8 },
            profile: default_profile(),
        }
    }
}

impl SceneConfig {
    pub fn draw(&self) -> Result<Scene> {
        let profile = DistributionProfile::by_name(&self.profile)?;
        draw_scene(self.seed, self.users, self.paths, self.pilots, self.array, &profile)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenUser {
    pub paths: Vec<PathComponent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenScene {
    pub constants: PhysicalConstants,
    pub geometry: ArrayGeometry,
    pub reference: ReferenceEmitter,
    /// `K` rows of `P` pilot symbols.
    pub pilots: Vec<Vec<Complex64>>,
    pub users: Vec<FrozenUser>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: String,
    pub config: SceneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<FrozenScene>,
}

impl SceneFile {
    pub fn new(config: SceneConfig, scene: Option<&Scene>) -> Self {
        Self {
            schema: SCENE_SCHEMA.into(),
            config,
            frozen: scene.map(|s| FrozenScene {
                constants: s.constants.clone(),
                geometry: s.geometry.clone(),
                reference: s.reference.clone(),
                pilots: rows_of(&s.pilots),
                users: s.users.iter().map(|p| FrozenUser { paths: p.clone() }).collect(),
            }),
        }
    }

    /// The frozen scene if present, otherwise a fresh draw from the config.
    pub fn scene(&self) -> Result<Scene> {
        check_schema(&self.schema, SCENE_SCHEMA)?;
        match &self.frozen {
            Some(f) => Ok(Scene {
                constants: f.constants.clone(),
                geometry: f.geometry.clone(),
                users: f.users.iter().map(|u| u.paths.clone()).collect(),
                reference: f.reference.clone(),
                pilots: from_rows("pilots", &f.pilots)?,
            }),
            None => self.config.draw(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub schema: String,
    pub array: ArrayDims,
    pub rank_budget: usize,
    /// `N` rows (cells, column-major) of `K` coefficients.
    pub coefficients: Vec<Vec<Complex64>>,
}

impl From<&ChannelSet> for ChannelFile {
    fn from(g: &ChannelSet) -> Self {
        Self {
            schema: CHANNEL_SCHEMA.into(),
            array: g.dims,
            rank_budget: g.rank_budget,
            coefficients: rows_of(&g.coefficients),
        }
    }
}

impl ChannelFile {
    pub fn channel(&self) -> Result<ChannelSet> {
        check_schema(&self.schema, CHANNEL_SCHEMA)?;
        let coefficients = from_rows("coefficients", &self.coefficients)?;
        if coefficients.nrows() != self.array.n_cells() {
            return Err(Error::Dimension(format!(
                "channel has {} rows for {} cells",
                coefficients.nrows(),
                self.array.n_cells()
            )));
        }
        Ok(ChannelSet {
            dims: self.array,
            coefficients,
            rank_budget: self.rank_budget,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub schema: String,
    pub array: ArrayDims,
    pub model: MeasurementModel,
    pub sigma: f64,
    /// `N x P` row lists.
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<Complex64>>,
    pub abs_b: Vec<Vec<f64>>,
    /// `K x P`.
    pub pilots: Vec<Vec<Complex64>>,
}

impl From<&MeasurementSet> for MeasurementFile {
    fn from(m: &MeasurementSet) -> Self {
        Self {
            schema: MEASUREMENT_SCHEMA.into(),
            array: m.dims,
            model: m.model,
            sigma: m.sigma,
            y: rows_of(&m.y),
            z: rows_of(&m.z),
            abs_b: rows_of(&m.abs_b),
            pilots: rows_of(&m.s),
        }
    }
}

impl MeasurementFile {
    pub fn measurements(&self) -> Result<MeasurementSet> {
        check_schema(&self.schema, MEASUREMENT_SCHEMA)?;
        let y: RMatrix = from_rows("y", &self.y)?;
        let z: CMatrix = from_rows("z", &self.z)?;
        let m = MeasurementSet {
            dims: self.array,
            y,
            z,
            abs_b: from_rows("abs_b", &self.abs_b)?,
            s: from_rows("pilots", &self.pilots)?,
            sigma: self.sigma,
            model: self.model,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema: String,
    pub estimator: EstimatorKind,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub nmse: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub estimate: ChannelFile,
}

impl ReportFile {
    pub fn new(estimator: EstimatorKind, report: &EstimateReport, nmse: Option<f64>) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            estimator,
            iterations: report.iterations,
            converged: report.converged,
            final_loss: report.final_loss,
            nmse,
            loss_trace: report.loss_trace.clone(),
            estimate: ChannelFile::from(&report.estimate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrlbFile {
    pub schema: String,
    pub sigma: f64,
    pub crb_trace_closed_form: f64,
    pub crb_trace_consistent: f64,
    pub ratio: f64,
    pub nmse_floor_closed_form: Option<f64>,
    pub nmse_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub pilot_len: usize,
    pub snr_db: f64,
    pub trial: usize,
    pub scene_seed: u64,
    pub noise_seed: u64,
}

/// Full spec plus every per-trial seed of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub schema: String,
    pub spec: ExperimentSpec,
    pub estimators: Vec<EstimatorKind>,
    pub trials: Vec<ManifestTrial>,
}

impl From<&ExperimentResult> for SweepManifest {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            spec: r.spec.clone(),
            estimators: r.spec.estimators.clone(),
            trials: r
                .trials
                .iter()
                .map(|t| ManifestTrial {
                    pilot_len: t.pilot_len,
                    snr_db: t.snr_db,
                    trial: t.trial,
                    scene_seed: t.scene_seed,
                    noise_seed: t.noise_seed,
                })
                .collect(),
        }
    }
}

impl SweepManifest {
    pub fn spec(&self) -> Result<&ExperimentSpec> {
        check_schema(&self.schema, MANIFEST_SCHEMA)?;
        Ok(&self.spec)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, toml::to_string(value)?)?;
    Ok(())
}

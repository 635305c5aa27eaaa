//! Physical constants, array geometry, random scenes and channel synthesis.
//!
//! Every cell index in this crate is linear and column-major: for a planar
//! array with `rows x cols` cells, cell `(i1, i2)` has index `i1 + rows * i2`.
//! Channels are stored as `N x K` matrices (cells by users); the mode-3
//! unfolding used by the 2D estimators is the transpose of that matrix.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob2, CMatrix, RMatrix};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Planck constant, J*s.
    pub h: f64,
    /// Reduced Planck constant, J*s.
    pub hbar: f64,
    /// Electron charge, C.
    pub q: f64,
    /// Bohr radius, m.
    pub a0: f64,
    /// Transition dipole moment, C*m.
    pub mu_eg: [f64; 3],
    /// Transition angular frequency, rad/s.
    pub omega_eg: f64,
}

impl PhysicalConstants {
    /// 52D5/2 -> 53P3/2 transition of the default simulation setup.
    pub fn rydberg_5ghz() -> Self {
        let h = 6.626e-34;
        let q = 1.602e-19;
        let a0 = 5.292e-11;
        Self {
            h,
            hbar: h / (2.0 * PI),
            q,
            a0,
            mu_eg: [0.0, 1785.9 * q * a0, 0.0],
            omega_eg: 2.0 * PI * 5.0e9,
        }
    }

    /// Unit dipole along y and unit hbar, so the coupling of a polarization
    /// vector is just its y component.
    pub fn normalized() -> Self {
        Self {
            h: 2.0 * PI,
            hbar: 1.0,
            mu_eg: [0.0, 1.0, 0.0],
            ..Self::rydberg_5ghz()
        }
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.omega_eg
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::rydberg_5ghz()
    }
}

/// `(mu . eps) / hbar`.
pub fn dipole_coupling(mu_eg: &[f64; 3], eps: &[f64; 3], hbar: f64) -> f64 {
    (mu_eg[0] * eps[0] + mu_eg[1] * eps[1] + mu_eg[2] * eps[2]) / hbar
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrayDims {
    Linear { cells: usize },
    Planar { rows: usize, cols: usize },
}

impl ArrayDims {
    pub fn n_cells(&self) -> usize {
        match *self {
            ArrayDims::Linear { cells } => cells,
            ArrayDims::Planar { rows, cols } => rows * cols,
        }
    }

    /// `(rows, cols)`; a linear array is a single column.
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            ArrayDims::Linear { cells } => (cells, 1),
            ArrayDims::Planar { rows, cols } => (rows, cols),
        }
    }

    pub fn is_planar(&self) -> bool {
        matches!(self, ArrayDims::Planar { .. })
    }

    pub fn label(&self) -> &'static str {
        if self.is_planar() {
            "2D"
        } else {
            "1D"
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.shape();
        if r == 0 || c == 0 {
            return Err(Error::InvalidConfig("array cell counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub dims: ArrayDims,
    /// `[d]` for linear arrays (second entry unused) or `[d1, d2]`, meters.
    pub spacing: [f64; 2],
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(dims: ArrayDims, constants: &PhysicalConstants) -> Self {
        let wavelength = constants.wavelength();
        Self {
            dims,
            spacing: [wavelength / 2.0; 2],
            wavelength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let spacing_ok = match self.dims {
            ArrayDims::Linear { .. } => self.spacing[0] > 0.0,
            ArrayDims::Planar { .. } => self.spacing[0] > 0.0 && self.spacing[1] > 0.0,
        };
        if !spacing_ok || !(self.wavelength > 0.0) {
            return Err(Error::InvalidConfig("spacings and wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Per-element phase increments `(u, v)` for an arrival direction.
    /// Linear arrays only use `u = 2 pi d cos(theta) / lambda`.
    pub fn phase_shifts(&self, elevation: f64, azimuth: f64) -> (f64, f64) {
        let k0 = 2.0 * PI / self.wavelength;
        match self.dims {
            ArrayDims::Linear { .. } => (k0 * self.spacing[0] * elevation.cos(), 0.0),
            ArrayDims::Planar { .. } => (
                k0 * self.spacing[0] * elevation.cos(),
                k0 * self.spacing[1] * elevation.sin() * azimuth.cos(),
            ),
        }
    }

    /// Accumulated phase `i1*u + i2*v` at linear cell index `cell`.
    pub fn cell_phase(&self, cell: usize, u: f64, v: f64) -> f64 {
        let (rows, _) = self.dims.shape();
        let i1 = (cell % rows) as f64;
        let i2 = (cell / rows) as f64;
        i1 * u + i2 * v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    /// One vector for the path, identical at every cell.
    Shared([f64; 3]),
    PerCell(Vec<[f64; 3]>),
}

impl Polarization {
    pub fn at(&self, cell: usize) -> &[f64; 3] {
        match self {
            Polarization::Shared(e) => e,
            Polarization::PerCell(v) => &v[cell],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub gain: Complex64,
    /// Radians in `[0, pi]`.
    pub elevation: f64,
    /// Radians in `[0, 2 pi)`; ignored by linear arrays.
    pub azimuth: f64,
    pub polarization: Polarization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEmitter {
    pub gain: Complex64,
    pub elevation: f64,
    pub azimuth: f64,
    /// One vector per cell.
    pub polarization: Vec<[f64; 3]>,
    /// `s_b[p]` for `p = 0..P`.
    pub symbols: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub constants: PhysicalConstants,
    pub geometry: ArrayGeometry,
    /// `users[k]` holds the paths of user `k`.
    pub users: Vec<Vec<PathComponent>>,
    pub reference: ReferenceEmitter,
    /// `K x P` pilot symbols.
    pub pilots: CMatrix,
}

impl Scene {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn pilot_len(&self) -> usize {
        self.pilots.ncols()
    }

    /// Common path count; fails on ragged user lists.
    pub fn paths_per_user(&self) -> Result<usize> {
        let l = self.users.first().map_or(0, Vec::len);
        if let Some((k, u)) = self.users.iter().enumerate().find(|(_, u)| u.len() != l) {
            return Err(Error::Dimension(format!(
                "user {k} has {} paths, user 0 has {l}",
                u.len()
            )));
        }
        Ok(l)
    }

    fn check_polarizations(&self) -> Result<()> {
        let n = self.geometry.dims.n_cells();
        let bad_path = self.users.iter().flatten().any(|p| match &p.polarization {
            Polarization::Shared(_) => false,
            Polarization::PerCell(v) => v.len() != n,
        });
        if bad_path || self.reference.polarization.len() != n {
            return Err(Error::Dimension(format!(
                "per-cell polarization lists must have {n} entries"
            )));
        }
        Ok(())
    }
}

/// Complex channel coefficients, `N x K` (cells by users).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub dims: ArrayDims,
    pub coefficients: CMatrix,
    pub rank_budget: usize,
}

impl ChannelSet {
    pub fn num_users(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Frontal slice of user `k` as a `rows x cols` matrix.
    pub fn slice(&self, k: usize) -> CMatrix {
        let (rows, cols) = self.dims.shape();
        CMatrix::from_column_slice(rows, cols, self.coefficients.column(k).as_slice())
    }

    /// Mode-3 unfolding `G_(3)`, `K x N`.
    pub fn unfolded(&self) -> CMatrix {
        self.coefficients.transpose()
    }

    pub fn from_unfolded(dims: ArrayDims, g3: &CMatrix, rank_budget: usize) -> Self {
        Self {
            dims,
            coefficients: g3.transpose(),
            rank_budget,
        }
    }

    pub fn power(&self) -> f64 {
        frob2(&self.coefficients)
    }
}

/// Reference field at every (cell, pilot) slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSignals {
    /// `N x P` complex reference `b`.
    pub b: CMatrix,
    /// `exp(-j angle(b))`, unit modulus.
    pub z: CMatrix,
    pub abs_b: RMatrix,
}

fn synth_channel_checked(scene: &Scene) -> Result<ChannelSet> {
    scene.geometry.validate()?;
    let paths = scene.paths_per_user()?;
    scene.check_polarizations()?;
    let n = scene.geometry.dims.n_cells();
    let k = scene.num_users();
    let c = &scene.constants;
    let mut g = CMatrix::zeros(n, k);
    for (user, user_paths) in scene.users.iter().enumerate() {
        for path in user_paths {
            let (u, v) = scene.geometry.phase_shifts(path.elevation, path.azimuth);
            for cell in 0..n {
                let coupling = dipole_coupling(&c.mu_eg, path.polarization.at(cell), c.hbar);
                let phase = scene.geometry.cell_phase(cell, u, v);
                g[(cell, user)] += path.gain * coupling * Complex64::from_polar(1.0, -phase);
            }
        }
    }
    Ok(ChannelSet {
        dims: scene.geometry.dims,
        coefficients: g,
        rank_budget: paths,
    })
}

pub fn synth_channel_1d(scene: &Scene) -> Result<ChannelSet> {
    if scene.geometry.dims.is_planar() {
        return Err(Error::Dimension("synth_channel_1d needs a linear array".into()));
    }
    synth_channel_checked(scene)
}

pub fn synth_channel_2d(scene: &Scene) -> Result<ChannelSet> {
    if !scene.geometry.dims.is_planar() {
        return Err(Error::Dimension("synth_channel_2d needs a planar array".into()));
    }
    synth_channel_checked(scene)
}

/// Dispatches on the array kind.
pub fn synth_channel(scene: &Scene) -> Result<ChannelSet> {
    synth_channel_checked(scene)
}

/// Per-cell reference field without the symbol factor.
fn reference_footprint(scene: &Scene) -> Vec<Complex64> {
    let c = &scene.constants;
    let r = &scene.reference;
    let (u, v) = scene.geometry.phase_shifts(r.elevation, r.azimuth);
    (0..scene.geometry.dims.n_cells())
        .map(|cell| {
            let coupling = dipole_coupling(&c.mu_eg, &r.polarization[cell], c.hbar);
            let phase = scene.geometry.cell_phase(cell, u, v);
            r.gain * coupling * Complex64::from_polar(1.0, -phase)
        })
        .collect()
}

impl ReferenceSignals {
    /// Derives the phase and magnitude matrices from a reference field.
    pub fn from_field(b: CMatrix) -> Result<Self> {
        let (n, p) = b.shape();
        let mut z = CMatrix::zeros(n, p);
        let mut abs_b = RMatrix::zeros(n, p);
        for t in 0..p {
            for cell in 0..n {
                let (mag, arg) = b[(cell, t)].to_polar();
                if mag == 0.0 {
                    return Err(Error::ZeroReference { cell, pilot: t });
                }
                abs_b[(cell, t)] = mag;
                z[(cell, t)] = Complex64::from_polar(1.0, -arg);
            }
        }
        Ok(Self { b, z, abs_b })
    }
}

pub fn synth_reference(scene: &Scene) -> Result<ReferenceSignals> {
    scene.check_polarizations()?;
    let p = scene.pilot_len();
    if scene.reference.symbols.len() != p {
        return Err(Error::Dimension(format!(
            "reference has {} symbols, pilots have length {p}",
            scene.reference.symbols.len()
        )));
    }
    let footprint = reference_footprint(scene);
    let b = CMatrix::from_fn(footprint.len(), p, |cell, t| {
        footprint[cell] * scene.reference.symbols[t]
    });
    ReferenceSignals::from_field(b)
}

/// Random-scene distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub name: String,
    /// Variance of the circular path gains `alpha_{l,k}`.
    pub path_gain_var: f64,
    /// Variance of the circular reference gain `alpha_b`.
    pub reference_gain_var: f64,
    /// Variance of each polarization entry.
    pub polarization_var: f64,
    pub pilot_var: f64,
    /// Draw an independent polarization per cell instead of one per path.
    pub per_cell_polarization: bool,
    /// Use [`PhysicalConstants::normalized`].
    pub normalized: bool,
    /// Reference power margin: the weakest cell's reference power exceeds the
    /// mean per-cell user-channel power by this many dB. `None` keeps
    /// unit-modulus reference symbols.
    pub reference_margin_db: Option<f64>,
}

impl DistributionProfile {
    pub const DEFAULT_REFERENCE_MARGIN_DB: f64 = 30.0;

    pub fn standard() -> Self {
        Self {
            name: "default".into(),
            path_gain_var: 1.0,
            reference_gain_var: 3.5,
            polarization_var: 1.0 / 3.0,
            pilot_var: 1.0,
            per_cell_polarization: false,
            normalized: false,
            reference_margin_db: Some(Self::DEFAULT_REFERENCE_MARGIN_DB),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let base = Self::standard();
        match name {
            "default" => Ok(base),
            "per-cell" => Ok(Self {
                name: name.into(),
                per_cell_polarization: true,
                ..base
            }),
            "normalized" => Ok(Self {
                name: name.into(),
                normalized: true,
                ..base
            }),
            other => Err(Error::UnknownProfile(other.into())),
        }
    }

    pub fn constants(&self) -> PhysicalConstants {
        if self.normalized {
            PhysicalConstants::normalized()
        } else {
            PhysicalConstants::rydberg_5ghz()
        }
    }
}

impl Default for DistributionProfile {
    fn default() -> Self {
        Self::standard()
    }
}

/// `CN(0, var)`.
pub fn complex_normal<R: Rng>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn polarization_vector<R: Rng>(rng: &mut R, var: f64) -> [f64; 3] {
    let s = var.sqrt();
    let mut e = [0.0; 3];
    for x in &mut e {
        *x = s * rng.sample::<f64, _>(StandardNormal);
    }
    e
}

/// Draws a scene. Users are drawn first, then the reference, then pilot
/// columns, so scenes sharing a seed share their channels for every pilot
/// length and shorter pilot blocks are prefixes of longer ones.
pub fn draw_scene(
    seed: u64,
    users: usize,
    paths: usize,
    pilot_len: usize,
    dims: ArrayDims,
    profile: &DistributionProfile,
) -> Result<Scene> {
    if users == 0 || paths == 0 {
        return Err(Error::InvalidConfig("K and L must be >= 1".into()));
    }
    if pilot_len == 0 {
        return Err(Error::InvalidConfig("pilot length must be >= 1".into()));
    }
    dims.validate()?;
    let constants = profile.constants();
    let geometry = ArrayGeometry::half_wavelength(dims, &constants);
    let n = dims.n_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let draw_polarization = |rng: &mut ChaCha8Rng| {
        if profile.per_cell_polarization {
            Polarization::PerCell(
                (0..n)
                    .map(|_| polarization_vector(rng, profile.polarization_var))
                    .collect(),
            )
        } else {
            Polarization::Shared(polarization_vector(rng, profile.polarization_var))
        }
    };

    let mut user_paths = Vec::with_capacity(users);
    for _ in 0..users {
        let mut list = Vec::with_capacity(paths);
        for _ in 0..paths {
            let gain = complex_normal(&mut rng, profile.path_gain_var);
            let elevation = rng.gen_range(0.0..=PI);
            let azimuth = rng.gen_range(0.0..2.0 * PI);
            let polarization = draw_polarization(&mut rng);
            list.push(PathComponent {
                gain,
                elevation,
                azimuth,
                polarization,
            });
        }
        user_paths.push(list);
    }

    let ref_gain = complex_normal(&mut rng, profile.reference_gain_var);
    let ref_elevation = rng.gen_range(0.0..=PI);
    let ref_azimuth = rng.gen_range(0.0..2.0 * PI);
    let ref_polarization: Vec<[f64; 3]> = (0..n)
        .map(|_| polarization_vector(&mut rng, profile.polarization_var))
        .collect();

    let mut pilots = CMatrix::zeros(users, pilot_len);
    let mut symbols = Vec::with_capacity(pilot_len);
    for t in 0..pilot_len {
        for k in 0..users {
            pilots[(k, t)] = complex_normal(&mut rng, profile.pilot_var);
        }
        symbols.push(Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)));
    }

    let mut scene = Scene {
        constants,
        geometry,
        users: user_paths,
        reference: ReferenceEmitter {
            gain: ref_gain,
            elevation: ref_elevation,
            azimuth: ref_azimuth,
            polarization: ref_polarization,
            symbols,
        },
        pilots,
    };

    if let Some(margin_db) = profile.reference_margin_db {
        let channel = synth_channel(&scene)?;
        let mean_cell_power = channel.power() / n as f64 * profile.pilot_var;
        let weakest = reference_footprint(&scene)
            .iter()
            .map(|c| c.norm_sqr())
            .fold(f64::INFINITY, f64::min);
        if weakest > 0.0 && mean_cell_power > 0.0 {
            let beta = (10f64.powf(margin_db / 10.0) * mean_cell_power / weakest).sqrt();
            for s in &mut scene.reference.symbols {
                *s *= beta;
            }
        }
    }
    Ok(scene)
}

/// Rank of every frontal slice, singular values below `rel_tol` times the
/// largest treated as zero.
pub fn slice_ranks(channel: &ChannelSet, rel_tol: f64) -> Vec<usize> {
    (0..channel.num_users())
        .map(|k| crate::linalg::numerical_rank(&channel.slice(k), rel_tol))
        .collect()
}

//! Received-signal simulation for magnitude-only vapor-cell arrays.
//!
//! Two models are provided. The exact model records
//! `y = |sum_k g s + b + n|` with circular noise `n ~ CN(0, sigma^2)`. The
//! linearized model expands the magnitude around a strong reference:
//! `y = Re(z * sum_k g s) + |b| + nbar` with `z = exp(-j angle b)` and real
//! `nbar ~ N(0, sigma^2 / 2)`.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::atomic_model::{complex_normal, ArrayDims, ChannelSet, ReferenceSignals};
use crate::error::{ensure_shape, Error, Result};
use crate::linalg::{CMatrix, RMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementModel {
    Exact,
    Linearized,
}

impl std::str::FromStr for MeasurementModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "linearized" => Ok(Self::Linearized),
            other => Err(Error::InvalidConfig(format!("unknown measurement model `{other}`"))),
        }
    }
}

impl std::fmt::Display for MeasurementModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Linearized => "linearized",
        })
    }
}

/// Measurements of one pilot block. Matrices are `N x P` (cells by pilot
/// slots); the unfolded `P x N` views used by the 2D estimators are their
/// transposes.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub dims: ArrayDims,
    pub y: RMatrix,
    pub z: CMatrix,
    pub abs_b: RMatrix,
    /// `K x P` pilots.
    pub s: CMatrix,
    /// Standard deviation of the complex noise `n`.
    pub sigma: f64,
    pub model: MeasurementModel,
}

impl MeasurementSet {
    pub fn n_cells(&self) -> usize {
        self.y.nrows()
    }

    pub fn pilot_len(&self) -> usize {
        self.y.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.s.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dims.n_cells();
        let p = self.s.ncols();
        ensure_shape("Y", self.y.shape(), (n, p))?;
        ensure_shape("Z", self.z.shape(), (n, p))?;
        ensure_shape("|B|", self.abs_b.shape(), (n, p))?;
        if self.s.nrows() == 0 || p == 0 {
            return Err(Error::Dimension("pilot matrix is empty".into()));
        }
        Ok(())
    }

    /// Complex reference field `b = |b| exp(j angle b)`.
    pub fn reference(&self) -> CMatrix {
        self.z.zip_map(&self.abs_b, |z, a| z.conj() * a)
    }

    /// `Y - |B|`, the de-biased data.
    pub fn debiased(&self) -> RMatrix {
        &self.y - &self.abs_b
    }

    /// Mode-3 unfolded `Y_(3)`, `P x N`.
    pub fn y3(&self) -> RMatrix {
        self.y.transpose()
    }

    pub fn z3(&self) -> CMatrix {
        self.z.transpose()
    }

    pub fn abs_b3(&self) -> RMatrix {
        self.abs_b.transpose()
    }

    /// Writes the columnar export `i,p,y,re_z,im_z,abs_b` (zero-based cell and
    /// pilot indices, cells in column-major order).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "p", "y", "re_z", "im_z", "abs_b"])?;
        for p in 0..self.pilot_len() {
            for i in 0..self.n_cells() {
                let z = self.z[(i, p)];
                w.write_record(&[
                    i.to_string(),
                    p.to_string(),
                    self.y[(i, p)].to_string(),
                    z.re.to_string(),
                    z.im.to_string(),
                    self.abs_b[(i, p)].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    SnrDb(f64),
    Sigma(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn sigma(&self, g: &ChannelSet, s: &CMatrix) -> Result<f64> {
        match self.level {
            NoiseLevel::Sigma(sigma) if sigma >= 0.0 => Ok(sigma),
            NoiseLevel::Sigma(sigma) => Err(Error::InvalidConfig(format!("negative sigma {sigma}"))),
            NoiseLevel::SnrDb(db) => sigma_from_snr(g, s, db),
        }
    }
}

/// `CN(0, sigma^2)` samples, drawn in column-major order.
pub fn complex_noise(rows: usize, cols: usize, sigma: f64, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let var = sigma * sigma;
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(&mut rng, var))
}

/// `N(0, std^2)` samples, drawn in column-major order.
pub fn real_noise(rows: usize, cols: usize, std: f64, seed: u64) -> RMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn signal(g: &ChannelSet, s: &CMatrix, refs: &ReferenceSignals) -> Result<CMatrix> {
    let n = g.dims.n_cells();
    ensure_shape("G", g.coefficients.shape(), (n, s.nrows()))?;
    ensure_shape("B", refs.b.shape(), (n, s.ncols()))?;
    Ok(&g.coefficients * s)
}

pub fn measure_exact_with_noise(
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
    sigma: f64,
    noise: &CMatrix,
) -> Result<MeasurementSet> {
    let a = signal(g, s, refs)?;
    ensure_shape("noise", noise.shape(), a.shape())?;
    let y = RMatrix::from_fn(a.nrows(), a.ncols(), |i, p| {
        (a[(i, p)] + refs.b[(i, p)] + noise[(i, p)]).norm()
    });
    Ok(MeasurementSet {
        dims: g.dims,
        y,
        z: refs.z.clone(),
        abs_b: refs.abs_b.clone(),
        s: s.clone(),
        sigma,
        model: MeasurementModel::Exact,
    })
}

pub fn measure_exact(
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    check_sigma(sigma)?;
    let noise = complex_noise(g.dims.n_cells(), s.ncols(), sigma, seed);
    measure_exact_with_noise(g, s, refs, sigma, &noise)
}

pub fn measure_linearized_with_noise(
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
    sigma: f64,
    noise: &RMatrix,
) -> Result<MeasurementSet> {
    let a = signal(g, s, refs)?;
    ensure_shape("noise", noise.shape(), a.shape())?;
    let y = RMatrix::from_fn(a.nrows(), a.ncols(), |i, p| {
        (refs.z[(i, p)] * a[(i, p)]).re + refs.abs_b[(i, p)] + noise[(i, p)]
    });
    Ok(MeasurementSet {
        dims: g.dims,
        y,
        z: refs.z.clone(),
        abs_b: refs.abs_b.clone(),
        s: s.clone(),
        sigma,
        model: MeasurementModel::Linearized,
    })
}

pub fn measure_linearized(
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    check_sigma(sigma)?;
    let noise = real_noise(g.dims.n_cells(), s.ncols(), sigma / 2f64.sqrt(), seed);
    measure_linearized_with_noise(g, s, refs, sigma, &noise)
}

pub fn measure(
    model: MeasurementModel,
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    match model {
        MeasurementModel::Exact => measure_exact(g, s, refs, sigma, seed),
        MeasurementModel::Linearized => measure_linearized(g, s, refs, sigma, seed),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )))
    }
}

fn linearization_residuals(
    g: &ChannelSet,
    s: &CMatrix,
    refs: &ReferenceSignals,
) -> Result<impl Iterator<Item = (f64, f64)>> {
    let a = signal(g, s, refs)?;
    let b = refs.b.clone();
    Ok((0..a.len()).map(move |idx| {
        let (ai, bi) = (a[idx], b[idx]);
        let exact = (ai + bi).norm();
        let linear = bi.norm() + (ai * (bi.conj() / bi.norm())).re;
        ((exact - linear).abs(), bi.norm())
    }))
}

/// Largest absolute error of the first-order expansion,
/// `max | |a+b| - (|b| + Re(exp(-j angle b) a)) |`, noise-free.
/// Scales like `|a|^2 / (2|b|)`.
pub fn linearization_gap(g: &ChannelSet, s: &CMatrix, refs: &ReferenceSignals) -> Result<f64> {
    Ok(linearization_residuals(g, s, refs)?
        .map(|(gap, _)| gap)
        .fold(0.0, f64::max))
}

/// Same residual divided by `|b|`; scales like `|a|^2 / (2|b|^2)`.
pub fn relative_linearization_gap(g: &ChannelSet, s: &CMatrix, refs: &ReferenceSignals) -> Result<f64> {
    Ok(linearization_residuals(g, s, refs)?
        .map(|(gap, b)| gap / b)
        .fold(0.0, f64::max))
}

/// Noise level for a target SNR, defined on the user-signal component only:
/// `sigma^2 = mean |G S|^2 / 10^(snr/10)`.
pub fn sigma_from_snr(g: &ChannelSet, s: &CMatrix, snr_db: f64) -> Result<f64> {
    ensure_shape("G", g.coefficients.shape(), (g.dims.n_cells(), s.nrows()))?;
    let a = &g.coefficients * s;
    let power = a.iter().map(Complex64::norm_sqr).sum::<f64>() / a.len() as f64;
    if !(power > 0.0) {
        return Err(Error::ZeroSignalPower);
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic_model::{draw_scene, synth_channel, synth_reference, DistributionProfile};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_setup(g: Complex64, s: Complex64, b: Complex64) -> (ChannelSet, CMatrix, ReferenceSignals) {
        let channel = ChannelSet {
            dims: ArrayDims::Linear { cells: 1 },
            coefficients: CMatrix::from_element(1, 1, g),
            rank_budget: 1,
        };
        let refs = ReferenceSignals::from_field(CMatrix::from_element(1, 1, b)).unwrap();
        (channel, CMatrix::from_element(1, 1, s), refs)
    }

    fn random_setup(seed: u64, dims: ArrayDims) -> (ChannelSet, CMatrix, ReferenceSignals) {
        let scene = draw_scene(seed, 3, 5, 12, dims, &DistributionProfile::standard()).unwrap();
        let g = synth_channel(&scene).unwrap();
        let refs = synth_reference(&scene).unwrap();
        (g, scene.pilots, refs)
    }

    #[test]
    fn zero_channel_measures_reference() {
        let (mut g, s, refs) = random_setup(1, ArrayDims::Linear { cells: 6 });
        g.coefficients.fill(c(0.0, 0.0));
        let exact = measure_exact(&g, &s, &refs, 0.0, 9).unwrap();
        let lin = measure_linearized(&g, &s, &refs, 0.0, 9).unwrap();
        for i in 0..exact.y.len() {
            assert_relative_eq!(exact.y[i], refs.abs_b[i], max_relative = 1e-15);
            assert_relative_eq!(lin.y[i], refs.abs_b[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn exact_cancellation() {
        let (g, s, refs) = scalar_setup(c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0));
        let m = measure_exact(&g, &s, &refs, 0.0, 0).unwrap();
        assert_eq!(m.y[(0, 0)], 0.0);
    }

    #[test]
    fn exact_matches_elementwise_oracle() {
        let (g, s, refs) = random_setup(2, ArrayDims::Planar { rows: 3, cols: 2 });
        let sigma = 1e7;
        let m = measure_exact(&g, &s, &refs, sigma, 77).unwrap();
        let noise = complex_noise(6, 12, sigma, 77);
        for i in 0..6 {
            for p in 0..12 {
                let mut acc = refs.b[(i, p)] + noise[(i, p)];
                for k in 0..3 {
                    acc += g.coefficients[(i, k)] * s[(k, p)];
                }
                assert_relative_eq!(m.y[(i, p)], acc.norm(), max_relative = 1e-13);
            }
        }
        assert!(m.y.iter().all(|&y| y >= 0.0));
    }

    #[test]
    fn linearized_real_case_is_affine() {
        let g = ChannelSet {
            dims: ArrayDims::Linear { cells: 2 },
            coefficients: CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(-0.5, 0.0), c(0.25, 0.0)]),
            rank_budget: 1,
        };
        let s = CMatrix::from_row_slice(
            2,
            3,
            &[
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(2.0, 0.0),
                c(3.0, 0.0),
                c(-1.0, 0.0),
                c(1.0, 0.0),
            ],
        );
        let refs = ReferenceSignals::from_field(CMatrix::from_element(2, 3, c(10.0, 0.0))).unwrap();
        let m = measure_linearized(&g, &s, &refs, 0.0, 0).unwrap();
        let gs = &g.coefficients * &s;
        for i in 0..m.y.len() {
            assert_relative_eq!(m.y[i], gs[i].re + 10.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn linearized_matches_scalar_formula() {
        let (g, s, refs) = random_setup(3, ArrayDims::Linear { cells: 5 });
        let sigma = 3e7;
        let m = measure_linearized(&g, &s, &refs, sigma, 5).unwrap();
        let noise = real_noise(5, 12, sigma / 2f64.sqrt(), 5);
        for i in 0..5 {
            for p in 0..12 {
                let mut a = c(0.0, 0.0);
                for k in 0..3 {
                    a += g.coefficients[(i, k)] * s[(k, p)];
                }
                let b = refs.b[(i, p)];
                let want = (Complex64::from_polar(1.0, -b.arg()) * a).re + b.norm() + noise[(i, p)];
                assert_relative_eq!(m.y[(i, p)], want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn linearized_is_affine_in_channel() {
        let (g1, s, refs) = random_setup(4, ArrayDims::Linear { cells: 4 });
        let (mut g2, _, _) = random_setup(5, ArrayDims::Linear { cells: 4 });
        g2.coefficients = g2.coefficients.columns(0, 3).into_owned();
        let mut sum = g1.clone();
        sum.coefficients += &g2.coefficients;
        let y = |g: &ChannelSet| measure_linearized(g, &s, &refs, 0.0, 0).unwrap().debiased();
        let lhs = y(&sum);
        let rhs = y(&g1) + y(&g2);
        let scale = lhs.amax();
        assert!((lhs - rhs).amax() <= 1e-12 * scale);
    }

    #[test]
    fn exact_is_invariant_under_global_rotation() {
        let (g, s, refs) = random_setup(6, ArrayDims::Linear { cells: 4 });
        let rot = Complex64::from_polar(1.0, 0.7);
        let mut g_rot = g.clone();
        g_rot.coefficients *= rot;
        let refs_rot = ReferenceSignals::from_field(refs.b.map(|b| b * rot)).unwrap();
        let a = measure_exact(&g, &s, &refs, 0.0, 0).unwrap();
        let b = measure_exact(&g_rot, &s, &refs_rot, 0.0, 0).unwrap();
        for i in 0..a.y.len() {
            assert_relative_eq!(a.y[i], b.y[i], max_relative = 1e-13);
        }
    }

    #[test]
    fn gap_examples() {
        let (g, s, refs) = scalar_setup(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        assert_eq!(linearization_gap(&g, &s, &refs).unwrap(), 0.0);
        let (g, s, refs) = scalar_setup(c(0.01, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        assert!(linearization_gap(&g, &s, &refs).unwrap() < 1e-15);
        // sqrt(1 + 1e-4) - 1
        let (g, s, refs) = scalar_setup(c(0.0, 0.01), c(1.0, 0.0), c(1.0, 0.0));
        let gap = linearization_gap(&g, &s, &refs).unwrap();
        assert_relative_eq!(gap, 4.999_875_006e-5, max_relative = 1e-8);
        assert_relative_eq!(
            relative_linearization_gap(&g, &s, &refs).unwrap(),
            gap,
            max_relative = 1e-15
        );
    }

    #[test]
    fn gap_is_second_order_in_reference() {
        let (g, s, refs) = random_setup(8, ArrayDims::Linear { cells: 8 });
        let scaled = |f: f64| ReferenceSignals::from_field(refs.b.map(|b| b * f)).unwrap();
        let abs1 = linearization_gap(&g, &s, &scaled(1.0)).unwrap();
        let abs2 = linearization_gap(&g, &s, &scaled(2.0)).unwrap();
        let rel1 = relative_linearization_gap(&g, &s, &scaled(1.0)).unwrap();
        let rel2 = relative_linearization_gap(&g, &s, &scaled(2.0)).unwrap();
        assert!((abs1 / abs2 - 2.0).abs() < 0.2);
        assert!((rel1 / rel2 - 4.0).abs() < 0.4);
    }

    #[test]
    fn exact_converges_to_linearized_as_reference_grows() {
        let (g, s, refs) = random_setup(10, ArrayDims::Linear { cells: 8 });
        let sigma = sigma_from_snr(&g, &s, 10.0).unwrap();
        let noise = complex_noise(8, 12, sigma, 3);
        let mut last = f64::INFINITY;
        for octave in 0..4 {
            let f = 2f64.powi(octave);
            let r = ReferenceSignals::from_field(refs.b.map(|b| b * f)).unwrap();
            let nbar = RMatrix::from_fn(8, 12, |i, p| (r.z[(i, p)] * noise[(i, p)]).re);
            let exact = measure_exact_with_noise(&g, &s, &r, sigma, &noise).unwrap();
            let lin = measure_linearized_with_noise(&g, &s, &r, sigma, &nbar).unwrap();
            let diff = (exact.y - lin.y).amax();
            assert!(diff < last);
            last = diff;
        }
    }

    #[test]
    fn snr_examples() {
        let (g, s, _) = scalar_setup(c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0));
        assert_relative_eq!(sigma_from_snr(&g, &s, 0.0).unwrap(), 1.0);
        assert_relative_eq!(sigma_from_snr(&g, &s, 10.0).unwrap().powi(2), 0.1, max_relative = 1e-14);
        assert!(sigma_from_snr(&g, &s, 400.0).unwrap() < 1e-19);
        let (g0, s0, _) = scalar_setup(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0));
        assert!(matches!(sigma_from_snr(&g0, &s0, 10.0), Err(Error::ZeroSignalPower)));
    }

    #[test]
    fn shape_mismatch() {
        let (g, _, refs) = random_setup(12, ArrayDims::Linear { cells: 4 });
        let bad = CMatrix::zeros(2, 12);
        assert!(matches!(
            measure_exact(&g, &bad, &refs, 0.0, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn csv_export_layout() {
        let (g, s, refs) = random_setup(13, ArrayDims::Planar { rows: 2, cols: 2 });
        let m = measure_exact(&g, &s, &refs, 0.0, 0).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,p,y,re_z,im_z,abs_b");
        assert_eq!(lines.len(), 1 + 4 * 12);
        let second: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(&second[..2], &["1", "0"]);
        assert_eq!(second[2].parse::<f64>().unwrap(), m.y[(1, 0)]);
    }
}

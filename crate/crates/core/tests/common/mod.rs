#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rydberg_core::atomic_model::{complex_normal, draw_scene, synth_channel, synth_reference, ReferenceSignals};
use rydberg_core::linalg::{CMatrix, RMatrix};
use rydberg_core::measurement::{measure, MeasurementModel};
use rydberg_core::{ArrayDims, ChannelSet, Complex64, DistributionProfile, MeasurementSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_c(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
}

/// Unit-scale random instance with a reference field about 10x the signal.
pub fn random_instance(
    seed: u64,
    dims: ArrayDims,
    k: usize,
    p: usize,
    sigma: f64,
    model: MeasurementModel,
) -> (MeasurementSet, ChannelSet) {
    let mut rng = rng(seed);
    let n = dims.n_cells();
    let g = ChannelSet {
        dims,
        coefficients: random_c(&mut rng, n, k),
        rank_budget: 1,
    };
    let s = random_c(&mut rng, k, p);
    let b = CMatrix::from_fn(n, p, |_, _| {
        Complex64::from_polar(rng.gen_range(8.0..12.0), rng.gen_range(-3.1..3.1))
    });
    let refs = ReferenceSignals::from_field(b).unwrap();
    let m = measure(model, &g, &s, &refs, sigma, seed.wrapping_add(99)).unwrap();
    (m, g)
}

/// Scene drawn from the default profile, measured at the given sigma.
pub fn scene_instance(
    seed: u64,
    dims: ArrayDims,
    k: usize,
    paths: usize,
    p: usize,
    sigma: f64,
    model: MeasurementModel,
) -> (MeasurementSet, ChannelSet) {
    let scene = draw_scene(seed, k, paths, p, dims, &DistributionProfile::standard()).unwrap();
    let g = synth_channel(&scene).unwrap();
    let refs = synth_reference(&scene).unwrap();
    let m = measure(model, &g, &scene.pilots, &refs, sigma, seed ^ 0xABCD).unwrap();
    (m, g)
}

/// Central finite differences of `f` over every real coordinate of `g`,
/// packed as `dRe + j dIm`.
pub fn finite_difference(g: &CMatrix, h: f64, f: impl Fn(&CMatrix) -> f64) -> CMatrix {
    let mut out = CMatrix::zeros(g.nrows(), g.ncols());
    let mut probe = g.clone();
    for idx in 0..g.len() {
        let base = probe[idx];
        let mut part = [0.0; 2];
        for (slot, unit) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
            probe[idx] = base + unit;
            let up = f(&probe);
            probe[idx] = base - unit;
            let down = f(&probe);
            part[slot] = (up - down) / (2.0 * h);
        }
        probe[idx] = base;
        out[idx] = Complex64::new(part[0], part[1]);
    }
    out
}

/// Largest coordinate-wise relative error between two packed gradients.
pub fn max_rel_err(fd: &CMatrix, analytic: &CMatrix) -> f64 {
    let floor = 1e-9 * analytic.iter().map(|x| x.norm()).fold(0.0, f64::max);
    fd.iter()
        .zip(analytic.iter())
        .flat_map(|(a, b)| [(a.re, b.re), (a.im, b.im)])
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}

pub fn real_from(rows: usize, cols: usize, data: &[f64]) -> RMatrix {
    RMatrix::from_row_slice(rows, cols, data)
}

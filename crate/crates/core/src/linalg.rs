//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub fn frob2(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum()
}

pub fn frob2_real(m: &RMatrix) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub fn diff_frob2(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Thin SVD held as two factors `A = X Y^H`, columns sorted by decreasing
/// singular value. One factor is orthonormal, the other carries the scale.
///
/// One-sided Jacobi (Hestenes) on the taller orientation. nalgebra's
/// bidiagonal SVD returns wrong factors on some rank-deficient inputs, which
/// is exactly the regime the rank projection lives in.
#[derive(Clone, Debug)]
pub struct JacobiSvd {
    x: CMatrix,
    y: CMatrix,
    pub singular_values: Vec<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 80;

impl JacobiSvd {
    pub fn new(a: &CMatrix) -> Self {
        let transposed = a.nrows() < a.ncols();
        let mut w = if transposed { a.adjoint() } else { a.clone() };
        let n = w.ncols();
        let mut v = CMatrix::identity(n, n);
        for _ in 0..JACOBI_MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha = w.column(p).norm_squared();
                    let beta = w.column(q).norm_squared();
                    let gamma = w.column(p).dotc(&w.column(q));
                    let g = gamma.norm();
                    if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let phase = gamma.conj() / g;
                    let zeta = (beta - alpha) / (2.0 * g);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    rotate(&mut w, p, q, phase, c, s);
                    rotate(&mut v, p, q, phase, c, s);
                }
            }
            if !rotated {
                break;
            }
        }
        let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        let w = CMatrix::from_fn(w.nrows(), n, |i, j| w[(i, order[j])]);
        let v = CMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
        let singular_values = order.iter().map(|&j| norms[j]).collect();
        // A = W V^H, or A^H = W V^H when transposed
        let (x, y) = if transposed { (v, w) } else { (w, v) };
        Self { x, y, singular_values }
    }

    /// Best rank-`rank` approximation (Eckart-Young).
    pub fn truncate(&self, rank: usize) -> CMatrix {
        let r = rank.min(self.singular_values.len());
        let x = self.x.columns(0, r);
        let y = self.y.columns(0, r);
        x * y.adjoint()
    }
}

/// `[w_p, w_q] <- [c w_p - s e w_q, s w_p + c e w_q]` with `e = phase`.
fn rotate(m: &mut CMatrix, p: usize, q: usize, phase: Complex64, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)] * phase;
        m[(i, p)] = a * c - b * s;
        m[(i, q)] = a * s + b * c;
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sorted_singular_values(m)[0]
}

/// Singular values sorted in descending order.
pub fn sorted_singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    JacobiSvd::new(m).singular_values
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    let sv = sorted_singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rel_tol * top).count(),
        _ => 0,
    }
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (lo, hi) = xs.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

pub(crate) fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 249_750.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn rank_of_outer_product() {
        let a = CMatrix::from_fn(4, 1, |i, _| Complex64::new(i as f64 + 1.0, 0.5));
        let b = CMatrix::from_fn(1, 5, |_, j| Complex64::new(1.0, j as f64));
        assert_eq!(numerical_rank(&(&a * &b), 1e-12), 1);
        assert_eq!(numerical_rank(&CMatrix::zeros(3, 3), 1e-12), 0);
    }

    fn lcg_matrix(seed: u64, r: usize, c: usize) -> CMatrix {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        CMatrix::from_fn(r, c, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn jacobi_reconstructs_rank_deficient_inputs() {
        for (seed, (r, c, k)) in [
            (4, 5, 1),
            (5, 4, 2),
            (8, 8, 5),
            (3, 7, 1),
            (8, 8, 1),
            (6, 6, 2),
            (8, 8, 8),
        ]
        .into_iter()
        .enumerate()
        {
            let a = lcg_matrix(seed as u64, r, k) * lcg_matrix(seed as u64 + 50, k, c);
            let svd = JacobiSvd::new(&a);
            let full = svd.truncate(r.min(c));
            assert!((&full - &a).norm() < 1e-13 * a.norm());
            assert!((&svd.truncate(k) - &a).norm() < 1e-13 * a.norm());
            assert!(svd.singular_values[k.min(r.min(c)) - 1] > 1e-3);
            if k < r.min(c) {
                assert!(svd.singular_values[k] < 1e-14 * svd.singular_values[0]);
            }
        }
    }

    #[test]
    fn jacobi_values_match_the_hermitian_spectrum() {
        let a = lcg_matrix(9, 6, 4);
        let eig = (a.adjoint() * &a).symmetric_eigenvalues();
        let mut expect: Vec<f64> = eig.iter().map(|l| l.max(0.0).sqrt()).collect();
        expect.sort_by(|x, y| y.total_cmp(x));
        for (got, want) in sorted_singular_values(&a).iter().zip(expect) {
            assert!((got - want).abs() < 1e-12 * want.max(1.0));
        }
        let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 3.0),
            Complex64::new(2.0, 0.0),
        ]));
        assert_eq!(sorted_singular_values(&diag), vec![3.0, 2.0, 1.0]);
    }
}

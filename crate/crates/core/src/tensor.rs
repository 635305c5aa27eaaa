//! Third-order tensors and mode-3 unfolding.
//!
//! Storage is column-major with the first index fastest: element
//! `(i1, i2, i3)` lives at `i1 + n1 * (i2 + n2 * i3)`. The mode-3 unfolding
//! is the `n3 x (n1 * n2)` matrix whose entry `(i3, i1 + n1 * i2)` equals
//! `T(i1, i2, i3)`.

use nalgebra::{DMatrix, Scalar};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "tensor {:?} needs {} elements, got {}",
                dims,
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i3 in 0..dims[2] {
            for i2 in 0..dims[1] {
                for i1 in 0..dims[0] {
                    data.push(f(i1, i2, i3));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> &T {
        &self.data[i1 + self.dims[0] * (i2 + self.dims[1] * i3)]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Frontal slice at third index `i3`.
    pub fn frontal_slice(&self, i3: usize) -> DMatrix<T> {
        let len = self.dims[0] * self.dims[1];
        DMatrix::from_column_slice(self.dims[0], self.dims[1], &self.data[i3 * len..(i3 + 1) * len])
    }
}

pub fn unfold3<T: Scalar>(t: &Tensor3<T>) -> DMatrix<T> {
    let [n1, n2, n3] = t.dims;
    let cols = n1 * n2;
    // frontal slices are contiguous columns of the transpose
    DMatrix::from_column_slice(cols, n3, &t.data).transpose()
}

pub fn fold3<T: Scalar>(m: &DMatrix<T>, dims: [usize; 3]) -> Result<Tensor3<T>> {
    if m.nrows() != dims[2] || m.ncols() != dims[0] * dims[1] {
        return Err(Error::Dimension(format!(
            "cannot fold {}x{} into {:?}",
            m.nrows(),
            m.ncols(),
            dims
        )));
    }
    let data = m.transpose().as_slice().to_vec();
    Ok(Tensor3 { dims, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_unfold_is_column_major() {
        // frontal slice [[1, 3], [2, 4]]
        let t = Tensor3::from_vec([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(*t.get(0, 1, 0), 3.0);
        let m = unfold3(&t);
        assert_eq!(m.shape(), (1, 4));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn index_formula_against_loops() {
        let t = Tensor3::from_fn([3, 4, 5], |a, b, c| (100 * a + 10 * b + c) as f64);
        let m = unfold3(&t);
        for i1 in 0..3 {
            for i2 in 0..4 {
                for i3 in 0..5 {
                    assert_eq!(m[(i3, i1 + 3 * i2)], *t.get(i1, i2, i3));
                }
            }
        }
        assert_eq!(fold3(&m, [3, 4, 5]).unwrap(), t);
        assert_eq!(t.frontal_slice(2)[(1, 3)], *t.get(1, 3, 2));
    }

    #[test]
    fn fold_rejects_bad_dims() {
        let m = DMatrix::<f64>::zeros(2, 6);
        assert!(fold3(&m, [2, 2, 2]).is_err());
        assert!(Tensor3::from_vec([2, 2, 2], vec![0.0; 7]).is_err());
    }

    proptest! {
        #[test]
        fn fold_inverts_unfold(n1 in 1usize..5, n2 in 1usize..5, n3 in 1usize..5, seed in any::<u64>()) {
            let t = Tensor3::from_fn([n1, n2, n3], |a, b, c| {
                ((seed ^ (a * 31 + b * 17 + c * 7) as u64) % 1000) as f64
            });
            let m = unfold3(&t);
            prop_assert_eq!(fold3(&m, [n1, n2, n3]).unwrap(), t);
        }
    }
}

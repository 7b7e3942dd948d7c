//! Thin helpers around nalgebra's dense solvers.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Result, ScmlError};

#[allow(dead_code)]
pub(crate) fn to_array2(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Symmetric eigendecomposition with eigenpairs sorted by decreasing
/// eigenvalue. Column `j` of the returned matrix pairs with value `j`.
pub(crate) fn sym_eigen_desc(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ScmlError::Numerical("non-finite entry in symmetric matrix".into()));
    }
    let n = m.nrows();
    // symmetrize against accumulated rounding before decomposing
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(m).unwrap();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        assert!((vecs[(1, 0)] - 1.0).abs() < 1e-12);
    }
}

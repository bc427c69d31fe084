//! Dense eigendecomposition references for the sparse spectral code.
//!
//! These routines share nothing with the recurrence path: filters are applied
//! in the eigenbasis with Chebyshev polynomials in closed trigonometric form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::tensor::SparseMatrix;

pub fn to_dense(m: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.rows(), m.cols());
    for (r, c, v) in m.entries() {
        d[(r, c)] = v;
    }
    d
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn eigenvalues(m: &SparseMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(to_dense(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `T_k(λ)` without the recurrence.
pub fn chebyshev_closed_form(k: usize, lambda: f64) -> f64 {
    let k = k as f64;
    if lambda.abs() <= 1.0 {
        (k * lambda.acos()).cos()
    } else if lambda > 1.0 {
        (k * lambda.acosh()).cosh()
    } else {
        let s = if (k as i64) % 2 == 0 { 1.0 } else { -1.0 };
        s * (k * (-lambda).acosh()).cosh()
    }
}

/// `y_j = Σ_i U diag(Σ_k θ_k[i][j] T_k(λ)) Uᵀ x_i + b_j` for `x` `[n, c_in]`
/// row-major and `theta` `[K, c_in, c_out]` row-major.
pub fn cheb_filter(
    l_scaled: &SparseMatrix,
    theta: &[f64],
    bias: &[f64],
    k: usize,
    c_in: usize,
    c_out: usize,
    x: &[f64],
) -> Vec<f64> {
    let n = l_scaled.rows();
    let eig = SymmetricEigen::new(to_dense(l_scaled));
    let u = &eig.eigenvectors;
    let tk: Vec<Vec<f64>> = (0..k)
        .map(|kk| {
            eig.eigenvalues
                .iter()
                .map(|&l| chebyshev_closed_form(kk, l))
                .collect()
        })
        .collect();
    let mut y = vec![0.0; n * c_out];
    for i in 0..c_in {
        let xi = DVector::from_iterator(n, (0..n).map(|v| x[v * c_in + i]));
        let spectral = u.transpose() * xi;
        for j in 0..c_out {
            let g = DVector::from_iterator(
                n,
                (0..n).map(|e| {
                    (0..k)
                        .map(|kk| theta[(kk * c_in + i) * c_out + j] * tk[kk][e])
                        .sum::<f64>()
                        * spectral[e]
                }),
            );
            let yi = u * g;
            for v in 0..n {
                y[v * c_out + j] += yi[v];
            }
        }
    }
    for v in 0..n {
        for j in 0..c_out {
            y[v * c_out + j] += bias[j];
        }
    }
    y
}

/// Dense `I − D^{-1/2} A D^{-1/2}` computed entry by entry.
pub fn laplacian_dense(adjacency: &SparseMatrix) -> DMatrix<f64> {
    let a = to_dense(adjacency);
    let n = a.nrows();
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - a[(i, j)] / (deg[i] * deg[j]).sqrt()
    })
}

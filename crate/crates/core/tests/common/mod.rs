#![allow(dead_code)]

use hrpca::FeatureMatrix;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rng: &mut impl Rng, n: usize, d: usize) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

pub fn to_dmatrix(x: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.n_rows(), x.n_cols(), x.values())
}

/// Eigen-decomposition of `XᵀX`, eigenpairs sorted by descending eigenvalue.
pub fn gram_eigen(x: &FeatureMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let a = to_dmatrix(x);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.ncols(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Singular values via square roots of the Gram eigenvalues, top `min(n, d)`.
pub fn oracle_singular_values(x: &FeatureMatrix) -> Vec<f64> {
    let (values, _) = gram_eigen(x);
    values
        .into_iter()
        .take(x.n_rows().min(x.n_cols()))
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

/// `V_r V_rᵀ` for the leading `r` Gram eigenvectors.
pub fn oracle_projector(x: &FeatureMatrix, r: usize) -> DMatrix<f64> {
    let (_, v) = gram_eigen(x);
    let vr = v.columns(0, r).into_owned();
    &vr * vr.transpose()
}

pub fn projector(basis: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(d, d);
    for u in basis {
        let u = DMatrix::from_column_slice(d, 1, u);
        p += &u * u.transpose();
    }
    p
}

//! Dense linear algebra used by every other module: column centering, a
//! deterministic truncated SVD, explained-variance rank selection and row
//! norms.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration applied to the columns
//! of the data matrix. It never forms the Gram matrix, so small singular
//! values keep full relative accuracy, and it involves no randomness: the
//! same input always produces the same bits on a given platform.

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Default convergence tolerance for [`truncated_svd`].
pub const DEFAULT_SVD_TOL: f64 = 1e-10;
/// Default sweep limit for [`truncated_svd`].
pub const DEFAULT_SVD_MAX_ITERS: usize = 1000;
/// Singular values below this fraction of the largest one count as zero.
pub const NUMERICAL_RANK_RTOL: f64 = 1e-10;
/// Jacobi leaves columns alone once their norm drops below this fraction of
/// the Frobenius norm; they are round-off left behind by rank deficiency.
const NEGLIGIBLE_COLUMN_RTOL: f64 = 1e-13;

/// Top-`rank` right singular vectors and singular values of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// Principal directions, one unit vector of length `n_cols` per mode.
    pub basis: Vec<Vec<f64>>,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

impl SvdResult {
    /// Largest absolute entry of `UᵀU − I`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.basis)
    }
}

pub(crate) fn orthonormality_error(basis: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for (a, u) in basis.iter().enumerate() {
        for (b, v) in basis.iter().enumerate() {
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot(u, v) - target).abs());
        }
    }
    worst
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Subtracts each column's mean. Returns the centered matrix and the means.
pub fn center_columns(x: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<f64>)> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(Error::invalid_input("cannot center an empty matrix"));
    }
    let n = x.n_rows() as f64;
    let mut means = vec![0.0; x.n_cols()];
    for row in x.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let values = x
        .rows()
        .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m))
        .collect();
    Ok((x.with_values(values), means))
}

/// Euclidean norm of every row.
pub fn row_l2_norms(x: &FeatureMatrix) -> Vec<f64> {
    x.rows().map(l2_norm).collect()
}

/// Smallest `r` whose leading squared singular values hold at least `cutoff`
/// of the total energy.
pub fn rank_by_explained_variance(singular_values: &[f64], cutoff: f64) -> Result<usize> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid_config(format!(
            "explained-variance cutoff {cutoff} outside (0, 1]"
        )));
    }
    if singular_values.is_empty() {
        return Err(Error::invalid_input("empty spectrum"));
    }
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid_input(
            "singular values must be finite and non-negative",
        ));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid_input(
            "singular values must be sorted descending",
        ));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let mut cumulative = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        cumulative += s * s;
        if cumulative >= cutoff * total {
            return Ok(i + 1);
        }
    }
    // Rounding kept the running sum just short of the target: every nonzero mode is needed.
    Ok(singular_values.iter().filter(|s| **s > 0.0).count())
}

/// All `min(n_rows, n_cols)` singular values, sorted descending.
pub fn singular_values(x: &FeatureMatrix) -> Result<Vec<f64>> {
    let decomposition = jacobi_svd(x, DEFAULT_SVD_TOL, DEFAULT_SVD_MAX_ITERS)?;
    let k = x.n_rows().min(x.n_cols());
    Ok(decomposition.into_iter().take(k).map(|(s, _)| s).collect())
}

/// Top singular triplets of `x` (right vectors only).
///
/// Returns `r = min(max_rank, numerical rank)` modes, where a singular value
/// counts toward the numerical rank when it is at least
/// [`NUMERICAL_RANK_RTOL`] times the largest. Each basis vector is signed so
/// its largest-magnitude entry is positive (first such entry on ties).
/// `max_iters` bounds the number of Jacobi sweeps.
pub fn truncated_svd(
    x: &FeatureMatrix,
    max_rank: usize,
    tol: f64,
    max_iters: usize,
) -> Result<SvdResult> {
    let limit = x.n_rows().min(x.n_cols());
    if max_rank == 0 || max_rank > limit {
        return Err(Error::invalid_config(format!(
            "max_rank {max_rank} outside 1..={limit}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid_config(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let modes = jacobi_svd(x, tol, max_iters)?;
    let top = modes[0].0;
    if top == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let numerical_rank = modes
        .iter()
        .take(limit)
        .take_while(|(s, _)| *s >= NUMERICAL_RANK_RTOL * top)
        .count();
    let rank = max_rank.min(numerical_rank);
    let (singular_values, basis) = modes
        .into_iter()
        .take(rank)
        .map(|(s, mut v)| {
            canonicalize_sign(&mut v);
            (s, v)
        })
        .unzip();
    Ok(SvdResult {
        basis,
        singular_values,
        rank,
    })
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is positive.
pub(crate) fn canonicalize_sign(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v.get(pivot).is_some_and(|p| *p < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// One-sided Jacobi on the columns of `x`. Returns `(sigma, right vector)` for
/// every column, sorted by descending sigma (stable on ties).
fn jacobi_svd(x: &FeatureMatrix, tol: f64, max_sweeps: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("matrix has non-finite entries"));
    }
    let d = x.n_cols();
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            e
        })
        .collect();

    let frobenius = l2_norm(x.values());
    let negligible = (NEGLIGIBLE_COLUMN_RTOL * frobenius).powi(2);

    let mut converged = d < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == max_sweeps {
            return Err(Error::NumericalFailure { iterations: sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
    }

    let mut modes: Vec<(f64, Vec<f64>)> = cols.iter().map(|c| l2_norm(c)).zip(v).collect();
    modes.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(modes)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (a, b) = (&mut head[p], &mut tail[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn centers_two_by_two() {
        let (c, means) = center_columns(&m(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        assert_eq!(c.values(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(means, vec![2.0, 3.0]);
    }

    #[test]
    fn centering_zero_matrix_is_noop() {
        let z = m(&[vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]);
        let (c, means) = center_columns(&z).unwrap();
        assert_eq!(c, z);
        assert_eq!(means, vec![0.0, 0.0]);
    }

    #[test]
    fn centering_single_row() {
        let (c, means) = center_columns(&m(&[vec![5.0, 7.0]])).unwrap();
        assert_eq!(c.values(), &[0.0, 0.0]);
        assert_eq!(means, vec![5.0, 7.0]);
    }

    #[test]
    fn centering_empty_is_invalid() {
        let empty = FeatureMatrix::new(vec![], vec!["a".into()], vec![]).unwrap();
        assert!(matches!(
            center_columns(&empty),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn svd_of_diagonal() {
        let r = truncated_svd(&m(&[vec![3.0, 0.0], vec![0.0, 0.0]]), 1, 1e-10, 100).unwrap();
        assert_eq!(r.singular_values, vec![3.0]);
        assert_eq!(r.basis, vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn svd_of_identity() {
        let r = truncated_svd(&m(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 2, 1e-10, 100).unwrap();
        assert_eq!(r.singular_values, vec![1.0, 1.0]);
        assert!(r.orthonormality_error() < 1e-12);
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let r = truncated_svd(&m(&[vec![-1.0, -3.0], vec![1.0, 3.0]]), 1, 1e-10, 100).unwrap();
        let u = &r.basis[0];
        assert!(u[1] > 0.0 && u[1].abs() > u[0].abs());
    }

    #[test]
    fn sign_tie_uses_lowest_index() {
        let mut v = vec![-0.5, 0.5];
        canonicalize_sign(&mut v);
        assert_eq!(v, vec![0.5, -0.5]);
    }

    #[test]
    fn svd_rejects_bad_rank_and_tol() {
        let x = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            truncated_svd(&x, 0, 1e-10, 10),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            truncated_svd(&x, 3, 1e-10, 10),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            truncated_svd(&x, 1, 0.0, 10),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn svd_reports_non_convergence() {
        let x = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(
            truncated_svd(&x, 2, 1e-10, 0),
            Err(Error::NumericalFailure { iterations: 0 })
        ));
    }

    #[test]
    fn svd_of_zero_matrix_is_degenerate() {
        let x = m(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            truncated_svd(&x, 1, 1e-10, 10),
            Err(Error::DegenerateSpectrum)
        ));
    }

    #[test]
    fn explained_variance_examples() {
        assert_eq!(
            rank_by_explained_variance(&[10.0, 0.0, 0.0], 0.95).unwrap(),
            1
        );
        assert_eq!(rank_by_explained_variance(&[4.0, 3.0], 0.60).unwrap(), 1);
        assert_eq!(rank_by_explained_variance(&[4.0, 3.0], 1.0).unwrap(), 2);
        assert_eq!(rank_by_explained_variance(&[4.0, 3.0], 0.65).unwrap(), 2);
    }

    #[test]
    fn explained_variance_errors() {
        assert!(matches!(
            rank_by_explained_variance(&[0.0, 0.0], 0.5),
            Err(Error::DegenerateSpectrum)
        ));
        assert!(matches!(
            rank_by_explained_variance(&[1.0], 0.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            rank_by_explained_variance(&[1.0, 2.0], 0.5),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn row_norm_examples() {
        assert_eq!(row_l2_norms(&m(&[vec![3.0, 4.0]])), vec![5.0]);
        assert_eq!(
            row_l2_norms(&m(&[vec![0.0; 3], vec![0.0; 3]])),
            vec![0.0, 0.0]
        );
        assert_eq!(row_l2_norms(&m(&[vec![1.0; 4]])), vec![2.0]);
    }
}

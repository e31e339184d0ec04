//! Small dense linear-algebra helpers.
//!
//! Symmetric eigenvalues are computed with cyclic Jacobi rotations. The
//! matrices certified in this crate are tiny (n ≤ ~20), where Jacobi is both
//! accurate to a few ulps relative to the Frobenius norm and trivially robust.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix, sorted ascending.
///
/// Only the upper triangle is trusted; callers wanting a symmetry check should
/// use [`is_symmetric`] first.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    sym_eigen(a, false).0
}

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as columns.
pub fn sym_eigen_decomposition(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (values, vectors) = sym_eigen(a, true);
    (values, vectors.expect("vectors requested"))
}

fn sym_eigen(a: &DMatrix<f64>, want_vectors: bool) -> (Vec<f64>, Option<DMatrix<f64>>) {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.nrows();
    let mut m = DMatrix::from_fn(n, n, |i, j| if i <= j { a[(i, j)] } else { a[(j, i)] });
    let mut v = want_vectors.then(|| DMatrix::<f64>::identity(n, n));

    let frob = m.norm();
    if frob == 0.0 || n < 2 {
        return finish(m, v);
    }
    let threshold = f64::EPSILON * frob;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // m <- Jᵀ m J, rotation in the (p, q) plane
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;

                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    finish(m, v)
}

fn finish(m: DMatrix<f64>, v: Option<DMatrix<f64>>) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = v.map(|v| DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]));
    (values, vectors)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && asymmetry(a) <= tol
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    max_abs(&(a - a.transpose()))
}

pub fn is_skew_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && max_abs(&(a + a.transpose())) <= tol
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `Q·A + Aᵀ·Q`, the symmetric Lyapunov-type product used by every
/// Krasovskii condition.
pub fn lyapunov_product(q: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let qa = q * a;
    &qa + qa.transpose()
}

/// Inverse of a symmetric positive definite matrix, rejecting anything else.
pub fn spd_inverse(name: &str, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(a, 1e-12 * max_abs(a).max(1.0)) {
        return Err(Error::Definiteness {
            name: name.to_string(),
            property: "symmetric",
        });
    }
    if a.nrows() > 0 && min_eigenvalue(a) <= 0.0 {
        return Err(Error::Definiteness {
            name: name.to_string(),
            property: "positive definite",
        });
    }
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("`{name}` has no Cholesky factor")))
}

pub fn block_diagonal(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Numerical rank from singular values above `rel_tol · σ_max`.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            what: "matrix row",
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn quad_form(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(q * v))
}

/// Serializes a vector as a flat JSON array.
pub(crate) fn ser_vector<S: serde::Serializer>(
    v: &DVector<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

/// Serializes a matrix as a JSON array of rows.
pub(crate) fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()))
}

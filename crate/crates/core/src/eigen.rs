//! Dense symmetric eigensolver and the all-ones deflation helpers that
//! back every spectral quantity in the crate (algebraic connectivity,
//! mixing spectral norms, supergradients).
//!
//! The solver is cyclic Jacobi: sweep all (p, q) pairs, rotate each
//! off-diagonal entry to zero, accumulate the rotations. It runs until the
//! off-diagonal Frobenius norm drops below `1e-12 · max(1, ‖M‖_F)` or 100
//! sweeps, whichever comes first. At the matrix sizes used here (a few
//! hundred nodes at most) this is robust, dependency-free and
//! deterministic.

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Input asymmetry tolerated by [`sym_eigen`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Relative off-diagonal Frobenius residual targeted by the Jacobi sweeps.
const JACOBI_RESIDUAL: f64 = 1e-12;

/// Hard cap on Jacobi sweeps; convergence is quadratic and in practice
/// takes well under 20 sweeps at these sizes.
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("matrix is not symmetric: max |A[i,j] - A[j,i]| = {max_asymmetry:e}")]
    NonSymmetric { max_asymmetry: f64 },
    #[error("matrix is not square: {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Full spectral decomposition of a symmetric matrix.
///
/// `values` are ascending; column `i` of `vectors` is the unit eigenvector
/// for `values[i]`, and the columns are mutually orthonormal.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

/// Spectral decomposition of a symmetric real matrix via cyclic Jacobi
/// rotations. Deterministic for identical input.
pub fn sym_eigen(matrix: &Array2<f64>) -> Result<SymEigen, EigenError> {
    check_symmetric(matrix)?;
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    jacobi_sweeps(&mut a, Some(&mut v));

    // Sort ascending; stable order on ties keeps the result deterministic.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = v[[k, src]];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues only, ascending. Skips eigenvector accumulation; used in
/// optimizer hot paths that evaluate spectra thousands of times.
pub fn sym_eigenvalues(matrix: &Array2<f64>) -> Result<Vec<f64>, EigenError> {
    check_symmetric(matrix)?;
    let mut a = matrix.clone();
    jacobi_sweeps(&mut a, None);
    let mut values: Vec<f64> = (0..a.nrows()).map(|i| a[[i, i]]).collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(values)
}

fn check_symmetric(matrix: &Array2<f64>) -> Result<(), EigenError> {
    let (rows, cols) = matrix.dim();
    if rows != cols {
        return Err(EigenError::NotSquare { rows, cols });
    }
    let mut max_asymmetry = 0.0f64;
    for i in 0..rows {
        for j in (i + 1)..rows {
            max_asymmetry = max_asymmetry.max((matrix[[i, j]] - matrix[[j, i]]).abs());
        }
    }
    if max_asymmetry > SYMMETRY_TOLERANCE {
        return Err(EigenError::NonSymmetric { max_asymmetry });
    }
    Ok(())
}

fn jacobi_sweeps(a: &mut Array2<f64>, v: Option<&mut Array2<f64>>) {
    let n = a.nrows();
    let buf = a.as_slice_mut().expect("matrix is standard layout");
    match v {
        Some(vectors) => {
            let vbuf = vectors.as_slice_mut().expect("matrix is standard layout");
            jacobi_sweeps_flat(buf, n, Some(vbuf));
        }
        None => jacobi_sweeps_flat(buf, n, None),
    }
}

/// Rotate the strided "columns" p and q of an n×n row-major buffer.
fn rotate_columns(buf: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for row in buf.chunks_exact_mut(n) {
        let xp = row[p];
        let xq = row[q];
        row[p] = c * xp - s * xq;
        row[q] = s * xp + c * xq;
    }
}

fn jacobi_sweeps_flat(a: &mut [f64], n: usize, mut v: Option<&mut [f64]>) {
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= JACOBI_RESIDUAL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                // Classic two-sided rotation choosing the smaller angle.
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = {
                    let abs_t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
                    if theta < 0.0 {
                        -abs_t
                    } else {
                        abs_t
                    }
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                rotate_columns(a, n, p, q, c, s);
                // Row rotation: rows p and q are contiguous.
                let (head, tail) = a.split_at_mut(q * n);
                let row_p = &mut head[p * n..p * n + n];
                let row_q = &mut tail[..n];
                for k in 0..n {
                    let apk = row_p[k];
                    let aqk = row_q[k];
                    row_p[k] = c * apk - s * aqk;
                    row_q[k] = s * apk + c * aqk;
                }
                if let Some(vectors) = v.as_deref_mut() {
                    rotate_columns(vectors, n, p, q, c, s);
                }
            }
        }
    }
}

/// The averaging matrix `J = 11ᵀ/m`.
pub fn averaging_matrix(m: usize) -> Array2<f64> {
    Array2::from_elem((m, m), 1.0 / m as f64)
}

/// Orthonormal basis of the subspace orthogonal to the all-ones vector,
/// returned as the columns of an `m × (m-1)` matrix.
///
/// Construction: the Householder reflection `H = I - 2vvᵀ/(vᵀv)` with
/// `v = 1/√m - e₁` maps `e₁` to the unit all-ones vector, so its remaining
/// columns span `1⊥`. Deterministic, and fixed once per dimension.
pub fn ones_complement_basis(m: usize) -> Array2<f64> {
    assert!(m >= 1);
    let w = 1.0 / (m as f64).sqrt();
    let mut v = Array1::<f64>::from_elem(m, w);
    v[0] -= 1.0;
    let vtv = v.dot(&v);
    let mut basis = Array2::<f64>::zeros((m, m.saturating_sub(1)));
    if m == 1 || vtv == 0.0 {
        return basis;
    }
    for col in 0..(m - 1) {
        let j = col + 1;
        for i in 0..m {
            let h = if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vtv;
            basis[[i, col]] = h;
        }
    }
    basis
}

/// `UᵀMU` where `U` spans `1⊥`: the matrix `M` with the all-ones direction
/// deflated away. Shape `(m-1) × (m-1)`. The product is symmetrized;
/// for symmetric `M` it is symmetric up to rounding, and downstream
/// eigensolves require it exactly.
pub fn restrict_to_ones_complement(matrix: &Array2<f64>) -> Array2<f64> {
    let basis = ones_complement_basis(matrix.nrows());
    let product = basis.t().dot(matrix).dot(&basis);
    symmetrize(product)
}

/// `(A + Aᵀ)/2`, clearing rounding dust off a theoretically symmetric
/// product.
pub fn symmetrize(mut matrix: Array2<f64>) -> Array2<f64> {
    let n = matrix.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let mean = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            matrix[[i, j]] = mean;
            matrix[[j, i]] = mean;
        }
    }
    matrix
}

/// Smallest eigenvalue of `M` restricted to `1⊥`.
///
/// For a graph Laplacian this is the algebraic connectivity λ₂. Returns 0
/// for `m ≤ 1`, where no second eigenvalue exists.
pub fn lambda_min_restricted(matrix: &Array2<f64>) -> f64 {
    if matrix.nrows() <= 1 {
        return 0.0;
    }
    let restricted = restrict_to_ones_complement(matrix);
    let values =
        sym_eigenvalues(&restricted).expect("restriction of symmetric matrix is symmetric");
    values[0]
}

/// Largest eigenvalue of `M` restricted to `1⊥`. Returns 0 for `m ≤ 1`.
pub fn lambda_max_restricted(matrix: &Array2<f64>) -> f64 {
    if matrix.nrows() <= 1 {
        return 0.0;
    }
    let restricted = restrict_to_ones_complement(matrix);
    let values =
        sym_eigenvalues(&restricted).expect("restriction of symmetric matrix is symmetric");
    *values.last().unwrap()
}

/// Smallest restricted eigenvalue together with an orthonormal basis of its
/// eigenspace, mapped back to the full `m`-dimensional coordinates.
///
/// Eigenvalues within `gap_tolerance` of the smallest are treated as one
/// multiple eigenvalue; all their eigenvectors are returned. Used for
/// supergradients, where the eigenspace matters at multiplicity.
pub fn lambda_min_restricted_eigenspace(
    matrix: &Array2<f64>,
    gap_tolerance: f64,
) -> (f64, Vec<Array1<f64>>) {
    let m = matrix.nrows();
    assert!(m >= 2, "restricted eigenspace needs at least two nodes");
    let basis = ones_complement_basis(m);
    let restricted = basis.t().dot(matrix).dot(&basis);
    let eig = sym_eigen(&restricted).expect("restriction of symmetric matrix is symmetric");
    let lambda = eig.values[0];
    let mut vectors = Vec::new();
    for (i, &value) in eig.values.iter().enumerate() {
        if value - lambda <= gap_tolerance {
            vectors.push(basis.dot(&eig.vectors.column(i).to_owned()));
        } else {
            break;
        }
    }
    (lambda, vectors)
}

pub fn frobenius_norm(matrix: &Array2<f64>) -> f64 {
    matrix.iter().map(|x| x * x).sum::<f64>().sqrt()
}

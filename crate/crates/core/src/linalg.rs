//! Small dense helpers for the d, d₁ ≤ 3 matrices used on the hot path.
//!
//! Matrices are row-major `rows × cols` slices. Anything heavier (eigenvalues
//! in the checkers) goes through nalgebra.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out = m · v` for an `rows × cols` matrix.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[r * cols..(r + 1) * cols], &v[..cols]);
    }
}

/// `out = mᵀ · v` for an `rows × cols` matrix.
pub fn mat_t_vec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate().take(cols) {
        *o = (0..rows).map(|r| m[r * cols + c] * v[r]).sum();
    }
}

/// Frobenius norm.
pub fn frobenius(m: &[f64]) -> f64 {
    norm(m)
}

/// `tr(σᵀ H σ)` for σ of shape `d × d1` and symmetric `H` of shape `d × d`.
pub fn trace_sandwich(sigma: &[f64], d: usize, d1: usize, h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..d1 {
        for i in 0..d {
            let s_ik = sigma[i * d1 + k];
            if s_ik == 0.0 {
                continue;
            }
            for j in 0..d {
                acc += s_ik * h[i * d + j] * sigma[j * d1 + k];
            }
        }
    }
    acc
}

/// `σ σᵀ` as a `d × d` row-major matrix.
pub fn outer_gram(sigma: &[f64], d: usize, d1: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            g[i * d + j] = (0..d1).map(|k| sigma[i * d1 + k] * sigma[j * d1 + k]).sum();
        }
    }
    g
}

/// Smallest eigenvalue of a symmetric `d × d` matrix.
pub fn min_symmetric_eigenvalue(m: &[f64], d: usize) -> f64 {
    let mat = DMatrix::from_row_slice(d, d, m);
    mat.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Least-squares solution of `σ x = b` for `σ` of shape `d × d1` (d1 ≤ 3),
/// via the normal equations with a pseudo-inverse fallback.
///
/// Returns `None` when `b` is not in the range of `σ` to within `1e-9`
/// relative residual.
pub fn solve_least_squares(sigma: &[f64], d: usize, d1: usize, b: &[f64]) -> Option<Vec<f64>> {
    let s = DMatrix::from_row_slice(d, d1, sigma);
    let rhs = DMatrix::from_column_slice(d, 1, b);
    let pinv = s.clone().pseudo_inverse(1e-12).ok()?;
    let x = &pinv * &rhs;
    let residual = (&s * &x - &rhs).norm();
    let scale = rhs.norm().max(1.0);
    if residual > 1e-9 * scale {
        return None;
    }
    Some(x.iter().copied().collect())
}

/// Fast path of [`solve_least_squares`] used inside simulations: only the
/// diagonal case is special-cased, everything else falls back.
pub(crate) fn reduce_drift(sigma: &[f64], d: usize, d1: usize, b: &[f64], out: &mut [f64]) -> bool {
    if d == d1 {
        let diagonal = (0..d).all(|i| (0..d1).all(|j| i == j || sigma[i * d1 + j] == 0.0));
        if diagonal {
            for i in 0..d {
                let s = sigma[i * d1 + i];
                if s == 0.0 {
                    if b[i] != 0.0 {
                        return false;
                    }
                    out[i] = 0.0;
                } else {
                    out[i] = b[i] / s;
                }
            }
            return true;
        }
    }
    match solve_least_squares(sigma, d, d1, b) {
        Some(x) => {
            out[..d1].copy_from_slice(&x);
            true
        }
        None => false,
    }
}

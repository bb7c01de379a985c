//! Savitzky-Golay smoothing coefficients from a local least-squares fit.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Centered smoothing kernel for a `window`-point fit of degree `order`.
///
/// The kernel is the first row of `(A^T A)^{-1} A^T` with `A` the
/// Vandermonde matrix of offsets `-m..=m`; solved by Gaussian elimination
/// with partial pivoting in double precision.
pub fn savgol_coefficients<T: Scalar>(window: usize, order: usize) -> Result<Vec<T>> {
    if window % 2 == 0 || window <= order {
        return Err(Error::invalid(format!(
            "savitzky-golay window {window} must be odd and larger than order {order}"
        )));
    }
    let m = (window / 2) as i64;
    let p = order + 1;
    // Normal matrix G[i][j] = sum_k k^(i+j)
    let pow = |k: i64, e: usize| (k as f64).powi(e as i32);
    let mut g = vec![vec![0.0f64; p + 1]; p];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().take(p).enumerate() {
            *cell = (-m..=m).map(|k| pow(k, i + j)).sum();
        }
        // Right-hand side e_0: we want the coefficients of the constant term.
        row[p] = if i == 0 { 1.0 } else { 0.0 };
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))
            .unwrap();
        g.swap(col, piv);
        let d = g[col][col];
        for v in g[col].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != col {
                let f = g[r][col];
                if f != 0.0 {
                    for c in 0..=p {
                        g[r][c] -= f * g[col][c];
                    }
                }
            }
        }
    }
    // c_k = sum_i a_i k^i where a = G^{-1} e_0
    let a: Vec<f64> = g.iter().map(|row| row[p]).collect();
    Ok((-m..=m)
        .map(|k| T::of(a.iter().enumerate().map(|(i, ai)| ai * pow(k, i)).sum()))
        .collect())
}

/// Circular convolution of a closed sequence with a symmetric kernel.
pub fn smooth_cyclic<T: Scalar>(values: &[T], kernel: &[T]) -> Vec<T> {
    let n = values.len() as isize;
    let m = (kernel.len() / 2) as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &c)| c * values[(i + j as isize - m).rem_euclid(n) as usize])
                .sum()
        })
        .collect()
}

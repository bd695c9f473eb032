//! Small dense linear-algebra helpers.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

/// Matrix sign function by the scaled Newton iteration `X ← (μX + (μX)⁻¹)/2`.
pub fn matrix_sign(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut x = a.clone();
    for it in 0..100 {
        let inv = x.clone().try_inverse().ok_or_else(|| Error::NoGap { gap: 0.0, threshold: 0.0 })?;
        let mu = if it < 10 {
            let det = x.determinant().abs();
            if det > 0.0 && det.is_finite() {
                det.powf(-1.0 / n as f64)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&x * mu + inv / mu) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if change <= 1e-14 * x.norm().max(1.0) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Spectral projection onto the eigenspaces with positive real part.
pub fn unstable_projection(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let s = matrix_sign(a)?;
    let mut p = (DMatrix::identity(n, n) + s) * 0.5;
    // snap exact zeros/identities produced by diagonal inputs
    for v in p.iter_mut() {
        if v.abs() < 1e-15 {
            *v = 0.0;
        }
    }
    Ok(p)
}

/// Rank of a projection, read off its trace.
pub fn projection_rank(p: &DMatrix<f64>) -> usize {
    p.trace().round().max(0.0) as usize
}

/// Orthonormal basis (as columns) of the range of a projection of rank `k`,
/// with each column oriented so that its largest-magnitude entry is positive.
pub fn range_basis(p: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = p.nrows();
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = DMatrix::zeros(n, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut col = u.column(i).into_owned();
        let (imax, _) = col.iter().enumerate().fold((0, 0.0), |acc, (j, v)| if v.abs() > acc.1 + 1e-12 { (j, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col = -col;
        }
        basis.set_column(c, &col);
    }
    basis
}

/// Least-squares line `y ≈ a + b x`; returns `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Some((a, b, r2))
}

pub fn sup_norm_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_projection_of_saddle() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, -2.0]);
        let p = unstable_projection(&a).unwrap();
        assert!((&p * &p - &p).norm() < 1e-12);
        assert_eq!(projection_rank(&p), 1);
        assert!((&a * &p - &p * &a).norm() < 1e-12);
        // range is the eigenvector of eigenvalue 1
        let v = &p * DVector::from_vec(vec![0.3, 0.7]);
        assert!(((&a * &v) - &v).norm() < 1e-12);
    }

    #[test]
    fn sign_of_diagonal_is_exact() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let p = unstable_projection(&a).unwrap();
        assert_eq!(p, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn basis_is_orthonormal() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 2.0, 0.1, 0.0, 0.0, -1.0]);
        let p = unstable_projection(&a).unwrap();
        let b = range_basis(&p, 2);
        assert!((b.transpose() * &b - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((&p * &b - &b).norm() < 1e-10);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}

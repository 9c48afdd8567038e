//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|e| e.is_finite())
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|e| e.is_finite())
}

/// Householder reflector `I - 2 w wᵀ / ‖w‖²`, orthogonal and symmetric.
pub fn householder(w: &DVector<f64>) -> DMatrix<f64> {
    let n = w.len();
    let nsq = w.norm_squared();
    let mut h = DMatrix::identity(n, n);
    if nsq > 0.0 {
        h -= (w * w.transpose()) * (2.0 / nsq);
    }
    h
}

/// Least-squares line `y = intercept + slope * x`, returning `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn householder_is_orthogonal() {
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = householder(&w);
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((&h * h.transpose() - eye).norm() < 1e-14);
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 0.5 * x).collect();
        let (s, i, r2) = linear_fit(&xs, &ys);
        assert!((s + 0.5).abs() < 1e-15 && (i - 1.0).abs() < 1e-15);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_diag() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        assert!((spectral_norm(&m) - 3.0).abs() < 1e-14);
    }
}

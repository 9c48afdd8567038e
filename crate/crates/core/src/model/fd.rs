//! Central finite differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian of `f` at `point`.
///
/// Column `j` is `(f(p + h e_j) − f(p − h e_j)) / (2h)`, where the
/// denominator uses the step actually realized in floating point.
pub fn fd_jacobian<F>(mut f: F, point: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    let n = point.len();
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut probe = point.clone();
    for j in 0..n {
        probe[j] = point[j] + step;
        let plus_x = probe[j];
        let plus = f(&probe)?;
        probe[j] = point[j] - step;
        let minus_x = probe[j];
        let minus = f(&probe)?;
        probe[j] = point[j];
        if plus.len() != minus.len() || !columns.first().map_or(true, |c| c.len() == plus.len()) {
            return Err(Error::NumericalFailure("function output dimension changed".into()));
        }
        if !plus.iter().chain(minus.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite function value while differencing coordinate {j}"
            )));
        }
        columns.push((plus - minus) / (plus_x - minus_x));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |i, j| columns[j][i]))
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(mut f: F, point: &DVector<f64>, step: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let jac = fd_jacobian(|p| Ok(DVector::from_element(1, f(p)?)), point, step)?;
    Ok(jac.row(0).transpose())
}

//! Regularized gap functions and the D-gap merit function.
//!
//! For `c > 0` the regularized gap is
//!
//! ```text
//! φ_c(y, x) = sup_{z ∈ Y} ⟨F(y, x), y − z⟩ − (c/2)‖y − z‖²
//! ```
//!
//! Completing the square shows the supremum is attained at
//! `z*_c(y, x) = P_Y(y − F(y, x)/c)`, so no inner optimization is ever run.
//! The D-gap `φ_ab = φ_a − φ_b` (with `b > a > 0`) is nonnegative on `Y`
//! and vanishes exactly at solutions of the variational inequality.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{InstanceSpec, FEASIBILITY_TOL};

/// D-gap parameters `b > a > 0` (the weighting matrix is the identity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DGapParams {
    a: f64,
    b: f64,
}

impl DGapParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "D-gap parameters must satisfy b > a > 0 (got a = {a}, b = {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for DGapParams {
    fn default() -> Self {
        Self { a: 1.0, b: 2.0 }
    }
}

/// The maximizer `z*_c(y, x)` and the gap value `φ_c(y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewedProjection {
    pub z: DVector<f64>,
    pub gap_value: f64,
    /// `y − z`.
    pub residual: DVector<f64>,
}

fn skewed_from(instance: &InstanceSpec, y: &DVector<f64>, fy: &DVector<f64>, c: f64) -> Result<SkewedProjection> {
    let z = instance.set_y().project(&(y - fy / c))?;
    let residual = y - &z;
    let gap_value = fy.dot(&residual) - 0.5 * c * residual.norm_squared();
    Ok(SkewedProjection { z, gap_value, residual })
}

/// `z*_c(y, x) = P_Y(y − F(y, x)/c)` and `φ_c(y, x)`.
pub fn skewed_projection(instance: &InstanceSpec, y: &DVector<f64>, x: &DVector<f64>, c: f64) -> Result<SkewedProjection> {
    if !(c > 0.0) {
        return Err(Error::InvalidInput(format!("regularization c must be positive, got {c}")));
    }
    instance.check_y(y)?;
    instance.check_x(x)?;
    let fy = instance.inner().eval(y, x)?;
    skewed_from(instance, y, &fy, c)
}

/// Everything one D-gap evaluation produces; the inner solver reuses `at_b.z`
/// as its next iterate.
#[derive(Debug, Clone)]
pub struct DGapEval {
    pub value: f64,
    pub at_a: SkewedProjection,
    pub at_b: SkewedProjection,
}

/// D-gap evaluation without the membership check on `y`.
pub(crate) fn dgap_eval(
    instance: &InstanceSpec,
    y: &DVector<f64>,
    x: &DVector<f64>,
    params: DGapParams,
) -> Result<DGapEval> {
    let fy = instance.inner().eval(y, x)?;
    let at_a = skewed_from(instance, y, &fy, params.a())?;
    let at_b = skewed_from(instance, y, &fy, params.b())?;
    Ok(DGapEval {
        value: at_a.gap_value - at_b.gap_value,
        at_a,
        at_b,
    })
}

/// `φ_ab(y, x) = φ_a(y, x) − φ_b(y, x)` for `y ∈ Y`.
pub fn dgap(instance: &InstanceSpec, y: &DVector<f64>, x: &DVector<f64>, params: DGapParams) -> Result<f64> {
    dgap_details(instance, y, x, params).map(|e| e.value)
}

/// [`dgap`] returning both skewed projections.
pub fn dgap_details(
    instance: &InstanceSpec,
    y: &DVector<f64>,
    x: &DVector<f64>,
    params: DGapParams,
) -> Result<DGapEval> {
    instance.check_y(y)?;
    instance.check_x(x)?;
    let dist = instance.set_y().distance(y)?;
    if dist > FEASIBILITY_TOL {
        return Err(Error::InvalidInput(format!(
            "D-gap queried at a point {dist:e} away from Y"
        )));
    }
    dgap_eval(instance, y, x, params)
}

/// `(b − a)/2 · ‖y − z*_b(y, x)‖²`, the lower bound on `φ_ab`.
pub fn dgap_lower_bound(eval: &DGapEval, params: DGapParams) -> f64 {
    0.5 * (params.b() - params.a()) * eval.at_b.residual.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvexSet, InnerMap, OuterObjective};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn constant_map_instance(value: f64) -> InstanceSpec {
        InstanceSpec::new(
            InnerMap::new(1, 1, 1.0, move |_y, _x| DVector::from_element(1, value)),
            OuterObjective::new(|_y, _x| 0.0, |y, _x| DVector::zeros(y.len()), |_y, x| DVector::zeros(x.len())),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(DGapParams::new(2.0, 1.0).is_err());
        assert!(DGapParams::new(0.0, 1.0).is_err());
        assert!(DGapParams::new(1.0, 1.0).is_err());
        assert!(DGapParams::new(1.0, 2.0).is_ok());
    }

    #[test]
    fn zero_map_gives_zero_gap() {
        let inst = constant_map_instance(0.0);
        for c in [0.5, 1.0, 7.0] {
            let s = skewed_projection(&inst, &dv(&[0.3]), &dv(&[0.0]), c).unwrap();
            assert_eq!(s.z, dv(&[0.3]));
            assert_eq!(s.gap_value, 0.0);
        }
    }

    #[test]
    fn hand_evaluated_examples() {
        let inst = constant_map_instance(1.0);
        let y = dv(&[1.0]);
        let x = dv(&[0.0]);
        let s1 = skewed_projection(&inst, &y, &x, 1.0).unwrap();
        assert_eq!(s1.z, dv(&[0.0]));
        assert!((s1.gap_value - 0.5).abs() < 1e-15);
        let s2 = skewed_projection(&inst, &y, &x, 2.0).unwrap();
        assert_eq!(s2.z, dv(&[0.5]));
        assert!((s2.gap_value - 0.25).abs() < 1e-15);

        let params = DGapParams::new(1.0, 2.0).unwrap();
        let e = dgap_details(&inst, &y, &x, params).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
        assert!((dgap_lower_bound(&e, params) - 0.125).abs() < 1e-15);
        assert!(dgap_lower_bound(&e, params) <= e.value);
    }

    #[test]
    fn infeasible_query_rejected() {
        let inst = constant_map_instance(1.0);
        let r = dgap(&inst, &dv(&[1.5]), &dv(&[0.0]), DGapParams::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = skewed_projection(&inst, &dv(&[0.5]), &dv(&[0.0]), 0.0);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}

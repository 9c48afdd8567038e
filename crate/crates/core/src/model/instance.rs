use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::fd::{fd_gradient, FD_STEP};
use super::set::ConvexSet;
use crate::error::{Error, Result};
use crate::merit::DGapParams;
use crate::rng::SeededRng;

pub type VecFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Slack allowed in the strong-monotonicity spot check.
pub const MONOTONICITY_TOL: f64 = 1e-10;

/// The inner map `F(y, x)`, claimed `mu`-strongly monotone in `y`.
#[derive(Clone)]
pub struct InnerMap {
    dim_y: usize,
    dim_x: usize,
    mu: f64,
    eval: VecFn,
    jac_y: Option<MatFn>,
    jac_x: Option<MatFn>,
}

impl InnerMap {
    pub fn new<F>(dim_y: usize, dim_x: usize, mu: f64, eval: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            dim_y,
            dim_x,
            mu,
            eval: Arc::new(eval),
            jac_y: None,
            jac_x: None,
        }
    }

    /// Attaches `∇_y F` (dim_y × dim_y) and `∇_x F` (dim_y × dim_x).
    pub fn with_jacobians<JY, JX>(mut self, jac_y: JY, jac_x: JX) -> Self
    where
        JY: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        JX: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac_y = Some(Arc::new(jac_y));
        self.jac_x = Some(Arc::new(jac_x));
        self
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn has_jacobians(&self) -> bool {
        self.jac_y.is_some() && self.jac_x.is_some()
    }

    pub fn eval(&self, y: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = (self.eval)(y, x);
        if v.len() != self.dim_y {
            return Err(Error::NumericalFailure(format!(
                "inner map returned dimension {} instead of {}",
                v.len(),
                self.dim_y
            )));
        }
        if !v.iter().all(|e| e.is_finite()) {
            return Err(Error::NumericalFailure("inner map returned a non-finite value".into()));
        }
        Ok(v)
    }

    pub fn jac_y(&self, y: &DVector<f64>, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac_y.as_ref().map(|j| j(y, x))
    }

    pub fn jac_x(&self, y: &DVector<f64>, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jac_x.as_ref().map(|j| j(y, x))
    }

    /// Checks `⟨F(y1,x) − F(y2,x), y1 − y2⟩ ≥ μ‖y1 − y2‖²` on random pairs.
    ///
    /// Returns the smallest observed ratio `⟨ΔF, Δy⟩ / ‖Δy‖²`, an empirical
    /// lower estimate of the modulus.
    pub fn check_strong_monotonicity(
        &self,
        set_y: &ConvexSet,
        set_x: &ConvexSet,
        samples: usize,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let mut min_ratio = f64::INFINITY;
        for _ in 0..samples {
            let x = set_x.sample(rng)?;
            let y1 = set_y.sample(rng)?;
            let y2 = set_y.sample(rng)?;
            let dy = &y1 - &y2;
            let dsq = dy.norm_squared();
            if dsq == 0.0 {
                continue;
            }
            let lhs = (self.eval(&y1, &x)? - self.eval(&y2, &x)?).dot(&dy);
            if lhs < self.mu * dsq - MONOTONICITY_TOL {
                return Err(Error::InvalidInput(format!(
                    "inner map is not {}-strongly monotone: <dF, dy> = {lhs:e} < {:e}",
                    self.mu,
                    self.mu * dsq
                )));
            }
            min_ratio = min_ratio.min(lhs / dsq);
        }
        Ok(min_ratio)
    }
}

impl fmt::Debug for InnerMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InnerMap")
            .field("dim_y", &self.dim_y)
            .field("dim_x", &self.dim_x)
            .field("mu", &self.mu)
            .field("has_jacobians", &self.has_jacobians())
            .finish()
    }
}

/// The outer objective `f(y, x)` with its partial gradients.
#[derive(Clone)]
pub struct OuterObjective {
    eval: ScalarFn,
    grad_y: VecFn,
    grad_x: VecFn,
}

impl OuterObjective {
    pub fn new<F, GY, GX>(eval: F, grad_y: GY, grad_x: GX) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        GY: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        GX: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            grad_y: Arc::new(grad_y),
            grad_x: Arc::new(grad_x),
        }
    }

    pub fn value(&self, y: &DVector<f64>, x: &DVector<f64>) -> f64 {
        (self.eval)(y, x)
    }

    pub fn grad_y(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_y)(y, x)
    }

    /// Partial gradient in `x` with `y` held fixed.
    pub fn grad_x(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (self.grad_x)(y, x)
    }

    /// Compares both partial gradients with central differences of `value`
    /// at random points, returning the worst error relative to
    /// `max(1, ‖fd‖)`. Fails when it exceeds `tol`.
    pub fn check_gradients(
        &self,
        set_y: &ConvexSet,
        set_x: &ConvexSet,
        samples: usize,
        tol: f64,
        rng: &mut SeededRng,
    ) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let y = set_y.sample(rng)?;
            let x = set_x.sample(rng)?;
            let fd_y = fd_gradient(|v| Ok(self.value(v, &x)), &y, FD_STEP)?;
            let fd_x = fd_gradient(|v| Ok(self.value(&y, v)), &x, FD_STEP)?;
            let ey = (self.grad_y(&y, &x) - &fd_y).norm() / fd_y.norm().max(1.0);
            let ex = (self.grad_x(&y, &x) - &fd_x).norm() / fd_x.norm().max(1.0);
            worst = worst.max(ey).max(ex);
        }
        if worst > tol {
            return Err(Error::InvalidInput(format!(
                "outer gradients disagree with finite differences (relative error {worst:e})"
            )));
        }
        Ok(worst)
    }
}

impl fmt::Debug for OuterObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OuterObjective")
    }
}

/// Closed-form inner solution map and its Jacobian.
#[derive(Clone)]
pub struct KnownSolution {
    y_star: Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    implicit_grad: Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
}

impl KnownSolution {
    pub fn new<S, G>(y_star: S, implicit_grad: G) -> Self
    where
        S: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            y_star: Arc::new(y_star),
            implicit_grad: Arc::new(implicit_grad),
        }
    }

    pub fn y_star(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.y_star)(x)
    }

    pub fn implicit_grad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.implicit_grad)(x)
    }
}

impl fmt::Debug for KnownSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KnownSolution")
    }
}

/// How fixed-point Jacobians are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Projection Jacobian in closed form times the inner-map Jacobians.
    Analytic,
    /// Central differences of the fixed-point map itself.
    FiniteDifference,
}

/// One bilevel problem: `min_{x ∈ X} f(y*(x), x)` with `y*(x) ∈ SOL(Y, F(·, x))`.
#[derive(Clone, Debug)]
pub struct InstanceSpec {
    inner: InnerMap,
    outer: OuterObjective,
    set_y: ConvexSet,
    set_x: ConvexSet,
    dgap: DGapParams,
    known_solution: Option<KnownSolution>,
    jacobian_mode: JacobianMode,
}

impl InstanceSpec {
    pub fn new(
        inner: InnerMap,
        outer: OuterObjective,
        set_y: ConvexSet,
        set_x: ConvexSet,
        dgap: DGapParams,
    ) -> Result<Self> {
        if inner.dim_y() != set_y.dim() {
            return Err(Error::InvalidInput(format!(
                "inner map has dim_y = {} but Y has dimension {}",
                inner.dim_y(),
                set_y.dim()
            )));
        }
        if inner.dim_x() != set_x.dim() {
            return Err(Error::InvalidInput(format!(
                "inner map has dim_x = {} but X has dimension {}",
                inner.dim_x(),
                set_x.dim()
            )));
        }
        if !set_y.is_bounded() || !set_x.is_bounded() {
            return Err(Error::InvalidInput(
                "Y and X must be bounded (halfspace sets need an enclosing box)".into(),
            ));
        }
        if !(inner.mu() > 0.0) {
            return Err(Error::InvalidInput(format!(
                "strong monotonicity modulus must be positive, got {}",
                inner.mu()
            )));
        }
        let jacobian_mode = if inner.has_jacobians() {
            JacobianMode::Analytic
        } else {
            JacobianMode::FiniteDifference
        };
        Ok(Self {
            inner,
            outer,
            set_y,
            set_x,
            dgap,
            known_solution: None,
            jacobian_mode,
        })
    }

    pub fn with_known_solution(mut self, known: KnownSolution) -> Self {
        self.known_solution = Some(known);
        self
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.jacobian_mode = mode;
        self
    }

    pub fn with_dgap(mut self, dgap: DGapParams) -> Self {
        self.dgap = dgap;
        self
    }

    pub fn inner(&self) -> &InnerMap {
        &self.inner
    }

    pub fn outer(&self) -> &OuterObjective {
        &self.outer
    }

    pub fn set_y(&self) -> &ConvexSet {
        &self.set_y
    }

    pub fn set_x(&self) -> &ConvexSet {
        &self.set_x
    }

    pub fn dgap(&self) -> DGapParams {
        self.dgap
    }

    pub fn known_solution(&self) -> Option<&KnownSolution> {
        self.known_solution.as_ref()
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.jacobian_mode
    }

    pub fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }

    pub fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }

    pub(crate) fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_x() {
            return Err(Error::InvalidInput(format!(
                "x has dimension {} but the instance expects {}",
                x.len(),
                self.dim_x()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.dim_y() {
            return Err(Error::InvalidInput(format!(
                "y has dimension {} but the instance expects {}",
                y.len(),
                self.dim_y()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_map(mu: f64) -> InnerMap {
        InnerMap::new(1, 1, mu, |y, x| y - x)
    }

    fn trivial_outer() -> OuterObjective {
        OuterObjective::new(
            |y, _x| y[0] * y[0],
            |y, _x| y * 2.0,
            |_y, x| DVector::zeros(x.len()),
        )
    }

    #[test]
    fn monotone_map_accepted_non_monotone_rejected() {
        let y = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        let x = ConvexSet::cube(2, -1.0, 1.0).unwrap();
        let mut rng = SeededRng::new(3);
        let good = InnerMap::new(2, 2, 1.0, |y, x| y * 2.0 - x);
        let ratio = good.check_strong_monotonicity(&y, &x, 200, &mut rng).unwrap();
        assert!(ratio >= 2.0 - 1e-12);
        // A rotation is monotone with modulus zero only.
        let rotation = InnerMap::new(2, 2, 0.5, |y, _x| DVector::from_vec(vec![-y[1], y[0]]));
        assert!(rotation.check_strong_monotonicity(&y, &x, 200, &mut rng).is_err());
    }

    #[test]
    fn unbounded_sets_rejected() {
        let unbounded = ConvexSet::new_halfspaces(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            None,
        )
        .unwrap();
        let r = InstanceSpec::new(
            scalar_map(1.0),
            trivial_outer(),
            unbounded,
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::default(),
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = InstanceSpec::new(
            scalar_map(1.0),
            trivial_outer(),
            ConvexSet::cube(2, 0.0, 1.0).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn wrong_output_dimension_is_numerical_failure() {
        let bad = InnerMap::new(2, 1, 1.0, |_y, _x| DVector::zeros(3));
        let e = bad.eval(&DVector::zeros(2), &DVector::zeros(1)).unwrap_err();
        assert!(matches!(e, Error::NumericalFailure(_)));
    }

    #[test]
    fn gradient_check_catches_wrong_gradient() {
        let y = ConvexSet::cube(1, 0.0, 1.0).unwrap();
        let x = ConvexSet::cube(1, 0.0, 1.0).unwrap();
        let mut rng = SeededRng::new(5);
        assert!(trivial_outer().check_gradients(&y, &x, 20, 1e-6, &mut rng).is_ok());
        let wrong = OuterObjective::new(|y, _x| y[0] * y[0], |y, _x| y * 3.0, |_y, x| DVector::zeros(x.len()));
        assert!(wrong.check_gradients(&y, &x, 20, 1e-6, &mut rng).is_err());
    }
}

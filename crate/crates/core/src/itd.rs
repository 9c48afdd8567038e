//! Iterative differentiation: forward propagation of `∇_x y_t` through the
//! fixed-point iteration, and hypergradient assembly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner::InnerState;
use crate::linalg::spectral_norm;
use crate::merit::dgap_eval;
use crate::model::{fd_jacobian, ConvexSet, InstanceSpec, JacobianMode, ACTIVITY_TOL, FD_STEP, FEASIBILITY_TOL};
use crate::rng::SeededRng;

/// `∇_y z*_b(y, x)`, `∇_x z*_b(y, x)` and the activity pattern of the
/// projection at `u = y − F(y, x)/b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointJacobians {
    pub j_y: DMatrix<f64>,
    pub j_x: DMatrix<f64>,
    pub mask: Vec<i8>,
}

/// Projection Jacobian at `u` for sets with a closed form.
fn projection_jacobian(set: &ConvexSet, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = u.len();
    match set {
        ConvexSet::Box(b) => {
            let mut d = DMatrix::zeros(n, n);
            for i in 0..n {
                let dist = (u[i] - b.lower()[i]).abs().min((u[i] - b.upper()[i]).abs());
                if dist <= ACTIVITY_TOL {
                    return Err(Error::NonsmoothPoint { index: i, distance: dist });
                }
                if u[i] > b.lower()[i] && u[i] < b.upper()[i] {
                    d[(i, i)] = 1.0;
                }
            }
            Ok(d)
        }
        ConvexSet::Ball(b) => {
            let r = (u - b.center()).norm();
            let dist = (r - b.radius()).abs();
            if dist <= ACTIVITY_TOL {
                return Err(Error::NonsmoothPoint { index: 0, distance: dist });
            }
            if r > b.radius() {
                return Err(Error::UnsupportedAnalytic(
                    "ball projection from outside the ball needs finite-difference mode".into(),
                ));
            }
            Ok(DMatrix::identity(n, n))
        }
        ConvexSet::Simplex(_) => {
            let tau = crate::model::project_simplex(u).1;
            let mut active = Vec::new();
            for i in 0..n {
                let dist = (u[i] - tau).abs();
                if dist <= ACTIVITY_TOL {
                    return Err(Error::NonsmoothPoint { index: i, distance: dist });
                }
                if u[i] > tau {
                    active.push(i);
                }
            }
            let share = 1.0 / active.len() as f64;
            let mut d = DMatrix::zeros(n, n);
            for &i in &active {
                for &j in &active {
                    d[(i, j)] = if i == j { 1.0 - share } else { -share };
                }
            }
            Ok(d)
        }
        ConvexSet::HalfspaceIntersection(_) => Err(Error::UnsupportedAnalytic(
            "halfspace intersections need finite-difference mode".into(),
        )),
    }
}

/// Jacobians of the fixed-point map `z*_b(y, x) = P_Y(y − F(y, x)/b)`.
pub fn fixed_point_jacobians(
    instance: &InstanceSpec,
    y: &DVector<f64>,
    x: &DVector<f64>,
    b: f64,
    mode: JacobianMode,
) -> Result<FixedPointJacobians> {
    if !(b > 0.0) {
        return Err(Error::InvalidInput(format!("b must be positive, got {b}")));
    }
    instance.check_y(y)?;
    instance.check_x(x)?;
    let set = instance.set_y();
    let inner = instance.inner();
    let u = y - inner.eval(y, x)? / b;
    let mask = set.activity(&u)?;
    match mode {
        JacobianMode::Analytic => {
            let (Some(fy), Some(fx)) = (inner.jac_y(y, x), inner.jac_x(y, x)) else {
                return Err(Error::UnsupportedAnalytic("inner map has no analytic Jacobians".into()));
            };
            let jp = projection_jacobian(set, &u)?;
            let n = y.len();
            let j_y = &jp * (DMatrix::identity(n, n) - fy / b);
            let j_x = &jp * (fx / -b);
            Ok(FixedPointJacobians { j_y, j_x, mask })
        }
        JacobianMode::FiniteDifference => {
            // Differencing across a kink of the projection gives a meaningless
            // slope, so every probe must stay on the base activity pattern.
            let probe = |yy: &DVector<f64>, xx: &DVector<f64>, calls: &mut usize| -> Result<DVector<f64>> {
                let index = *calls / 2;
                *calls += 1;
                let uu = yy - inner.eval(yy, xx)? / b;
                if set.activity(&uu)? != mask {
                    return Err(Error::NonsmoothPoint { index, distance: FD_STEP });
                }
                set.project(&uu)
            };
            let mut calls = 0;
            let j_y = fd_jacobian(|yy| probe(yy, x, &mut calls), y, FD_STEP)?;
            let mut calls = y.len() * 2;
            let j_x = fd_jacobian(|xx| probe(y, xx, &mut calls), x, FD_STEP)?;
            Ok(FixedPointJacobians { j_y, j_x, mask })
        }
    }
}

/// Running `∇_x y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItdState {
    pub grad_xy: DMatrix<f64>,
    pub t: usize,
}

impl ItdState {
    /// Zero initialization, `∇_x y_0 = 0`.
    pub fn new(dim_y: usize, dim_x: usize) -> Self {
        Self {
            grad_xy: DMatrix::zeros(dim_y, dim_x),
            t: 0,
        }
    }

    pub fn from_matrix(grad_xy: DMatrix<f64>) -> Self {
        Self { grad_xy, t: 0 }
    }

    /// `grad_xy ← J_y · grad_xy + J_x`.
    pub fn propagate(&mut self, jac: &FixedPointJacobians) -> Result<()> {
        if jac.j_y.ncols() != self.grad_xy.nrows() || jac.j_x.shape() != self.grad_xy.shape() {
            return Err(Error::InvalidInput(format!(
                "Jacobian shapes {:?}, {:?} do not match gradient shape {:?}",
                jac.j_y.shape(),
                jac.j_x.shape(),
                self.grad_xy.shape()
            )));
        }
        let next = &jac.j_y * &self.grad_xy + &jac.j_x;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite implicit gradient at t = {}", self.t + 1)));
        }
        self.grad_xy = next;
        self.t += 1;
        Ok(())
    }

    /// `‖(I − J_y)·grad_xy − J_x‖_F`, zero at the fixed point of the recursion.
    pub fn linear_residual(&self, jac: &FixedPointJacobians) -> f64 {
        (&self.grad_xy - &jac.j_y * &self.grad_xy - &jac.j_x).norm()
    }
}

/// `∇_x f(y, x) + grad_xyᵀ ∇_y f(y, x)`.
pub fn hypergradient(
    instance: &InstanceSpec,
    y: &DVector<f64>,
    x: &DVector<f64>,
    grad_xy: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    instance.check_y(y)?;
    instance.check_x(x)?;
    if grad_xy.shape() != (instance.dim_y(), instance.dim_x()) {
        return Err(Error::InvalidInput(format!(
            "implicit gradient has shape {:?}, expected {:?}",
            grad_xy.shape(),
            (instance.dim_y(), instance.dim_x())
        )));
    }
    let outer = instance.outer();
    Ok(outer.grad_x(y, x) + grad_xy.transpose() * outer.grad_y(y, x))
}

/// Result of [`unroll`].
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// Inner trajectory; `inner.t` counts the `y` updates actually made.
    pub inner: InnerState,
    /// `∇_x y_T` after all propagation steps.
    pub itd: ItdState,
    /// `∇_x y_t` for `t = 0..=T`.
    pub grad_history: Vec<DMatrix<f64>>,
}

impl Unrolled {
    pub fn y(&self) -> &DVector<f64> {
        &self.inner.y
    }
}

/// Runs `steps` fixed-point updates from `y0` with one Jacobian propagation
/// per update.
///
/// Once `φ_ab(y_t, x) ≤ inner_tol` the iterate is frozen but propagation
/// continues at it, so the Jacobian recursion always runs `steps` times.
/// `grad0` overrides the zero initialization.
pub fn unroll(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    y0: &DVector<f64>,
    steps: usize,
    inner_tol: f64,
    grad0: Option<&DMatrix<f64>>,
) -> Result<Unrolled> {
    instance.check_x(x)?;
    instance.check_y(y0)?;
    let dist = instance.set_y().distance(y0)?;
    if dist > FEASIBILITY_TOL {
        return Err(Error::InvalidInput(format!("initial point is {dist:e} away from Y")));
    }
    let params = instance.dgap();
    let mode = instance.jacobian_mode();
    let mut itd = match grad0 {
        Some(g) => ItdState::from_matrix(g.clone()),
        None => ItdState::new(instance.dim_y(), instance.dim_x()),
    };
    let mut y = y0.clone();
    let mut eval = dgap_eval(instance, &y, x, params)?;
    let mut inner = InnerState {
        y: y.clone(),
        t: 0,
        iterates: vec![y.clone()],
        dgap_history: vec![eval.value],
        step_history: Vec::new(),
    };
    let mut grad_history = Vec::with_capacity(steps + 1);
    grad_history.push(itd.grad_xy.clone());
    let mut frozen = inner_tol > 0.0 && eval.value <= inner_tol;
    for _ in 0..steps {
        let jac = fixed_point_jacobians(instance, &y, x, params.b(), mode)?;
        itd.propagate(&jac)?;
        grad_history.push(itd.grad_xy.clone());
        if frozen {
            continue;
        }
        let next = eval.at_b.z.clone();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite iterate at t = {}", inner.t + 1)));
        }
        inner.step_history.push((&next - &y).norm());
        y = next;
        eval = dgap_eval(instance, &y, x, params)?;
        inner.iterates.push(y.clone());
        inner.dgap_history.push(eval.value);
        inner.t += 1;
        frozen = inner_tol > 0.0 && eval.value <= inner_tol;
    }
    inner.y = y;
    Ok(Unrolled {
        inner,
        itd,
        grad_history,
    })
}

/// Empirical constants of the implicit-gradient error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianConstants {
    /// Lipschitz constant of `y ↦ ∇_x z*_b(y, x)` (Frobenius norm).
    pub l_x: f64,
    /// Lipschitz constant of `y ↦ ∇_y z*_b(y, x)` (spectral norm).
    pub l_y: f64,
    /// `sup ‖∇_x z*_b(y, x)‖_F`.
    pub c_prime: f64,
    /// Bound on `‖y‖` over `Y` and on `‖y_0 − y*‖`.
    pub c_y: f64,
    /// Contraction coefficient of `z*_b(·, x)`.
    pub q: f64,
}

impl JacobianConstants {
    /// `(L_x + L_y C'/(1−q)) C_y q^{T−1} T + C'/(1−q) q^T`.
    pub fn prop1_bound(&self, t: usize) -> f64 {
        let tail = self.c_prime / (1.0 - self.q);
        let lead = if t == 0 {
            0.0
        } else {
            (self.l_x + self.l_y * tail) * self.c_y * self.q.powi(t as i32 - 1) * t as f64
        };
        lead + tail * self.q.powi(t as i32)
    }

    /// `‖∇_x y*‖` bound `C'/(1−q)`.
    pub fn implicit_grad_bound(&self) -> f64 {
        self.c_prime / (1.0 - self.q)
    }
}

/// Estimates [`JacobianConstants`] at `x`.
///
/// `trajectory` is an inner run from `trajectory[0]` and `y_star` a reference
/// solution. Lipschitz ratios are taken between `y*` and the trajectory
/// points plus `samples` random points of `Y`; random points on a different
/// smooth piece of the projection than `y*` are skipped, since the Jacobian
/// jumps across pieces. `q` is the largest of the fitted rate `q_fit`, the
/// largest `‖∇_y z*_b‖₂` seen, and the largest observed one-step error ratio.
pub fn estimate_jacobian_constants(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    trajectory: &[DVector<f64>],
    y_star: &DVector<f64>,
    q_fit: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<JacobianConstants> {
    let Some(y0) = trajectory.first() else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let b = instance.dgap().b();
    let mode = instance.jacobian_mode();
    let star = fixed_point_jacobians(instance, y_star, x, b, mode)?;

    let mut points: Vec<DVector<f64>> = trajectory.to_vec();
    for _ in 0..samples {
        points.push(instance.set_y().sample(rng)?);
    }

    let mut l_x: f64 = 0.0;
    let mut l_y: f64 = 0.0;
    let mut c_prime = star.j_x.norm();
    let mut q = q_fit.max(spectral_norm(&star.j_y));
    for (i, p) in points.iter().enumerate() {
        let jac = match fixed_point_jacobians(instance, p, x, b, mode) {
            Ok(j) => j,
            Err(Error::NonsmoothPoint { .. }) => continue,
            Err(e) => return Err(e),
        };
        c_prime = c_prime.max(jac.j_x.norm());
        let on_trajectory = i < trajectory.len();
        if !on_trajectory && jac.mask != star.mask {
            continue;
        }
        if on_trajectory {
            q = q.max(spectral_norm(&jac.j_y));
        }
        let d = (p - y_star).norm();
        if d > 1e-8 {
            l_x = l_x.max((&jac.j_x - &star.j_x).norm() / d);
            l_y = l_y.max(spectral_norm(&(&jac.j_y - &star.j_y)) / d);
        }
    }
    let errors: Vec<f64> = trajectory.iter().map(|y| (y - y_star).norm()).collect();
    for w in errors.windows(2) {
        if w[0] > 1e-10 {
            q = q.max(w[1] / w[0]);
        }
    }
    if !(q < 1.0) {
        return Err(Error::NumericalFailure(format!("estimated contraction coefficient {q} is not below 1")));
    }
    let c_y = instance.set_y().max_norm().max((y0 - y_star).norm());
    Ok(JacobianConstants {
        l_x,
        l_y,
        c_prime,
        c_y,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merit::DGapParams;
    use crate::model::{InnerMap, OuterObjective};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalar() -> InstanceSpec {
        InstanceSpec::new(
            InnerMap::new(1, 1, 1.0, |y, x| y - x).with_jacobians(
                |_, _| DMatrix::identity(1, 1),
                |_, _| DMatrix::from_element(1, 1, -1.0),
            ),
            OuterObjective::new(|y, _| (y[0] - 0.25).powi(2), |y, _| dv(&[2.0 * (y[0] - 0.25)]), |_, _| dv(&[0.0])),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::default(),
        )
        .unwrap()
    }

    fn affine_2d() -> InstanceSpec {
        InstanceSpec::new(
            InnerMap::new(2, 2, 2.0, |y, x| y * 2.0 - x).with_jacobians(
                |_, _| DMatrix::identity(2, 2) * 2.0,
                |_, _| -DMatrix::identity(2, 2),
            ),
            OuterObjective::new(|y, _| y.norm_squared(), |y, _| y * 2.0, |_, x| DVector::zeros(x.len())),
            ConvexSet::cube(2, 0.0, 1.0).unwrap(),
            ConvexSet::cube(2, -1.0, 1.0).unwrap(),
            DGapParams::new(1.0, 4.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_jacobians_by_hand() {
        let inst = scalar();
        let j = fixed_point_jacobians(&inst, &dv(&[0.3]), &dv(&[0.5]), 2.0, JacobianMode::Analytic).unwrap();
        assert!((j.j_y[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((j.j_x[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clamped_point_has_zero_jacobians() {
        let inst = affine_2d();
        // u = y − (2y − x)/4 = y/2 + x/4 with y = 0, x = -1 gives u = -1/4 < 0.
        let j = fixed_point_jacobians(&inst, &dv(&[0.0, 0.0]), &dv(&[-1.0, -1.0]), 4.0, JacobianMode::Analytic).unwrap();
        assert_eq!(j.j_y, DMatrix::zeros(2, 2));
        assert_eq!(j.j_x, DMatrix::zeros(2, 2));
    }

    #[test]
    fn affine_analytic_matches_fd() {
        let inst = affine_2d();
        let (y, x) = (dv(&[0.4, 0.6]), dv(&[0.2, 0.9]));
        let a = fixed_point_jacobians(&inst, &y, &x, 4.0, JacobianMode::Analytic).unwrap();
        let f = fixed_point_jacobians(&inst, &y, &x, 4.0, JacobianMode::FiniteDifference).unwrap();
        assert!((&a.j_y - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        assert!((&a.j_x - DMatrix::identity(2, 2) * 0.25).norm() < 1e-15);
        assert!((&a.j_y - &f.j_y).norm() < 1e-7);
        assert!((&a.j_x - &f.j_x).norm() < 1e-7);
    }

    #[test]
    fn boundary_point_is_refused() {
        let inst = scalar();
        // u = (y + x)/2 = 1 exactly.
        let r = fixed_point_jacobians(&inst, &dv(&[1.0]), &dv(&[1.0]), 2.0, JacobianMode::Analytic);
        assert!(matches!(r, Err(Error::NonsmoothPoint { index: 0, .. })));
    }

    #[test]
    fn simplex_projection_jacobian() {
        let set = ConvexSet::new_simplex(3).unwrap();
        // Projection of (0.6, 0.5, -1) keeps the first two coordinates.
        let jp = projection_jacobian(&set, &dv(&[0.6, 0.5, -1.0])).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.5, -0.5, 0.0, -0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((jp - expected).norm() < 1e-15);
    }

    #[test]
    fn halfspaces_need_fd_mode() {
        let set = ConvexSet::new_halfspaces(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            dv(&[1.0]),
            dv(&[0.0, 0.0]),
            None,
        )
        .unwrap();
        assert!(matches!(
            projection_jacobian(&set, &dv(&[0.0, 0.0])),
            Err(Error::UnsupportedAnalytic(_))
        ));
    }

    #[test]
    fn scalar_recursion_is_geometric() {
        let inst = scalar();
        let u = unroll(&inst, &dv(&[0.5]), &dv(&[0.0]), 30, 0.0, None).unwrap();
        for (t, g) in u.grad_history.iter().enumerate() {
            assert!((g[(0, 0)] - (1.0 - 0.5f64.powi(t as i32))).abs() < 1e-15);
        }
        let h = hypergradient(&inst, u.y(), &dv(&[0.5]), &u.itd.grad_xy).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn fixed_clamped_jacobian_is_stationary() {
        let jac = FixedPointJacobians {
            j_y: DMatrix::zeros(1, 1),
            j_x: DMatrix::from_element(1, 1, 0.7),
            mask: vec![],
        };
        let mut s = ItdState::new(1, 1);
        for _ in 0..5 {
            s.propagate(&jac).unwrap();
            assert_eq!(s.grad_xy[(0, 0)], 0.7);
        }
        assert_eq!(s.t, 5);
    }

    #[test]
    fn affine_recursion_reaches_linear_solve() {
        let inst = affine_2d();
        let x = dv(&[0.3, 0.8]);
        let u = unroll(&inst, &x, &dv(&[0.5, 0.5]), 60, 0.0, None).unwrap();
        assert!((&u.itd.grad_xy - DMatrix::identity(2, 2) * 0.5).norm() < 1e-12);
        let jac = fixed_point_jacobians(&inst, u.y(), &x, 4.0, JacobianMode::Analytic).unwrap();
        assert!(u.itd.linear_residual(&jac) <= 1e-8);
    }

    #[test]
    fn y_independent_objective_gives_partial_gradient() {
        let inst = InstanceSpec::new(
            InnerMap::new(1, 1, 1.0, |y, x| y - x),
            OuterObjective::new(|_, x| x[0] * x[0], |y, _| DVector::zeros(y.len()), |_, x| x * 2.0),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::default(),
        )
        .unwrap();
        let g = hypergradient(&inst, &dv(&[0.2]), &dv(&[0.3]), &DMatrix::from_element(1, 1, 9.0)).unwrap();
        assert_eq!(g, dv(&[0.6]));
    }

    #[test]
    fn freeze_keeps_propagating() {
        let inst = scalar();
        let u = unroll(&inst, &dv(&[0.5]), &dv(&[0.5]), 10, 1e-12, None).unwrap();
        assert_eq!(u.inner.t, 0);
        assert_eq!(u.itd.t, 10);
        assert!((u.itd.grad_xy[(0, 0)] - (1.0 - 0.5f64.powi(10))).abs() < 1e-15);
    }

    #[test]
    fn scalar_constants_and_bound() {
        let inst = scalar();
        let x = dv(&[0.5]);
        let u = unroll(&inst, &x, &dv(&[0.0]), 50, 0.0, None).unwrap();
        let mut rng = SeededRng::new(3);
        let c = estimate_jacobian_constants(&inst, &x, &u.inner.iterates, &x, 0.5, 50, &mut rng).unwrap();
        assert_eq!(c.l_x, 0.0);
        assert_eq!(c.l_y, 0.0);
        assert!((c.c_prime - 0.5).abs() < 1e-15);
        assert!((c.q - 0.5).abs() < 1e-12);
        for t in 0..=50 {
            let err = (u.grad_history[t][(0, 0)] - 1.0).abs();
            assert!(err <= c.prop1_bound(t) * (1.0 + 1e-9));
        }
    }
}

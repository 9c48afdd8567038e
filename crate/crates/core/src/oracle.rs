//! Reference computations that do not go through the ITD recursion:
//! finite-difference implicit gradients and hypergradients, brute-force grid
//! solves, and empirical checks of the error bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner::{estimate_rate, solve_reference, solve_to_stagnation, InnerState, RateEstimate, REFERENCE_ITERS};
use crate::itd::{estimate_jacobian_constants, fixed_point_jacobians, hypergradient, unroll};
use crate::linalg::linear_fit;
use crate::merit::dgap_eval;
use crate::model::{ConvexSet, InstanceSpec, JacobianMode, FD_STEP};
use crate::outer::{epsilon_t, estimate_smoothness, initial_y, run, theorem2_bound, OuterConfig, LIPSCHITZ_SAMPLES};
use crate::rng::SeededRng;

/// Absolute slack for quantities computed to machine precision.
pub const ROUNDING_FLOOR: f64 = 1e-15;

/// Relative accuracy of implicit gradients built from the instance's
/// Jacobians: rounding level for closed forms, and the `ε/h` cancellation
/// level of central differences otherwise.
pub fn jacobian_noise_floor(instance: &InstanceSpec) -> f64 {
    match instance.jacobian_mode() {
        JacobianMode::Analytic => 1e-12,
        JacobianMode::FiniteDifference => 1e-9,
    }
}

/// Step used when inner-solve noise swamps the default one.
pub const FD_FALLBACK_STEP: f64 = 1e-4;
/// Relative margin within which a bound violation is only a warning.
pub const BOUND_WARNING_MARGIN: f64 = 0.05;
/// Random points of `Y` used when estimating Jacobian constants.
pub const CONSTANT_SAMPLES: usize = 64;
/// Minimum trajectory length inspected for the inner-rate envelope.
pub const ENVELOPE_HORIZON: usize = 50;
/// Outer iterations of the rate check inside [`verify_bounds`].
pub const THM2_ITERS: usize = 50;

/// Over-solved inner solution from `P_Y(0)`.
pub fn reference_solution(instance: &InstanceSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(solve_reference(instance, x, &initial_y(instance)?)?.y)
}

/// `∇_x y*(x)`: the closed form when the instance has one, otherwise
/// `(I − J_y)⁻¹ J_x` at the reference solution.
pub fn reference_implicit_gradient(instance: &InstanceSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if let Some(k) = instance.known_solution() {
        return Ok(k.implicit_grad(x));
    }
    let y = reference_solution(instance, x)?;
    linear_solve_gradient(instance, &y, x)
}

fn linear_solve_gradient(instance: &InstanceSpec, y: &DVector<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let jac = fixed_point_jacobians(instance, y, x, instance.dgap().b(), instance.jacobian_mode())?;
    let n = y.len();
    (DMatrix::identity(n, n) - &jac.j_y)
        .lu()
        .solve(&jac.j_x)
        .ok_or_else(|| Error::NumericalFailure("I − J_y is singular".into()))
}

/// `∇_x f(y*(x), x)` from the reference solution and gradient.
pub fn reference_hypergradient(instance: &InstanceSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let y = match instance.known_solution() {
        Some(k) => k.y_star(x),
        None => reference_solution(instance, x)?,
    };
    let g = match instance.known_solution() {
        Some(k) => k.implicit_grad(x),
        None => linear_solve_gradient(instance, &y, x)?,
    };
    hypergradient(instance, &y, x, &g)
}

/// A reference solve together with the activity pattern of `z*_b` there.
struct Probe {
    y: DVector<f64>,
    activity: Vec<i8>,
    residual: f64,
}

fn probe(instance: &InstanceSpec, x: &DVector<f64>, t_ref: usize) -> Result<Probe> {
    let state: InnerState = solve_to_stagnation(instance, x, &initial_y(instance)?, t_ref)?;
    let y = state.y;
    let eval = dgap_eval(instance, &y, x, instance.dgap())?;
    let u = &y - instance.inner().eval(&y, x)? / instance.dgap().b();
    Ok(Probe {
        activity: instance.set_y().activity(&u)?,
        residual: eval.at_b.residual.norm(),
        y,
    })
}

/// Central differences of `x ↦ y*(x)` from reference solves.
///
/// Falls back to [`FD_FALLBACK_STEP`] when the fixed-point residual of the
/// reference solves exceeds `h³`, i.e. when solver noise divided by `h`
/// would exceed the `O(h²)` truncation error.
pub fn fd_implicit_gradient(instance: &InstanceSpec, x: &DVector<f64>, h: f64, t_ref: usize) -> Result<DMatrix<f64>> {
    let (g, noisy) = fd_implicit_gradient_once(instance, x, h, t_ref)?;
    if noisy && h < FD_FALLBACK_STEP {
        return Ok(fd_implicit_gradient_once(instance, x, FD_FALLBACK_STEP, t_ref)?.0);
    }
    Ok(g)
}

fn fd_implicit_gradient_once(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    h: f64,
    t_ref: usize,
) -> Result<(DMatrix<f64>, bool)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    instance.check_x(x)?;
    let base = probe(instance, x, t_ref)?;
    let mut g = DMatrix::zeros(instance.dim_y(), x.len());
    let mut worst_residual = base.residual;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let (p, m) = (probe(instance, &xp, t_ref)?, probe(instance, &xm, t_ref)?);
        if p.activity != base.activity || m.activity != base.activity {
            return Err(Error::NonsmoothNeighborhood { coordinate: j });
        }
        worst_residual = worst_residual.max(p.residual).max(m.residual);
        g.set_column(j, &((p.y - m.y) / (xp[j] - xm[j])));
    }
    Ok((g, worst_residual > h.powi(3)))
}

/// Central differences of the reduced objective `x ↦ f(y*(x), x)`.
pub fn fd_hypergradient(instance: &InstanceSpec, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    instance.check_x(x)?;
    let base = probe(instance, x, REFERENCE_ITERS)?;
    let outer = instance.outer();
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let (p, m) = (probe(instance, &xp, REFERENCE_ITERS)?, probe(instance, &xm, REFERENCE_ITERS)?);
        if p.activity != base.activity || m.activity != base.activity {
            return Err(Error::NonsmoothNeighborhood { coordinate: j });
        }
        g[j] = (outer.value(&p.y, &xp) - outer.value(&m.y, &xm)) / (xp[j] - xm[j]);
    }
    Ok(g)
}

/// Default grid resolution per axis.
pub fn default_grid_resolution(dim_y: usize) -> usize {
    if dim_y <= 2 {
        1001
    } else {
        101
    }
}

/// Grid point of `Y` minimizing `φ_ab(·, x)`. `Y` must be a box or simplex
/// of dimension at most 3; `resolution` counts points per axis.
pub fn grid_vi_solve(instance: &InstanceSpec, x: &DVector<f64>, resolution: usize) -> Result<DVector<f64>> {
    let n = instance.dim_y();
    if n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    if resolution < 2 {
        return Err(Error::InvalidInput(format!("grid resolution must be at least 2, got {resolution}")));
    }
    instance.check_x(x)?;
    let params = instance.dgap();
    let steps = resolution - 1;
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |y: DVector<f64>| -> Result<()> {
        let v = dgap_eval(instance, &y, x, params)?.value;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, y));
        }
        Ok(())
    };
    let mut idx = vec![0usize; n];
    match instance.set_y() {
        ConvexSet::Box(b) => loop {
            let y = DVector::from_fn(n, |i, _| {
                let frac = idx[i] as f64 / steps as f64;
                b.lower()[i] + frac * (b.upper()[i] - b.lower()[i])
            });
            consider(y)?;
            if !advance(&mut idx, steps) {
                break;
            }
        },
        // Barycentric lattice: coordinates i/steps summing to 1.
        ConvexSet::Simplex(_) => loop {
            let head: usize = idx[..n - 1].iter().sum();
            if head <= steps {
                let mut y = DVector::from_fn(n, |i, _| idx[i] as f64 / steps as f64);
                y[n - 1] = (steps - head) as f64 / steps as f64;
                consider(y)?;
            }
            if n == 1 || !advance(&mut idx[..n - 1], steps) {
                break;
            }
        },
        other => {
            return Err(Error::InvalidInput(format!(
                "grid solve supports boxes and simplices, not a {}",
                other.variant_name()
            )))
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

fn advance(idx: &mut [usize], max: usize) -> bool {
    for v in idx.iter_mut() {
        if *v < max {
            *v += 1;
            return true;
        }
        *v = 0;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Satisfied,
    /// Exceeded, but by less than [`BOUND_WARNING_MARGIN`].
    Warning,
    Violated,
    NotEvaluated,
}

impl BoundStatus {
    /// `measured` against `bound`, allowing relative slack `1e-9` and
    /// absolute slack `1e-15` for rounding.
    pub fn classify(measured: f64, bound: f64) -> Self {
        Self::classify_with_floor(measured, bound, ROUNDING_FLOOR)
    }

    /// [`classify`](Self::classify) with an explicit absolute slack, for
    /// measurements whose own accuracy is `floor`.
    pub fn classify_with_floor(measured: f64, bound: f64, floor: f64) -> Self {
        if !(measured.is_finite() && bound.is_finite()) {
            return Self::NotEvaluated;
        }
        if measured <= bound * (1.0 + 1e-9) + floor {
            Self::Satisfied
        } else if measured <= bound * (1.0 + BOUND_WARNING_MARGIN) + floor {
            Self::Warning
        } else {
            Self::Violated
        }
    }

    /// Worst of two statuses; `NotEvaluated` only when both are.
    pub fn worst(self, other: Self) -> Self {
        use BoundStatus::*;
        match (self, other) {
            (Violated, _) | (_, Violated) => Violated,
            (Warning, _) | (_, Warning) => Warning,
            (Satisfied, _) | (_, Satisfied) => Satisfied,
            _ => NotEvaluated,
        }
    }

    pub fn is_ok(self) -> bool {
        matches!(self, Self::Satisfied | Self::Warning)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Satisfied => "satisfied",
            Self::Warning => "warning",
            Self::Violated => "violated",
            Self::NotEvaluated => "not_evaluated",
        }
    }
}

/// Every estimated constant; all finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatedConstants {
    pub q_hat: f64,
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub delta_hat: f64,
    pub c_y_hat: f64,
    pub c_prime_hat: f64,
    pub l_x_hat: f64,
    pub l_y_hat: f64,
    pub l_s_hat: f64,
    pub l_f_hat: f64,
    pub m_hat: f64,
    /// Contraction coefficient used in the implicit-gradient bound.
    pub q_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub x: DVector<f64>,
    /// ITD gradient after the largest `T` checked.
    pub itd_grad: DMatrix<f64>,
    /// Finite-difference oracle; `None` when the stencil crosses a kink.
    pub fd_grad: Option<DMatrix<f64>>,
    /// `‖itd_grad − fd_grad‖_F`.
    pub abs_err: Option<f64>,
    /// `abs_err / max(1e−12, ‖fd_grad‖_F)`.
    pub rel_err: Option<f64>,
    pub constants: EstimatedConstants,
    pub lemma6: BoundStatus,
    pub prop1: BoundStatus,
    pub thm2: BoundStatus,
}

/// One row per checked `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub t: usize,
    /// `‖∇_x y_T − ∇_x y*‖_F` against the reference gradient.
    pub abs_err: f64,
    pub rel_err: f64,
    pub prop1_bound: f64,
    pub prop1_status: BoundStatus,
    /// Inner-rate envelope dominates `‖y_T − y*‖`.
    pub lemma6_envelope_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub report: OracleReport,
    /// `‖y_t − y*‖` along the inner trajectory.
    pub inner_errors: Vec<f64>,
    pub rate: Option<RateEstimate>,
    /// Outer rate check: measured `min_k ‖∇f(y*(x_k), x_k)‖²` and its bound.
    pub thm2_measured: Option<f64>,
    pub thm2_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Outer iterations for the rate check (`0` skips it).
    pub thm2_iters: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            thm2_iters: THM2_ITERS,
        }
    }
}

/// Runs the inner solver and ITD from `P_Y(0)` at `x`, estimates every
/// constant, and checks the inner envelope, the implicit-gradient bound for
/// each `T` in `t_range`, and the outer rate bound.
///
/// Row errors are measured against the closed-form `∇_x y*` when the
/// instance has one and against `(I − J_y)⁻¹ J_x` at the reference solution
/// otherwise; the independent finite-difference oracle is compared with the
/// ITD gradient at the largest `T`.
pub fn verify_bounds(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    t_range: &[usize],
    options: VerifyOptions,
) -> Result<VerifyReport> {
    instance.check_x(x)?;
    let t_max = t_range.iter().copied().max().unwrap_or(0);
    let horizon = t_max.max(ENVELOPE_HORIZON);
    let y0 = initial_y(instance)?;
    let unrolled = unroll(instance, x, &y0, horizon, 0.0, None)?;
    let y_star = match instance.known_solution() {
        Some(k) => k.y_star(x),
        None => reference_solution(instance, x)?,
    };
    let g_star = reference_implicit_gradient(instance, x)?;

    let inner_errors: Vec<f64> = unrolled.inner.iterates.iter().map(|y| (y - &y_star).norm()).collect();
    let rate = match estimate_rate(&unrolled.inner, &y_star) {
        Ok(r) => Some(r),
        Err(Error::DegenerateFit { .. } | Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let phi0 = unrolled.inner.dgap_history[0];
    let envelope_ok = |t: usize| -> bool {
        match (&rate, inner_errors.get(t)) {
            (Some(r), Some(&e)) => BoundStatus::classify(e, r.envelope(phi0, t)).is_ok(),
            _ => false,
        }
    };
    let mut lemma6 = BoundStatus::NotEvaluated;
    if let Some(r) = &rate {
        for (t, &e) in inner_errors.iter().enumerate() {
            lemma6 = lemma6.worst(BoundStatus::classify(e, r.envelope(phi0, t)));
        }
    }

    let mut rng = SeededRng::new(options.seed);
    let q_fit = rate.map_or(0.0, |r| r.q_hat);
    let consts = estimate_jacobian_constants(
        instance,
        x,
        &unrolled.inner.iterates,
        &y_star,
        q_fit,
        CONSTANT_SAMPLES,
        &mut rng,
    )?;

    let g_norm = g_star.norm().max(1e-12);
    let floor = match instance.jacobian_mode() {
        JacobianMode::Analytic => ROUNDING_FLOOR,
        JacobianMode::FiniteDifference => jacobian_noise_floor(instance) * g_norm.max(1.0),
    };
    let mut prop1 = BoundStatus::NotEvaluated;
    let rows: Vec<VerifyRow> = t_range
        .iter()
        .map(|&t| {
            let abs_err = (&unrolled.grad_history[t] - &g_star).norm();
            let bound = consts.prop1_bound(t);
            let status = BoundStatus::classify_with_floor(abs_err, bound, floor);
            prop1 = prop1.worst(status);
            VerifyRow {
                t,
                abs_err,
                rel_err: abs_err / g_norm,
                prop1_bound: bound,
                prop1_status: status,
                lemma6_envelope_ok: envelope_ok(t),
            }
        })
        .collect();

    let itd_grad = unrolled.grad_history[t_max].clone();
    let fd_grad = match fd_implicit_gradient(instance, x, FD_STEP, REFERENCE_ITERS) {
        Ok(g) => Some(g),
        Err(Error::NonsmoothNeighborhood { .. }) => None,
        Err(e) => return Err(e),
    };
    let abs_err = fd_grad.as_ref().map(|f| (&itd_grad - f).norm());
    let rel_err = fd_grad.as_ref().zip(abs_err).map(|(f, a)| a / f.norm().max(1e-12));

    let smooth = estimate_smoothness(instance, t_max.max(1), LIPSCHITZ_SAMPLES, options.seed)?;
    let mut thm2 = BoundStatus::NotEvaluated;
    let (mut thm2_measured, mut thm2_bound_value) = (None, None);
    if options.thm2_iters > 0 {
        if let Some(r) = &rate {
            let config = OuterConfig {
                k: options.thm2_iters,
                t: t_max.max(1),
                beta: Some(0.9 / (2.0 * smooth.l_f_hat)),
                grad_stop: None,
                seed: options.seed,
                track_true_gradient: true,
                ..OuterConfig::default()
            };
            let trace = run(instance, x, &config)?;
            if trace.abort.is_none() {
                let f0 = trace.records[0].f_value;
                let eps = epsilon_t(
                    smooth.l_f_hat,
                    smooth.l_s_hat,
                    smooth.m_hat,
                    trace.summary.beta,
                    r,
                    phi0,
                    &consts,
                    config.t,
                );
                thm2_bound_value = theorem2_bound(f0, trace.summary.f_best, trace.summary.beta, smooth.l_f_hat, config.k, eps);
                thm2_measured = trace.summary.min_true_grad_norm_sq;
                if let (Some(m), Some(b)) = (thm2_measured, thm2_bound_value) {
                    thm2 = BoundStatus::classify(m, b);
                }
            }
        }
    }

    let constants = EstimatedConstants {
        q_hat: q_fit,
        c1_hat: rate.map_or(0.0, |r| r.c1_hat),
        c2_hat: rate.map_or(0.0, |r| r.c2_hat),
        delta_hat: rate.map_or(0.0, |r| r.delta_hat),
        c_y_hat: consts.c_y,
        c_prime_hat: consts.c_prime,
        l_x_hat: consts.l_x,
        l_y_hat: consts.l_y,
        l_s_hat: smooth.l_s_hat,
        l_f_hat: smooth.l_f_hat,
        m_hat: smooth.m_hat,
        q_bound: consts.q,
    };
    Ok(VerifyReport {
        rows,
        report: OracleReport {
            x: x.clone(),
            itd_grad,
            fd_grad,
            abs_err,
            rel_err,
            constants,
            lemma6,
            prop1,
            thm2,
        },
        inner_errors,
        rate,
        thm2_measured,
        thm2_bound: thm2_bound_value,
    })
}

/// Slope of `log(abs_err)` against `T` over rows with `lo ≤ T ≤ hi` whose
/// relative error is above `noise_floor`.
pub fn decay_slope(rows: &[VerifyRow], lo: usize, hi: usize, noise_floor: f64) -> Option<f64> {
    let (ts, logs): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.t >= lo && r.t <= hi && r.rel_err > noise_floor)
        .map(|r| (r.t as f64, r.abs_err.ln()))
        .unzip();
    if ts.len() < 2 {
        return None;
    }
    Some(linear_fit(&ts, &logs).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_affine_box_from, make_scalar_clamp};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn fd_implicit_gradient_examples() {
        let inst = make_scalar_clamp().spec;
        let g = fd_implicit_gradient(&inst, &dv(&[0.5]), FD_STEP, 200).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-6);
        let g = fd_implicit_gradient(&inst, &dv(&[1.5]), FD_STEP, 200).unwrap();
        assert!(g[(0, 0)].abs() < 1e-8);

        let e = make_affine_box_from(DMatrix::identity(2, 2) * 2.0, -DMatrix::identity(2, 2), DVector::zeros(2), 2.0).unwrap();
        let g = fd_implicit_gradient(&e.spec, &dv(&[0.4, 1.2]), FD_STEP, 200).unwrap();
        assert!((g - DMatrix::identity(2, 2) * 0.5).norm() < 1e-6);
    }

    #[test]
    fn kink_in_stencil_detected() {
        let inst = make_scalar_clamp().spec;
        let r = fd_implicit_gradient(&inst, &dv(&[1.0]), FD_STEP, 200);
        assert!(matches!(r, Err(Error::NonsmoothNeighborhood { coordinate: 0 })));
    }

    #[test]
    fn grid_solve_examples() {
        let inst = make_scalar_clamp().spec;
        let y = grid_vi_solve(&inst, &dv(&[0.5]), 1001).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-3);
        let y = grid_vi_solve(&inst, &dv(&[2.0]), 1001).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn grid_solve_rejects_large_dimension() {
        let e = crate::problems::make_affine_box(4, 1).unwrap();
        assert!(matches!(
            grid_vi_solve(&e.spec, &DVector::zeros(4), 11),
            Err(Error::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn fd_hypergradient_scalar() {
        let inst = make_scalar_clamp().spec;
        let g = fd_hypergradient(&inst, &dv(&[0.5]), FD_STEP).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn classify_margins() {
        assert_eq!(BoundStatus::classify(1.0, 1.0), BoundStatus::Satisfied);
        assert_eq!(BoundStatus::classify(1.03, 1.0), BoundStatus::Warning);
        assert_eq!(BoundStatus::classify(1.2, 1.0), BoundStatus::Violated);
        assert_eq!(BoundStatus::Satisfied.worst(BoundStatus::Warning), BoundStatus::Warning);
        assert_eq!(BoundStatus::NotEvaluated.worst(BoundStatus::Satisfied), BoundStatus::Satisfied);
    }

    #[test]
    fn verify_scalar_instance() {
        let inst = make_scalar_clamp().spec;
        let t_range: Vec<usize> = (0..=30).collect();
        let v = verify_bounds(&inst, &dv(&[0.5]), &t_range, VerifyOptions::default()).unwrap();
        for row in &v.rows {
            assert!((row.abs_err - 0.5f64.powi(row.t as i32)).abs() <= 1e-9);
            assert!(row.prop1_status.is_ok());
        }
        // T = 0: the error is the whole implicit gradient.
        assert!((v.rows[0].abs_err - 1.0).abs() < 1e-15);
        assert!(v.report.lemma6.is_ok());
        assert!(v.report.prop1.is_ok());
        assert!(v.report.rel_err.unwrap() < 1e-5);
    }
}

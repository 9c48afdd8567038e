//! Fixed-point inner solver `y_{t+1} = z*_b(y_t, x)` and a-posteriori rate
//! estimation.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::merit::{dgap_eval, DGapEval};
use crate::model::{InstanceSpec, FEASIBILITY_TOL};

/// Default D-gap stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Iteration budget of an over-solved reference run.
pub const REFERENCE_ITERS: usize = 200;
/// Consecutive step increases that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 10;
/// Residuals at or below this are considered exact.
pub const DEGENERATE_FLOOR: f64 = 1e-14;
/// Residuals used in the log-linear fit must exceed this.
pub const REGRESSION_FLOOR: f64 = 1e-12;
/// Steps used for the C1/C2 ratios must exceed this; below it the D-gap
/// values are dominated by cancellation error.
pub const RATIO_STEP_FLOOR: f64 = 1e-8;

/// Trajectory of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerState {
    /// Current iterate `y_t`.
    pub y: DVector<f64>,
    /// Number of fixed-point updates performed.
    pub t: usize,
    /// `y_0, …, y_t`.
    pub iterates: Vec<DVector<f64>>,
    /// `φ_ab(y_0, x), …, φ_ab(y_t, x)`.
    pub dgap_history: Vec<f64>,
    /// `‖y_{s+1} − y_s‖` for `s < t`.
    pub step_history: Vec<f64>,
}

impl InnerState {
    pub fn final_dgap(&self) -> f64 {
        *self.dgap_history.last().expect("history holds the starting point")
    }
}

/// Runs at most `max_iter` updates, stopping once `φ_ab(y_t, x) ≤ tol`.
/// A tolerance of `0` disables the test: rounding in `φ_a − φ_b` can make
/// the computed D-gap nonpositive well before the iterate converges.
pub fn solve_inner(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    y0: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<InnerState> {
    solve_with(instance, x, y0, max_iter, tol, None)
}

/// Over-solved reference run: up to [`REFERENCE_ITERS`] updates, stopping
/// only when the iterate stagnates at machine precision.
///
/// A D-gap tolerance of `1e-14` would stop with `‖y − y*‖` near `1e-7`
/// (the D-gap is quadratic in the distance), which is too coarse for
/// finite-difference oracles, so stagnation is used instead.
pub fn solve_reference(instance: &InstanceSpec, x: &DVector<f64>, y0: &DVector<f64>) -> Result<InnerState> {
    solve_to_stagnation(instance, x, y0, REFERENCE_ITERS)
}

/// [`solve_reference`] with an explicit iteration budget.
pub fn solve_to_stagnation(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    y0: &DVector<f64>,
    max_iter: usize,
) -> Result<InnerState> {
    solve_with(instance, x, y0, max_iter, 0.0, Some(4.0 * f64::EPSILON))
}

fn solve_with(
    instance: &InstanceSpec,
    x: &DVector<f64>,
    y0: &DVector<f64>,
    max_iter: usize,
    tol: f64,
    stagnation: Option<f64>,
) -> Result<InnerState> {
    instance.check_x(x)?;
    instance.check_y(y0)?;
    let dist = instance.set_y().distance(y0)?;
    if dist > FEASIBILITY_TOL {
        return Err(Error::InvalidInput(format!("initial point is {dist:e} away from Y")));
    }
    let params = instance.dgap();
    let mut y = y0.clone();
    let mut eval: DGapEval = dgap_eval(instance, &y, x, params)?;
    let mut state = InnerState {
        y: y.clone(),
        t: 0,
        iterates: vec![y.clone()],
        dgap_history: vec![eval.value],
        step_history: Vec::new(),
    };
    let mut rising = 0usize;
    for t in 0..max_iter {
        if tol > 0.0 && eval.value <= tol {
            break;
        }
        let next = eval.at_b.z.clone();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite iterate at t = {}", t + 1)));
        }
        let step = (&next - &y).norm();
        let scale = 1.0 + next.norm();
        if let Some(&prev) = state.step_history.last() {
            // Increases at roundoff level are noise, not divergence.
            if step > prev && step > 1e-10 * scale {
                rising += 1;
                if rising >= DIVERGENCE_WINDOW {
                    return Err(Error::Diverged { iteration: t + 1 });
                }
            } else {
                rising = 0;
            }
        }
        y = next;
        eval = dgap_eval(instance, &y, x, params)?;
        state.iterates.push(y.clone());
        state.dgap_history.push(eval.value);
        state.step_history.push(step);
        state.t = t + 1;
        if stagnation.is_some_and(|s| step <= s * scale) {
            break;
        }
    }
    state.y = y;
    Ok(state)
}

/// Empirical rate and D-gap constants of one inner trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// `exp(slope)` of the least-squares fit of `log‖y_t − y*‖` against `t`.
    pub q_hat: f64,
    /// `min_t (φ(y_t) − φ(y_{t+1})) / ‖y_t − y_{t+1}‖²`.
    pub c1_hat: f64,
    /// `max_t φ(y_{t+1}) / ‖y_t − y_{t+1}‖²`.
    pub c2_hat: f64,
    /// Largest step.
    pub delta_hat: f64,
    /// Fit quality of the log-linear regression.
    pub r_squared: f64,
}

impl RateEstimate {
    /// Per-step D-gap contraction `C2 / (C1 + C2)`.
    pub fn rho(&self) -> f64 {
        self.c2_hat / (self.c1_hat + self.c2_hat)
    }

    /// R-linear envelope
    /// `sqrt(φ_0 / C1) · (1 − sqrt ρ)^{-1} · ρ^{t/2}` on `‖y_t − y*‖`.
    pub fn envelope(&self, phi0: f64, t: usize) -> f64 {
        let sqrt_rho = self.rho().sqrt();
        (phi0.max(0.0) / self.c1_hat).sqrt() / (1.0 - sqrt_rho) * sqrt_rho.powi(t as i32)
    }

    /// Whether `φ(y_{t+1}) ≤ ρ·φ(y_t)` for every consecutive pair above the
    /// ratio window floor.
    pub fn dgap_ratio_holds(&self, state: &InnerState) -> bool {
        let rho = self.rho();
        state
            .step_history
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > RATIO_STEP_FLOOR)
            .all(|(t, _)| state.dgap_history[t + 1] <= rho * state.dgap_history[t] * (1.0 + 1e-9))
    }
}

/// Estimates `q`, `C1`, `C2`, `δ` from a trajectory and a reference solution.
pub fn estimate_rate(state: &InnerState, y_star: &DVector<f64>) -> Result<RateEstimate> {
    let residuals: Vec<f64> = state.iterates.iter().map(|y| (y - y_star).norm()).collect();
    if residuals.iter().all(|&r| r < DEGENERATE_FLOOR) {
        return Err(Error::DegenerateFit { floor: DEGENERATE_FLOOR });
    }
    let (ts, logs): (Vec<f64>, Vec<f64>) = residuals
        .iter()
        .enumerate()
        .take_while(|(_, &r)| r > REGRESSION_FLOOR)
        .map(|(t, r)| (t as f64, r.ln()))
        .unzip();
    if ts.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} residuals above {REGRESSION_FLOOR:e}, need 5",
            ts.len()
        )));
    }
    let (slope, _, r_squared) = linear_fit(&ts, &logs);

    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for (t, &step) in state.step_history.iter().enumerate() {
        if step <= RATIO_STEP_FLOOR {
            continue;
        }
        let sq = step * step;
        c1 = c1.min((state.dgap_history[t] - state.dgap_history[t + 1]) / sq);
        c2 = c2.max(state.dgap_history[t + 1] / sq);
    }
    if !c1.is_finite() {
        return Err(Error::InsufficientData(format!("no step above {RATIO_STEP_FLOOR:e}")));
    }
    if !(c1 > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "D-gap did not decrease along the trajectory (C1 estimate {c1:e})"
        )));
    }
    // A zero C2 would make the envelope degenerate; the smallest positive
    // value keeps ρ in (0, 1).
    let c2 = c2.max(f64::MIN_POSITIVE);
    let delta_hat = state.step_history.iter().copied().fold(0.0, f64::max);
    Ok(RateEstimate {
        q_hat: slope.exp(),
        c1_hat: c1,
        c2_hat: c2,
        delta_hat,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merit::{dgap, DGapParams};
    use crate::model::{ConvexSet, InnerMap, OuterObjective};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalar() -> InstanceSpec {
        InstanceSpec::new(
            InnerMap::new(1, 1, 1.0, |y, x| y - x),
            OuterObjective::new(|y, _| (y[0] - 0.25).powi(2), |y, _| dv(&[2.0 * (y[0] - 0.25)]), |_, _| dv(&[0.0])),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::new(1.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    fn affine_2d() -> InstanceSpec {
        InstanceSpec::new(
            InnerMap::new(2, 2, 2.0, |y, x| y * 2.0 - x),
            OuterObjective::new(|y, _| y.norm_squared(), |y, _| y * 2.0, |_, x| DVector::zeros(x.len())),
            ConvexSet::cube(2, 0.0, 1.0).unwrap(),
            ConvexSet::cube(2, -1.0, 1.0).unwrap(),
            DGapParams::new(1.0, 4.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_recursion_halves_error() {
        let inst = scalar();
        let s = solve_inner(&inst, &dv(&[0.5]), &dv(&[0.0]), 20, 0.0).unwrap();
        assert_eq!(s.t, 20);
        for (t, y) in s.iterates.iter().enumerate() {
            let expected = 0.5 * (1.0 - 0.5f64.powi(t as i32));
            assert!((y[0] - expected).abs() < 1e-15);
        }
        assert!((s.y[0] - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn starting_at_fixed_point_terminates_immediately() {
        let inst = scalar();
        let s = solve_inner(&inst, &dv(&[0.5]), &dv(&[0.5]), 50, DEFAULT_TOL).unwrap();
        assert_eq!(s.t, 0);
        assert!(s.final_dgap() <= DEFAULT_TOL);
    }

    #[test]
    fn affine_2d_contracts_by_half() {
        let inst = affine_2d();
        let x = dv(&[1.0, 1.0]);
        let s = solve_inner(&inst, &x, &dv(&[0.0, 1.0]), 30, 0.0).unwrap();
        let y_star = dv(&[0.5, 0.5]);
        for w in s.iterates.windows(2) {
            let (e0, e1) = ((&w[0] - &y_star).norm(), (&w[1] - &y_star).norm());
            if e0 > 1e-12 {
                assert!((e1 / e0 - 0.5).abs() < 1e-9);
            }
        }
        assert!((s.y - y_star).norm() < 1e-8);
    }

    #[test]
    fn dgap_descends_monotonically() {
        let inst = affine_2d();
        let s = solve_inner(&inst, &dv(&[0.3, -0.8]), &dv(&[1.0, 1.0]), 40, 0.0).unwrap();
        for w in s.dgap_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(s.dgap_history.iter().all(|&p| p >= -1e-10));
    }

    #[test]
    fn rate_estimate_on_scalar_instance() {
        let inst = scalar();
        let s = solve_inner(&inst, &dv(&[0.5]), &dv(&[0.0]), 50, 0.0).unwrap();
        let r = estimate_rate(&s, &dv(&[0.5])).unwrap();
        assert!((r.q_hat - 0.5).abs() < 0.01);
        // Exact values for this recursion: C1 = 3/4, C2 = 1/4.
        assert!((r.c1_hat - 0.75).abs() < 1e-6);
        assert!((r.c2_hat - 0.25).abs() < 1e-6);
        assert!(r.dgap_ratio_holds(&s));
        let phi0 = s.dgap_history[0];
        for (t, y) in s.iterates.iter().enumerate() {
            assert!((y[0] - 0.5).abs() <= r.envelope(phi0, t));
        }
        assert!(r.delta_hat >= s.step_history.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn constant_sequence_is_degenerate() {
        let y = dv(&[0.5]);
        let state = InnerState {
            y: y.clone(),
            t: 6,
            iterates: vec![y.clone(); 7],
            dgap_history: vec![0.0; 7],
            step_history: vec![0.0; 6],
        };
        assert!(matches!(estimate_rate(&state, &y), Err(Error::DegenerateFit { .. })));
    }

    #[test]
    fn short_trajectory_is_insufficient() {
        let inst = scalar();
        let s = solve_inner(&inst, &dv(&[0.5]), &dv(&[0.0]), 3, 0.0).unwrap();
        assert!(matches!(estimate_rate(&s, &dv(&[0.5])), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn infeasible_start_rejected() {
        let inst = scalar();
        assert!(matches!(
            solve_inner(&inst, &dv(&[0.5]), &dv(&[2.0]), 5, 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn expanding_map_diverges() {
        // F(y) = -y/2 is not monotone; the iteration on a huge box moves away from 0.
        let inst = InstanceSpec::new(
            InnerMap::new(1, 1, 1.0, |y, _| y * -2.0),
            OuterObjective::new(|_, _| 0.0, |y, _| DVector::zeros(y.len()), |_, x| DVector::zeros(x.len())),
            ConvexSet::cube(1, -1e12, 1e12).unwrap(),
            ConvexSet::cube(1, 0.0, 1.0).unwrap(),
            DGapParams::new(1.0, 2.0).unwrap(),
        )
        .unwrap();
        let r = solve_inner(&inst, &dv(&[0.0]), &dv(&[1e-3]), 100, 0.0);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn reference_run_reaches_machine_precision() {
        let inst = affine_2d();
        let x = dv(&[0.4, 0.9]);
        let s = solve_reference(&inst, &x, &dv(&[1.0, 0.0])).unwrap();
        assert!((&s.y - &x / 2.0).norm() < 1e-15);
        assert!(dgap(&inst, &s.y, &x, inst.dgap()).unwrap() < 1e-28);
    }
}

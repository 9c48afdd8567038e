//! Projected hypergradient descent over `X` and its rate diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner::RateEstimate;
use crate::itd::{hypergradient, unroll, JacobianConstants};
use crate::linalg::spectral_norm;
use crate::model::{InstanceSpec, FEASIBILITY_TOL};
use crate::oracle::{fd_hypergradient, reference_hypergradient, reference_implicit_gradient};
use crate::rng::SeededRng;

/// Inner starting point `P_Y(0)`.
pub fn initial_y(instance: &InstanceSpec) -> Result<DVector<f64>> {
    instance.set_y().project(&DVector::zeros(instance.dim_y()))
}

/// Default early-stopping threshold on `‖g_k‖²`.
pub const GRAD_STOP: f64 = 1e-16;
/// Random pairs used to estimate `L_f`.
pub const LIPSCHITZ_SAMPLES: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct OuterConfig {
    /// Outer iterations.
    pub k: usize,
    /// Inner iterations (and Jacobian propagations) per outer step.
    pub t: usize,
    /// Outer stepsize; `None` picks `0.9 / (2 L_f)` from a sampling pass.
    pub beta: Option<f64>,
    /// Inner updates stop once the D-gap falls to this value; `0` always
    /// runs all `t` updates.
    pub inner_tol: f64,
    /// Attach a finite-difference oracle error every this many steps (`0` = never).
    pub oracle_every: usize,
    /// Stop once `‖g_k‖²` falls to this value; `None` never stops early.
    pub grad_stop: Option<f64>,
    pub seed: u64,
    /// Also record `‖∇ f(y*(x_k), x_k)‖²` from an over-solved reference.
    pub track_true_gradient: bool,
    /// Start each Jacobian recursion from the previous step's `∇_x y`
    /// instead of zero.
    pub warm_start_jacobian: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            k: 100,
            t: 30,
            beta: None,
            inner_tol: 0.0,
            oracle_every: 0,
            grad_stop: Some(GRAD_STOP),
            seed: 0,
            track_true_gradient: false,
            warm_start_jacobian: false,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidInput(format!("beta must be positive, got {b}")));
            }
        }
        if !(self.inner_tol >= 0.0) {
            return Err(Error::InvalidInput(format!("inner_tol must be nonnegative, got {}", self.inner_tol)));
        }
        Ok(())
    }
}

/// Diagnostics of one outer iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub x: DVector<f64>,
    /// `f(y_T(x_k), x_k)`.
    pub f_value: f64,
    pub hypergrad_norm_sq: f64,
    pub dgap_final: f64,
    pub inner_iters: usize,
    pub oracle_err: Option<f64>,
    pub true_grad_norm_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x_next: DVector<f64>,
    pub record: IterationRecord,
    pub grad_xy: DMatrix<f64>,
}

/// One iteration: inner solve from `y_0 = P_Y(0)` with interleaved
/// propagation, hypergradient, projected step.
pub fn step(
    instance: &InstanceSpec,
    k: usize,
    x_k: &DVector<f64>,
    config: &OuterConfig,
    beta: f64,
    grad0: Option<&DMatrix<f64>>,
) -> Result<StepOutcome> {
    instance.check_x(x_k)?;
    let y0 = initial_y(instance)?;
    let u = unroll(instance, x_k, &y0, config.t, config.inner_tol, grad0)?;
    let y = u.y();
    let g = hypergradient(instance, y, x_k, &u.itd.grad_xy)?;
    let x_next = instance.set_x().project(&(x_k - &g * beta))?;
    let oracle_err = if config.oracle_every > 0 && k % config.oracle_every == 0 {
        match fd_hypergradient(instance, x_k, crate::model::FD_STEP) {
            Ok(fd) => Some((&g - fd).norm()),
            Err(Error::NonsmoothNeighborhood { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let true_grad_norm_sq = if config.track_true_gradient {
        reference_hypergradient(instance, x_k).ok().map(|v| v.norm_squared())
    } else {
        None
    };
    Ok(StepOutcome {
        record: IterationRecord {
            k,
            x: x_k.clone(),
            f_value: instance.outer().value(y, x_k),
            hypergrad_norm_sq: g.norm_squared(),
            dgap_final: u.inner.final_dgap(),
            inner_iters: u.inner.t,
            oracle_err,
            true_grad_norm_sq,
        },
        x_next,
        grad_xy: u.itd.grad_xy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAbort {
    /// Index of the outer iterate at which the step failed.
    pub k: usize,
    pub x: DVector<f64>,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `min_k ‖g_k‖²` over the ITD hypergradients.
    pub min_grad_norm_sq: f64,
    /// `min_k ‖∇ f(y*(x_k), x_k)‖²` when tracked.
    pub min_true_grad_norm_sq: Option<f64>,
    pub f_best: f64,
    pub l_f_hat: f64,
    pub l_s_hat: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub summary: RunSummary,
    pub abort: Option<RunAbort>,
}

/// Smoothness estimates of the reduced objective over `X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessEstimate {
    /// Largest `‖g(x₁) − g(x₂)‖ / ‖x₁ − x₂‖` over sampled pairs.
    pub l_f_hat: f64,
    /// Largest `‖∇_x y*(x)‖₂` over sampled points.
    pub l_s_hat: f64,
    /// `L_S (L_fy + L_fx)` from sampled Lipschitz constants of the partial
    /// gradients of `f`.
    pub l_f_composite: f64,
    /// Largest `‖∇_y f‖` over sampled points.
    pub m_hat: f64,
}

/// Samples hypergradient differences over `X`. Half the pairs are drawn
/// independently, half as short perturbations, so that local curvature is
/// seen too. Points where the inner solution is nonsmooth are skipped.
pub fn estimate_smoothness(instance: &InstanceSpec, t: usize, samples: usize, seed: u64) -> Result<SmoothnessEstimate> {
    let mut rng = SeededRng::new(seed);
    let set_x = instance.set_x();
    let set_y = instance.set_y();
    let y0 = initial_y(instance)?;
    let grad_at = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let u = unroll(instance, x, &y0, t, 0.0, None)?;
        hypergradient(instance, u.y(), x, &u.itd.grad_xy)
    };
    let radius = 0.05 * set_x.max_norm().max(1e-3);
    let mut l_f: f64 = 0.0;
    let mut l_s: f64 = 0.0;
    for i in 0..samples {
        let x1 = set_x.sample(&mut rng)?;
        let x2 = if i % 2 == 0 {
            set_x.sample(&mut rng)?
        } else {
            set_x.project(&(&x1 + rng.normal_vector(x1.len()) * radius))?
        };
        let dx = (&x1 - &x2).norm();
        if dx < 1e-9 {
            continue;
        }
        match (grad_at(&x1), grad_at(&x2)) {
            (Ok(g1), Ok(g2)) => l_f = l_f.max((g1 - g2).norm() / dx),
            (Err(Error::NonsmoothPoint { .. }), _) | (_, Err(Error::NonsmoothPoint { .. })) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        match reference_implicit_gradient(instance, &x1) {
            Ok(j) => l_s = l_s.max(spectral_norm(&j)),
            Err(Error::NonsmoothPoint { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    let outer = instance.outer();
    let (mut l_fy, mut l_fx, mut m_hat): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (y1, x1) = (set_y.sample(&mut rng)?, set_x.sample(&mut rng)?);
        let (y2, x2) = (set_y.sample(&mut rng)?, set_x.sample(&mut rng)?);
        let d = ((&y1 - &y2).norm_squared() + (&x1 - &x2).norm_squared()).sqrt();
        m_hat = m_hat.max(outer.grad_y(&y1, &x1).norm()).max(outer.grad_y(&y2, &x2).norm());
        if d < 1e-12 {
            continue;
        }
        l_fy = l_fy.max((outer.grad_y(&y1, &x1) - outer.grad_y(&y2, &x2)).norm() / d);
        l_fx = l_fx.max((outer.grad_x(&y1, &x1) - outer.grad_x(&y2, &x2)).norm() / d);
    }
    if !(l_f > 0.0) {
        return Err(Error::InsufficientData("no usable hypergradient pairs".into()));
    }
    Ok(SmoothnessEstimate {
        l_f_hat: l_f,
        l_s_hat: l_s,
        l_f_composite: l_s * (l_fy + l_fx),
        m_hat,
    })
}

/// Runs `config.k` projected hypergradient steps from `x0` (projected onto
/// `X` first). Solver failures end the run early; the trace up to the
/// failure is kept and the failure is recorded in `abort`.
pub fn run(instance: &InstanceSpec, x0: &DVector<f64>, config: &OuterConfig) -> Result<RunTrace> {
    config.validate()?;
    instance.check_x(x0)?;
    let smooth = estimate_smoothness(instance, config.t, LIPSCHITZ_SAMPLES, config.seed)?;
    let beta = config.beta.unwrap_or(0.9 / (2.0 * smooth.l_f_hat));
    let mut x = instance.set_x().project(x0)?;
    let mut records = Vec::with_capacity(config.k + 1);
    let mut abort = None;
    let mut grad_xy: Option<DMatrix<f64>> = None;
    for k in 0..=config.k {
        let warm = if config.warm_start_jacobian { grad_xy.as_ref() } else { None };
        match step(instance, k, &x, config, beta, warm) {
            Ok(out) => {
                let stop = config.grad_stop.is_some_and(|s| out.record.hypergrad_norm_sq <= s);
                records.push(out.record);
                grad_xy = Some(out.grad_xy);
                if stop || k == config.k {
                    break;
                }
                x = out.x_next;
                debug_assert!(instance.set_x().distance(&x).map_or(false, |d| d <= FEASIBILITY_TOL));
            }
            Err(error) => {
                abort = Some(RunAbort { k, x: x.clone(), error });
                break;
            }
        }
    }
    let min_grad_norm_sq = records.iter().map(|r| r.hypergrad_norm_sq).fold(f64::INFINITY, f64::min);
    let min_true_grad_norm_sq = records
        .iter()
        .filter_map(|r| r.true_grad_norm_sq)
        .reduce(f64::min);
    let f_best = records.iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min);
    Ok(RunTrace {
        records,
        summary: RunSummary {
            min_grad_norm_sq,
            min_true_grad_norm_sq,
            f_best,
            l_f_hat: smooth.l_f_hat,
            l_s_hat: smooth.l_s_hat,
            beta,
        },
        abort,
    })
}

/// Inner-error term of the outer rate bound:
///
/// ```text
/// L_f (1 + L_S) sqrt(φ₀/C1) (β/2 + β² L_f) / (1 − √ρ) · √ρ^{T+1}
///   + M (β/2 + β² L_f) ((L_x + L_y C'/(1−q)) C_y q^T (T+1) + C'/(1−q) q^{T+1})
/// ```
#[allow(clippy::too_many_arguments)]
pub fn epsilon_t(
    l_f: f64,
    l_s: f64,
    m: f64,
    beta: f64,
    rate: &RateEstimate,
    phi0: f64,
    consts: &JacobianConstants,
    t: usize,
) -> f64 {
    let w = beta / 2.0 + beta * beta * l_f;
    let sqrt_rho = rate.rho().sqrt();
    let first = l_f * (1.0 + l_s) * (phi0.max(0.0) / rate.c1_hat).sqrt() * w / (1.0 - sqrt_rho)
        * sqrt_rho.powi(t as i32 + 1);
    let tail = consts.c_prime / (1.0 - consts.q);
    let second = m
        * w
        * ((consts.l_x + consts.l_y * tail) * consts.c_y * consts.q.powi(t as i32) * (t + 1) as f64
            + tail * consts.q.powi(t as i32 + 1));
    first + second
}

/// `(f₀ − f_best) / (β (1/2 − β L_f) K) + ε_T`; `None` when `K = 0` or the
/// stepsize violates `β L_f < 1/2`.
pub fn theorem2_bound(f0: f64, f_best: f64, beta: f64, l_f: f64, k: usize, eps_t: f64) -> Option<f64> {
    let margin = 0.5 - beta * l_f;
    if k == 0 || !(margin > 0.0) {
        return None;
    }
    Some((f0 - f_best).max(0.0) / (beta * margin * k as f64) + eps_t)
}

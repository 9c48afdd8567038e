//! Projectable convex sets.
//!
//! Box, ball and simplex projections are exact. Halfspace intersections are
//! projected with Dykstra's alternating projections, optionally together with
//! an enclosing box that is part of the set and certifies boundedness.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Default Dykstra stopping tolerance (cycle increment norm).
pub const DYKSTRA_TOL: f64 = 1e-10;
/// Default Dykstra cycle cap.
pub const DYKSTRA_MAX_ITER: usize = 10_000;
/// Distance below which a point counts as a member of a set.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Distance from an activity boundary treated as "on" the boundary.
pub const ACTIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidInput(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::InvalidInput("box has dimension 0".into()));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::InvalidInput(format!("box bound {i} is not finite")));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!(
                    "box lower bound exceeds upper bound at coordinate {i}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(i, &vi)| vi.max(self.lower[i]).min(self.upper[i])),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSet {
    center: DVector<f64>,
    radius: f64,
}

impl BallSet {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() {
            return Err(Error::InvalidInput("ball has dimension 0".into()));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// `{y : a_i·y ≤ b_i for all i}`, intersected with an optional enclosing box.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSet {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    feasible_point: DVector<f64>,
    enclosing: Option<BoxSet>,
}

impl HalfspaceSet {
    pub fn new(
        normals: DMatrix<f64>,
        offsets: DVector<f64>,
        feasible_point: DVector<f64>,
        enclosing: Option<BoxSet>,
    ) -> Result<Self> {
        let (m, n) = normals.shape();
        if m != offsets.len() {
            return Err(Error::InvalidInput(format!(
                "{m} normals but {} offsets",
                offsets.len()
            )));
        }
        if n == 0 || feasible_point.len() != n {
            return Err(Error::InvalidInput(
                "feasible point dimension does not match normals".into(),
            ));
        }
        for i in 0..m {
            let norm = normals.row(i).norm();
            if !(norm > 0.0) {
                return Err(Error::InvalidInput(format!("normal {i} has zero norm")));
            }
            let slack = offsets[i] - normals.row(i).dot(&feasible_point.transpose());
            if slack < -FEASIBILITY_TOL * norm {
                return Err(Error::InvalidInput(format!(
                    "stored feasible point violates halfspace {i}"
                )));
            }
        }
        if let Some(b) = &enclosing {
            if b.dim() != n {
                return Err(Error::InvalidInput("enclosing box dimension mismatch".into()));
            }
            if (b.clamp(&feasible_point) - &feasible_point).norm() > FEASIBILITY_TOL {
                return Err(Error::InvalidInput(
                    "stored feasible point lies outside the enclosing box".into(),
                ));
            }
        }
        Ok(Self {
            normals,
            offsets,
            feasible_point,
            enclosing,
        })
    }

    /// All constraints as rows of `a z ≤ d`, enclosing box faces included.
    fn constraint_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut rows: Vec<DVector<f64>> = (0..self.normals.nrows()).map(|i| self.normals.row(i).transpose()).collect();
        let mut rhs: Vec<f64> = self.offsets.iter().copied().collect();
        if let Some(b) = &self.enclosing {
            for i in 0..n {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                rows.push(e.clone());
                rhs.push(b.upper[i]);
                rows.push(-e);
                rhs.push(-b.lower[i]);
            }
        }
        (DMatrix::from_columns(&rows).transpose(), DVector::from_vec(rhs))
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn feasible_point(&self) -> &DVector<f64> {
        &self.feasible_point
    }

    pub fn enclosing(&self) -> Option<&BoxSet> {
        self.enclosing.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }
}

/// A closed convex set with a Euclidean projection.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box(BoxSet),
    Ball(BallSet),
    /// Probability simplex `{y ≥ 0, Σ y = 1}` of the given dimension.
    Simplex(usize),
    HalfspaceIntersection(HalfspaceSet),
}

impl ConvexSet {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        BoxSet::new(lower, upper).map(Self::Box)
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new_box(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn new_ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        BallSet::new(center, radius).map(Self::Ball)
    }

    pub fn new_simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("simplex has dimension 0".into()));
        }
        Ok(Self::Simplex(dim))
    }

    pub fn new_halfspaces(
        normals: DMatrix<f64>,
        offsets: DVector<f64>,
        feasible_point: DVector<f64>,
        enclosing: Option<BoxSet>,
    ) -> Result<Self> {
        HalfspaceSet::new(normals, offsets, feasible_point, enclosing).map(Self::HalfspaceIntersection)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box(b) => b.dim(),
            Self::Ball(b) => b.center.len(),
            Self::Simplex(n) => *n,
            Self::HalfspaceIntersection(h) => h.dim(),
        }
    }

    /// Halfspace intersections are bounded only with an enclosing box.
    pub fn is_bounded(&self) -> bool {
        match self {
            Self::HalfspaceIntersection(h) => h.enclosing.is_some(),
            _ => true,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Box(_) => "box",
            Self::Ball(_) => "ball",
            Self::Simplex(_) => "simplex",
            Self::HalfspaceIntersection(_) => "halfspace intersection",
        }
    }

    /// A distinguished point of the set (box midpoint, ball center, simplex barycenter,
    /// or the stored feasible point).
    pub fn center(&self) -> DVector<f64> {
        match self {
            Self::Box(b) => (&b.lower + &b.upper) * 0.5,
            Self::Ball(b) => b.center.clone(),
            Self::Simplex(n) => DVector::from_element(*n, 1.0 / *n as f64),
            Self::HalfspaceIntersection(h) => h.feasible_point.clone(),
        }
    }

    /// `sup ‖y‖` over the set (an upper bound for halfspace sets, from the enclosing box).
    pub fn max_norm(&self) -> f64 {
        let box_sup = |b: &BoxSet| {
            b.lower
                .iter()
                .zip(b.upper.iter())
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        match self {
            Self::Box(b) => box_sup(b),
            Self::Ball(b) => b.center.norm() + b.radius,
            Self::Simplex(_) => 1.0,
            Self::HalfspaceIntersection(h) => h.enclosing.as_ref().map_or(f64::INFINITY, box_sup),
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} projected onto a {} of dimension {}",
                v.len(),
                self.variant_name(),
                self.dim()
            )));
        }
        if !v.iter().all(|e| e.is_finite()) {
            return Err(Error::InvalidInput("cannot project a non-finite vector".into()));
        }
        Ok(())
    }

    /// Euclidean projection.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        Ok(match self {
            Self::Box(b) => b.clamp(v),
            Self::Ball(b) => project_ball(b, v),
            Self::Simplex(_) => project_simplex(v).0,
            Self::HalfspaceIntersection(h) => {
                dykstra(h, v, DYKSTRA_TOL, DYKSTRA_MAX_ITER)?.point
            }
        })
    }

    pub fn distance(&self, v: &DVector<f64>) -> Result<f64> {
        Ok((self.project(v)? - v).norm())
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.distance(v)? <= tol)
    }

    /// Discrete description of which constraints are active at `P(u)`.
    ///
    /// Two points with the same pattern lie on the same smooth piece of the
    /// projection map. Box: `-1/0/+1` per coordinate; ball: `0` inside, `1`
    /// outside; simplex: support indicator; halfspaces: tight-constraint flags.
    pub fn activity(&self, u: &DVector<f64>) -> Result<Vec<i8>> {
        self.check_dim(u)?;
        Ok(match self {
            Self::Box(b) => box_activity(b, u),
            Self::Ball(b) => vec![i8::from((u - &b.center).norm() > b.radius)],
            Self::Simplex(_) => {
                let tau = project_simplex(u).1;
                u.iter().map(|&ui| i8::from(ui > tau)).collect()
            }
            Self::HalfspaceIntersection(h) => {
                let p = dykstra(h, u, DYKSTRA_TOL, DYKSTRA_MAX_ITER)?.point;
                let mut pattern: Vec<i8> = (0..h.normals.nrows())
                    .map(|i| {
                        let slack = h.offsets[i] - h.normals.row(i).dot(&p.transpose());
                        i8::from(slack <= ACTIVITY_TOL * h.normals.row(i).norm())
                    })
                    .collect();
                if let Some(b) = &h.enclosing {
                    pattern.extend(box_activity(b, &p));
                }
                pattern
            }
        })
    }

    /// Draws a point of the set. Box: uniform; ball: uniform; simplex: flat
    /// Dirichlet; halfspaces: rejection from the enclosing box, falling back
    /// to projecting the draw.
    pub fn sample(&self, rng: &mut SeededRng) -> Result<DVector<f64>> {
        Ok(match self {
            Self::Box(b) => DVector::from_iterator(
                b.dim(),
                (0..b.dim()).map(|i| rng.uniform(b.lower[i], b.upper[i])),
            ),
            Self::Ball(b) => {
                let n = b.center.len();
                let mut dir = rng.normal_vector(n);
                let norm = dir.norm();
                if norm == 0.0 {
                    return Ok(b.center.clone());
                }
                dir /= norm;
                let r = b.radius * rng.next_f64().powf(1.0 / n as f64);
                &b.center + dir * r
            }
            Self::Simplex(n) => {
                let e = DVector::from_iterator(*n, (0..*n).map(|_| -(1.0 - rng.next_f64()).ln()));
                let s = e.sum();
                e / s
            }
            Self::HalfspaceIntersection(h) => {
                let Some(b) = &h.enclosing else {
                    return Err(Error::InvalidInput("cannot sample an unbounded set".into()));
                };
                let bset = Self::Box(b.clone());
                for _ in 0..1000 {
                    let cand = bset.sample(rng)?;
                    let feasible = (0..h.normals.nrows())
                        .all(|i| h.normals.row(i).dot(&cand.transpose()) <= h.offsets[i]);
                    if feasible {
                        return Ok(cand);
                    }
                }
                self.project(&bset.sample(rng)?)?
            }
        })
    }
}

/// Free-function form of [`ConvexSet::project`].
pub fn project(set: &ConvexSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    set.project(v)
}

fn box_activity(b: &BoxSet, u: &DVector<f64>) -> Vec<i8> {
    u.iter()
        .enumerate()
        .map(|(i, &ui)| {
            if ui <= b.lower[i] {
                -1
            } else if ui >= b.upper[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

fn project_ball(b: &BallSet, v: &DVector<f64>) -> DVector<f64> {
    let d = v - &b.center;
    let n = d.norm();
    if n <= b.radius {
        v.clone()
    } else {
        &b.center + d * (b.radius / n)
    }
}

/// Sort-and-threshold projection onto the probability simplex.
///
/// Returns the projection `max(v - τ, 0)` together with the threshold `τ`.
pub fn project_simplex(v: &DVector<f64>) -> (DVector<f64>, f64) {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    (v.map(|vi| (vi - tau).max(0.0)), tau)
}

/// Outcome of a Dykstra run.
#[derive(Debug, Clone, PartialEq)]
pub struct DykstraOutcome {
    pub point: DVector<f64>,
    /// Number of full cycles over the constraint list.
    pub cycles: usize,
}

/// Dykstra's alternating projections onto `{y : normals·y ≤ offsets}`.
///
/// Stops when a cycle moves the iterate and the corrections by less than `tol` in total, or earlier when
/// the iterate is feasible to `tol` and every nonzero Dykstra correction is
/// attached to a constraint that is tight to `tol` (a KKT certificate, since
/// `v − y` always equals the sum of the corrections).
pub fn dykstra_project(
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    v: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DykstraOutcome> {
    if normals.nrows() != offsets.len() || normals.ncols() != v.len() {
        return Err(Error::InvalidInput("halfspace data does not match the point".into()));
    }
    let components: Vec<Component> = (0..normals.nrows())
        .map(|i| Component::Halfspace {
            normal: normals.row(i).transpose(),
            offset: offsets[i],
        })
        .collect();
    run_dykstra(&components, v, tol, max_iter)
}

fn dykstra(h: &HalfspaceSet, v: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DykstraOutcome> {
    let mut components: Vec<Component> = (0..h.normals.nrows())
        .map(|i| Component::Halfspace {
            normal: h.normals.row(i).transpose(),
            offset: h.offsets[i],
        })
        .collect();
    if let Some(b) = &h.enclosing {
        components.push(Component::Box(b.clone()));
    }
    match run_dykstra(&components, v, tol, max_iter) {
        Err(Error::ProjectionDidNotConverge { residual, iterations }) => {
            // Nearly parallel faces can stall Dykstra for tens of thousands of cycles.
            let (a, d) = h.constraint_rows();
            active_set_project(&a, &d, v, &h.feasible_point)
                .map(|point| DykstraOutcome { point, cycles: iterations })
                .ok_or(Error::ProjectionDidNotConverge { residual, iterations })
        }
        other => other,
    }
}

/// Exact projection onto `{z : a z ≤ d}` by a primal active-set method started
/// at a feasible point. Blocking constraints enter the working set only when
/// they are independent of it, so the normal equations stay nonsingular.
fn active_set_project(a: &DMatrix<f64>, d: &DVector<f64>, v: &DVector<f64>, start: &DVector<f64>) -> Option<DVector<f64>> {
    let m = a.nrows();
    let mut z = start.clone();
    let mut working: Vec<usize> = Vec::new();
    let solve = |w: &[usize], g: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>)> {
        if w.is_empty() {
            return Some((g.clone(), DVector::zeros(0)));
        }
        let aw = a.select_rows(w);
        let lambda = (&aw * aw.transpose()).try_inverse()? * (&aw * g);
        Some((g - aw.transpose() * &lambda, lambda))
    };
    for _ in 0..20 * (m + v.len()) {
        let g = v - &z;
        let (step, lambda) = solve(&working, &g)?;
        if step.norm() <= 1e-14 * (1.0 + g.norm()) {
            match lambda.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)) {
                Some((k, &l)) if l < -1e-12 => {
                    working.remove(k);
                    continue;
                }
                _ => return Some(z),
            }
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in (0..m).filter(|i| !working.contains(i)) {
            let rate = a.row(i).dot(&step.transpose());
            if rate > 1e-14 {
                let t = ((d[i] - a.row(i).dot(&z.transpose())) / rate).max(0.0);
                if t < alpha {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        z += &step * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    None
}

enum Component {
    Halfspace { normal: DVector<f64>, offset: f64 },
    Box(BoxSet),
}

impl Component {
    fn project(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Halfspace { normal, offset } => {
                let excess = normal.dot(w) - offset;
                if excess <= 0.0 {
                    w.clone()
                } else {
                    w - normal * (excess / normal.norm_squared())
                }
            }
            Self::Box(b) => b.clamp(w),
        }
    }

    /// Constraint violation at `y`.
    fn violation(&self, y: &DVector<f64>) -> f64 {
        match self {
            Self::Halfspace { normal, offset } => ((normal.dot(y) - offset) / normal.norm()).max(0.0),
            Self::Box(b) => (b.clamp(y) - y).norm(),
        }
    }

    /// Largest distance from `y` to the face that the correction `p` points out of.
    fn complementarity_gap(&self, y: &DVector<f64>, p: &DVector<f64>) -> f64 {
        match self {
            Self::Halfspace { normal, offset } => {
                if p.iter().all(|&e| e == 0.0) {
                    0.0
                } else {
                    ((offset - normal.dot(y)) / normal.norm()).abs()
                }
            }
            Self::Box(b) => p
                .iter()
                .enumerate()
                .map(|(i, &pi)| {
                    if pi > 0.0 {
                        (b.upper[i] - y[i]).abs()
                    } else if pi < 0.0 {
                        (y[i] - b.lower[i]).abs()
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max),
        }
    }
}

fn run_dykstra(
    components: &[Component],
    v: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DykstraOutcome> {
    if components.is_empty() {
        return Ok(DykstraOutcome {
            point: v.clone(),
            cycles: 0,
        });
    }
    let mut y = v.clone();
    let mut corrections = vec![DVector::zeros(v.len()); components.len()];
    let mut increment = f64::INFINITY;
    for cycle in 1..=max_iter {
        let previous = y.clone();
        let mut moved = 0.0;
        for (c, p) in components.iter().zip(corrections.iter_mut()) {
            let w = &y + &*p;
            let next = c.project(&w);
            let p_next = w - &next;
            moved += (&p_next - &*p).norm();
            *p = p_next;
            y = next;
        }
        // The iterate can repeat while the corrections are still moving.
        increment = (&y - &previous).norm() + moved;
        let certified = components
            .iter()
            .zip(&corrections)
            .all(|(c, p)| c.violation(&y) <= tol && c.complementarity_gap(&y, p) <= tol);
        if increment < tol || certified {
            return Ok(DykstraOutcome { point: y, cycles: cycle });
        }
    }
    Err(Error::ProjectionDidNotConverge {
        residual: increment,
        iterations: max_iter,
    })
}

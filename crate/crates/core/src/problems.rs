//! Bundled instances with known inner solutions.
//!
//! Random data is drawn from [`SeededRng`] in a fixed order, so a seed
//! reproduces an instance bit for bit.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::householder;
use crate::merit::DGapParams;
use crate::model::{BoxSet, ConvexSet, InnerMap, InstanceSpec, JacobianMode, KnownSolution, OuterObjective};
use crate::rng::SeededRng;

/// Largest dimension for which affine box instances enumerate active sets.
pub const ENUMERATION_MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegimeTag {
    Interior,
    BoundaryActive,
    NonconvexOuter,
    PolyhedralY,
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Interior => "interior",
            Self::BoundaryActive => "boundary_active",
            Self::NonconvexOuter => "nonconvex_outer",
            Self::PolyhedralY => "polyhedral_Y",
        })
    }
}

#[derive(Debug, Clone)]
pub struct InstanceCatalogEntry {
    pub name: String,
    pub spec: InstanceSpec,
    pub regime_tags: Vec<RegimeTag>,
    pub notes: String,
}

impl InstanceCatalogEntry {
    pub fn has_tag(&self, tag: RegimeTag) -> bool {
        self.regime_tags.contains(&tag)
    }
}

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 7] = [
    "scalar_clamp",
    "affine_box",
    "affine_box_boundary",
    "nonconvex_outer",
    "polyhedral",
    "simplex_affine",
    "cubic_inner",
];

/// Looks up a catalog entry. `dim` is used by `affine_box` and
/// `affine_box_boundary` only.
pub fn by_name(name: &str, dim: usize, seed: u64) -> Result<InstanceCatalogEntry> {
    match name {
        "scalar_clamp" => Ok(make_scalar_clamp()),
        "affine_box" => make_affine_box(dim, seed),
        "affine_box_boundary" => make_affine_box_boundary(dim, seed),
        "nonconvex_outer" => Ok(make_nonconvex_outer(seed)),
        "polyhedral" => Ok(make_polyhedral(seed)),
        "simplex_affine" => Ok(make_simplex_affine(seed)),
        "cubic_inner" => Ok(make_cubic_inner()),
        other => Err(Error::InvalidInput(format!(
            "unknown instance '{other}' (known: {})",
            NAMES.join(", ")
        ))),
    }
}

/// Every entry at its default size.
pub fn catalog(seed: u64) -> Vec<InstanceCatalogEntry> {
    vec![
        make_scalar_clamp(),
        make_affine_box(2, seed).expect("dimension 2 is valid"),
        make_affine_box_boundary(2, seed).expect("dimension 2 is valid"),
        make_nonconvex_outer(seed),
        make_polyhedral(seed),
        make_simplex_affine(seed),
        make_cubic_inner(),
    ]
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// `F(y, x) = y − x` on `Y = X = [0, 1]`, `f(y, x) = (y − 0.25)²`.
pub fn make_scalar_clamp() -> InstanceCatalogEntry {
    let inner = InnerMap::new(1, 1, 1.0, |y, x| y - x)
        .with_jacobians(|_, _| DMatrix::identity(1, 1), |_, _| DMatrix::from_element(1, 1, -1.0));
    let outer = OuterObjective::new(
        |y, _| (y[0] - 0.25).powi(2),
        |y, _| dv(&[2.0 * (y[0] - 0.25)]),
        |_, _| dv(&[0.0]),
    );
    let known = KnownSolution::new(
        |x| dv(&[x[0].clamp(0.0, 1.0)]),
        |x| DMatrix::from_element(1, 1, if x[0] > 0.0 && x[0] < 1.0 { 1.0 } else { 0.0 }),
    );
    let spec = InstanceSpec::new(
        inner,
        outer,
        ConvexSet::cube(1, 0.0, 1.0).expect("valid box"),
        ConvexSet::cube(1, 0.0, 1.0).expect("valid box"),
        DGapParams::default(),
    )
    .expect("valid instance")
    .with_known_solution(known);
    InstanceCatalogEntry {
        name: "scalar_clamp".into(),
        spec,
        regime_tags: vec![RegimeTag::Interior],
        notes: "y*(x) = clamp(x, 0, 1); reduced objective (x - 0.25)^2".into(),
    }
}

/// Seeded data of an affine map `Qy + Rx + c`: `Q = H diag(λ) H` with
/// `λ ∈ [1, 3]` and `R = −ρ H₂` with Householder reflections `H, H₂`.
struct AffineData {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    lambda_min: f64,
}

fn affine_data(dim: usize, rho: f64, rng: &mut SeededRng) -> AffineData {
    let h = householder(&rng.normal_vector(dim));
    let lambda: Vec<f64> = (0..dim).map(|_| rng.uniform(1.0, 3.0)).collect();
    let q = &h * DMatrix::from_diagonal(&DVector::from_vec(lambda.clone())) * &h;
    // Symmetrize away the rounding of the triple product.
    let q = (&q + q.transpose()) * 0.5;
    let h2 = householder(&rng.normal_vector(dim));
    AffineData {
        q,
        r: h2 * -rho,
        lambda_min: lambda.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn affine_inner(q: DMatrix<f64>, r: DMatrix<f64>, c: DVector<f64>, mu: f64) -> InnerMap {
    let (dim_y, dim_x) = r.shape();
    let (q1, r1, q2, r2) = (q.clone(), r.clone(), q, r);
    InnerMap::new(dim_y, dim_x, mu, move |y, x| &q1 * y + &r1 * x + &c)
        .with_jacobians(move |_, _| q2.clone(), move |_, _| r2.clone())
}

/// Solves the box-constrained affine VI `0 ∈ Qy + v + N_B(y)` by trying
/// every lower/free/upper pattern. Returns the solution and the free mask.
fn box_affine_solve(q: &DMatrix<f64>, v: &DVector<f64>, b: &BoxSet) -> Option<(DVector<f64>, Vec<bool>)> {
    let n = v.len();
    let slack = 1e-12;
    let mut pattern = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 1).collect();
        let mut y = DVector::from_fn(n, |i, _| match pattern[i] {
            0 => b.lower()[i],
            2 => b.upper()[i],
            _ => 0.0,
        });
        let mut ok = true;
        if !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |i, j| q[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| {
                let row = free[i];
                -(v[row] + (0..n).filter(|k| pattern[*k] != 1).map(|k| q[(row, k)] * y[k]).sum::<f64>())
            });
            match qff.lu().solve(&rhs) {
                Some(sol) => {
                    for (i, &k) in free.iter().enumerate() {
                        y[k] = sol[i];
                        ok &= sol[i] >= b.lower()[k] - slack && sol[i] <= b.upper()[k] + slack;
                    }
                }
                None => ok = false,
            }
        }
        if ok {
            let f = q * &y + v;
            ok = (0..n).all(|i| match pattern[i] {
                0 => f[i] >= -slack,
                2 => f[i] <= slack,
                _ => true,
            });
        }
        if ok {
            return Some((b.clamp(&y), pattern.iter().map(|&p| p == 1).collect()));
        }
        // Next pattern in base 3.
        let mut i = 0;
        loop {
            if i == n {
                return None;
            }
            pattern[i] += 1;
            if pattern[i] < 3 {
                break;
            }
            pattern[i] = 0;
            i += 1;
        }
    }
}

fn box_affine_known(q: DMatrix<f64>, r: DMatrix<f64>, c: DVector<f64>, b: BoxSet) -> KnownSolution {
    let (q2, r2, c2, b2) = (q.clone(), r.clone(), c.clone(), b.clone());
    KnownSolution::new(
        move |x| {
            box_affine_solve(&q, &(&r * x + &c), &b)
                .expect("strongly monotone box VI has a solution")
                .0
        },
        move |x| {
            let (_, free) = box_affine_solve(&q2, &(&r2 * x + &c2), &b2).expect("strongly monotone box VI has a solution");
            let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
            let mut g = DMatrix::zeros(r2.nrows(), r2.ncols());
            if idx.is_empty() {
                return g;
            }
            let qff = DMatrix::from_fn(idx.len(), idx.len(), |i, j| q2[(idx[i], idx[j])]);
            let rf = DMatrix::from_fn(idx.len(), r2.ncols(), |i, j| r2[(idx[i], j)]);
            let sol = qff.lu().solve(&(-rf)).expect("principal submatrix of a PD matrix is invertible");
            for (i, &k) in idx.iter().enumerate() {
                g.set_row(k, &sol.row(i));
            }
            g
        },
    )
}

fn quadratic_target_outer(target: DVector<f64>, x_weight: f64) -> OuterObjective {
    let (t1, t2) = (target.clone(), target);
    OuterObjective::new(
        move |y, x| (y - &t1).norm_squared() + x_weight * x.norm_squared(),
        move |y, _| (y - &t2) * 2.0,
        move |_, x| x * (2.0 * x_weight),
    )
}

/// Affine VI on `[0, 1]^dim` with `X = [−1, 1]^dim`, built from explicit
/// `Q`, `R`, `c` and outer objective `‖y − 0.5·1‖² + 0.1‖x‖²`.
pub fn make_affine_box_from(q: DMatrix<f64>, r: DMatrix<f64>, c: DVector<f64>, mu: f64) -> Result<InstanceCatalogEntry> {
    let dim = q.nrows();
    if q.ncols() != dim || r.nrows() != dim || c.len() != dim {
        return Err(Error::InvalidInput("Q, R and c dimensions disagree".into()));
    }
    let y_box = BoxSet::new(DVector::zeros(dim), DVector::from_element(dim, 1.0))?;
    let mut spec = InstanceSpec::new(
        affine_inner(q.clone(), r.clone(), c.clone(), mu),
        quadratic_target_outer(DVector::from_element(dim, 0.5), 0.1),
        ConvexSet::Box(y_box.clone()),
        ConvexSet::cube(r.ncols(), -1.0, 1.0)?,
        DGapParams::default(),
    )?;
    if dim <= ENUMERATION_MAX_DIM {
        spec = spec.with_known_solution(box_affine_known(q, r, c, y_box));
    }
    Ok(InstanceCatalogEntry {
        name: "affine_box".into(),
        spec,
        regime_tags: vec![RegimeTag::Interior],
        notes: "F = Qy + Rx + c on the unit box".into(),
    })
}

/// Norm of `R`. Below `0.5/√dim` every solution is interior; the cap at
/// `0.1` keeps the nonconvex outer objective's stationary points inside `X`.
fn affine_coupling(dim: usize) -> f64 {
    (0.45 / (dim as f64).sqrt()).min(0.1)
}

/// Seeded affine VI whose solutions stay interior for every `x ∈ X`:
/// `c = −Q·0.5·1` and `‖R‖ = min(0.1, 0.45/√dim)`.
pub fn make_affine_box(dim: usize, seed: u64) -> Result<InstanceCatalogEntry> {
    if dim == 0 {
        return Err(Error::InvalidInput("affine_box needs dim ≥ 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let d = affine_data(dim, affine_coupling(dim), &mut rng);
    let c = -(&d.q * DVector::from_element(dim, 0.5));
    let mut e = make_affine_box_from(d.q, d.r, c, d.lambda_min)?;
    e.notes = format!("seed {seed}; Q = H diag(λ) H with λ in [1, 3]; solution interior for all x in X");
    Ok(e)
}

/// As [`make_affine_box`] with `c` shifted by `Q e_1`, which pushes the
/// unconstrained solution below the lower bound in the first coordinate.
pub fn make_affine_box_boundary(dim: usize, seed: u64) -> Result<InstanceCatalogEntry> {
    if dim == 0 {
        return Err(Error::InvalidInput("affine_box_boundary needs dim ≥ 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let d = affine_data(dim, affine_coupling(dim), &mut rng);
    let mut shift = DVector::from_element(dim, 0.5);
    shift[0] = -0.5;
    let c = -(&d.q * shift);
    let mut e = make_affine_box_from(d.q, d.r, c, d.lambda_min)?;
    e.name = "affine_box_boundary".into();
    e.regime_tags = vec![RegimeTag::BoundaryActive];
    e.notes = format!("seed {seed}; lower bound active in coordinate 1");
    Ok(e)
}

/// Inner map of `affine_box(2, seed)` with the nonconvex outer objective
/// `sin(3x₁)‖y‖² + 0.5‖y − 0.5·1‖² + 0.05‖x‖²`.
pub fn make_nonconvex_outer(seed: u64) -> InstanceCatalogEntry {
    let base = make_affine_box(2, seed).expect("dimension 2 is valid");
    let target = DVector::from_element(2, 0.5);
    let (t1, t2) = (target.clone(), target);
    let outer = OuterObjective::new(
        move |y, x| (3.0 * x[0]).sin() * y.norm_squared() + 0.5 * (y - &t1).norm_squared() + 0.05 * x.norm_squared(),
        move |y, x| y * (2.0 * (3.0 * x[0]).sin()) + (y - &t2),
        |y, x| {
            let mut g = x * 0.1;
            g[0] += 3.0 * (3.0 * x[0]).cos() * y.norm_squared();
            g
        },
    );
    let mut spec = InstanceSpec::new(
        base.spec.inner().clone(),
        outer,
        base.spec.set_y().clone(),
        base.spec.set_x().clone(),
        DGapParams::default(),
    )
    .expect("valid instance");
    if let Some(k) = base.spec.known_solution() {
        spec = spec.with_known_solution(k.clone());
    }
    InstanceCatalogEntry {
        name: "nonconvex_outer".into(),
        spec,
        regime_tags: vec![RegimeTag::Interior, RegimeTag::NonconvexOuter],
        notes: format!("seed {seed}; inner map of affine_box(2, {seed})"),
    }
}

/// Affine VI on `{y ∈ [0, 1]² : y₁ + y₂ ≤ 1.2}` whose unconstrained solution
/// sits near `(0.75, 0.75)`, so the cut is active. Jacobians by finite
/// differences only.
pub fn make_polyhedral(seed: u64) -> InstanceCatalogEntry {
    let mut rng = SeededRng::new(seed);
    let d = affine_data(2, 0.2, &mut rng);
    let c = -(&d.q * DVector::from_element(2, 0.75));
    let set_y = ConvexSet::new_halfspaces(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        dv(&[1.2]),
        dv(&[0.5, 0.5]),
        Some(BoxSet::new(DVector::zeros(2), DVector::from_element(2, 1.0)).expect("valid box")),
    )
    .expect("valid polyhedron");
    let (q, r) = (d.q, d.r);
    let inner = InnerMap::new(2, 2, d.lambda_min, move |y, x| &q * y + &r * x + &c);
    let spec = InstanceSpec::new(
        inner,
        quadratic_target_outer(DVector::from_element(2, 0.5), 0.1),
        set_y,
        ConvexSet::cube(2, -1.0, 1.0).expect("valid box"),
        DGapParams::default(),
    )
    .expect("valid instance")
    .with_jacobian_mode(JacobianMode::FiniteDifference);
    InstanceCatalogEntry {
        name: "polyhedral".into(),
        spec,
        regime_tags: vec![RegimeTag::PolyhedralY, RegimeTag::BoundaryActive],
        notes: format!("seed {seed}; cut y1 + y2 <= 1.2 active at the solution"),
    }
}

/// Solves the affine VI on the probability simplex by trying every support.
fn simplex_affine_solve(q: &DMatrix<f64>, v: &DVector<f64>) -> Option<(DVector<f64>, Vec<usize>)> {
    let n = v.len();
    let slack = 1e-12;
    for bits in 1u32..(1 << n) {
        let s: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let m = s.len();
        // [Q_SS −1; 1ᵀ 0] [y_S; λ] = [−v_S; 1]
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for i in 0..m {
            for j in 0..m {
                kkt[(i, j)] = q[(s[i], s[j])];
            }
            kkt[(i, m)] = -1.0;
            kkt[(m, i)] = 1.0;
            rhs[i] = -v[s[i]];
        }
        rhs[m] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if (0..m).any(|i| sol[i] < -slack) {
            continue;
        }
        let mut y = DVector::zeros(n);
        for (i, &k) in s.iter().enumerate() {
            y[k] = sol[i].max(0.0);
        }
        let lambda = sol[m];
        let f = q * &y + v;
        if (0..n).filter(|i| !s.contains(i)).all(|i| f[i] >= lambda - slack) {
            return Some((y, s));
        }
    }
    None
}

/// Affine VI on the 3-simplex with solutions near the barycenter.
pub fn make_simplex_affine(seed: u64) -> InstanceCatalogEntry {
    let mut rng = SeededRng::new(seed ^ 0x5157_0000);
    let d = affine_data(3, 0.1, &mut rng);
    let c = -(&d.q * DVector::from_element(3, 1.0 / 3.0));
    let (q, r) = (d.q.clone(), d.r.clone());
    let (q2, r2, c2) = (q.clone(), r.clone(), c.clone());
    let (q3, r3, c3) = (q.clone(), r.clone(), c.clone());
    let known = KnownSolution::new(
        move |x| simplex_affine_solve(&q2, &(&r2 * x + &c2)).expect("strongly monotone VI has a solution").0,
        move |x| {
            let (_, s) = simplex_affine_solve(&q3, &(&r3 * x + &c3)).expect("strongly monotone VI has a solution");
            let m = s.len();
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            for i in 0..m {
                for j in 0..m {
                    kkt[(i, j)] = q3[(s[i], s[j])];
                }
                kkt[(i, m)] = -1.0;
                kkt[(m, i)] = 1.0;
            }
            let mut rhs = DMatrix::zeros(m + 1, r3.ncols());
            for (i, &k) in s.iter().enumerate() {
                rhs.set_row(i, &(-r3.row(k)));
            }
            let sol = kkt.lu().solve(&rhs).expect("KKT matrix is invertible");
            let mut g = DMatrix::zeros(3, r3.ncols());
            for (i, &k) in s.iter().enumerate() {
                g.set_row(k, &sol.row(i));
            }
            g
        },
    );
    let spec = InstanceSpec::new(
        affine_inner(q, r, c, d.lambda_min),
        quadratic_target_outer(DVector::from_element(3, 1.0 / 3.0), 0.1),
        ConvexSet::new_simplex(3).expect("valid simplex"),
        ConvexSet::cube(3, -1.0, 1.0).expect("valid box"),
        DGapParams::default(),
    )
    .expect("valid instance")
    .with_known_solution(known);
    InstanceCatalogEntry {
        name: "simplex_affine".into(),
        spec,
        regime_tags: vec![RegimeTag::Interior],
        notes: format!("seed {seed}; Y is the probability simplex in R^3"),
    }
}

fn cubic_root(rhs: f64) -> f64 {
    // y + y³/4 = rhs is strictly increasing; Newton from 0 converges monotonically.
    let mut y = 0.0f64;
    for _ in 0..100 {
        let step = (y + 0.25 * y.powi(3) - rhs) / (1.0 + 0.75 * y * y);
        y -= step;
        if step.abs() <= 1e-17 {
            break;
        }
    }
    y
}

/// `F_i(y, x) = y_i + y_i³/4 − sin(x_i)/2` on `Y = X = [−1, 1]²`.
pub fn make_cubic_inner() -> InstanceCatalogEntry {
    let inner = InnerMap::new(2, 2, 1.0, |y, x| {
        DVector::from_fn(2, |i, _| y[i] + 0.25 * y[i].powi(3) - 0.5 * x[i].sin())
    })
    .with_jacobians(
        |y, _| DMatrix::from_diagonal(&y.map(|v| 1.0 + 0.75 * v * v)),
        |_, x| DMatrix::from_diagonal(&x.map(|v| -0.5 * v.cos())),
    );
    let known = KnownSolution::new(
        |x| x.map(|v| cubic_root(0.5 * v.sin())),
        |x| {
            let y = x.map(|v| cubic_root(0.5 * v.sin()));
            DMatrix::from_diagonal(&DVector::from_fn(2, |i, _| 0.5 * x[i].cos() / (1.0 + 0.75 * y[i] * y[i])))
        },
    );
    let spec = InstanceSpec::new(
        inner,
        quadratic_target_outer(dv(&[0.2, -0.1]), 0.1),
        ConvexSet::cube(2, -1.0, 1.0).expect("valid box"),
        ConvexSet::cube(2, -1.0, 1.0).expect("valid box"),
        DGapParams::default(),
    )
    .expect("valid instance")
    .with_known_solution(known);
    InstanceCatalogEntry {
        name: "cubic_inner".into(),
        spec,
        regime_tags: vec![RegimeTag::Interior],
        notes: "separable cubic map; nonzero Jacobian Lipschitz constants".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merit::dgap;

    #[test]
    fn names_resolve() {
        for name in NAMES {
            let e = by_name(name, 2, 7).unwrap();
            assert_eq!(e.name, name);
        }
        assert!(by_name("nope", 2, 0).is_err());
    }

    #[test]
    fn scalar_clamp_examples() {
        let e = make_scalar_clamp();
        let k = e.spec.known_solution().unwrap();
        assert_eq!(k.y_star(&dv(&[0.5])), dv(&[0.5]));
        assert_eq!(k.y_star(&dv(&[2.0])), dv(&[1.0]));
    }

    #[test]
    fn twice_identity_example() {
        let e = make_affine_box_from(DMatrix::identity(2, 2) * 2.0, -DMatrix::identity(2, 2), DVector::zeros(2), 2.0).unwrap();
        let k = e.spec.known_solution().unwrap();
        let x = dv(&[0.6, 1.0]);
        assert!((k.y_star(&x) - dv(&[0.3, 0.5])).norm() < 1e-15);
        assert!((k.implicit_grad(&x) - DMatrix::identity(2, 2) * 0.5).norm() < 1e-15);
        assert_eq!(k.y_star(&DVector::zeros(2)), DVector::zeros(2));
    }

    #[test]
    fn known_solutions_certified_by_dgap() {
        let mut rng = SeededRng::new(11);
        for e in catalog(5) {
            let Some(k) = e.spec.known_solution() else { continue };
            for _ in 0..100 {
                let x = e.spec.set_x().sample(&mut rng).unwrap();
                let y = k.y_star(&x);
                let phi = dgap(&e.spec, &y, &x, e.spec.dgap()).unwrap();
                assert!(phi <= 1e-10, "{}: φ = {phi:e}", e.name);
            }
        }
    }

    #[test]
    fn monotonicity_spot_check() {
        let mut rng = SeededRng::new(2);
        for e in catalog(5) {
            let ratio = e
                .spec
                .inner()
                .check_strong_monotonicity(e.spec.set_y(), e.spec.set_x(), 200, &mut rng)
                .unwrap();
            assert!(ratio >= e.spec.inner().mu() * (1.0 - 1e-9), "{}", e.name);
        }
    }

    #[test]
    fn outer_gradients_match_fd() {
        let mut rng = SeededRng::new(4);
        for e in catalog(5) {
            e.spec
                .outer()
                .check_gradients(e.spec.set_y(), e.spec.set_x(), 100, 1e-6, &mut rng)
                .unwrap();
        }
    }

    #[test]
    fn boundary_instance_is_active() {
        let e = make_affine_box_boundary(2, 5).unwrap();
        let y = e.spec.known_solution().unwrap().y_star(&DVector::zeros(2));
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn seeds_are_deterministic() {
        let a = make_affine_box(3, 9).unwrap();
        let b = make_affine_box(3, 9).unwrap();
        let (y, x) = (dv(&[0.1, 0.2, 0.3]), dv(&[0.4, -0.5, 0.6]));
        assert_eq!(a.spec.inner().eval(&y, &x).unwrap(), b.spec.inner().eval(&y, &x).unwrap());
        let c = make_affine_box(3, 10).unwrap();
        assert_ne!(a.spec.inner().eval(&y, &x).unwrap(), c.spec.inner().eval(&y, &x).unwrap());
    }
}

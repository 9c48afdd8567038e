//! Bilevel optimization with a strongly monotone variational inequality at
//! the inner level.
//!
//! The outer problem is `min_{x ∈ X} f(y*(x), x)` where `y*(x)` solves
//! `VI(Y, F(·, x))`. Inner solutions come from the fixed-point iteration
//! `y ← P_Y(y − F(y, x)/b)`, certified by the D-gap merit function.
//! Implicit gradients `∇_x y` are propagated forward through the same
//! iteration and combined into the hypergradient used by a projected
//! gradient outer loop.
//!
//! Module map:
//! - [`model`]: convex sets, projections, problem data.
//! - [`merit`]: regularized gap, D-gap, skewed projection.
//! - [`inner`]: fixed-point inner solver and rate estimation.
//! - [`itd`]: Jacobian propagation and hypergradients.
//! - [`outer`]: projected hypergradient descent and rate diagnostics.
//! - [`oracle`]: finite-difference and brute-force reference computations.
//! - [`problems`]: bundled instance catalog.

pub mod error;
pub mod inner;
pub mod itd;
pub mod linalg;
pub mod merit;
pub mod model;
pub mod oracle;
pub mod outer;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
pub use merit::DGapParams;
pub use model::{ConvexSet, InnerMap, InstanceSpec, KnownSolution, OuterObjective};

//! Problem data: convex sets, the inner map, the outer objective, and the
//! finite-difference primitive shared by the oracles.

mod fd;
mod instance;
mod set;

pub use fd::{fd_gradient, fd_jacobian, FD_STEP};
pub use instance::{
    InnerMap, InstanceSpec, JacobianMode, KnownSolution, MatFn, OuterObjective, ScalarFn, VecFn,
    MONOTONICITY_TOL,
};
pub use set::{
    dykstra_project, project, project_simplex, BallSet, BoxSet, ConvexSet, DykstraOutcome,
    HalfspaceSet, ACTIVITY_TOL, DYKSTRA_MAX_ITER, DYKSTRA_TOL, FEASIBILITY_TOL,
};

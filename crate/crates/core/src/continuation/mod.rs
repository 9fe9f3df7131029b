//! Shooting and pseudo-arclength continuation of periodic solutions.

pub mod branch;
pub mod integrator;
pub mod shooting;

pub use branch::{
    branch_k0, branches_from_eigenvalue, continue_branch, find_bifurcation_points, seed_points,
    BifurcationPoint, Branch, ContinuationOptions, Origin, Seed, SpecialPoint, SymmetryClass,
    Termination,
};
pub use integrator::{integrate, integrate_variational, Monodromy, Trajectory};
pub use shooting::{
    detect_parity, shoot_newton, winding_number, zeros_of, OrbitPoint, Parity, ShootOutcome,
    WindingReport,
};

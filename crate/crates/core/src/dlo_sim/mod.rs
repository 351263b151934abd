//! Thread dynamics as an XPBD particle chain.
//!
//! The thread is a chain of particles joined by compliant distance
//! constraints (stretch) and centroid bending constraints over every
//! consecutive triple. Each step predicts positions under gravity, solves
//! for all Lagrange multiplier increments of the chain jointly, resolves
//! contact against finite planes with rectangular cutouts, and derives damped
//! velocities from the position change.

mod chain;
mod collision;
mod constraint;
mod material;
mod solver;

pub use chain::{new_chain, new_clamped_tail, ParticleChain, BEND_CALIBRATION, MIN_TAIL_SEGMENTS};
pub use collision::{CollisionPlane, RectHole};
pub use constraint::{solve_bend_constraint, solve_distance_constraint, DistanceCorrection};
pub use material::{buckling_load, MaterialSpec};
pub use solver::{settle, step, SettleOutcome, StepParams};

/// Default thread particle spacing: 0.7 of a 1 cm base unit.
pub const DEFAULT_SPACING: f64 = 0.7 * 0.01;
/// Default per-step velocity damping factor.
pub const DEFAULT_DAMPING: f64 = 0.9;
/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

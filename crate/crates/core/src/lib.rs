//! Desk-scale simulation and learning stack for tactile needle threading.
//!
//! The crate is organised bottom-up:
//!
//! - [`dlo_sim`]: compliant position-based dynamics for the thread.
//! - [`scene`]: world state, eyelet localisation, approach planning and
//!   kinematic gripper motions.
//! - [`tactile`]: synthetic gel imprints for the finger and eyelet sensors.
//! - [`percept`]: classical mask extraction and the policy observation.
//! - [`tail_finding`]: two-run tracing and the learned tip-offset regressor.
//! - [`insertion_env`]: the goal-conditioned insertion environment.
//! - [`policy`]: dense networks, trainers and the visual-servoing baseline.
//! - [`harness`]: configuration, campaigns, persistence and reporting.

pub mod dlo_sim;
pub mod error;
pub mod harness;
pub mod insertion_env;
pub mod percept;
pub mod policy;
pub mod scene;
pub mod seeding;
pub mod tactile;
pub mod tail_finding;

pub use error::{Error, Result};

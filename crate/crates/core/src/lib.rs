//! Continuous-time directed polymers in i.i.d. Lévy random environments on Z^d.
//!
//! The crate computes point-to-point partition functions by integrating the
//! lattice heat equation with multiplicative Lévy noise ([`pam_solver`]),
//! estimates the same quantities by direct path sampling ([`mc_polymer`]),
//! and checks the large-deviation identities linking the polymer to the
//! underlying random walk ([`ldp`], [`ctrw`]).

pub mod ctrw;
pub mod error;
pub mod lattice;
pub mod ldp;
pub mod levy_env;
pub mod mc_polymer;
pub mod oracle;
pub mod pam_solver;
pub mod par;
pub mod seeding;
pub mod stats;
pub mod semigroup;
pub mod verify;

pub use error::{PolymerError, Result};

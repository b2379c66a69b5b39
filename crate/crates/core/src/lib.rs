//! Safe actor-critic learning for discrete-time nonlinear systems under
//! time-varying state and control constraints.
//!
//! The crate is organised bottom-up:
//!
//! - [`barrier`]: plain, recentred and relaxed logarithmic barriers over
//!   smooth inequality sets.
//! - [`dynamics`]: the discrete-time model abstraction and the bundled
//!   benchmark models.
//! - [`constraints`]: piecewise-constant constraint schedules and
//!   disturbance-tube tightening.
//! - [`learner`]: reshaped cost, barrier-force actor, barrier critic,
//!   multi-step policy evaluation and the safe policy iteration loop.
//! - [`simulate`]: closed-loop rollouts, episode logs and batch metrics.
//! - [`oracle`]: brute-force references (grid value iteration, Riccati
//!   iteration, finite differences).

// Negated comparisons are used to reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod learner;
pub mod oracle;
pub mod simulate;

pub use error::{Error, Result};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;

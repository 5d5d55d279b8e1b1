//! Antagonist management for redundant tendon-driven manipulators.
//!
//! The crate models a serial arm whose joints are driven by redundant muscles
//! (tendons routed through via points), and answers two questions about a fast
//! swing from `theta_start` to `theta_end`:
//!
//! * how fast can the swing be when every muscle is velocity-limited and the
//!   slowest lengthening (antagonist) muscle sets the pace, and
//! * how much faster it gets when antagonists are either inhibited during the
//!   swing (left backdrivable) or pre-elongated before it starts.
//!
//! Module map:
//!
//! * [`model`]: robot geometry, muscle lengths `l = h(theta)` and the muscle
//!   Jacobian `G(theta)`.
//! * [`analysis`]: motion-direction moment arms, speed index and
//!   agonist/antagonist labels.
//! * [`qp`]: dense convex QP solver (dual active set) with KKT reporting.
//! * [`statics`]: gravity holding torque and masked tension feasibility.
//! * [`sim`]: velocity-ramped kinematic simulation producing a [`sim::SimTrace`].
//! * [`strategy`]: inhibition masks, greedy elongation search, elongation
//!   amounts and the three-way comparison.
//! * [`scenario`]: TOML model/scenario files.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod model;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod statics;
pub mod strategy;

pub use error::{Error, Result};
pub use model::{MuscleModel, PulleyModel, RobotModel};
pub use statics::Mask;

/// Joint-space vector (radians, rad/s or N·m depending on context).
pub type JointVector = nalgebra::DVector<f64>;
/// Muscle-space vector (meters, m/s or newtons depending on context).
pub type MuscleVector = nalgebra::DVector<f64>;
/// Muscle Jacobian `dl/dtheta`, one row per muscle, one column per joint (m/rad).
pub type MuscleJacobian = nalgebra::DMatrix<f64>;

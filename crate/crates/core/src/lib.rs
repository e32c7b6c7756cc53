// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Contextual graph labeling with assignment flows and S-flows.
//!
//! Soft label assignments live on a product of probability simplices and are
//! driven toward integral labelings by replicator-type dynamics. Besides the
//! integrator, the crate classifies equilibria through closed-form Jacobian
//! spectra and computes basin radii that make early rounding provably safe.

pub mod counterexample;
pub mod eigen;
pub mod error;
pub mod flow;
pub mod integrator;
pub mod linear_flow;
pub mod ode;
pub mod pipeline;
pub mod simplex;
pub mod stability;
pub mod weights;

pub use error::{FlowError, Result};
pub use flow::{assignment_rhs, representative_rhs, sflow_init, sflow_rhs, similarity_map, w_from_s_accumulate, Quadrature};
pub use integrator::{certified_round, euler_step, integrate, IntegratorConfig, TerminationMode, Trajectory};
pub use simplex::{AssignmentState, SimplexPoint, TangentField, TangentVector};
pub use stability::{classify, Classification, StabilityReport};
pub use weights::{DistanceMatrix, WeightMatrix};

//! Region-of-attraction estimation for nonlinear autonomous systems by
//! decomposing the vector field into individually invariant sub-fields,
//! intersecting their invariant polytopes, and scanning power-system
//! fault-on trajectories against the resulting set for critical clearing
//! times.
//!
//! Module map:
//!
//! - [`dynsys`] — vector fields, decompositions, ODE integration, equilibria
//! - [`polytope`] — halfspace polytopes: membership, intersection, feasibility
//! - [`invariance`] — candidate invariant-set construction and certification
//! - [`examples`] — bundled second-order systems with analytic invariant sets
//! - [`powersys`] — power flow, Kron reduction, classical swing model
//! - [`cct`] — critical-clearing-time scan and its time-domain oracle

// Dense numeric kernels index by row/column on purpose, and negated
// comparisons reject NaNs that plain `<=` would admit.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cct;
pub mod dynsys;
pub mod examples;
pub mod invariance;
pub mod polytope;
pub mod powersys;

pub use cct::{CctResult, CctStatus, OracleResult, ScanResult, ScreenConfig};
pub use dynsys::{DecomposedField, FnField, IntegratorConfig, Method, Trajectory, VectorField};
pub use examples::{example, ExampleSystem};
pub use invariance::{BoundaryFlowReport, CandidateRoa, IndividualInvariantSet, InvarianceReport};
pub use polytope::HalfspacePolytope;
pub use powersys::{Contingency, PowerCase, ReducedSystem};

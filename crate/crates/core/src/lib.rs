//! Power-flow solution curve tracing with the dynamized power flow (DPF)
//! method.
//!
//! The algebraic power-flow equations are embedded into a fictitious
//! dynamic system whose trajectory is computed as a power series of time.
//! After differential transformation the nonlinear equations become
//! formally linear in the unknown order-k coefficients, so each fictitious
//! time window needs one matrix factorization and `K` back-substitutions
//! and no Newton iterations.
//!
//! Crate layout:
//!
//! * [`network`] parses case data, builds the bus admittance matrix and the
//!   loading-direction vector, and evaluates the rectangular power-flow
//!   mismatch.
//! * [`dt`] is the power-series coefficient algebra.
//! * [`tracer`] assembles the formally linear blocks, runs the order-by-order
//!   recursion and chains windows into a full P-V curve.
//! * [`reference`] holds an independent Newton-Raphson power flow and a
//!   predictor-corrector continuation power flow used as an oracle.
//! * [`curve`] is the solution-curve type shared by both tracers.
//! * [`linalg`] wraps the sparse LU factorization that both tracers reuse.

pub mod curve;
pub mod dt;
pub mod linalg;
pub mod network;
pub mod reference;
pub mod tracer;

pub use curve::{Formulation, SolutionCurve};
pub use network::{DirectionSpec, DirectionVector, PowerNetwork};
pub use reference::{CpfConfig, NrConfig};
pub use tracer::TraceConfig;

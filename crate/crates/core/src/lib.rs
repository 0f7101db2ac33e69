//! Intercloud broker core: offering catalog, job descriptions, transfer
//! routing, placement optimization and a simulated runtime.
//!
//! Numeric code is generic over [`Scalar`]; `f64` is the working type and
//! [`Exact`] (arbitrary-precision rationals) backs exactness checks. The
//! aliases below fix the scalar for everyday use.

pub mod catalog;
mod country;
mod json;
pub mod jobspec;
pub mod optimizer;
pub mod runtime;
pub mod scalar;
pub mod transfer;

pub use country::{Country, UnknownCountry};
pub use scalar::{Exact, Scalar};

pub type PhysicalPlan = optimizer::PhysicalPlan<f64>;
pub type PlanMetrics = optimizer::PlanMetrics<f64>;
pub type Placement = optimizer::Placement<f64>;
pub type TransferPlan = transfer::TransferPlan<f64>;
pub type ExecutionTrace = runtime::ExecutionTrace<f64>;
pub type Invoice = runtime::Invoice<f64>;

pub type ExactPhysicalPlan = optimizer::PhysicalPlan<Exact>;
pub type ExactTransferPlan = transfer::TransferPlan<Exact>;
pub type ExactExecutionTrace = runtime::ExecutionTrace<Exact>;
pub type ExactInvoice = runtime::Invoice<Exact>;

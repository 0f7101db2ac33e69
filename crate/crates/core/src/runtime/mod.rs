//! Provisioning, simulated execution with fault injection, replanning,
//! queueing and billing.

mod broker;
mod capacity;
mod fault;
mod invoice;
mod sim;

pub use broker::{
    queue_drain, queue_step, queue_submit, run_broker, BrokerError, BrokerOptions, BrokerQueue,
    QueueRecord,
};
pub use capacity::{
    can_provision, provision, Allocation, CapacityError, CapacityState, FailedPlacement,
    ProvisionFailure,
};
pub use fault::{FaultModel, FaultModelError, InjectedFault};
pub use invoice::{invoice, Charge, CloudBill, Invoice, LineItem};
pub use sim::{
    simulate, ExcludedPair, ExecutionTrace, FailReason, HopCharge, Outcome, ProvisionedPlacement,
    SimFailure, TraceEvent,
};

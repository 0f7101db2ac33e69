//! Optimize, provision, replan on shortage, then execute; plus a FIFO job queue.

use std::collections::{BTreeMap, VecDeque};

use crate::catalog::Catalog;
use crate::jobspec::{JobError, JobSpec};
use crate::optimizer::{optimize, Exclusions, OptimizeError, OptimizerConfig, PhysicalPlan};
use crate::scalar::Scalar;

use super::capacity::{can_provision, provision, Allocation, CapacityState};
use super::fault::{FaultModel, FaultModelError};
use super::sim::{
    provision_fail_event, simulate, ExcludedPair, ExecutionTrace, Outcome, ProvisionedPlacement,
    SimFailure, TraceEvent,
};

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerOptions {
    pub optimizer: OptimizerConfig,
    /// Re-optimizations allowed after provisioning failures.
    pub max_replans: usize,
    /// Fallback credentials per cloud; the job's own entries win.
    pub credentials: BTreeMap<String, String>,
}

impl Default for BrokerOptions {
    fn default() -> Self {
        BrokerOptions {
            optimizer: OptimizerConfig::default(),
            max_replans: 5,
            credentials: BTreeMap::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError<S> {
    #[error("no executable plan after {replans} replans: {reason}")]
    Exhausted {
        replans: usize,
        reason: String,
        trace: Box<ExecutionTrace<S>>,
    },
    #[error(transparent)]
    SimFailure(SimFailure<S>),
    #[error(transparent)]
    Job(JobError),
    #[error(transparent)]
    Faults(#[from] FaultModelError),
}

impl<S> BrokerError<S> {
    /// The trace recorded up to the failure, if the broker got that far.
    pub fn trace(&self) -> Option<&ExecutionTrace<S>> {
        match self {
            BrokerError::Exhausted { trace, .. } => Some(trace),
            BrokerError::SimFailure(f) => Some(&f.trace),
            _ => None,
        }
    }
}

fn credentials_for<S>(
    plan: &PhysicalPlan<S>,
    job: &JobSpec,
    fallback: &BTreeMap<String, String>,
) -> BTreeMap<String, String> {
    plan.placements
        .iter()
        .map(|p| p.cloud())
        .filter_map(|c| {
            job.credentials()
                .get(c)
                .or_else(|| fallback.get(c))
                .map(|t| (c.to_string(), t.clone()))
        })
        .collect()
}

type Session<S> = (Result<ExecutionTrace<S>, BrokerError<S>>, Option<Allocation>);

fn session<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    capacity: &mut CapacityState,
    faults: &FaultModel,
    options: &BrokerOptions,
) -> Session<S> {
    if let Err(e) = faults.check() {
        return (Err(e.into()), None);
    }
    let mut excluded = Exclusions::new();
    let mut events: Vec<TraceEvent<S>> = Vec::new();
    let mut plans: Vec<PhysicalPlan<S>> = Vec::new();
    let exhausted = |events: Vec<TraceEvent<S>>, plans: Vec<PhysicalPlan<S>>, replans, reason| {
        let mut trace = ExecutionTrace::empty(job.id());
        trace.outcome = Outcome::Exhausted;
        trace.events = events;
        trace.plans = plans;
        BrokerError::Exhausted {
            replans,
            reason,
            trace: Box::new(trace),
        }
    };
    for round in 0..=options.max_replans {
        let plan = match optimize::<S>(job, catalog, &excluded, &options.optimizer) {
            Ok(p) => p,
            Err(OptimizeError::Job(e)) => return (Err(BrokerError::Job(e)), None),
            Err(e) => return (Err(exhausted(events, plans, round, e.to_string())), None),
        };
        plans.push(plan.clone());
        match provision(&plan, capacity) {
            Ok(allocation) => {
                events.push(TraceEvent::ProvisionOk {
                    plan: round,
                    placements: plan
                        .placements
                        .iter()
                        .map(|p| ProvisionedPlacement {
                            stage: p.stage.clone(),
                            replica: p.replica,
                            offering: p.offering.clone(),
                            zone: p.zone.clone(),
                            instance_count: p.instance_count,
                            price_tier: p.price_tier,
                        })
                        .collect(),
                    credentials: credentials_for(&plan, job, &options.credentials),
                });
                let merge = |mut t: ExecutionTrace<S>, mut events: Vec<TraceEvent<S>>| {
                    events.append(&mut t.events);
                    t.events = events;
                    t.plans = plans.clone();
                    t
                };
                let result = match simulate(&plan, &allocation, faults, job, catalog) {
                    Ok(t) => Ok(merge(t, events)),
                    Err(f) => Err(BrokerError::SimFailure(SimFailure {
                        stage: f.stage,
                        replica: f.replica,
                        trace: Box::new(merge(*f.trace, events)),
                    })),
                };
                return (result, Some(allocation));
            }
            Err(failure) => {
                events.push(provision_fail_event(round, &failure));
                if round == options.max_replans {
                    let reason = format!("replan limit {} reached", options.max_replans);
                    return (Err(exhausted(events, plans, round, reason)), None);
                }
                for f in &failure.failed {
                    excluded.insert((f.stage.clone(), f.offering.clone()));
                }
                events.push(TraceEvent::Replan {
                    plan: round + 1,
                    excluded: excluded
                        .iter()
                        .map(|(stage, offering)| ExcludedPair {
                            stage: stage.clone(),
                            offering: offering.clone(),
                        })
                        .collect(),
                });
            }
        }
    }
    unreachable!("the final round always returns")
}

/// Runs one job to completion, returning its capacity afterwards.
///
/// Provisioning shortages exclude the failed `(stage, offering)` pairs and
/// re-optimize, at most `options.max_replans` times.
pub fn run_broker<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    capacity: &mut CapacityState,
    faults: &FaultModel,
    options: &BrokerOptions,
) -> Result<ExecutionTrace<S>, BrokerError<S>> {
    let (result, allocation) = session(job, catalog, capacity, faults, options);
    if let Some(a) = allocation {
        capacity.release(&a);
    }
    result
}

#[derive(Debug)]
struct Running<S> {
    finish: S,
    allocation: Allocation,
}

/// FIFO admission over a shared capacity pool. The head job waits for
/// running jobs to finish while its plan does not fit.
#[derive(Debug)]
pub struct BrokerQueue<S> {
    pending: VecDeque<JobSpec>,
    capacity: CapacityState,
    clock: S,
    running: Vec<Running<S>>,
}

#[derive(Debug)]
pub struct QueueRecord<S> {
    pub job_id: String,
    /// Queue time at which the job was admitted; trace times are relative to it.
    pub admitted_at: S,
    pub result: Result<ExecutionTrace<S>, BrokerError<S>>,
}

impl<S: Scalar> BrokerQueue<S> {
    pub fn new(capacity: CapacityState) -> Self {
        BrokerQueue {
            pending: VecDeque::new(),
            capacity,
            clock: S::zero(),
            running: Vec::new(),
        }
    }

    pub fn capacity(&self) -> &CapacityState {
        &self.capacity
    }

    pub fn clock(&self) -> &S {
        &self.clock
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn running(&self) -> usize {
        self.running.len()
    }

    /// Completes the earliest running job, advancing the clock to its finish.
    fn complete_next(&mut self) -> bool {
        let Some(i) = (0..self.running.len()).min_by(|&a, &b| {
            self.running[a]
                .finish
                .partial_cmp(&self.running[b].finish)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        }) else {
            return false;
        };
        let done = self.running.remove(i);
        self.clock = S::max_of(self.clock.clone(), done.finish);
        self.capacity.release(&done.allocation);
        true
    }

    /// Completes every running job.
    pub fn settle(&mut self) {
        while self.complete_next() {}
    }
}

pub fn queue_submit<S: Scalar>(queue: &mut BrokerQueue<S>, job: JobSpec) {
    queue.pending.push_back(job);
}

/// Admits and runs the head job. `None` when nothing is pending.
pub fn queue_step<S: Scalar>(
    queue: &mut BrokerQueue<S>,
    catalog: &Catalog,
    faults: &FaultModel,
    options: &BrokerOptions,
) -> Option<QueueRecord<S>> {
    let job = queue.pending.pop_front()?;
    while !queue.running.is_empty() {
        let fits = match optimize::<S>(&job, catalog, &Exclusions::new(), &options.optimizer) {
            Ok(plan) => can_provision(&plan, &queue.capacity),
            Err(_) => true,
        };
        if fits {
            break;
        }
        queue.complete_next();
    }
    let admitted_at = queue.clock.clone();
    let (result, allocation) = session::<S>(&job, catalog, &mut queue.capacity, faults, options);
    if let Some(allocation) = allocation {
        let elapsed = match &result {
            Ok(t) => t.actual_makespan_hours.clone(),
            Err(e) => e
                .trace()
                .map(|t| t.actual_makespan_hours.clone())
                .unwrap_or_else(S::zero),
        };
        queue.running.push(Running {
            finish: admitted_at.clone() + elapsed,
            allocation,
        });
    }
    Some(QueueRecord {
        job_id: job.id().to_string(),
        admitted_at,
        result,
    })
}

/// Runs every pending job in order and waits for all of them to finish.
pub fn queue_drain<S: Scalar>(
    queue: &mut BrokerQueue<S>,
    catalog: &Catalog,
    faults: &FaultModel,
    options: &BrokerOptions,
) -> Vec<QueueRecord<S>> {
    let mut out = Vec::new();
    while let Some(r) = queue_step(queue, catalog, faults, options) {
        out.push(r);
    }
    queue.settle();
    out
}

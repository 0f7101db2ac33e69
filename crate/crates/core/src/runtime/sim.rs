//! Deterministic discrete-event execution of a provisioned plan.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, EgressRate, OfferingRef, PriceTier, RegionRef};
use crate::jobspec::JobSpec;
use crate::optimizer::{
    billed_cost, job_units, transfer_slots, Endpoint, PhysicalPlan, UnitRef,
};
use crate::scalar::{sum, Scalar};
use crate::transfer::transfer_cost;

use super::capacity::{FailedPlacement, ProvisionFailure};
use super::fault::FaultModel;
use super::Allocation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub stage: String,
    pub offering: OfferingRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionedPlacement {
    pub stage: String,
    pub replica: u32,
    pub offering: OfferingRef,
    pub zone: String,
    pub instance_count: u32,
    pub price_tier: PriceTier,
}

/// Egress charged for one hop, to the cloud the bytes leave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopCharge<S> {
    pub src: RegionRef,
    pub dst: RegionRef,
    pub peered: bool,
    pub cost_usd: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    Fault,
    Preempted,
    /// Stopped because another unit exhausted its retries.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent<S> {
    ProvisionFail {
        plan: usize,
        failed: Vec<FailedPlacement>,
    },
    Replan {
        plan: usize,
        excluded: Vec<ExcludedPair>,
    },
    ProvisionOk {
        plan: usize,
        placements: Vec<ProvisionedPlacement>,
        /// Per-cloud credentials handed to the provisioner.
        credentials: BTreeMap<String, String>,
    },
    StageFail {
        time: S,
        stage: String,
        replica: u32,
        attempt: u32,
        offering: OfferingRef,
        price_tier: PriceTier,
        reason: FailReason,
        billed_hours: S,
        cost_usd: S,
    },
    StageEnd {
        time: S,
        stage: String,
        replica: u32,
        attempt: u32,
        offering: OfferingRef,
        price_tier: PriceTier,
        billed_hours: S,
        cost_usd: S,
    },
    TransferStart {
        time: S,
        from: Endpoint,
        to: UnitRef,
        path: Vec<RegionRef>,
    },
    TransferEnd {
        time: S,
        from: Endpoint,
        to: UnitRef,
        hops: Vec<HopCharge<S>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        compression_cost_usd: Option<S>,
        cost_usd: S,
    },
    Retry {
        time: S,
        stage: String,
        replica: u32,
        attempt: u32,
    },
    StageStart {
        time: S,
        stage: String,
        replica: u32,
        attempt: u32,
        offering: OfferingRef,
    },
    JobDone {
        time: S,
    },
    JobFailed {
        time: S,
        stage: String,
        replica: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Done,
    Failed,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace<S> {
    pub job_id: String,
    pub outcome: Outcome,
    pub events: Vec<TraceEvent<S>>,
    pub actual_cost_usd: S,
    pub actual_makespan_hours: S,
    /// Original plan followed by each replanned one.
    pub plans: Vec<PhysicalPlan<S>>,
}

impl<S: Scalar + Serialize> ExecutionTrace<S> {
    /// One JSON object per event, newline terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

impl<S: Scalar> ExecutionTrace<S> {
    pub fn empty(job_id: &str) -> Self {
        ExecutionTrace {
            job_id: job_id.to_string(),
            outcome: Outcome::Done,
            events: Vec::new(),
            actual_cost_usd: S::zero(),
            actual_makespan_hours: S::zero(),
            plans: Vec::new(),
        }
    }

    pub fn final_plan(&self) -> Option<&PhysicalPlan<S>> {
        self.plans.last()
    }

    pub fn count(&self, pred: impl Fn(&TraceEvent<S>) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {stage} replica {replica} failed after exhausting its retries")]
pub struct SimFailure<S> {
    pub stage: String,
    pub replica: u32,
    pub trace: Box<ExecutionTrace<S>>,
}

pub(crate) fn provision_fail_event<S>(plan: usize, failure: &ProvisionFailure) -> TraceEvent<S> {
    TraceEvent::ProvisionFail {
        plan,
        failed: failure.failed.clone(),
    }
}

/// Kind rank used to order simultaneous events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    StageFail,
    StageEnd,
    TransferStart,
    TransferEnd,
    Retry,
    StageStart,
}

struct Pending<S> {
    time: S,
    kind: Kind,
    /// Unit index for stage events, slot index for transfers.
    id: usize,
    attempt: u32,
    seq: u64,
}

impl<S: Scalar> Pending<S> {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .partial_cmp(&other.time)
            .unwrap_or(Ordering::Equal)
            .then(self.kind.cmp(&other.kind))
            .then(self.id.cmp(&other.id))
            .then(self.seq.cmp(&other.seq))
    }
}

impl<S: Scalar> PartialEq for Pending<S> {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Pending<S> {}

impl<S: Scalar> PartialOrd for Pending<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Pending<S> {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

struct Queue<S> {
    heap: BinaryHeap<Pending<S>>,
    seq: u64,
}

impl<S: Scalar> Queue<S> {
    fn push(&mut self, time: S, kind: Kind, id: usize, attempt: u32) {
        self.seq += 1;
        self.heap.push(Pending {
            time,
            kind,
            id,
            attempt,
            seq: self.seq,
        });
    }
}

/// Per-hop egress charges and the compression charge for a transfer.
pub(crate) fn transfer_charges<S: Scalar>(
    catalog: &Catalog,
    path: &[RegionRef],
    size_gb: &S,
    compression: Option<&crate::transfer::AppliedCompression<S>>,
) -> Vec<HopCharge<S>> {
    let wire = match compression {
        Some(c) => size_gb.clone() * c.ratio.clone(),
        None => size_gb.clone(),
    };
    path.windows(2)
        .filter_map(|w| match catalog.egress_rate(&w[0], &w[1]) {
            Ok(EgressRate::Hop(h)) => Some(HopCharge {
                src: w[0].clone(),
                dst: w[1].clone(),
                peered: h.source == crate::catalog::RateSource::PeeredLink,
                cost_usd: S::of(h.price_per_gb) * wire.clone(),
            }),
            _ => None,
        })
        .collect()
}

struct UnitState<S> {
    waiting: usize,
    start: S,
    running: bool,
    done: bool,
    /// Charges in attempt order.
    charges: Vec<S>,
}

/// Executes `plan` event by event.
///
/// Stages start once every input transfer has ended; a stage's outputs
/// begin transferring when it ends. Failures, scripted or drawn from the
/// seeded exponential rates, abort the running attempt, which is billed
/// for its elapsed time and retried from scratch on the same placement.
/// A unit that exhausts its retries cancels the run.
pub fn simulate<S: Scalar>(
    plan: &PhysicalPlan<S>,
    allocation: &Allocation,
    faults: &FaultModel,
    job: &JobSpec,
    catalog: &Catalog,
) -> Result<ExecutionTrace<S>, SimFailure<S>> {
    let _ = allocation;
    let units = job_units(job);
    let slots = transfer_slots(job);
    let placements: Vec<_> = units
        .iter()
        .map(|u| plan.placement(&u.stage, u.replica).expect("plan covers job"))
        .collect();
    let prices: Vec<f64> = placements
        .iter()
        .map(|p| {
            catalog
                .offering(&p.offering)
                .and_then(|o| o.price(p.price_tier))
                .expect("plan offerings come from the catalog")
        })
        .collect();
    let unit_index: BTreeMap<&UnitRef, usize> = units.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let transfers: Vec<_> = slots
        .iter()
        .map(|s| {
            plan.transfers
                .iter()
                .find(|t| t.from == s.from && t.to == s.to)
                .expect("plan covers job")
        })
        .collect();
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); units.len()];
    let mut state: Vec<UnitState<S>> = units
        .iter()
        .map(|_| UnitState {
            waiting: 0,
            start: S::zero(),
            running: false,
            done: false,
            charges: Vec::new(),
        })
        .collect();
    for (i, s) in slots.iter().enumerate() {
        state[unit_index[&s.to]].waiting += 1;
        if let Endpoint::Unit(u) = &s.from {
            outgoing[unit_index[u]].push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(faults.seed);
    let mut q = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    for (i, s) in slots.iter().enumerate() {
        if matches!(s.from, Endpoint::Dataset(_)) {
            q.push(S::zero(), Kind::TransferStart, i, 0);
        }
    }
    for (u, st) in state.iter().enumerate() {
        if st.waiting == 0 {
            q.push(S::zero(), Kind::StageStart, u, 0);
        }
    }

    let mut events = Vec::new();
    let mut slot_charges: Vec<Option<S>> = vec![None; slots.len()];
    let mut failed: Option<(usize, S)> = None;
    // elapsed hours at which the running attempt will fail, if it does
    let mut fail_after: Vec<Option<(S, FailReason)>> = vec![None; units.len()];

    while let Some(ev) = q.heap.pop() {
        let t = ev.time.clone();
        match ev.kind {
            Kind::TransferStart => {
                let tr = transfers[ev.id];
                events.push(TraceEvent::TransferStart {
                    time: t.clone(),
                    from: tr.from.clone(),
                    to: tr.to.clone(),
                    path: tr.plan.path.clone(),
                });
                q.push(t + tr.plan.time_hours.clone(), Kind::TransferEnd, ev.id, 0);
            }
            Kind::TransferEnd => {
                let tr = transfers[ev.id];
                let size = S::of(slots[ev.id].size_gb);
                let compression = tr.plan.compression.as_ref();
                let cost = transfer_cost(catalog, &tr.plan.path, &size, compression)
                    .expect("planned routes exist");
                slot_charges[ev.id] = Some(cost.clone());
                events.push(TraceEvent::TransferEnd {
                    time: t.clone(),
                    from: tr.from.clone(),
                    to: tr.to.clone(),
                    hops: transfer_charges(catalog, &tr.plan.path, &size, compression),
                    compression_cost_usd: compression
                        .filter(|_| tr.plan.path.len() > 1)
                        .map(|c| c.compress_cost_usd.clone()),
                    cost_usd: cost,
                });
                let dst = unit_index[&tr.to];
                state[dst].waiting -= 1;
                if state[dst].waiting == 0 {
                    q.push(t, Kind::StageStart, dst, 0);
                }
            }
            Kind::StageStart => {
                let u = ev.id;
                let p = placements[u];
                state[u].start = t.clone();
                state[u].running = true;
                events.push(TraceEvent::StageStart {
                    time: t.clone(),
                    stage: p.stage.clone(),
                    replica: p.replica,
                    attempt: ev.attempt,
                    offering: p.offering.clone(),
                });
                let duration = p.duration_hours.clone();
                let mut fail: Option<(S, FailReason)> = faults
                    .injected_for(&p.stage, p.replica, ev.attempt)
                    .map(|f| (S::of(f) * duration.clone(), FailReason::Fault));
                if fail.is_none() {
                    let mut draw = |rate: f64, reason: FailReason| -> Option<(S, FailReason)> {
                        if rate <= 0.0 {
                            return None;
                        }
                        let x: f64 = Exp::new(rate).expect("validated rate").sample(&mut rng);
                        Some((S::of(x), reason))
                    };
                    let fault = draw(faults.rate_for(&p.stage), FailReason::Fault);
                    let preempt = if p.price_tier == PriceTier::Spot {
                        draw(faults.spot_preemption_rate, FailReason::Preempted)
                    } else {
                        None
                    };
                    fail = match (fault, preempt) {
                        (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
                        (a, b) => a.or(b),
                    };
                    fail = fail.filter(|(x, _)| *x < duration);
                }
                match fail {
                    Some((after, reason)) => {
                        fail_after[u] = Some((after.clone(), reason));
                        q.push(t + after, Kind::StageFail, u, ev.attempt);
                    }
                    None => {
                        fail_after[u] = None;
                        q.push(t + duration, Kind::StageEnd, u, ev.attempt);
                    }
                }
            }
            Kind::StageFail => {
                let u = ev.id;
                let p = placements[u];
                let (elapsed, reason) = fail_after[u].take().expect("scheduled failure");
                let cost = billed_cost(&elapsed, p.instance_count, prices[u]);
                state[u].charges.push(cost.clone());
                state[u].running = false;
                events.push(TraceEvent::StageFail {
                    time: t.clone(),
                    stage: p.stage.clone(),
                    replica: p.replica,
                    attempt: ev.attempt,
                    offering: p.offering.clone(),
                    price_tier: p.price_tier,
                    reason,
                    billed_hours: elapsed,
                    cost_usd: cost,
                });
                if ev.attempt < faults.max_retries {
                    q.push(t, Kind::Retry, u, ev.attempt + 1);
                } else {
                    failed = Some((u, t));
                    break;
                }
            }
            Kind::Retry => {
                let p = placements[ev.id];
                events.push(TraceEvent::Retry {
                    time: t.clone(),
                    stage: p.stage.clone(),
                    replica: p.replica,
                    attempt: ev.attempt,
                });
                q.push(t, Kind::StageStart, ev.id, ev.attempt);
            }
            Kind::StageEnd => {
                let u = ev.id;
                let p = placements[u];
                let cost = billed_cost(&p.duration_hours, p.instance_count, prices[u]);
                state[u].charges.push(cost.clone());
                state[u].running = false;
                state[u].done = true;
                events.push(TraceEvent::StageEnd {
                    time: t.clone(),
                    stage: p.stage.clone(),
                    replica: p.replica,
                    attempt: ev.attempt,
                    offering: p.offering.clone(),
                    price_tier: p.price_tier,
                    billed_hours: p.duration_hours.clone(),
                    cost_usd: cost,
                });
                for &slot in &outgoing[u] {
                    q.push(t.clone(), Kind::TransferStart, slot, 0);
                }
            }
        }
    }

    let end = match &failed {
        Some((_, t)) => t.clone(),
        None => events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::StageEnd { time, .. } => Some(time.clone()),
                _ => None,
            })
            .fold(S::zero(), S::max_of),
    };
    if failed.is_some() {
        for (u, st) in state.iter_mut().enumerate() {
            if !st.running {
                continue;
            }
            let p = placements[u];
            let elapsed = end.clone() - st.start.clone();
            let cost = billed_cost(&elapsed, p.instance_count, prices[u]);
            st.charges.push(cost.clone());
            st.running = false;
            events.push(TraceEvent::StageFail {
                time: end.clone(),
                stage: p.stage.clone(),
                replica: p.replica,
                attempt: 0,
                offering: p.offering.clone(),
                price_tier: p.price_tier,
                reason: FailReason::Cancelled,
                billed_hours: elapsed,
                cost_usd: cost,
            });
        }
    }

    let run_total = sum(state.iter().map(|s| sum(s.charges.iter().cloned())));
    let transfer_total = sum(slot_charges.iter().flatten().cloned());
    let mut trace = ExecutionTrace {
        job_id: job.id().to_string(),
        outcome: Outcome::Done,
        events,
        actual_cost_usd: run_total + transfer_total,
        actual_makespan_hours: end.clone(),
        plans: vec![plan.clone()],
    };
    match failed {
        None => {
            trace.events.push(TraceEvent::JobDone { time: end });
            Ok(trace)
        }
        Some((u, t)) => {
            trace.outcome = Outcome::Failed;
            trace.events.push(TraceEvent::JobFailed {
                time: t,
                stage: units[u].stage.clone(),
                replica: units[u].replica,
            });
            Err(SimFailure {
                stage: units[u].stage.clone(),
                replica: units[u].replica,
                trace: Box::new(trace),
            })
        }
    }
}

//! Physical plans and their pure evaluation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, OfferingRef, PriceTier, RegionRef};
use crate::jobspec::{DataLocation, JobSpec, Objective, ObjectiveMode};
use crate::scalar::{sum, Scalar};
use crate::transfer::{transfer_cost, transfer_time, AppliedCompression, TransferPlan};

/// One replica of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitRef {
    pub stage: String,
    pub replica: u32,
}

impl UnitRef {
    pub fn new(stage: impl Into<String>, replica: u32) -> Self {
        UnitRef {
            stage: stage.into(),
            replica,
        }
    }
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.stage, self.replica)
    }
}

/// Where transferred bytes come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Dataset(String),
    Unit(UnitRef),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Dataset(d) => write!(f, "dataset:{d}"),
            Endpoint::Unit(u) => u.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement<S> {
    pub stage: String,
    pub replica: u32,
    pub offering: OfferingRef,
    pub zone: String,
    pub instance_count: u32,
    pub price_tier: PriceTier,
    pub duration_hours: S,
    pub run_cost_usd: S,
    pub carbon_kg: S,
}

impl<S> Placement<S> {
    pub fn unit(&self) -> UnitRef {
        UnitRef::new(&self.stage, self.replica)
    }

    pub fn region(&self) -> &RegionRef {
        &self.offering.region
    }

    pub fn cloud(&self) -> &str {
        &self.offering.region.cloud
    }

    /// Identifier used in deterministic tie-breaking.
    pub fn label(&self) -> String {
        format!("{}x{}:{}", self.offering, self.instance_count, self.price_tier)
    }
}

/// Run figures of one placement, from the work-unit performance model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFigures<S> {
    pub duration_hours: S,
    pub run_cost_usd: S,
    pub carbon_kg: S,
}

/// `duration = work / (speed * n)`, `cost = duration * n * price`,
/// `carbon = power * n * duration * intensity`.
pub fn run_figures<S: Scalar>(
    work: f64,
    speed: f64,
    instance_count: u32,
    price_per_hour: f64,
    power_kw: f64,
    carbon_intensity: f64,
) -> RunFigures<S> {
    let n = S::of_usize(instance_count as usize);
    let duration = S::of(work) / (S::of(speed) * n.clone());
    RunFigures {
        run_cost_usd: duration.clone() * n.clone() * S::of(price_per_hour),
        carbon_kg: S::of(power_kw) * n * duration.clone() * S::of(carbon_intensity),
        duration_hours: duration,
    }
}

/// Charge for `hours` of billed time on `count` instances at `price_per_hour`.
pub fn billed_cost<S: Scalar>(hours: &S, instance_count: u32, price_per_hour: f64) -> S {
    hours.clone() * S::of_usize(instance_count as usize) * S::of(price_per_hour)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEntry<S> {
    pub from: Endpoint,
    pub to: UnitRef,
    pub plan: TransferPlan<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics<S> {
    pub stage: String,
    pub replica: u32,
    pub start_hours: S,
    pub finish_hours: S,
    pub duration_hours: S,
    pub cost_usd: S,
    pub carbon_kg: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics<S> {
    pub from: Endpoint,
    pub to: UnitRef,
    pub cost_usd: S,
    pub time_hours: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics<S> {
    pub total_cost_usd: S,
    pub run_cost_usd: S,
    pub transfer_cost_usd: S,
    /// Sum of transfer durations, whether or not they lie on the critical path.
    pub transfer_time_hours: S,
    pub makespan_hours: S,
    pub total_carbon_kg: S,
    pub stages: Vec<StageMetrics<S>>,
    pub transfers: Vec<EdgeMetrics<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPlan<S> {
    pub job_id: String,
    pub objective: Objective,
    pub placements: Vec<Placement<S>>,
    pub transfers: Vec<TransferEntry<S>>,
    pub metrics: PlanMetrics<S>,
}

impl<S: Scalar> PhysicalPlan<S> {
    pub fn placement(&self, stage: &str, replica: u32) -> Option<&Placement<S>> {
        self.placements
            .iter()
            .find(|p| p.stage == stage && p.replica == replica)
    }

    pub fn objective_value(&self) -> S {
        objective_value(&self.objective, &self.metrics)
    }

    /// Comma-joined placement labels in plan order.
    pub fn label(&self) -> String {
        self.placements
            .iter()
            .map(Placement::label)
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn clouds(&self) -> BTreeSet<&str> {
        self.placements.iter().map(Placement::cloud).collect()
    }
}

/// Scalar the optimizer minimizes.
pub fn objective_value<S: Scalar>(objective: &Objective, m: &PlanMetrics<S>) -> S {
    match objective.mode {
        ObjectiveMode::MinCost => m.total_cost_usd.clone(),
        ObjectiveMode::MinTime => m.makespan_hours.clone(),
        ObjectiveMode::Weighted => {
            S::of(objective.weight_cost) * m.total_cost_usd.clone()
                + S::of(objective.weight_time) * m.makespan_hours.clone()
                + S::of(objective.weight_carbon) * m.total_carbon_kg.clone()
        }
    }
}

/// Deadline and budget both hold.
pub fn within_bounds<S: Scalar>(objective: &Objective, m: &PlanMetrics<S>) -> bool {
    objective
        .deadline_hours
        .is_none_or(|d| m.makespan_hours <= S::of(d))
        && objective.budget_usd.is_none_or(|b| m.total_cost_usd <= S::of(b))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("plan does not match job {job}: {reason}")]
pub struct PlanMismatchError {
    pub job: String,
    pub reason: String,
}

/// A transfer the job requires, before any placement is known.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSlot {
    pub from: Endpoint,
    pub to: UnitRef,
    pub size_gb: f64,
    pub allow_compression: bool,
}

/// Units in plan order: stages in topological order, replicas ascending.
pub fn job_units(job: &JobSpec) -> Vec<UnitRef> {
    job.topo_positions()
        .iter()
        .flat_map(|&pos| {
            let s = &job.stages()[pos];
            (0..s.parallel_trials).map(move |r| UnitRef::new(&s.id, r))
        })
        .collect()
}

/// Every transfer the job needs, in plan order: for each unit, its datasets
/// in input order, then each producer replica ordered by stage id.
pub fn transfer_slots(job: &JobSpec) -> Vec<TransferSlot> {
    let mut out = Vec::new();
    for &pos in job.topo_positions() {
        let s = &job.stages()[pos];
        for r in 0..s.parallel_trials {
            let to = UnitRef::new(&s.id, r);
            for input in &s.inputs {
                let d = job.dataset(input).expect("validated dataset input");
                out.push(TransferSlot {
                    from: Endpoint::Dataset(d.id.clone()),
                    to: to.clone(),
                    size_gb: d.size_gb,
                    allow_compression: d.allow_compression,
                });
            }
            for &p in job.producers(pos) {
                let producer = &job.stages()[p];
                let edge = job.edge(&producer.id, &s.id).expect("validated edge");
                for pr in 0..producer.parallel_trials {
                    out.push(TransferSlot {
                        from: Endpoint::Unit(UnitRef::new(&producer.id, pr)),
                        to: to.clone(),
                        size_gb: producer.output_size_gb,
                        allow_compression: edge.allow_compression,
                    });
                }
            }
        }
    }
    out
}

/// Region a transfer starts from, given where units run. External data
/// is treated as already present at the consumer.
pub fn source_region(
    job: &JobSpec,
    from: &Endpoint,
    consumer_region: &RegionRef,
    unit_region: impl Fn(&UnitRef) -> Option<RegionRef>,
) -> Option<RegionRef> {
    match from {
        Endpoint::Dataset(d) => match &job.dataset(d)?.location {
            DataLocation::Region(r) => Some(r.clone()),
            DataLocation::External => Some(consumer_region.clone()),
        },
        Endpoint::Unit(u) => unit_region(u),
    }
}

/// Critical-path recurrence: a unit starts once every input has arrived
/// (producer finish plus transfer time; datasets are ready at zero) and
/// finishes `duration` later. Returns per-unit (start, finish).
pub fn critical_path<S: Scalar>(
    units: &[UnitRef],
    durations: &[S],
    transfers: &[(Endpoint, UnitRef, S)],
) -> Vec<(S, S)> {
    let index: HashMap<&UnitRef, usize> = units.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let mut incoming: Vec<Vec<(Option<usize>, &S)>> = vec![Vec::new(); units.len()];
    for (from, to, time) in transfers {
        let src = match from {
            Endpoint::Dataset(_) => None,
            Endpoint::Unit(u) => Some(index[u]),
        };
        incoming[index[to]].push((src, time));
    }
    let mut out: Vec<(S, S)> = Vec::with_capacity(units.len());
    for (i, inputs) in incoming.iter().enumerate() {
        let start = inputs.iter().fold(S::zero(), |acc, (src, time)| {
            let ready = match src {
                Some(j) => out[*j].1.clone(),
                None => S::zero(),
            };
            S::max_of(acc, ready + (*time).clone())
        });
        let finish = start.clone() + durations[i].clone();
        out.push((start, finish));
    }
    out
}

fn mismatch(job: &JobSpec, reason: impl Into<String>) -> PlanMismatchError {
    PlanMismatchError {
        job: job.id().to_string(),
        reason: reason.into(),
    }
}

fn recompute_compression<S: Scalar>(
    catalog: &Catalog,
    size_gb: &S,
    applied: &AppliedCompression<S>,
) -> Option<AppliedCompression<S>> {
    let p = catalog
        .compression_profiles()
        .iter()
        .find(|p| p.name == applied.profile)?;
    Some(AppliedCompression {
        profile: p.name.clone(),
        ratio: S::of(p.ratio),
        compress_hours: size_gb.clone() / S::of(p.compress_gb_per_hour),
        decompress_hours: size_gb.clone() / S::of(p.decompress_gb_per_hour),
        compress_cost_usd: size_gb.clone() * S::of(p.cost_per_gb),
    })
}

/// Recomputes every metric of `plan` from the job and catalog alone.
///
/// Stored per-placement figures and transfer totals are ignored; only the
/// structural choices (offering, count, tier, route, compression profile)
/// are read from the plan.
pub fn evaluate_plan<S: Scalar>(
    plan: &PhysicalPlan<S>,
    job: &JobSpec,
    catalog: &Catalog,
) -> Result<PlanMetrics<S>, PlanMismatchError> {
    if plan.job_id != job.id() {
        return Err(mismatch(job, format!("plan is for job {:?}", plan.job_id)));
    }
    let units = job_units(job);
    if plan.placements.len() != units.len() {
        return Err(mismatch(
            job,
            format!("expected {} placements, found {}", units.len(), plan.placements.len()),
        ));
    }
    let mut placement_of: HashMap<UnitRef, &Placement<S>> = HashMap::new();
    for p in &plan.placements {
        if placement_of.insert(p.unit(), p).is_some() {
            return Err(mismatch(job, format!("unit {} placed twice", p.unit())));
        }
    }

    let mut stages = Vec::with_capacity(units.len());
    let mut durations = Vec::with_capacity(units.len());
    for u in &units {
        let p = placement_of
            .get(u)
            .ok_or_else(|| mismatch(job, format!("unit {u} has no placement")))?;
        let stage = job.stage(&u.stage).expect("unit from job");
        let o = catalog
            .offering(&p.offering)
            .ok_or_else(|| mismatch(job, format!("unknown offering {}", p.offering)))?;
        let region = catalog.region(&o.region).expect("validated catalog");
        let price = o.price(p.price_tier).ok_or_else(|| {
            mismatch(job, format!("{} has no {} price", p.offering, p.price_tier))
        })?;
        if p.instance_count == 0 {
            return Err(mismatch(job, format!("unit {u} has zero instances")));
        }
        let fig: RunFigures<S> = run_figures(
            stage.work,
            o.speed,
            p.instance_count,
            price,
            o.power_kw,
            region.carbon_intensity,
        );
        durations.push(fig.duration_hours.clone());
        stages.push(StageMetrics {
            stage: u.stage.clone(),
            replica: u.replica,
            start_hours: S::zero(),
            finish_hours: S::zero(),
            duration_hours: fig.duration_hours,
            cost_usd: fig.run_cost_usd,
            carbon_kg: fig.carbon_kg,
        });
    }

    let slots = transfer_slots(job);
    if plan.transfers.len() != slots.len() {
        return Err(mismatch(
            job,
            format!("expected {} transfers, found {}", slots.len(), plan.transfers.len()),
        ));
    }
    let mut by_key: HashMap<(&Endpoint, &UnitRef), &TransferEntry<S>> = HashMap::new();
    for t in &plan.transfers {
        if by_key.insert((&t.from, &t.to), t).is_some() {
            return Err(mismatch(job, format!("duplicate transfer {} -> {}", t.from, t.to)));
        }
    }
    let mut transfers = Vec::with_capacity(slots.len());
    let mut timed = Vec::with_capacity(slots.len());
    for slot in &slots {
        let t = by_key
            .get(&(&slot.from, &slot.to))
            .ok_or_else(|| mismatch(job, format!("missing transfer {} -> {}", slot.from, slot.to)))?;
        let consumer = placement_of[&slot.to].region();
        let src = source_region(job, &slot.from, consumer, |u| {
            placement_of.get(u).map(|p| p.region().clone())
        })
        .expect("validated endpoints");
        let path = &t.plan.path;
        if path.first() != Some(&src) || path.last() != Some(consumer) {
            return Err(mismatch(
                job,
                format!("transfer {} -> {} must run {src} -> {consumer}", slot.from, slot.to),
            ));
        }
        let size = S::of(slot.size_gb);
        let compression = match &t.plan.compression {
            Some(c) if path.len() > 1 => Some(recompute_compression(catalog, &size, c).ok_or_else(
                || mismatch(job, format!("unknown compression profile {}", c.profile)),
            )?),
            _ => None,
        };
        let cost = transfer_cost(catalog, path, &size, compression.as_ref())
            .map_err(|e| mismatch(job, e.to_string()))?;
        let time = transfer_time(catalog, path, &size, compression.as_ref())
            .map_err(|e| mismatch(job, e.to_string()))?;
        timed.push((slot.from.clone(), slot.to.clone(), time.clone()));
        transfers.push(EdgeMetrics {
            from: slot.from.clone(),
            to: slot.to.clone(),
            cost_usd: cost,
            time_hours: time,
        });
    }

    let schedule = critical_path(&units, &durations, &timed);
    for (m, (start, finish)) in stages.iter_mut().zip(&schedule) {
        m.start_hours = start.clone();
        m.finish_hours = finish.clone();
    }
    Ok(assemble_metrics(stages, transfers))
}

pub(crate) fn assemble_metrics<S: Scalar>(
    stages: Vec<StageMetrics<S>>,
    transfers: Vec<EdgeMetrics<S>>,
) -> PlanMetrics<S> {
    let run_cost_usd = sum(stages.iter().map(|s| s.cost_usd.clone()));
    let transfer_cost_usd = sum(transfers.iter().map(|t| t.cost_usd.clone()));
    let makespan_hours = stages
        .iter()
        .fold(S::zero(), |acc, s| S::max_of(acc, s.finish_hours.clone()));
    PlanMetrics {
        total_cost_usd: run_cost_usd.clone() + transfer_cost_usd.clone(),
        run_cost_usd,
        transfer_cost_usd,
        transfer_time_hours: sum(transfers.iter().map(|t| t.time_hours.clone())),
        makespan_hours,
        total_carbon_kg: sum(stages.iter().map(|s| s.carbon_kg.clone())),
        stages,
        transfers,
    }
}

/// Critical-path length of a plan.
pub fn makespan<S: Scalar>(
    plan: &PhysicalPlan<S>,
    job: &JobSpec,
    catalog: &Catalog,
) -> Result<S, PlanMismatchError> {
    evaluate_plan(plan, job, catalog).map(|m| m.makespan_hours)
}

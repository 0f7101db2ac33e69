//! Maps a job onto catalog offerings and transfer routes.
//!
//! [`optimize`] runs an exact branch-and-bound search when the joint
//! assignment space is small enough and falls back to seeded local search
//! otherwise. [`brute_force_optimize`] enumerates every assignment and is
//! the reference the exact search is tested against.

mod plan;

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, Constraint, OfferingRef, PriceTier, RegionRef};
use crate::jobspec::{InstanceCount, JobError, JobSpec, Objective, ObjectiveMode};
use crate::scalar::Scalar;
use crate::transfer::{plan_transfer, TransferOptions, TransferPlan, TransferWeight};

pub use plan::{
    billed_cost, critical_path, evaluate_plan, job_units, makespan, objective_value, run_figures,
    source_region, transfer_slots, within_bounds, EdgeMetrics, Endpoint, PhysicalPlan,
    Placement, PlanMetrics, PlanMismatchError, RunFigures, StageMetrics, TransferEntry,
    TransferSlot, UnitRef,
};

/// `(stage id, offering)` pairs the optimizer may not use.
pub type Exclusions = BTreeSet<(String, OfferingRef)>;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Largest joint assignment space searched exactly.
    pub exact_bound: u64,
    pub transfer: TransferOptions,
    /// Seed and pass cap for local search beyond the exact bound.
    pub seed: u64,
    pub local_iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            exact_bound: 1_000_000,
            transfer: TransferOptions::default(),
            seed: 0,
            local_iterations: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("infeasible{}: {detail}", stage.as_ref().map(|s| format!(" stage {s}")).unwrap_or_default())]
pub struct InfeasibleError {
    pub stage: Option<String>,
    pub constraint: Option<Constraint>,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError<S> {
    #[error(transparent)]
    Infeasible(#[from] InfeasibleError),
    #[error("no plan meets the deadline or budget; best plan costs ${best_cost_usd:.4} over {best_makespan_hours:.4} h")]
    NoPlanWithinBounds {
        best: Box<PhysicalPlan<S>>,
        best_cost_usd: f64,
        best_makespan_hours: f64,
    },
    #[error("{plans} joint assignments exceed the enumeration bound of {bound}")]
    TooLarge { plans: u128, bound: u64 },
    #[error(transparent)]
    Job(#[from] JobError),
}

/// Route scalarization implied by the objective.
pub fn transfer_weight<S: Scalar>(objective: &Objective) -> TransferWeight<S> {
    match objective.mode {
        ObjectiveMode::MinCost => TransferWeight::cost_only(),
        ObjectiveMode::MinTime => TransferWeight::time_only(),
        ObjectiveMode::Weighted if objective.weight_cost == 0.0 && objective.weight_time == 0.0 => {
            TransferWeight::cost_only()
        }
        ObjectiveMode::Weighted => TransferWeight {
            cost: S::of(objective.weight_cost),
            time: S::of(objective.weight_time),
        },
    }
}

/// Eligible offerings per stage, in topological stage order.
pub fn feasible_placements(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
) -> Result<Vec<(String, Vec<OfferingRef>)>, InfeasibleError> {
    let mut out = Vec::new();
    for &pos in job.topo_positions() {
        let stage = &job.stages()[pos];
        let filtered = catalog.filter_offerings(&stage.requirement);
        if filtered.offerings.is_empty() {
            return Err(InfeasibleError {
                stage: Some(stage.id.clone()),
                constraint: filtered.eliminated_by,
                detail: match filtered.eliminated_by {
                    Some(c) => format!("no offering satisfies the {c} constraint"),
                    None => "catalog has no offerings".to_string(),
                },
            });
        }
        let kept: Vec<OfferingRef> = filtered
            .offerings
            .iter()
            .map(|o| o.id())
            .filter(|r| !excluded.contains(&(stage.id.clone(), r.clone())))
            .collect();
        if kept.is_empty() {
            return Err(InfeasibleError {
                stage: Some(stage.id.clone()),
                constraint: Some(Constraint::Excluded),
                detail: "every eligible offering is excluded".to_string(),
            });
        }
        out.push((stage.id.clone(), kept));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct UnitOption<S> {
    offering: usize,
    region: usize,
    count: u32,
    tier: PriceTier,
    fig: RunFigures<S>,
    score: S,
}

/// Ranking key: objective, then cost, then makespan, then placement labels.
#[derive(Debug, Clone)]
struct Key<S> {
    objective: S,
    cost: S,
    makespan: S,
    label: String,
}

fn cmp_scalar<S: Scalar>(a: &S, b: &S) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

impl<S: Scalar> Key<S> {
    fn of(plan: &PhysicalPlan<S>) -> Self {
        Key {
            objective: plan.objective_value(),
            cost: plan.metrics.total_cost_usd.clone(),
            makespan: plan.metrics.makespan_hours.clone(),
            label: plan.label(),
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        cmp_scalar(&self.objective, &other.objective)
            .then_with(|| cmp_scalar(&self.cost, &other.cost))
            .then_with(|| cmp_scalar(&self.makespan, &other.makespan))
            .then_with(|| self.label.cmp(&other.label))
    }
}

type Candidate<S> = (Key<S>, PhysicalPlan<S>);

fn keep_best<S: Scalar>(slot: &mut Option<Candidate<S>>, plan: PhysicalPlan<S>) {
    let key = Key::of(&plan);
    if slot.as_ref().is_none_or(|(k, _)| key.cmp(k) == Ordering::Less) {
        *slot = Some((key, plan));
    }
}

type RouteKey = (usize, usize, u64, bool);

struct Problem<'a, S> {
    job: &'a JobSpec,
    catalog: &'a Catalog,
    objective: Objective,
    units: Vec<UnitRef>,
    options: Vec<Vec<UnitOption<S>>>,
    slots: Vec<TransferSlot>,
    /// For each slot: producing unit (if any) and consuming unit.
    slot_src: Vec<Option<usize>>,
    slot_dst: Vec<usize>,
    /// Dataset origin region per slot, when fixed.
    slot_origin: Vec<Option<usize>>,
    incoming: Vec<Vec<usize>>,
    group: Vec<Option<usize>>,
    regions: Vec<RegionRef>,
    zones: Vec<Vec<String>>,
    weight: TransferWeight<S>,
    transfer: TransferOptions,
    routes: RefCell<HashMap<RouteKey, Option<TransferPlan<S>>>>,
}

enum Broken {
    /// Count of anti-affinity overflows plus unroutable transfers.
    Violations(usize),
}

impl<'a, S: Scalar> Problem<'a, S> {
    fn new(
        job: &'a JobSpec,
        catalog: &'a Catalog,
        excluded: &Exclusions,
        transfer: TransferOptions,
    ) -> Result<Self, OptimizeError<S>> {
        job.check_against(catalog)?;
        let eligible = feasible_placements(job, catalog, excluded)?;
        let objective = job.objective().clone();
        let regions: Vec<RegionRef> = catalog.regions().iter().map(|r| r.id()).collect();
        let region_index: HashMap<&RegionRef, usize> =
            regions.iter().enumerate().map(|(i, r)| (r, i)).collect();
        let zones = catalog.regions().iter().map(|r| r.zones.clone()).collect();

        let mut per_stage: HashMap<&str, Vec<UnitOption<S>>> = HashMap::new();
        for (stage_id, offerings) in &eligible {
            let stage = job.stage(stage_id).expect("stage from job");
            let mut opts = Vec::new();
            for oref in offerings {
                let pos = catalog.offering_position(oref).expect("eligible offering");
                let o = &catalog.offerings()[pos];
                let region = catalog.region(&o.region).expect("validated catalog");
                let counts: Vec<u32> = match stage.instances {
                    InstanceCount::Fixed(n) => vec![n],
                    InstanceCount::Auto => InstanceCount::AUTO_CHOICES.to_vec(),
                };
                for &count in counts.iter().filter(|&&n| n >= 1 && n <= o.capacity) {
                    let tiers = [
                        (PriceTier::OnDemand, true),
                        (PriceTier::Spot, job.allow_spot()),
                        (PriceTier::Reserved, job.allow_reserved()),
                    ];
                    for (tier, allowed) in tiers {
                        let Some(price) = o.price(tier).filter(|_| allowed) else { continue };
                        let fig: RunFigures<S> = run_figures(
                            stage.work,
                            o.speed,
                            count,
                            price,
                            o.power_kw,
                            region.carbon_intensity,
                        );
                        let score = unit_score(&objective, &fig);
                        opts.push(UnitOption {
                            offering: pos,
                            region: region_index[&o.region],
                            count,
                            tier,
                            fig,
                            score,
                        });
                    }
                }
            }
            if opts.is_empty() {
                return Err(InfeasibleError {
                    stage: Some(stage_id.clone()),
                    constraint: Some(Constraint::Capacity),
                    detail: "no eligible offering has enough capacity".to_string(),
                }
                .into());
            }
            per_stage.insert(stage_id.as_str(), opts);
        }

        let units = job_units(job);
        let unit_index: HashMap<&UnitRef, usize> =
            units.iter().enumerate().map(|(i, u)| (u, i)).collect();
        let options = units.iter().map(|u| per_stage[u.stage.as_str()].clone()).collect();
        let slots = transfer_slots(job);
        let mut slot_src = Vec::with_capacity(slots.len());
        let mut slot_dst = Vec::with_capacity(slots.len());
        let mut slot_origin = Vec::with_capacity(slots.len());
        let mut incoming = vec![Vec::new(); units.len()];
        for (i, s) in slots.iter().enumerate() {
            let dst = unit_index[&s.to];
            slot_dst.push(dst);
            incoming[dst].push(i);
            match &s.from {
                Endpoint::Unit(u) => {
                    slot_src.push(Some(unit_index[u]));
                    slot_origin.push(None);
                }
                Endpoint::Dataset(d) => {
                    slot_src.push(None);
                    slot_origin.push(match &job.dataset(d).expect("validated").location {
                        crate::jobspec::DataLocation::Region(r) => Some(region_index[r]),
                        crate::jobspec::DataLocation::External => None,
                    });
                }
            }
        }
        let mut group_ids: HashMap<&str, usize> = HashMap::new();
        let group = units
            .iter()
            .map(|u| {
                let g = job.stage(&u.stage)?.requirement.anti_affinity_group.as_deref()?;
                let next = group_ids.len();
                Some(*group_ids.entry(g).or_insert(next))
            })
            .collect();

        Ok(Problem {
            job,
            catalog,
            weight: transfer_weight(&objective),
            objective,
            units,
            options,
            slots,
            slot_src,
            slot_dst,
            slot_origin,
            incoming,
            group,
            regions,
            zones,
            transfer,
            routes: RefCell::new(HashMap::new()),
        })
    }

    fn space(&self) -> u128 {
        self.options
            .iter()
            .fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128))
    }

    fn option(&self, unit: usize, choice: &[usize]) -> &UnitOption<S> {
        &self.options[unit][choice[unit]]
    }

    fn slot_source_region(&self, slot: usize, choice: &[usize]) -> usize {
        match (self.slot_src[slot], self.slot_origin[slot]) {
            (Some(u), _) => self.option(u, choice).region,
            (None, Some(r)) => r,
            (None, None) => self.option(self.slot_dst[slot], choice).region,
        }
    }

    fn route(&self, slot: usize, src: usize, dst: usize) -> Option<TransferPlan<S>> {
        let s = &self.slots[slot];
        let allow = s.allow_compression && self.transfer.allow_compression;
        let key = (src, dst, s.size_gb.to_bits(), allow);
        if let Some(hit) = self.routes.borrow().get(&key) {
            return hit.clone();
        }
        let options = TransferOptions {
            allow_compression: allow,
            ..self.transfer
        };
        let plan = plan_transfer(
            self.catalog,
            &self.regions[src],
            &self.regions[dst],
            S::of(s.size_gb),
            &self.weight,
            options,
        )
        .ok();
        self.routes.borrow_mut().insert(key, plan.clone());
        plan
    }

    /// Anti-affinity overflow among the first `depth` units.
    fn affinity_overflow(&self, choice: &[usize], depth: usize) -> usize {
        let mut used: HashMap<(usize, usize), usize> = HashMap::new();
        let mut overflow = 0;
        for u in 0..depth {
            let Some(g) = self.group[u] else { continue };
            let r = self.option(u, choice).region;
            let n = used.entry((g, r)).or_default();
            *n += 1;
            if *n > self.zones[r].len() {
                overflow += 1;
            }
        }
        overflow
    }

    fn unroutable(&self, choice: &[usize]) -> usize {
        (0..self.slots.len())
            .filter(|&i| {
                let src = self.slot_source_region(i, choice);
                let dst = self.option(self.slot_dst[i], choice).region;
                self.route(i, src, dst).is_none()
            })
            .count()
    }

    /// Zones per unit: ungrouped units take their region's first zone,
    /// grouped units the lowest zone not yet used by their group.
    fn zones_for(&self, choice: &[usize]) -> Option<Vec<String>> {
        let mut used: HashMap<(usize, usize), usize> = HashMap::new();
        (0..self.units.len())
            .map(|u| {
                let r = self.option(u, choice).region;
                let idx = match self.group[u] {
                    None => 0,
                    Some(g) => {
                        let n = used.entry((g, r)).or_default();
                        *n += 1;
                        *n - 1
                    }
                };
                self.zones[r].get(idx).cloned()
            })
            .collect()
    }

    fn build(&self, choice: &[usize]) -> Result<PhysicalPlan<S>, Broken> {
        let zones = self.zones_for(choice).ok_or_else(|| {
            Broken::Violations(self.affinity_overflow(choice, self.units.len()))
        })?;
        let offerings = self.catalog.offerings();
        let placements: Vec<Placement<S>> = self
            .units
            .iter()
            .enumerate()
            .map(|(u, unit)| {
                let o = self.option(u, choice);
                Placement {
                    stage: unit.stage.clone(),
                    replica: unit.replica,
                    offering: offerings[o.offering].id(),
                    zone: zones[u].clone(),
                    instance_count: o.count,
                    price_tier: o.tier,
                    duration_hours: o.fig.duration_hours.clone(),
                    run_cost_usd: o.fig.run_cost_usd.clone(),
                    carbon_kg: o.fig.carbon_kg.clone(),
                }
            })
            .collect();
        let mut transfers = Vec::with_capacity(self.slots.len());
        for (i, slot) in self.slots.iter().enumerate() {
            let src = self.slot_source_region(i, choice);
            let dst = self.option(self.slot_dst[i], choice).region;
            let plan = self
                .route(i, src, dst)
                .ok_or_else(|| Broken::Violations(self.unroutable(choice)))?;
            transfers.push(TransferEntry {
                from: slot.from.clone(),
                to: slot.to.clone(),
                plan,
            });
        }
        let mut plan = PhysicalPlan {
            job_id: self.job.id().to_string(),
            objective: self.objective.clone(),
            placements,
            transfers,
            metrics: plan::assemble_metrics(Vec::new(), Vec::new()),
        };
        plan.metrics = evaluate_plan(&plan, self.job, self.catalog)
            .expect("optimizer builds plans that match their job");
        Ok(plan)
    }

    fn in_bounds(&self, plan: &PhysicalPlan<S>) -> bool {
        within_bounds(&self.objective, &plan.metrics)
    }

    fn min_figures(&self) -> Vec<(S, S, S)> {
        self.options
            .iter()
            .map(|opts| {
                let mut it = opts.iter();
                let first = it.next().expect("non-empty options");
                it.fold(
                    (
                        first.fig.run_cost_usd.clone(),
                        first.fig.duration_hours.clone(),
                        first.fig.carbon_kg.clone(),
                    ),
                    |(c, d, k), o| {
                        (
                            S::min_of(c, o.fig.run_cost_usd.clone()),
                            S::min_of(d, o.fig.duration_hours.clone()),
                            S::min_of(k, o.fig.carbon_kg.clone()),
                        )
                    },
                )
            })
            .collect()
    }

    fn combine(&self, cost: S, time: S, carbon: S) -> S {
        match self.objective.mode {
            ObjectiveMode::MinCost => cost,
            ObjectiveMode::MinTime => time,
            ObjectiveMode::Weighted => {
                S::of(self.objective.weight_cost) * cost
                    + S::of(self.objective.weight_time) * time
                    + S::of(self.objective.weight_carbon) * carbon
            }
        }
    }

    /// Lower bounds on (cost, makespan, carbon) over every completion of
    /// the first `depth` choices.
    fn bound(&self, choice: &[usize], depth: usize, mins: &[(S, S, S)]) -> Option<(S, S, S)> {
        let mut cost = S::zero();
        let mut carbon = S::zero();
        let mut finish: Vec<S> = Vec::with_capacity(self.units.len());
        for (u, min) in mins.iter().enumerate() {
            let assigned = u < depth;
            let (run, dur, co2) = if assigned {
                let o = self.option(u, choice);
                (
                    o.fig.run_cost_usd.clone(),
                    o.fig.duration_hours.clone(),
                    o.fig.carbon_kg.clone(),
                )
            } else {
                min.clone()
            };
            cost = cost + run;
            carbon = carbon + co2;
            let mut start = S::zero();
            for &slot in &self.incoming[u] {
                let ready = self.slot_src[slot].map(|p| finish[p].clone()).unwrap_or_else(S::zero);
                let wire = if assigned {
                    let src = self.slot_source_region(slot, choice);
                    let plan = self.route(slot, src, self.option(u, choice).region)?;
                    cost = cost + plan.cost_usd.clone();
                    plan.time_hours
                } else {
                    S::zero()
                };
                start = S::max_of(start, ready + wire);
            }
            finish.push(start + dur);
        }
        let span = finish.into_iter().fold(S::zero(), S::max_of);
        Some((cost, span, carbon))
    }

    fn search(&self, enforce_bounds: bool) -> Option<Candidate<S>> {
        let n = self.units.len();
        let mins = self.min_figures();
        let orders: Vec<Vec<usize>> = self
            .options
            .iter()
            .map(|opts| {
                let mut idx: Vec<usize> = (0..opts.len()).collect();
                idx.sort_by(|&a, &b| cmp_scalar(&opts[a].score, &opts[b].score).then(a.cmp(&b)));
                idx
            })
            .collect();
        let budget = self.objective.budget_usd.map(S::of).filter(|_| enforce_bounds);
        let deadline = self.objective.deadline_hours.map(S::of).filter(|_| enforce_bounds);
        let mut best: Option<Candidate<S>> = None;
        let mut choice = vec![0usize; n];
        // iterative DFS over (depth, position in that depth's option order)
        let mut cursor = vec![0usize; n + 1];
        let mut depth = 0usize;
        loop {
            if depth == n {
                if let Ok(plan) = self.build(&choice) {
                    if !enforce_bounds || self.in_bounds(&plan) {
                        keep_best(&mut best, plan);
                    }
                }
                depth -= 1;
                continue;
            }
            let k = cursor[depth];
            if k == orders[depth].len() {
                cursor[depth] = 0;
                if depth == 0 {
                    break;
                }
                depth -= 1;
                continue;
            }
            cursor[depth] += 1;
            choice[depth] = orders[depth][k];
            if self.affinity_overflow(&choice, depth + 1) > 0 {
                continue;
            }
            let Some((cost, span, carbon)) = self.bound(&choice, depth + 1, &mins) else {
                continue;
            };
            if budget.as_ref().is_some_and(|b| cost.exceeds(b))
                || deadline.as_ref().is_some_and(|d| span.exceeds(d))
            {
                continue;
            }
            if let Some((key, _)) = &best {
                if self.combine(cost, span, carbon).exceeds(&key.objective) {
                    continue;
                }
            }
            depth += 1;
        }
        best
    }

    fn enumerate(&self) -> (Option<Candidate<S>>, Option<Candidate<S>>) {
        let n = self.units.len();
        let mut feasible = None;
        let mut any = None;
        let mut choice = vec![0usize; n];
        loop {
            if let Ok(plan) = self.build(&choice) {
                if self.in_bounds(&plan) {
                    keep_best(&mut feasible, plan.clone());
                }
                keep_best(&mut any, plan);
            }
            // odometer, last unit fastest
            let mut u = n;
            loop {
                if u == 0 {
                    return (feasible, any);
                }
                u -= 1;
                choice[u] += 1;
                if choice[u] < self.options[u].len() {
                    break;
                }
                choice[u] = 0;
            }
        }
    }

    fn no_assignment(&self) -> InfeasibleError {
        InfeasibleError {
            stage: None,
            constraint: None,
            detail: "no joint assignment satisfies anti-affinity and routing".to_string(),
        }
    }

    fn conclude(
        &self,
        feasible: Option<Candidate<S>>,
        any: impl FnOnce() -> Option<Candidate<S>>,
    ) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
        if let Some((_, plan)) = feasible {
            return Ok(plan);
        }
        match any() {
            Some((_, best)) => Err(out_of_bounds(best)),
            None => Err(self.no_assignment().into()),
        }
    }

    fn exact(&self) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
        let bounded = self.objective.deadline_hours.is_some() || self.objective.budget_usd.is_some();
        let feasible = self.search(true);
        self.conclude(feasible, || if bounded { self.search(false) } else { None })
    }

    fn greedy(&self) -> Vec<usize> {
        self.options
            .iter()
            .map(|opts| {
                (0..opts.len())
                    .min_by(|&a, &b| cmp_scalar(&opts[a].score, &opts[b].score).then(a.cmp(&b)))
                    .expect("non-empty options")
            })
            .collect()
    }

    fn assess(&self, choice: &[usize]) -> Assessed<S> {
        match self.build(choice) {
            Ok(plan) => Assessed::Built {
                outside: !self.in_bounds(&plan),
                key: Key::of(&plan),
                plan: Box::new(plan),
            },
            Err(Broken::Violations(n)) => Assessed::Broken(n.max(1)),
        }
    }

    fn local(&self, seed: u64, iterations: usize) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut choice = self.greedy();
        let mut current = self.assess(&choice);
        let mut order: Vec<usize> = (0..self.units.len()).collect();
        for _ in 0..iterations {
            order.shuffle(&mut rng);
            let mut improved = false;
            for &u in &order {
                let mut best_move: Option<(usize, Assessed<S>)> = None;
                let original = choice[u];
                for alt in 0..self.options[u].len() {
                    if alt == original {
                        continue;
                    }
                    choice[u] = alt;
                    let a = self.assess(&choice);
                    let beats_best = match &best_move {
                        None => a.cmp(&current) == Ordering::Less,
                        Some((_, b)) => a.cmp(b) == Ordering::Less,
                    };
                    if beats_best {
                        best_move = Some((alt, a));
                    }
                }
                match best_move {
                    Some((alt, a)) => {
                        choice[u] = alt;
                        current = a;
                        improved = true;
                    }
                    None => choice[u] = original,
                }
            }
            if !improved {
                break;
            }
        }
        match current {
            Assessed::Built { outside: false, plan, .. } => Ok(*plan),
            Assessed::Built { plan, .. } => Err(out_of_bounds(*plan)),
            Assessed::Broken(_) => Err(self.no_assignment().into()),
        }
    }
}

enum Assessed<S> {
    Built {
        outside: bool,
        key: Key<S>,
        plan: Box<PhysicalPlan<S>>,
    },
    Broken(usize),
}

impl<S: Scalar> Assessed<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Assessed::Broken(a), Assessed::Broken(b)) => a.cmp(b),
            (Assessed::Broken(_), _) => Ordering::Greater,
            (_, Assessed::Broken(_)) => Ordering::Less,
            (
                Assessed::Built { outside: oa, key: ka, .. },
                Assessed::Built { outside: ob, key: kb, .. },
            ) => oa.cmp(ob).then_with(|| ka.cmp(kb)),
        }
    }
}

fn unit_score<S: Scalar>(objective: &Objective, fig: &RunFigures<S>) -> S {
    match objective.mode {
        ObjectiveMode::MinCost => fig.run_cost_usd.clone(),
        ObjectiveMode::MinTime => fig.duration_hours.clone(),
        ObjectiveMode::Weighted => {
            S::of(objective.weight_cost) * fig.run_cost_usd.clone()
                + S::of(objective.weight_time) * fig.duration_hours.clone()
                + S::of(objective.weight_carbon) * fig.carbon_kg.clone()
        }
    }
}

fn out_of_bounds<S: Scalar>(best: PhysicalPlan<S>) -> OptimizeError<S> {
    OptimizeError::NoPlanWithinBounds {
        best_cost_usd: best.metrics.total_cost_usd.approx(),
        best_makespan_hours: best.metrics.makespan_hours.approx(),
        best: Box::new(best),
    }
}

/// Best plan for the job's objective, honoring deadline and budget.
///
/// Exact when the joint assignment space is at most `config.exact_bound`;
/// otherwise the result of [`local_search_optimize`] with the configured seed.
pub fn optimize<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
    config: &OptimizerConfig,
) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
    let problem = Problem::new(job, catalog, excluded, config.transfer)?;
    if problem.space() <= config.exact_bound as u128 {
        problem.exact()
    } else {
        problem.local(config.seed, config.local_iterations)
    }
}

/// Evaluates every joint assignment. Refuses spaces above a million plans.
pub fn brute_force_optimize<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
    transfer: TransferOptions,
) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
    const BOUND: u64 = 1_000_000;
    let problem = Problem::new(job, catalog, excluded, transfer)?;
    let plans = problem.space();
    if plans > BOUND as u128 {
        return Err(OptimizeError::TooLarge { plans, bound: BOUND });
    }
    let (feasible, any) = problem.enumerate();
    problem.conclude(feasible, || any)
}

/// Hill-climbs single-unit reassignments from the per-unit greedy choice.
///
/// Each pass visits units in a seeded random order and applies the best
/// improving reassignment per unit; it stops after a pass with no
/// improvement or after `iterations` passes.
pub fn local_search_optimize<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
    seed: u64,
    iterations: usize,
) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
    Problem::new(job, catalog, excluded, TransferOptions::default())?.local(seed, iterations)
}

/// The plan [`local_search_optimize`] starts from.
pub fn greedy_plan<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
) -> Result<PhysicalPlan<S>, OptimizeError<S>> {
    let problem = Problem::new(job, catalog, excluded, TransferOptions::default())?;
    problem
        .build(&problem.greedy())
        .map_err(|_| problem.no_assignment().into())
}

/// Number of joint assignments the optimizer would consider.
pub fn assignment_space(
    job: &JobSpec,
    catalog: &Catalog,
    excluded: &Exclusions,
) -> Result<u128, OptimizeError<f64>> {
    Ok(Problem::<f64>::new(job, catalog, excluded, TransferOptions::default())?.space())
}

/// Best plan that keeps every stage on one cloud, with the cloud's name.
pub fn single_cloud_baseline<S: Scalar>(
    job: &JobSpec,
    catalog: &Catalog,
    config: &OptimizerConfig,
) -> Option<(String, PhysicalPlan<S>)> {
    let mut best: Option<(Key<S>, String, PhysicalPlan<S>)> = None;
    for cloud in catalog.clouds() {
        let excluded: Exclusions = job
            .stages()
            .iter()
            .flat_map(|s| {
                catalog
                    .offerings()
                    .iter()
                    .filter(|o| o.cloud() != cloud.name)
                    .map(|o| (s.id.clone(), o.id()))
            })
            .collect();
        let Ok(plan) = optimize::<S>(job, catalog, &excluded, config) else { continue };
        let key = Key::of(&plan);
        if best.as_ref().is_none_or(|(k, _, _)| key.cmp(k) == Ordering::Less) {
            best = Some((key, cloud.name.clone(), plan));
        }
    }
    best.map(|(_, c, p)| (c, p))
}

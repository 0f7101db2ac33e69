//! Instance availability and atomic provisioning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, OfferingRef};
use crate::optimizer::PhysicalPlan;

/// Available instances per offering, bounded by the catalog's capacity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityState {
    available: BTreeMap<OfferingRef, u32>,
    limit: BTreeMap<OfferingRef, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CapacityError {
    #[error("unknown offering {0}")]
    UnknownOffering(OfferingRef),
    #[error("{offering} has capacity {limit}, cannot make {requested} available")]
    AboveLimit {
        offering: OfferingRef,
        requested: u32,
        limit: u32,
    },
}

impl CapacityState {
    /// Every offering at its full catalog capacity.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        let limit: BTreeMap<OfferingRef, u32> = catalog
            .offerings()
            .iter()
            .map(|o| (o.id(), o.capacity))
            .collect();
        CapacityState {
            available: limit.clone(),
            limit,
        }
    }

    pub fn set_available(&mut self, offering: &OfferingRef, n: u32) -> Result<(), CapacityError> {
        let limit = *self
            .limit
            .get(offering)
            .ok_or_else(|| CapacityError::UnknownOffering(offering.clone()))?;
        if n > limit {
            return Err(CapacityError::AboveLimit {
                offering: offering.clone(),
                requested: n,
                limit,
            });
        }
        self.available.insert(offering.clone(), n);
        Ok(())
    }

    pub fn available(&self, offering: &OfferingRef) -> u32 {
        self.available.get(offering).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> &BTreeMap<OfferingRef, u32> {
        &self.available
    }

    /// Returns instances held by `allocation`.
    pub fn release(&mut self, allocation: &Allocation) {
        for (o, n) in &allocation.grants {
            if let Some(a) = self.available.get_mut(o) {
                *a = (*a + n).min(self.limit[o]);
            }
        }
    }
}

/// Instances acquired for one plan, per offering.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub grants: BTreeMap<OfferingRef, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedPlacement {
    pub stage: String,
    pub replica: u32,
    pub offering: OfferingRef,
    pub requested: u32,
    /// Instances still free for this offering when the placement was reached.
    pub available: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionFailure {
    pub failed: Vec<FailedPlacement>,
}

/// All-or-nothing acquisition of every placement's instances.
///
/// Placements are served in plan order; when any cannot be satisfied the
/// capacity is left untouched and every unsatisfiable placement is reported.
pub fn provision<S>(
    plan: &PhysicalPlan<S>,
    capacity: &mut CapacityState,
) -> Result<Allocation, ProvisionFailure> {
    let mut remaining = capacity.available.clone();
    let mut grants: BTreeMap<OfferingRef, u32> = BTreeMap::new();
    let mut failed = Vec::new();
    for p in &plan.placements {
        let free = remaining.get(&p.offering).copied().unwrap_or(0);
        if p.instance_count <= free {
            remaining.insert(p.offering.clone(), free - p.instance_count);
            *grants.entry(p.offering.clone()).or_default() += p.instance_count;
        } else {
            failed.push(FailedPlacement {
                stage: p.stage.clone(),
                replica: p.replica,
                offering: p.offering.clone(),
                requested: p.instance_count,
                available: free,
            });
        }
    }
    if failed.is_empty() {
        capacity.available = remaining;
        Ok(Allocation { grants })
    } else {
        Err(ProvisionFailure { failed })
    }
}

/// Whether [`provision`] would succeed, without acquiring anything.
pub fn can_provision<S>(plan: &PhysicalPlan<S>, capacity: &CapacityState) -> bool {
    provision(plan, &mut capacity.clone()).is_ok()
}

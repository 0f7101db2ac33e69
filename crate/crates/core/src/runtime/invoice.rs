//! Per-cloud billing of an execution trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{OfferingRef, PriceTier, RegionRef};
use crate::optimizer::{Endpoint, UnitRef};
use crate::scalar::{sum, Scalar};

use super::sim::{ExecutionTrace, FailReason, TraceEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Charge {
    Run {
        stage: String,
        replica: u32,
        attempt: u32,
        offering: OfferingRef,
        price_tier: PriceTier,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failed: Option<FailReason>,
    },
    Egress {
        from: Endpoint,
        to: UnitRef,
        src: RegionRef,
        dst: RegionRef,
        peered: bool,
    },
    Compression {
        from: Endpoint,
        to: UnitRef,
        at: RegionRef,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineItem<S> {
    #[serde(flatten)]
    pub charge: Charge,
    pub hours: Option<S>,
    pub amount_usd: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudBill<S> {
    pub cloud: String,
    pub items: Vec<LineItem<S>>,
    pub subtotal_usd: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invoice<S> {
    pub job_id: String,
    /// Ordered by cloud name.
    pub clouds: Vec<CloudBill<S>>,
    pub fee_percent: f64,
    pub fee_usd: S,
    pub total_usd: S,
}

impl<S: Scalar> Invoice<S> {
    pub fn cloud(&self, name: &str) -> Option<&CloudBill<S>> {
        self.clouds.iter().find(|c| c.cloud == name)
    }

    /// Sum of every line item, before the broker fee.
    pub fn items_total(&self) -> S {
        sum(self
            .clouds
            .iter()
            .flat_map(|c| c.items.iter().map(|i| i.amount_usd.clone())))
    }
}

/// Groups every billed event of `trace` by the cloud that bills it: stage
/// runs (failed attempts included) by their offering's cloud, egress by the
/// cloud each hop leaves, compression by the cloud where the data starts.
/// The broker fee is `fee_percent` of the subtotals.
pub fn invoice<S: Scalar>(trace: &ExecutionTrace<S>, fee_percent: f64) -> Invoice<S> {
    let mut by_cloud: BTreeMap<String, Vec<LineItem<S>>> = BTreeMap::new();
    let mut add = |cloud: &str, item: LineItem<S>| {
        by_cloud.entry(cloud.to_string()).or_default().push(item);
    };
    for e in &trace.events {
        match e {
            TraceEvent::StageEnd {
                stage,
                replica,
                attempt,
                offering,
                price_tier,
                billed_hours,
                cost_usd,
                ..
            } => add(
                &offering.region.cloud,
                LineItem {
                    charge: Charge::Run {
                        stage: stage.clone(),
                        replica: *replica,
                        attempt: *attempt,
                        offering: offering.clone(),
                        price_tier: *price_tier,
                        failed: None,
                    },
                    hours: Some(billed_hours.clone()),
                    amount_usd: cost_usd.clone(),
                },
            ),
            TraceEvent::StageFail {
                stage,
                replica,
                attempt,
                offering,
                price_tier,
                reason,
                billed_hours,
                cost_usd,
                ..
            } => add(
                &offering.region.cloud,
                LineItem {
                    charge: Charge::Run {
                        stage: stage.clone(),
                        replica: *replica,
                        attempt: *attempt,
                        offering: offering.clone(),
                        price_tier: *price_tier,
                        failed: Some(*reason),
                    },
                    hours: Some(billed_hours.clone()),
                    amount_usd: cost_usd.clone(),
                },
            ),
            TraceEvent::TransferEnd {
                from,
                to,
                hops,
                compression_cost_usd,
                ..
            } => {
                if let (Some(c), Some(first)) = (compression_cost_usd, hops.first()) {
                    add(
                        &first.src.cloud,
                        LineItem {
                            charge: Charge::Compression {
                                from: from.clone(),
                                to: to.clone(),
                                at: first.src.clone(),
                            },
                            hours: None,
                            amount_usd: c.clone(),
                        },
                    );
                }
                for h in hops {
                    add(
                        &h.src.cloud,
                        LineItem {
                            charge: Charge::Egress {
                                from: from.clone(),
                                to: to.clone(),
                                src: h.src.clone(),
                                dst: h.dst.clone(),
                                peered: h.peered,
                            },
                            hours: None,
                            amount_usd: h.cost_usd.clone(),
                        },
                    );
                }
            }
            _ => {}
        }
    }
    let clouds: Vec<CloudBill<S>> = by_cloud
        .into_iter()
        .map(|(cloud, items)| CloudBill {
            subtotal_usd: sum(items.iter().map(|i| i.amount_usd.clone())),
            cloud,
            items,
        })
        .collect();
    let subtotal = sum(clouds.iter().map(|c| c.subtotal_usd.clone()));
    let fee_usd = subtotal.clone() * S::of(fee_percent) / S::of(100.0);
    Invoice {
        job_id: trace.job_id.clone(),
        clouds,
        fee_percent,
        total_usd: subtotal + fee_usd.clone(),
        fee_usd,
    }
}

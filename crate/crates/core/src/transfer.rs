//! Data movement planning: direct or waypoint routes over the region graph,
//! optionally compressed, chosen by a scalarized cost/time weight.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CompressionProfile, EgressRate, NoRouteError, RegionRef};
use crate::scalar::{sum, Scalar};

/// Compression applied to a transfer, with its overheads already evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedCompression<S> {
    pub profile: String,
    pub ratio: S,
    pub compress_hours: S,
    pub decompress_hours: S,
    pub compress_cost_usd: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan<S> {
    /// Regions visited, source first. A single entry means colocated.
    pub path: Vec<RegionRef>,
    pub size_gb: S,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression: Option<AppliedCompression<S>>,
    pub cost_usd: S,
    pub time_hours: S,
}

impl<S: Scalar> TransferPlan<S> {
    pub fn colocated(at: RegionRef, size_gb: S) -> Self {
        TransferPlan {
            path: vec![at],
            size_gb,
            compression: None,
            cost_usd: S::zero(),
            time_hours: S::zero(),
        }
    }

    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    pub fn src(&self) -> &RegionRef {
        &self.path[0]
    }

    pub fn dst(&self) -> &RegionRef {
        self.path.last().expect("non-empty path")
    }
}

/// Scalarization `cost * self.cost + time * self.time` used to rank routes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferWeight<S> {
    pub cost: S,
    pub time: S,
}

impl<S: Scalar> TransferWeight<S> {
    pub fn cost_only() -> Self {
        TransferWeight {
            cost: S::one(),
            time: S::zero(),
        }
    }

    pub fn time_only() -> Self {
        TransferWeight {
            cost: S::zero(),
            time: S::one(),
        }
    }

    pub fn of(&self, cost: &S, time: &S) -> S {
        self.cost.clone() * cost.clone() + self.time.clone() * time.clone()
    }

    pub fn of_plan(&self, plan: &TransferPlan<S>) -> S {
        self.of(&plan.cost_usd, &plan.time_hours)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferOptions {
    /// Maximum intermediate regions on a route.
    pub max_waypoints: usize,
    pub allow_compression: bool,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            max_waypoints: 1,
            allow_compression: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    NoRoute(#[from] NoRouteError),
    #[error("unknown region {0}")]
    UnknownRegion(RegionRef),
    #[error("negative or non-finite transfer size")]
    BadSize,
}

fn apply_profile<S: Scalar>(size_gb: &S, p: &CompressionProfile) -> AppliedCompression<S> {
    AppliedCompression {
        profile: p.name.clone(),
        ratio: S::of(p.ratio),
        compress_hours: size_gb.clone() / S::of(p.compress_gb_per_hour),
        decompress_hours: size_gb.clone() / S::of(p.decompress_gb_per_hour),
        compress_cost_usd: size_gb.clone() * S::of(p.cost_per_gb),
    }
}

fn wire_size<S: Scalar>(size_gb: &S, compression: Option<&AppliedCompression<S>>) -> S {
    match compression {
        Some(c) => size_gb.clone() * c.ratio.clone(),
        None => size_gb.clone(),
    }
}

fn hop_rates(catalog: &Catalog, path: &[RegionRef]) -> Result<Vec<(f64, f64)>, NoRouteError> {
    path.windows(2)
        .filter_map(|w| match catalog.egress_rate(&w[0], &w[1]) {
            Ok(EgressRate::Colocated) => None,
            Ok(EgressRate::Hop(h)) => Some(Ok((h.price_per_gb, h.bandwidth_gb_per_hour))),
            Err(e) => Some(Err(e)),
        })
        .collect()
}

/// Egress plus compression charges for moving `size_gb` along `path`.
pub fn transfer_cost<S: Scalar>(
    catalog: &Catalog,
    path: &[RegionRef],
    size_gb: &S,
    compression: Option<&AppliedCompression<S>>,
) -> Result<S, NoRouteError> {
    let wire = wire_size(size_gb, compression);
    let egress = sum(hop_rates(catalog, path)?
        .into_iter()
        .map(|(price, _)| S::of(price) * wire.clone()));
    Ok(match compression {
        Some(c) => egress + c.compress_cost_usd.clone(),
        None => egress,
    })
}

/// Compression, decompression and per-hop wire time for moving `size_gb` along `path`.
pub fn transfer_time<S: Scalar>(
    catalog: &Catalog,
    path: &[RegionRef],
    size_gb: &S,
    compression: Option<&AppliedCompression<S>>,
) -> Result<S, NoRouteError> {
    let wire = wire_size(size_gb, compression);
    let start = match compression {
        Some(c) => c.compress_hours.clone() + c.decompress_hours.clone(),
        None => S::zero(),
    };
    Ok(hop_rates(catalog, path)?
        .into_iter()
        .fold(start, |acc, (_, bw)| acc + wire.clone() / S::of(bw)))
}

/// Builds a plan for a fixed route, evaluating cost and time with the canonical formulas.
pub fn plan_for_path<S: Scalar>(
    catalog: &Catalog,
    path: Vec<RegionRef>,
    size_gb: S,
    compression: Option<AppliedCompression<S>>,
) -> Result<TransferPlan<S>, NoRouteError> {
    let compression = if path.len() <= 1 { None } else { compression };
    let cost_usd = transfer_cost(catalog, &path, &size_gb, compression.as_ref())?;
    let time_hours = transfer_time(catalog, &path, &size_gb, compression.as_ref())?;
    Ok(TransferPlan {
        path,
        size_gb,
        compression,
        cost_usd,
        time_hours,
    })
}

/// Total order used to pick among candidate plans: weight, then fewer hops,
/// then region names along the path, then uncompressed before compressed.
pub fn compare_plans<S: Scalar>(
    weight: &TransferWeight<S>,
    a: &TransferPlan<S>,
    b: &TransferPlan<S>,
) -> Ordering {
    weight
        .of_plan(a)
        .partial_cmp(&weight.of_plan(b))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.hops().cmp(&b.hops()))
        .then_with(|| a.path.cmp(&b.path))
        .then_with(|| {
            let name = |p: &TransferPlan<S>| p.compression.as_ref().map(|c| c.profile.clone());
            name(a).cmp(&name(b))
        })
}

#[derive(Clone)]
struct Label<S> {
    cost: S,
    time: S,
    path: Vec<usize>,
}

/// Minimum-weight route from `src` to `dst` with at most `max_waypoints`
/// intermediate regions, tried with and without every compression profile.
///
/// The search is a hop-layered relaxation over the region graph; each layer
/// keeps, per region, the best prefix by (weight, region names). Candidates
/// from every layer plus the direct route are then ranked by [`compare_plans`]
/// on their canonically evaluated cost and time.
pub fn plan_transfer<S: Scalar>(
    catalog: &Catalog,
    src: &RegionRef,
    dst: &RegionRef,
    size_gb: S,
    weight: &TransferWeight<S>,
    options: TransferOptions,
) -> Result<TransferPlan<S>, TransferError> {
    for r in [src, dst] {
        if catalog.region(r).is_none() {
            return Err(TransferError::UnknownRegion(r.clone()));
        }
    }
    if size_gb < S::zero() {
        return Err(TransferError::BadSize);
    }
    if src == dst {
        return Ok(TransferPlan::colocated(src.clone(), size_gb));
    }

    let regions: Vec<RegionRef> = {
        let mut v: Vec<RegionRef> = catalog.regions().iter().map(|r| r.id()).collect();
        v.sort();
        v
    };
    let n = regions.len();
    let s_idx = regions.binary_search(src).expect("src indexed");
    let d_idx = regions.binary_search(dst).expect("dst indexed");
    let rates: Vec<Vec<Option<(f64, f64)>>> = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| match catalog.egress_rate(&regions[u], &regions[v]) {
                    Ok(EgressRate::Hop(h)) if u != v => Some((h.price_per_gb, h.bandwidth_gb_per_hour)),
                    _ => None,
                })
                .collect()
        })
        .collect();

    let mut variants: Vec<Option<AppliedCompression<S>>> = vec![None];
    if options.allow_compression && size_gb > S::zero() {
        variants.extend(
            catalog
                .compression_profiles()
                .iter()
                .map(|p| Some(apply_profile(&size_gb, p))),
        );
    }

    let mut candidates: Vec<TransferPlan<S>> = Vec::new();
    if rates[s_idx][d_idx].is_some() {
        candidates.push(plan_for_path(catalog, vec![src.clone(), dst.clone()], size_gb.clone(), None)?);
    }
    for variant in &variants {
        let wire = wire_size(&size_gb, variant.as_ref());
        let label_weight = |l: &Label<S>| weight.of(&l.cost, &l.time);
        let better = |a: &Label<S>, b: &Label<S>| -> bool {
            match label_weight(a).partial_cmp(&label_weight(b)) {
                Some(Ordering::Less) => true,
                Some(Ordering::Greater) => false,
                _ => {
                    let names = |l: &Label<S>| l.path.iter().map(|&i| &regions[i]).collect::<Vec<_>>();
                    names(a) < names(b)
                }
            }
        };
        let mut layer: Vec<Option<Label<S>>> = vec![None; n];
        layer[s_idx] = Some(Label {
            cost: S::zero(),
            time: S::zero(),
            path: vec![s_idx],
        });
        for _hop in 0..=options.max_waypoints {
            let mut next: Vec<Option<Label<S>>> = vec![None; n];
            for u in 0..n {
                let Some(lu) = &layer[u] else { continue };
                if u == d_idx && lu.path.len() > 1 {
                    continue;
                }
                for v in 0..n {
                    let Some((price, bw)) = rates[u][v] else { continue };
                    let mut path = lu.path.clone();
                    path.push(v);
                    let cand = Label {
                        cost: lu.cost.clone() + S::of(price) * wire.clone(),
                        time: lu.time.clone() + wire.clone() / S::of(bw),
                        path,
                    };
                    let replace = match &next[v] {
                        None => true,
                        Some(cur) => better(&cand, cur),
                    };
                    if replace {
                        next[v] = Some(cand);
                    }
                }
            }
            if let Some(l) = &next[d_idx] {
                let path = l.path.iter().map(|&i| regions[i].clone()).collect();
                candidates.push(plan_for_path(catalog, path, size_gb.clone(), variant.clone())?);
            }
            layer = next;
        }
    }

    candidates
        .into_iter()
        .min_by(|a, b| compare_plans(weight, a, b))
        .ok_or_else(|| {
            TransferError::NoRoute(NoRouteError {
                src: src.clone(),
                dst: dst.clone(),
            })
        })
}

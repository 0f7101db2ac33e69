//! Service catalog: clouds, regions, priced offerings and the cost of moving
//! data between regions.

mod file;
pub mod version;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::country::Country;
use crate::jobspec::StageRequirement;

pub use file::{
    CatalogDocument, CloudDoc, CompressionDoc, DefaultsDoc, EgressDefaultDoc, LinkDoc, OfferingDoc,
    RegionDoc, ServiceDoc, ServiceRefDoc,
};
pub use version::VersionReq;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{} invariant violation(s):\n{}", .0.len(), Violation::list(.0))]
    Invariant(Vec<Violation>),
}

/// One failed check, located by a JSON-path-like string such as `offerings[2].speed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn list(all: &[Violation]) -> String {
        all.iter()
            .map(|v| format!("  {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no route from {src} to {dst}: no explicit link and no default egress for {}", .src.cloud)]
pub struct NoRouteError {
    pub src: RegionRef,
    pub dst: RegionRef,
}

/// `cloud/region`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionRef {
    pub cloud: String,
    pub region: String,
}

impl RegionRef {
    pub fn new(cloud: impl Into<String>, region: impl Into<String>) -> Self {
        RegionRef {
            cloud: cloud.into(),
            region: region.into(),
        }
    }
}

impl fmt::Display for RegionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cloud, self.region)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed reference {0:?}")]
pub struct RefParseError(pub String);

impl FromStr for RegionRef {
    type Err = RefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split('/').collect::<Vec<_>>().as_slice() {
            [c, r] if is_identifier(c) && is_identifier(r) => Ok(RegionRef::new(*c, *r)),
            _ => Err(RefParseError(s.to_string())),
        }
    }
}

/// `cloud/region/instance_label`, the unique key of an offering.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OfferingRef {
    pub region: RegionRef,
    pub instance_label: String,
}

impl fmt::Display for OfferingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.region, self.instance_label)
    }
}

impl FromStr for OfferingRef {
    type Err = RefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split('/').collect::<Vec<_>>().as_slice() {
            [c, r, l] if is_identifier(c) && is_identifier(r) && is_identifier(l) => Ok(OfferingRef {
                region: RegionRef::new(*c, *r),
                instance_label: l.to_string(),
            }),
            _ => Err(RefParseError(s.to_string())),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(RegionRef);
string_serde!(OfferingRef);

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub name: String,
    pub operator_nationality: Country,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub cloud: String,
    pub name: String,
    pub country: Country,
    pub zones: Vec<String>,
    /// kgCO2e per kWh.
    pub carbon_intensity: f64,
}

impl Region {
    pub fn id(&self) -> RegionRef {
        RegionRef::new(&self.cloud, &self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    OpenSource,
    Standard,
    Proprietary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServiceId {
    pub name: String,
    pub version: String,
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub id: ServiceId,
    pub kind: ServiceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceTier {
    OnDemand,
    Spot,
    Reserved,
}

impl fmt::Display for PriceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriceTier::OnDemand => "on_demand",
            PriceTier::Spot => "spot",
            PriceTier::Reserved => "reserved",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offering {
    pub region: RegionRef,
    pub service: ServiceId,
    pub instance_label: String,
    pub price_per_hour: f64,
    pub spot_price_per_hour: Option<f64>,
    pub reserved_price_per_hour: Option<f64>,
    /// Work units per instance-hour.
    pub speed: f64,
    pub power_kw: f64,
    pub capabilities: BTreeSet<String>,
    pub capacity: u32,
}

impl Offering {
    pub fn id(&self) -> OfferingRef {
        OfferingRef {
            region: self.region.clone(),
            instance_label: self.instance_label.clone(),
        }
    }

    pub fn cloud(&self) -> &str {
        &self.region.cloud
    }

    pub fn price(&self, tier: PriceTier) -> Option<f64> {
        match tier {
            PriceTier::OnDemand => Some(self.price_per_hour),
            PriceTier::Spot => self.spot_price_per_hour,
            PriceTier::Reserved => self.reserved_price_per_hour,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub src: RegionRef,
    pub dst: RegionRef,
    pub egress_price_per_gb: f64,
    pub bandwidth_gb_per_hour: f64,
    pub peered: bool,
}

/// Fallback rates for traffic leaving `cloud` when no explicit link exists.
#[derive(Debug, Clone, PartialEq)]
pub struct EgressDefault {
    pub cloud: String,
    pub egress_price_per_gb: f64,
    pub bandwidth_gb_per_hour: f64,
    pub intra_cloud_price_per_gb: Option<f64>,
    pub intra_cloud_bandwidth_gb_per_hour: Option<f64>,
}

/// A way to shrink data before it crosses the network.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionProfile {
    pub name: String,
    /// Compressed size over original size, in (0, 1].
    pub ratio: f64,
    /// Throughput over the uncompressed bytes, GB/hr.
    pub compress_gb_per_hour: f64,
    pub decompress_gb_per_hour: f64,
    /// Compute charge per uncompressed GB.
    pub cost_per_gb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateSource {
    Link,
    PeeredLink,
    Default,
}

/// Price and bandwidth of one hop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopRate {
    pub price_per_gb: f64,
    pub bandwidth_gb_per_hour: f64,
    pub source: RateSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgressRate {
    /// Source and destination coincide; nothing moves.
    Colocated,
    Hop(HopRate),
}

impl EgressRate {
    pub fn price_per_gb(&self) -> f64 {
        match self {
            EgressRate::Colocated => 0.0,
            EgressRate::Hop(h) => h.price_per_gb,
        }
    }

    /// `None` stands for unbounded (colocated).
    pub fn bandwidth_gb_per_hour(&self) -> Option<f64> {
        match self {
            EgressRate::Colocated => None,
            EgressRate::Hop(h) => Some(h.bandwidth_gb_per_hour),
        }
    }
}

/// Constraint families checked by [`Catalog::filter_offerings`], in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Service,
    Capabilities,
    Country,
    Sovereignty,
    Pin,
    Excluded,
    Capacity,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Service => "service",
            Constraint::Capabilities => "capabilities",
            Constraint::Country => "country allow-list",
            Constraint::Sovereignty => "sovereignty",
            Constraint::Pin => "pin",
            Constraint::Excluded => "exclusions",
            Constraint::Capacity => "capacity",
        })
    }
}

/// Result of filtering the catalog for one requirement.
#[derive(Debug, Clone)]
pub struct Filtered<'a> {
    pub offerings: Vec<&'a Offering>,
    /// The constraint that removed the last remaining candidate, if any did.
    pub eliminated_by: Option<Constraint>,
}

/// Immutable, validated catalog. Build it with [`load_catalog`] or
/// [`Catalog::from_document`].
#[derive(Debug, Clone)]
pub struct Catalog {
    description: Option<String>,
    clouds: Vec<Cloud>,
    regions: Vec<Region>,
    services: Vec<Service>,
    capabilities: Option<BTreeSet<String>>,
    offerings: Vec<Offering>,
    links: Vec<Link>,
    defaults: Vec<EgressDefault>,
    compression: Vec<CompressionProfile>,
    cloud_index: HashMap<String, usize>,
    region_index: HashMap<RegionRef, usize>,
    offering_index: HashMap<OfferingRef, usize>,
    link_index: HashMap<(RegionRef, RegionRef), usize>,
    default_index: HashMap<String, usize>,
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.description == other.description
            && self.clouds == other.clouds
            && self.regions == other.regions
            && self.services == other.services
            && self.capabilities == other.capabilities
            && self.offerings == other.offerings
            && self.links == other.links
            && self.defaults == other.defaults
            && self.compression == other.compression
    }
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Catalog::from_json(&text)
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let doc = file::parse_document(text)?;
        Catalog::from_document(doc)
    }

    pub fn from_document(doc: CatalogDocument) -> Result<Catalog, CatalogError> {
        file::validate(doc)
    }

    pub fn to_document(&self) -> CatalogDocument {
        file::to_document(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("catalog serializes")
    }

    pub fn empty() -> Catalog {
        Catalog::from_document(CatalogDocument::default()).expect("empty catalog is valid")
    }

    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    pub fn clouds(&self) -> &[Cloud] {
        &self.clouds
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn services(&self) -> &[Service] {
        &self.services
    }

    pub fn offerings(&self) -> &[Offering] {
        &self.offerings
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn egress_defaults(&self) -> &[EgressDefault] {
        &self.defaults
    }

    pub fn compression_profiles(&self) -> &[CompressionProfile] {
        &self.compression
    }

    /// Declared capability vocabulary, or the union of offering tags when none is declared.
    pub fn capability_vocabulary(&self) -> BTreeSet<String> {
        match &self.capabilities {
            Some(v) => v.clone(),
            None => self
                .offerings
                .iter()
                .flat_map(|o| o.capabilities.iter().cloned())
                .collect(),
        }
    }

    pub fn cloud(&self, name: &str) -> Option<&Cloud> {
        self.cloud_index.get(name).map(|&i| &self.clouds[i])
    }

    pub fn region(&self, r: &RegionRef) -> Option<&Region> {
        self.region_index.get(r).map(|&i| &self.regions[i])
    }

    pub fn offering(&self, r: &OfferingRef) -> Option<&Offering> {
        self.offering_index.get(r).map(|&i| &self.offerings[i])
    }

    pub fn offering_position(&self, r: &OfferingRef) -> Option<usize> {
        self.offering_index.get(r).copied()
    }

    pub fn link(&self, src: &RegionRef, dst: &RegionRef) -> Option<&Link> {
        self.link_index
            .get(&(src.clone(), dst.clone()))
            .map(|&i| &self.links[i])
    }

    /// Services offered on two or more distinct clouds.
    pub fn compatibility_set(&self) -> BTreeSet<ServiceId> {
        self.clouds_per_service()
            .into_iter()
            .filter(|(_, clouds)| clouds.len() >= 2)
            .map(|(s, _)| s)
            .collect()
    }

    /// Services with at least one offering that are confined to a single cloud.
    pub fn proprietary_set(&self) -> BTreeSet<ServiceId> {
        self.clouds_per_service()
            .into_iter()
            .filter(|(_, clouds)| clouds.len() == 1)
            .map(|(s, _)| s)
            .collect()
    }

    fn clouds_per_service(&self) -> BTreeMap<ServiceId, BTreeSet<&str>> {
        let mut map: BTreeMap<ServiceId, BTreeSet<&str>> = BTreeMap::new();
        for o in &self.offerings {
            map.entry(o.service.clone()).or_default().insert(o.cloud());
        }
        map
    }

    /// Rate for moving data from `src` to `dst` in one hop.
    ///
    /// An explicit link wins over the source cloud's default. Peered links
    /// are free in both directions.
    pub fn egress_rate(&self, src: &RegionRef, dst: &RegionRef) -> Result<EgressRate, NoRouteError> {
        if src == dst {
            return Ok(EgressRate::Colocated);
        }
        if let Some(link) = self.link(src, dst) {
            return Ok(EgressRate::Hop(HopRate {
                price_per_gb: if link.peered { 0.0 } else { link.egress_price_per_gb },
                bandwidth_gb_per_hour: link.bandwidth_gb_per_hour,
                source: if link.peered {
                    RateSource::PeeredLink
                } else {
                    RateSource::Link
                },
            }));
        }
        let no_route = || NoRouteError {
            src: src.clone(),
            dst: dst.clone(),
        };
        let d = self
            .default_index
            .get(&src.cloud)
            .map(|&i| &self.defaults[i])
            .ok_or_else(no_route)?;
        let intra = src.cloud == dst.cloud;
        Ok(EgressRate::Hop(HopRate {
            price_per_gb: d
                .intra_cloud_price_per_gb
                .filter(|_| intra)
                .unwrap_or(d.egress_price_per_gb),
            bandwidth_gb_per_hour: d
                .intra_cloud_bandwidth_gb_per_hour
                .filter(|_| intra)
                .unwrap_or(d.bandwidth_gb_per_hour),
            source: RateSource::Default,
        }))
    }

    /// Every offering satisfying `requirement`, ordered by (cloud, region, instance label).
    pub fn eligible_offerings(&self, requirement: &StageRequirement) -> Vec<&Offering> {
        self.filter_offerings(requirement).offerings
    }

    /// Applies the requirement's constraint families in a fixed order and
    /// reports which one emptied the candidate list.
    pub fn filter_offerings(&self, req: &StageRequirement) -> Filtered<'_> {
        let mut candidates: Vec<&Offering> = self.offerings.iter().collect();
        candidates.sort_by_key(|o| o.id());
        let mut eliminated_by = None;
        let mut apply = |cands: &mut Vec<&Offering>, c: Constraint, keep: &dyn Fn(&Offering) -> bool| {
            let before = cands.len();
            cands.retain(|o| keep(o));
            if before > 0 && cands.is_empty() && eliminated_by.is_none() {
                eliminated_by = Some(c);
            }
        };
        if let Some(service) = &req.service {
            apply(&mut candidates, Constraint::Service, &|o| {
                o.service.name == service.name && service.version.matches(&o.service.version)
            });
        }
        apply(&mut candidates, Constraint::Capabilities, &|o| {
            req.capabilities.is_subset(&o.capabilities)
        });
        if let Some(allow) = &req.country_allow {
            apply(&mut candidates, Constraint::Country, &|o| {
                self.region(&o.region)
                    .is_some_and(|r| allow.contains(&r.country))
            });
        }
        if req.sovereign {
            apply(&mut candidates, Constraint::Sovereignty, &|o| self.is_sovereign(o));
        }
        if let Some(pin) = &req.pin {
            apply(&mut candidates, Constraint::Pin, &|o| pin.admits(&o.region));
        }
        Filtered {
            offerings: candidates,
            eliminated_by,
        }
    }

    /// The offering's region lies in the country whose nationals operate its cloud.
    pub fn is_sovereign(&self, o: &Offering) -> bool {
        match (self.region(&o.region), self.cloud(o.cloud())) {
            (Some(r), Some(c)) => r.country == c.operator_nationality,
            _ => false,
        }
    }
}

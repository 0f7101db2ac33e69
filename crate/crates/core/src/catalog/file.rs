//! On-disk catalog schema and the validation pass that turns it into a [`Catalog`].

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    is_identifier, Catalog, CatalogError, Cloud, CompressionProfile, EgressDefault, Link, Offering,
    Region, RegionRef, Service, ServiceId, ServiceKind, Violation,
};
use crate::country::Country;
use crate::json::{self, DocError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub clouds: Vec<CloudDoc>,
    pub regions: Vec<RegionDoc>,
    pub services: Vec<ServiceDoc>,
    /// Capability tag vocabulary. When absent, any tag used by an offering is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<String>>,
    pub offerings: Vec<OfferingDoc>,
    pub links: Vec<LinkDoc>,
    pub defaults: DefaultsDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compression: Vec<CompressionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudDoc {
    pub name: String,
    pub operator_nationality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub cloud: String,
    pub name: String,
    pub country: String,
    pub zones: Vec<String>,
    pub carbon_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDoc {
    pub name: String,
    pub version: String,
    pub kind: ServiceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceRefDoc {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferingDoc {
    /// `cloud/region`.
    pub region: String,
    pub service: ServiceRefDoc,
    pub instance_label: String,
    pub price_per_hour: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spot_price_per_hour: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserved_price_per_hour: Option<f64>,
    pub speed: f64,
    pub power_kw: f64,
    #[serde(default)]
    pub capabilities: Vec<String>,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub src: String,
    pub dst: String,
    pub egress_price_per_gb: f64,
    pub bandwidth_gb_per_hour: f64,
    #[serde(default)]
    pub peered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultsDoc {
    #[serde(default)]
    pub egress: Vec<EgressDefaultDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgressDefaultDoc {
    pub cloud: String,
    pub egress_price_per_gb: f64,
    pub bandwidth_gb_per_hour: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_cloud_price_per_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_cloud_bandwidth_gb_per_hour: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionDoc {
    pub name: String,
    pub ratio: f64,
    pub compress_gb_per_hour: f64,
    pub decompress_gb_per_hour: f64,
    pub cost_per_gb: f64,
}

pub(super) fn parse_document(text: &str) -> Result<CatalogDocument, CatalogError> {
    json::parse_document(text).map_err(|e| match e {
        DocError::Parse {
            line,
            column,
            message,
        } => CatalogError::Parse {
            line,
            column,
            message,
        },
        DocError::Schema { path, message } => CatalogError::Schema { path, message },
    })
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: String, msg: impl Into<String>) {
        self.violations.push(Violation::new(path, msg));
    }

    fn identifier(&mut self, path: String, value: &str) {
        if !is_identifier(value) {
            self.fail(path, format!("{value:?} is not a valid identifier"));
        }
    }

    fn non_negative(&mut self, path: String, value: f64) {
        if !value.is_finite() || value < 0.0 {
            self.fail(path, format!("must be finite and >= 0, got {value}"));
        }
    }

    fn positive(&mut self, path: String, value: f64) {
        if !value.is_finite() || value <= 0.0 {
            self.fail(path, format!("must be finite and > 0, got {value}"));
        }
    }

    fn country(&mut self, path: String, value: &str) -> Country {
        match value.parse() {
            Ok(c) => c,
            Err(e) => {
                self.fail(path, e.to_string());
                "US".parse().expect("valid code")
            }
        }
    }
}

pub(super) fn validate(doc: CatalogDocument) -> Result<Catalog, CatalogError> {
    let mut ck = Checker {
        violations: Vec::new(),
    };

    let mut clouds = Vec::new();
    let mut cloud_index = HashMap::new();
    for (i, c) in doc.clouds.iter().enumerate() {
        ck.identifier(format!("clouds[{i}].name"), &c.name);
        let nat = ck.country(
            format!("clouds[{i}].operator_nationality"),
            &c.operator_nationality,
        );
        if cloud_index.insert(c.name.clone(), clouds.len()).is_some() {
            ck.fail(format!("clouds[{i}].name"), format!("duplicate cloud {:?}", c.name));
        }
        clouds.push(Cloud {
            name: c.name.clone(),
            operator_nationality: nat,
        });
    }

    let mut regions = Vec::new();
    let mut region_index = HashMap::new();
    for (i, r) in doc.regions.iter().enumerate() {
        let at = |f: &str| format!("regions[{i}].{f}");
        ck.identifier(at("name"), &r.name);
        if !cloud_index.contains_key(&r.cloud) {
            ck.fail(at("cloud"), format!("unknown cloud {:?}", r.cloud));
        }
        let country = ck.country(at("country"), &r.country);
        if r.zones.is_empty() {
            ck.fail(at("zones"), "at least one availability zone is required");
        }
        let mut seen = HashSet::new();
        for (z, zone) in r.zones.iter().enumerate() {
            ck.identifier(format!("regions[{i}].zones[{z}]"), zone);
            if !seen.insert(zone) {
                ck.fail(format!("regions[{i}].zones[{z}]"), format!("duplicate zone {zone:?}"));
            }
        }
        ck.non_negative(at("carbon_intensity"), r.carbon_intensity);
        let id = RegionRef::new(&r.cloud, &r.name);
        if region_index.insert(id.clone(), regions.len()).is_some() {
            ck.fail(at("name"), format!("duplicate region {id}"));
        }
        regions.push(Region {
            cloud: r.cloud.clone(),
            name: r.name.clone(),
            country,
            zones: r.zones.clone(),
            carbon_intensity: r.carbon_intensity,
        });
    }

    let mut services = Vec::new();
    let mut service_keys = HashSet::new();
    for (i, s) in doc.services.iter().enumerate() {
        ck.identifier(format!("services[{i}].name"), &s.name);
        if s.version.is_empty() {
            ck.fail(format!("services[{i}].version"), "version must not be empty");
        }
        let id = ServiceId {
            name: s.name.clone(),
            version: s.version.clone(),
        };
        if !service_keys.insert(id.clone()) {
            ck.fail(format!("services[{i}]"), format!("duplicate service {id}"));
        }
        services.push(Service { id, kind: s.kind });
    }

    let vocabulary = doc.capabilities.as_ref().map(|tags| {
        let mut set = BTreeSet::new();
        for (i, t) in tags.iter().enumerate() {
            ck.identifier(format!("capabilities[{i}]"), t);
            if !set.insert(t.clone()) {
                ck.fail(format!("capabilities[{i}]"), format!("duplicate tag {t:?}"));
            }
        }
        set
    });

    let mut offerings = Vec::new();
    let mut offering_index = HashMap::new();
    for (i, o) in doc.offerings.iter().enumerate() {
        let at = |f: &str| format!("offerings[{i}].{f}");
        let region = match o.region.parse::<RegionRef>() {
            Ok(r) => {
                if !region_index.contains_key(&r) {
                    ck.fail(at("region"), format!("unknown region {r}"));
                }
                r
            }
            Err(_) => {
                ck.fail(at("region"), format!("expected cloud/region, got {:?}", o.region));
                RegionRef::new("?", "?")
            }
        };
        let service = ServiceId {
            name: o.service.name.clone(),
            version: o.service.version.clone(),
        };
        if !service_keys.contains(&service) {
            ck.fail(at("service"), format!("unknown service {service}"));
        }
        ck.identifier(at("instance_label"), &o.instance_label);
        ck.non_negative(at("price_per_hour"), o.price_per_hour);
        for (field, tier) in [
            ("spot_price_per_hour", o.spot_price_per_hour),
            ("reserved_price_per_hour", o.reserved_price_per_hour),
        ] {
            if let Some(p) = tier {
                ck.non_negative(at(field), p);
                if p > o.price_per_hour {
                    ck.fail(
                        at(field),
                        format!("{p} exceeds the on-demand price {}", o.price_per_hour),
                    );
                }
            }
        }
        ck.positive(at("speed"), o.speed);
        ck.non_negative(at("power_kw"), o.power_kw);
        let mut caps = BTreeSet::new();
        for (c, tag) in o.capabilities.iter().enumerate() {
            let p = format!("offerings[{i}].capabilities[{c}]");
            ck.identifier(p.clone(), tag);
            if let Some(v) = &vocabulary {
                if !v.contains(tag) {
                    ck.fail(p.clone(), format!("tag {tag:?} is not in the declared vocabulary"));
                }
            }
            if !caps.insert(tag.clone()) {
                ck.fail(p, format!("duplicate tag {tag:?}"));
            }
        }
        let offering = Offering {
            region,
            service,
            instance_label: o.instance_label.clone(),
            price_per_hour: o.price_per_hour,
            spot_price_per_hour: o.spot_price_per_hour,
            reserved_price_per_hour: o.reserved_price_per_hour,
            speed: o.speed,
            power_kw: o.power_kw,
            capabilities: caps,
            capacity: o.capacity,
        };
        if offering_index.insert(offering.id(), offerings.len()).is_some() {
            ck.fail(at("instance_label"), format!("duplicate offering {}", offering.id()));
        }
        offerings.push(offering);
    }

    let mut links = Vec::new();
    let mut link_index = HashMap::new();
    for (i, l) in doc.links.iter().enumerate() {
        let at = |f: &str| format!("links[{i}].{f}");
        let mut endpoint = |field: &str, raw: &str| match raw.parse::<RegionRef>() {
            Ok(r) => {
                if !region_index.contains_key(&r) {
                    ck.fail(at(field), format!("unknown region {r}"));
                }
                r
            }
            Err(_) => {
                ck.fail(at(field), format!("expected cloud/region, got {raw:?}"));
                RegionRef::new("?", raw)
            }
        };
        let src = endpoint("src", &l.src);
        let dst = endpoint("dst", &l.dst);
        if src == dst {
            ck.fail(at("dst"), "a link must join two distinct regions");
        }
        ck.non_negative(at("egress_price_per_gb"), l.egress_price_per_gb);
        ck.positive(at("bandwidth_gb_per_hour"), l.bandwidth_gb_per_hour);
        if link_index
            .insert((src.clone(), dst.clone()), links.len())
            .is_some()
        {
            ck.fail(format!("links[{i}]"), format!("duplicate link {src} -> {dst}"));
        }
        links.push(Link {
            src,
            dst,
            egress_price_per_gb: l.egress_price_per_gb,
            bandwidth_gb_per_hour: l.bandwidth_gb_per_hour,
            peered: l.peered,
        });
    }
    for (i, l) in links.iter().enumerate() {
        if !l.peered {
            continue;
        }
        match link_index.get(&(l.dst.clone(), l.src.clone())) {
            Some(&j) if links[j].peered => {}
            Some(_) => ck.fail(
                format!("links[{i}].peered"),
                format!("reverse link {} -> {} exists but is not peered", l.dst, l.src),
            ),
            None => ck.fail(
                format!("links[{i}].peered"),
                format!("peering requires a reverse link {} -> {}", l.dst, l.src),
            ),
        }
    }

    let mut defaults = Vec::new();
    let mut default_index = HashMap::new();
    for (i, d) in doc.defaults.egress.iter().enumerate() {
        let at = |f: &str| format!("defaults.egress[{i}].{f}");
        if !cloud_index.contains_key(&d.cloud) {
            ck.fail(at("cloud"), format!("unknown cloud {:?}", d.cloud));
        }
        ck.non_negative(at("egress_price_per_gb"), d.egress_price_per_gb);
        ck.positive(at("bandwidth_gb_per_hour"), d.bandwidth_gb_per_hour);
        if let Some(p) = d.intra_cloud_price_per_gb {
            ck.non_negative(at("intra_cloud_price_per_gb"), p);
        }
        if let Some(b) = d.intra_cloud_bandwidth_gb_per_hour {
            ck.positive(at("intra_cloud_bandwidth_gb_per_hour"), b);
        }
        if default_index.insert(d.cloud.clone(), defaults.len()).is_some() {
            ck.fail(at("cloud"), format!("duplicate default for {:?}", d.cloud));
        }
        defaults.push(EgressDefault {
            cloud: d.cloud.clone(),
            egress_price_per_gb: d.egress_price_per_gb,
            bandwidth_gb_per_hour: d.bandwidth_gb_per_hour,
            intra_cloud_price_per_gb: d.intra_cloud_price_per_gb,
            intra_cloud_bandwidth_gb_per_hour: d.intra_cloud_bandwidth_gb_per_hour,
        });
    }

    let mut compression = Vec::new();
    let mut profile_names = HashSet::new();
    for (i, c) in doc.compression.iter().enumerate() {
        let at = |f: &str| format!("compression[{i}].{f}");
        ck.identifier(at("name"), &c.name);
        if !profile_names.insert(c.name.clone()) {
            ck.fail(at("name"), format!("duplicate profile {:?}", c.name));
        }
        if !(c.ratio > 0.0 && c.ratio <= 1.0) {
            ck.fail(at("ratio"), format!("must lie in (0, 1], got {}", c.ratio));
        }
        ck.positive(at("compress_gb_per_hour"), c.compress_gb_per_hour);
        ck.positive(at("decompress_gb_per_hour"), c.decompress_gb_per_hour);
        ck.non_negative(at("cost_per_gb"), c.cost_per_gb);
        compression.push(CompressionProfile {
            name: c.name.clone(),
            ratio: c.ratio,
            compress_gb_per_hour: c.compress_gb_per_hour,
            decompress_gb_per_hour: c.decompress_gb_per_hour,
            cost_per_gb: c.cost_per_gb,
        });
    }

    if !ck.violations.is_empty() {
        return Err(CatalogError::Invariant(ck.violations));
    }
    Ok(Catalog {
        description: doc.description,
        clouds,
        regions,
        services,
        capabilities: vocabulary,
        offerings,
        links,
        defaults,
        compression,
        cloud_index,
        region_index,
        offering_index,
        link_index,
        default_index,
    })
}

pub(super) fn to_document(c: &Catalog) -> CatalogDocument {
    CatalogDocument {
        description: c.description.clone(),
        clouds: c
            .clouds
            .iter()
            .map(|x| CloudDoc {
                name: x.name.clone(),
                operator_nationality: x.operator_nationality.to_string(),
            })
            .collect(),
        regions: c
            .regions
            .iter()
            .map(|r| RegionDoc {
                cloud: r.cloud.clone(),
                name: r.name.clone(),
                country: r.country.to_string(),
                zones: r.zones.clone(),
                carbon_intensity: r.carbon_intensity,
            })
            .collect(),
        services: c
            .services
            .iter()
            .map(|s| ServiceDoc {
                name: s.id.name.clone(),
                version: s.id.version.clone(),
                kind: s.kind,
            })
            .collect(),
        capabilities: c.capabilities.as_ref().map(|v| v.iter().cloned().collect()),
        offerings: c
            .offerings
            .iter()
            .map(|o| OfferingDoc {
                region: o.region.to_string(),
                service: ServiceRefDoc {
                    name: o.service.name.clone(),
                    version: o.service.version.clone(),
                },
                instance_label: o.instance_label.clone(),
                price_per_hour: o.price_per_hour,
                spot_price_per_hour: o.spot_price_per_hour,
                reserved_price_per_hour: o.reserved_price_per_hour,
                speed: o.speed,
                power_kw: o.power_kw,
                capabilities: o.capabilities.iter().cloned().collect(),
                capacity: o.capacity,
            })
            .collect(),
        links: c
            .links
            .iter()
            .map(|l| LinkDoc {
                src: l.src.to_string(),
                dst: l.dst.to_string(),
                egress_price_per_gb: l.egress_price_per_gb,
                bandwidth_gb_per_hour: l.bandwidth_gb_per_hour,
                peered: l.peered,
            })
            .collect(),
        defaults: DefaultsDoc {
            egress: c
                .defaults
                .iter()
                .map(|d| EgressDefaultDoc {
                    cloud: d.cloud.clone(),
                    egress_price_per_gb: d.egress_price_per_gb,
                    bandwidth_gb_per_hour: d.bandwidth_gb_per_hour,
                    intra_cloud_price_per_gb: d.intra_cloud_price_per_gb,
                    intra_cloud_bandwidth_gb_per_hour: d.intra_cloud_bandwidth_gb_per_hour,
                })
                .collect(),
        },
        compression: c
            .compression
            .iter()
            .map(|p| CompressionDoc {
                name: p.name.clone(),
                ratio: p.ratio,
                compress_gb_per_hour: p.compress_gb_per_hour,
                decompress_gb_per_hour: p.decompress_gb_per_hour,
                cost_per_gb: p.cost_per_gb,
            })
            .collect(),
    }
}

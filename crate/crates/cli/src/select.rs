//! Offering selectors used by `--exclude` and `--capacity`.

use std::fmt;
use std::str::FromStr;

use sky_core::catalog::{Catalog, Offering, OfferingRef};

/// `[STAGE@]CLOUD[:REGION]:LABEL`, where `LABEL` matches instance labels by prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub stage: Option<String>,
    pub cloud: String,
    pub region: Option<String>,
    pub label: String,
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (stage, rest) = match s.split_once('@') {
            Some((st, rest)) => (Some(st.to_string()), rest),
            None => (None, s),
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let (cloud, region, label) = match parts.as_slice() {
            [c, l] => (*c, None, *l),
            [c, r, l] => (*c, Some(r.to_string()), *l),
            _ => return Err(format!("bad selector {s:?}, expected [STAGE@]CLOUD[:REGION]:LABEL")),
        };
        if cloud.is_empty() || label.is_empty() || stage.as_deref() == Some("") {
            return Err(format!("bad selector {s:?}, expected [STAGE@]CLOUD[:REGION]:LABEL"));
        }
        Ok(Selector {
            stage,
            cloud: cloud.to_string(),
            region,
            label: label.to_string(),
        })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.stage {
            write!(f, "{s}@")?;
        }
        write!(f, "{}", self.cloud)?;
        if let Some(r) = &self.region {
            write!(f, ":{r}")?;
        }
        write!(f, ":{}", self.label)
    }
}

impl Selector {
    pub fn matches(&self, o: &Offering) -> bool {
        o.cloud() == self.cloud
            && self.region.as_ref().is_none_or(|r| *r == o.region.region)
            && o.instance_label.starts_with(&self.label)
    }

    /// Matching offerings; an error when there are none.
    pub fn resolve(&self, catalog: &Catalog) -> Result<Vec<OfferingRef>, String> {
        let hits: Vec<OfferingRef> = catalog
            .offerings()
            .iter()
            .filter(|o| self.matches(o))
            .map(Offering::id)
            .collect();
        if hits.is_empty() {
            Err(format!("selector {self} matches no offering in the catalog"))
        } else {
            Ok(hits)
        }
    }
}

/// `SELECTOR=N` for `--capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityOverride {
    pub selector: Selector,
    pub available: u32,
}

impl FromStr for CapacityOverride {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (sel, n) = s
            .rsplit_once('=')
            .ok_or_else(|| format!("bad capacity override {s:?}, expected CLOUD[:REGION]:LABEL=N"))?;
        let selector: Selector = sel.parse()?;
        if selector.stage.is_some() {
            return Err(format!("capacity override {s:?} cannot name a stage"));
        }
        let available = n
            .parse()
            .map_err(|_| format!("bad instance count {n:?} in {s:?}"))?;
        Ok(CapacityOverride { selector, available })
    }
}

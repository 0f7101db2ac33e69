//! Job API: a job is a DAG of atomic stages plus the data they read, the
//! constraints on where they may run, and what to optimize.

mod dag;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::{is_identifier, Catalog, RegionRef, VersionReq, Violation};
use crate::country::Country;
use crate::json::{self, DocError};

#[derive(Debug, thiserror::Error)]
pub enum JobError {
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
    #[error("cycle detected: edge {from} -> {to} closes a loop")]
    Cycle { from: String, to: String },
    #[error("{path}: reference to unknown {kind} {name:?}")]
    DanglingRef {
        path: String,
        kind: &'static str,
        name: String,
    },
    #[error("{} invalid field(s):\n{}", .0.len(), Violation::list(.0))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceReq {
    pub name: String,
    #[serde(default)]
    pub version: VersionReq,
}

/// Restricts a stage to one cloud, or to one region of it. Written `cloud` or `cloud/region`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pin {
    pub cloud: String,
    pub region: Option<String>,
}

impl Pin {
    pub fn admits(&self, r: &RegionRef) -> bool {
        r.cloud == self.cloud && self.region.as_ref().is_none_or(|name| *name == r.region)
    }
}

impl fmt::Display for Pin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.region {
            Some(r) => write!(f, "{}/{}", self.cloud, r),
            None => f.write_str(&self.cloud),
        }
    }
}

impl FromStr for Pin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split('/').collect::<Vec<_>>().as_slice() {
            [c] if is_identifier(c) => Ok(Pin {
                cloud: c.to_string(),
                region: None,
            }),
            [c, r] if is_identifier(c) && is_identifier(r) => Ok(Pin {
                cloud: c.to_string(),
                region: Some(r.to_string()),
            }),
            _ => Err(format!("expected cloud or cloud/region, got {s:?}")),
        }
    }
}

/// Where a dataset initially lives: a catalog region, or outside every cloud.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DataLocation {
    Region(RegionRef),
    External,
}

impl fmt::Display for DataLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataLocation::Region(r) => r.fmt(f),
            DataLocation::External => f.write_str("external"),
        }
    }
}

impl FromStr for DataLocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "external" {
            return Ok(DataLocation::External);
        }
        s.parse()
            .map(DataLocation::Region)
            .map_err(|_| format!("expected \"external\" or cloud/region, got {s:?}"))
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

string_serde!(Pin);
string_serde!(DataLocation);

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub id: String,
    pub location: DataLocation,
    pub size_gb: f64,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub allow_compression: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRequirement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceReq>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub capabilities: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country_allow: Option<Vec<Country>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub sovereign: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin: Option<Pin>,
    /// Stages sharing a group must land in distinct availability zones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anti_affinity_group: Option<String>,
}

impl StageRequirement {
    pub fn capabilities<I, T>(tags: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        StageRequirement {
            capabilities: tags.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn service(name: impl Into<String>) -> Self {
        StageRequirement {
            service: Some(ServiceReq {
                name: name.into(),
                version: VersionReq::any(),
            }),
            ..Default::default()
        }
    }
}

/// Instances per placement: fixed, or chosen by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceCount {
    Fixed(u32),
    Auto,
}

impl Default for InstanceCount {
    fn default() -> Self {
        InstanceCount::Fixed(1)
    }
}

impl InstanceCount {
    /// Counts the optimizer tries when the job leaves the choice open.
    pub const AUTO_CHOICES: [u32; 4] = [1, 2, 4, 8];

    fn is_default(&self) -> bool {
        *self == InstanceCount::Fixed(1)
    }
}

impl Serialize for InstanceCount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            InstanceCount::Fixed(n) => serializer.serialize_u32(*n),
            InstanceCount::Auto => serializer.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for InstanceCount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::N(n) => Ok(InstanceCount::Fixed(n)),
            Raw::S(s) if s == "auto" => Ok(InstanceCount::Auto),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "expected a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

fn one() -> u32 {
    1
}

fn is_one(n: &u32) -> bool {
    *n == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub id: String,
    pub requirement: StageRequirement,
    /// Abstract work units; duration on an offering is `work / (speed * instances)`.
    pub work: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub output_size_gb: f64,
    /// Independent identical replicas, each placed atomically.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub parallel_trials: u32,
    #[serde(default, skip_serializing_if = "InstanceCount::is_default")]
    pub instances: InstanceCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub to: String,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub allow_compression: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    MinCost,
    MinTime,
    Weighted,
}

impl FromStr for ObjectiveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min_cost" => Ok(ObjectiveMode::MinCost),
            "min_time" => Ok(ObjectiveMode::MinTime),
            "weighted" => Ok(ObjectiveMode::Weighted),
            _ => Err(format!("unknown objective {s:?} (min_cost|min_time|weighted)")),
        }
    }
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub mode: ObjectiveMode,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub weight_cost: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub weight_time: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub weight_carbon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_usd: Option<f64>,
}

impl Objective {
    pub fn new(mode: ObjectiveMode) -> Self {
        Objective {
            mode,
            weight_cost: 0.0,
            weight_time: 0.0,
            weight_carbon: 0.0,
            deadline_hours: None,
            budget_usd: None,
        }
    }

    pub fn min_cost() -> Self {
        Self::new(ObjectiveMode::MinCost)
    }

    pub fn min_time() -> Self {
        Self::new(ObjectiveMode::MinTime)
    }

    pub fn weighted(cost: f64, time: f64, carbon: f64) -> Self {
        Objective {
            weight_cost: cost,
            weight_time: time,
            weight_carbon: carbon,
            ..Self::new(ObjectiveMode::Weighted)
        }
    }

    fn check(&self, out: &mut Vec<Violation>) {
        for (name, w) in [
            ("weight_cost", self.weight_cost),
            ("weight_time", self.weight_time),
            ("weight_carbon", self.weight_carbon),
        ] {
            if !w.is_finite() || w < 0.0 {
                out.push(Violation::new(format!("objective.{name}"), "must be finite and >= 0"));
            }
        }
        if self.mode == ObjectiveMode::Weighted
            && !(self.weight_cost > 0.0 || self.weight_time > 0.0 || self.weight_carbon > 0.0)
        {
            out.push(Violation::new(
                "objective",
                "weighted mode needs at least one positive weight",
            ));
        }
        for (name, v) in [("deadline_hours", self.deadline_hours), ("budget_usd", self.budget_usd)] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    out.push(Violation::new(format!("objective.{name}"), "must be finite and > 0"));
                }
            }
        }
    }
}

/// Serialized form of a job, as read from a job file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDocument {
    pub id: String,
    #[serde(default)]
    pub datasets: Vec<Dataset>,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    pub objective: Objective,
    /// Permit the spot price tier.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_spot: bool,
    /// Permit the reserved price tier.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_reserved: bool,
    /// Opaque per-cloud credentials, echoed into provisioning events.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub credentials: BTreeMap<String, String>,
}

/// A validated job: references resolved, edges normalized and the graph acyclic.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    doc: JobDocument,
    stage_index: HashMap<String, usize>,
    topo: Vec<usize>,
    preds: Vec<Vec<usize>>,
}

/// Reads and validates a job file.
pub fn parse_job(path: impl AsRef<Path>) -> Result<JobSpec, JobError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| JobError::Io {
        path: path.display().to_string(),
        source,
    })?;
    JobSpec::from_json(&text)
}

impl JobSpec {
    pub fn from_json(text: &str) -> Result<JobSpec, JobError> {
        let doc: JobDocument = json::parse_document(text).map_err(|e| match e {
            DocError::Parse {
                line,
                column,
                message,
            } => JobError::Parse {
                line,
                column,
                message,
            },
            DocError::Schema { path, message } => JobError::Schema { path, message },
        })?;
        JobSpec::from_document(doc)
    }

    /// Validates a document. Stage ids listed in `inputs` become edges;
    /// duplicate edges collapse (compression stays allowed only if every copy allows it).
    pub fn from_document(mut doc: JobDocument) -> Result<JobSpec, JobError> {
        let mut bad = Vec::new();
        let ident = |bad: &mut Vec<Violation>, path: String, v: &str| {
            if !is_identifier(v) {
                bad.push(Violation::new(path, format!("{v:?} is not a valid identifier")));
            }
        };
        ident(&mut bad, "id".into(), &doc.id);

        let mut dataset_ids = HashSet::new();
        for (i, d) in doc.datasets.iter().enumerate() {
            ident(&mut bad, format!("datasets[{i}].id"), &d.id);
            if !dataset_ids.insert(d.id.clone()) {
                bad.push(Violation::new(format!("datasets[{i}].id"), format!("duplicate dataset {:?}", d.id)));
            }
            if !d.size_gb.is_finite() || d.size_gb < 0.0 {
                bad.push(Violation::new(format!("datasets[{i}].size_gb"), "must be finite and >= 0"));
            }
        }

        let mut stage_index = HashMap::new();
        for (i, s) in doc.stages.iter().enumerate() {
            let at = |f: &str| format!("stages[{i}].{f}");
            ident(&mut bad, at("id"), &s.id);
            if stage_index.insert(s.id.clone(), i).is_some() {
                bad.push(Violation::new(at("id"), format!("duplicate stage {:?}", s.id)));
            }
            if dataset_ids.contains(&s.id) {
                bad.push(Violation::new(at("id"), format!("{:?} is also a dataset id", s.id)));
            }
            if !s.work.is_finite() || s.work <= 0.0 {
                bad.push(Violation::new(at("work"), "must be finite and > 0"));
            }
            if !s.output_size_gb.is_finite() || s.output_size_gb < 0.0 {
                bad.push(Violation::new(at("output_size_gb"), "must be finite and >= 0"));
            }
            if s.parallel_trials == 0 {
                bad.push(Violation::new(at("parallel_trials"), "must be >= 1"));
            }
            if s.instances == InstanceCount::Fixed(0) {
                bad.push(Violation::new(at("instances"), "must be >= 1 or \"auto\""));
            }
            let r = &s.requirement;
            if r.service.is_none() && r.capabilities.is_empty() {
                bad.push(Violation::new(
                    at("requirement"),
                    "needs a service or at least one capability",
                ));
            }
            if let Some(g) = &r.anti_affinity_group {
                ident(&mut bad, at("requirement.anti_affinity_group"), g);
            }
            if r.country_allow.as_ref().is_some_and(Vec::is_empty) {
                bad.push(Violation::new(at("requirement.country_allow"), "must not be empty"));
            }
        }
        doc.objective.check(&mut bad);
        if doc.stages.is_empty() {
            bad.push(Violation::new("stages", "a job needs at least one stage"));
        }
        if !bad.is_empty() {
            return Err(JobError::Invalid(bad));
        }

        // Resolve inputs and edges.
        let mut edges: BTreeMap<(usize, usize), bool> = BTreeMap::new();
        let mut edge_order: Vec<(usize, usize)> = Vec::new();
        let mut add_edge = |from: usize, to: usize, allow: bool| {
            match edges.get_mut(&(from, to)) {
                Some(a) => *a &= allow,
                None => {
                    edges.insert((from, to), allow);
                    edge_order.push((from, to));
                }
            }
        };
        for (i, s) in doc.stages.iter().enumerate() {
            for (k, input) in s.inputs.iter().enumerate() {
                if let Some(&p) = stage_index.get(input) {
                    if p == i {
                        return Err(JobError::Cycle {
                            from: s.id.clone(),
                            to: s.id.clone(),
                        });
                    }
                    add_edge(p, i, true);
                } else if !dataset_ids.contains(input) {
                    return Err(JobError::DanglingRef {
                        path: format!("stages[{i}].inputs[{k}]"),
                        kind: "dataset or stage",
                        name: input.clone(),
                    });
                }
            }
        }
        for (k, e) in doc.edges.iter().enumerate() {
            let lookup = |field: &str, name: &str| {
                stage_index.get(name).copied().ok_or_else(|| JobError::DanglingRef {
                    path: format!("edges[{k}].{field}"),
                    kind: "stage",
                    name: name.to_string(),
                })
            };
            let from = lookup("from", &e.from)?;
            let to = lookup("to", &e.to)?;
            if from == to {
                return Err(JobError::Cycle {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
            add_edge(from, to, e.allow_compression);
        }

        let n = doc.stages.len();
        let mut succ = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for &(a, b) in &edge_order {
            succ[a].push(b);
            preds[b].push(a);
        }
        if let Some((a, b)) = dag::find_back_edge(&succ) {
            return Err(JobError::Cycle {
                from: doc.stages[a].id.clone(),
                to: doc.stages[b].id.clone(),
            });
        }
        let owned_names: Vec<String> = doc.stages.iter().map(|s| s.id.clone()).collect();
        let names: Vec<&str> = owned_names.iter().map(String::as_str).collect();
        let topo = dag::topo_order(&names, &succ);

        // Normalized form: stage-to-stage dependencies live only in `edges`.
        let stage_ids: HashSet<&String> = stage_index.keys().collect();
        let stage_inputs_removed: Vec<Vec<String>> = doc
            .stages
            .iter()
            .map(|s| s.inputs.iter().filter(|x| !stage_ids.contains(x)).cloned().collect())
            .collect();
        for (s, inputs) in doc.stages.iter_mut().zip(stage_inputs_removed) {
            s.inputs = inputs;
        }
        let mut ordered: Vec<(usize, usize)> = edges.keys().copied().collect();
        ordered.sort_by(|x, y| (&names[x.0], &names[x.1]).cmp(&(&names[y.0], &names[y.1])));
        let normalized: Vec<Edge> = ordered
            .iter()
            .map(|&(a, b)| Edge {
                from: names[a].to_string(),
                to: names[b].to_string(),
                allow_compression: edges[&(a, b)],
            })
            .collect();
        for p in &mut preds {
            p.sort_by_key(|&i| names[i]);
        }
        doc.edges = normalized;

        Ok(JobSpec {
            doc,
            stage_index,
            topo,
            preds,
        })
    }

    pub fn to_document(&self) -> JobDocument {
        self.doc.clone()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("job serializes")
    }

    pub fn id(&self) -> &str {
        &self.doc.id
    }

    pub fn stages(&self) -> &[Stage] {
        &self.doc.stages
    }

    pub fn edges(&self) -> &[Edge] {
        &self.doc.edges
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.doc.datasets
    }

    pub fn objective(&self) -> &Objective {
        &self.doc.objective
    }

    pub fn allow_spot(&self) -> bool {
        self.doc.allow_spot
    }

    pub fn allow_reserved(&self) -> bool {
        self.doc.allow_reserved
    }

    pub fn credentials(&self) -> &BTreeMap<String, String> {
        &self.doc.credentials
    }

    pub fn stage(&self, id: &str) -> Option<&Stage> {
        self.stage_index.get(id).map(|&i| &self.doc.stages[i])
    }

    pub fn stage_position(&self, id: &str) -> Option<usize> {
        self.stage_index.get(id).copied()
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.doc.datasets.iter().find(|d| d.id == id)
    }

    /// Stage ids with every producer before its consumers; ties broken by id.
    pub fn topo_order(&self) -> Vec<&str> {
        self.topo.iter().map(|&i| self.doc.stages[i].id.as_str()).collect()
    }

    /// Stage positions in topological order.
    pub fn topo_positions(&self) -> &[usize] {
        &self.topo
    }

    /// Producer positions of the stage at `pos`, ordered by id.
    pub fn producers(&self, pos: usize) -> &[usize] {
        &self.preds[pos]
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&Edge> {
        self.doc.edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Same job with a different objective.
    pub fn with_objective(&self, objective: Objective) -> Result<JobSpec, JobError> {
        let mut doc = self.doc.clone();
        doc.objective = objective;
        JobSpec::from_document(doc)
    }

    /// Checks references that can only be resolved against a catalog:
    /// dataset locations and stage pins.
    pub fn check_against(&self, catalog: &Catalog) -> Result<(), JobError> {
        for (i, d) in self.doc.datasets.iter().enumerate() {
            if let DataLocation::Region(r) = &d.location {
                if catalog.region(r).is_none() {
                    return Err(JobError::DanglingRef {
                        path: format!("datasets[{i}].location"),
                        kind: "region",
                        name: r.to_string(),
                    });
                }
            }
        }
        for (i, s) in self.doc.stages.iter().enumerate() {
            if let Some(pin) = &s.requirement.pin {
                let known = match &pin.region {
                    Some(r) => catalog.region(&RegionRef::new(&pin.cloud, r)).is_some(),
                    None => catalog.cloud(&pin.cloud).is_some(),
                };
                if !known {
                    return Err(JobError::DanglingRef {
                        path: format!("stages[{i}].requirement.pin"),
                        kind: "pin target",
                        name: pin.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

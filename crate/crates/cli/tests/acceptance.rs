use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sky_core::catalog::{load_catalog, Catalog, PriceTier, RegionRef};
use sky_core::jobspec::{parse_job, JobSpec};
use sky_core::optimizer::{
    assignment_space, brute_force_optimize, optimize, single_cloud_baseline, Exclusions, OptimizeError,
    OptimizerConfig, PhysicalPlan,
};
use sky_core::runtime::{
    invoice, queue_drain, queue_submit, run_broker, simulate, Allocation, BrokerOptions, BrokerQueue,
    CapacityState, FaultModel, TraceEvent,
};
use sky_core::scalar::savings_percent;
use sky_core::transfer::{plan_transfer, TransferError, TransferOptions, TransferWeight};
use sky_core::{Exact, Scalar};

const PIPELINE_COST_USD: f64 = 40.0;
const PIPELINE_COST_TOL: f64 = 0.5;
const PIPELINE_MAKESPAN_H: f64 = 5.7;
const PIPELINE_MAKESPAN_TOL: f64 = 0.1;
const PIPELINE_COST_SAVINGS: i64 = 61;
const PIPELINE_TIME_SAVINGS: i64 = 47;
const SAVINGS_TOL_PTS: i64 = 1;
const BASELINE_COST_USD: f64 = 105.0;
const BASELINE_MAKESPAN_H: f64 = 10.8;
const PIPELINE_RUNTIME: Duration = Duration::from_secs(1);

const ORACLE_INSTANCES: usize = 1000;
const ORACLE_RUNTIME: Duration = Duration::from_secs(60);
const MAX_STAGES: usize = 5;
const MAX_OFFERINGS_PER_STAGE: usize = 4;
/// Random instances whose joint assignment space exceeds this are redrawn.
const MAX_SPACE: u128 = 20_000;

const TRANSFER_WORLDS: usize = 300;
const TRANSFER_PAIRS_PER_WORLD: usize = 8;
const MAX_REGIONS: usize = 8;

const DETERMINISM_REPEATS: usize = 10;

const FIDELITY_INSTANCES: usize = 300;
const INVOICE_F64_REL_TOL: f64 = 1e-9;
const QUEUE_TRIALS: usize = 100;

const CROSSOVER_GRID: std::ops::RangeInclusive<u32> = 1..=200;
const CROSSOVER_WORK_PER_GB2: f64 = 0.01;
const CROSSOVER_TOL_STEPS: f64 = 1.0;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn sky(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sky"))
        .args(args)
        .env_remove("SKY_CONFIG")
        .output()
        .expect("sky binary runs")
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

const COUNTRIES: [&str; 3] = ["US", "FR", "DE"];
const TAGS: [&str; 2] = ["gpu", "sgx"];
const VERSIONS: [&str; 2] = ["1.0", "2.0"];

struct GRegion {
    cloud: usize,
    name: String,
    country: &'static str,
    zones: Vec<String>,
}

struct GOffering {
    region: usize,
    version: &'static str,
    label: String,
    price: f64,
    spot: Option<f64>,
    speed: f64,
    caps: Vec<&'static str>,
}

struct GLink {
    src: usize,
    dst: usize,
    price: f64,
    bw: f64,
    peered: bool,
}

struct GDefault {
    price: f64,
    bw: f64,
    intra: Option<(f64, f64)>,
}

struct GProfile {
    name: String,
    ratio: f64,
    compress: f64,
    decompress: f64,
    cost: f64,
}

/// A generated catalog kept in plain form, so checks need not trust the parsed one.
struct World {
    clouds: Vec<(String, &'static str)>,
    regions: Vec<GRegion>,
    offerings: Vec<GOffering>,
    links: Vec<GLink>,
    defaults: Vec<Option<GDefault>>,
    profiles: Vec<GProfile>,
}

fn steps(rng: &mut ChaCha8Rng, lo: u32, hi: u32, scale: f64) -> f64 {
    rng.random_range(lo..=hi) as f64 / scale
}

impl World {
    fn region_ref(&self, r: usize) -> RegionRef {
        RegionRef::new(&self.clouds[self.regions[r].cloud].0, &self.regions[r].name)
    }

    fn region_str(&self, r: usize) -> String {
        self.region_ref(r).to_string()
    }

    fn region_index(&self, r: &RegionRef) -> usize {
        (0..self.regions.len()).find(|&i| self.region_ref(i) == *r).expect("known region")
    }

    fn generate(rng: &mut ChaCha8Rng, max_clouds: usize, max_regions_per_cloud: usize, max_regions: usize, offerings: usize) -> World {
        let n_clouds = rng.random_range(1..=max_clouds);
        let clouds: Vec<(String, &'static str)> = (0..n_clouds)
            .map(|i| (format!("c{i}"), *COUNTRIES.choose(rng).unwrap()))
            .collect();
        let mut regions = Vec::new();
        for c in 0..n_clouds {
            let want = rng.random_range(1..=max_regions_per_cloud);
            for r in 0..want {
                if regions.len() == max_regions {
                    break;
                }
                let zones = (0..rng.random_range(1..=2)).map(|z| format!("z{z}")).collect();
                regions.push(GRegion {
                    cloud: c,
                    name: format!("r{r}"),
                    country: COUNTRIES.choose(rng).unwrap(),
                    zones,
                });
            }
        }
        let offerings = (0..offerings)
            .map(|i| {
                let price = steps(rng, 10, 500, 100.0);
                GOffering {
                    region: rng.random_range(0..regions.len()),
                    version: VERSIONS.choose(rng).unwrap(),
                    label: format!("o{i}"),
                    price,
                    spot: rng.random_bool(0.5).then(|| (price * steps(rng, 1, 3, 4.0) * 100.0).round() / 100.0),
                    speed: steps(rng, 2, 16, 4.0),
                    caps: TAGS.iter().copied().filter(|_| rng.random_bool(0.4)).collect(),
                }
            })
            .collect();
        let mut links = Vec::new();
        for a in 0..regions.len() {
            for b in a + 1..regions.len() {
                let link = |src, dst, peered, rng: &mut ChaCha8Rng| GLink {
                    src,
                    dst,
                    price: steps(rng, 0, 20, 100.0),
                    bw: steps(rng, 1, 40, 1.0),
                    peered,
                };
                match rng.random_range(0..8) {
                    0 => links.push(link(a, b, false, rng)),
                    1 => links.push(link(b, a, false, rng)),
                    2 => {
                        links.push(link(a, b, false, rng));
                        links.push(link(b, a, false, rng));
                    }
                    3 => {
                        links.push(link(a, b, true, rng));
                        links.push(link(b, a, true, rng));
                    }
                    _ => {}
                }
            }
        }
        let defaults = (0..n_clouds)
            .map(|_| {
                rng.random_bool(0.85).then(|| GDefault {
                    price: steps(rng, 1, 20, 100.0),
                    bw: steps(rng, 1, 50, 1.0),
                    intra: rng.random_bool(0.5).then(|| (steps(rng, 0, 5, 100.0), steps(rng, 10, 100, 1.0))),
                })
            })
            .collect();
        let profiles = (0..rng.random_range(0..=2))
            .map(|i| GProfile {
                name: format!("p{i}"),
                ratio: steps(rng, 1, 9, 10.0),
                compress: steps(rng, 5, 200, 1.0),
                decompress: steps(rng, 5, 200, 1.0),
                cost: steps(rng, 0, 10, 1000.0),
            })
            .collect();
        World {
            clouds,
            regions,
            offerings,
            links,
            defaults,
            profiles,
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "clouds": self.clouds.iter().map(|(n, c)| json!({"name": n, "operator_nationality": c})).collect::<Vec<_>>(),
            "regions": self.regions.iter().map(|r| json!({
                "cloud": self.clouds[r.cloud].0, "name": r.name, "country": r.country,
                "zones": r.zones, "carbon_intensity": 0.4,
            })).collect::<Vec<_>>(),
            "services": VERSIONS.iter().map(|v| json!({"name": "svc", "version": v, "kind": "standard"})).collect::<Vec<_>>(),
            "offerings": self.offerings.iter().map(|o| {
                let mut v = json!({
                    "region": self.region_str(o.region), "service": {"name": "svc", "version": o.version},
                    "instance_label": o.label, "price_per_hour": o.price, "speed": o.speed, "power_kw": 0.25,
                    "capabilities": o.caps, "capacity": 8,
                });
                if let Some(s) = o.spot {
                    v["spot_price_per_hour"] = json!(s);
                }
                v
            }).collect::<Vec<_>>(),
            "links": self.links.iter().map(|l| json!({
                "src": self.region_str(l.src), "dst": self.region_str(l.dst),
                "egress_price_per_gb": l.price, "bandwidth_gb_per_hour": l.bw, "peered": l.peered,
            })).collect::<Vec<_>>(),
            "defaults": {"egress": self.defaults.iter().enumerate().filter_map(|(c, d)| d.as_ref().map(|d| {
                let mut v = json!({"cloud": self.clouds[c].0, "egress_price_per_gb": d.price, "bandwidth_gb_per_hour": d.bw});
                if let Some((p, b)) = d.intra {
                    v["intra_cloud_price_per_gb"] = json!(p);
                    v["intra_cloud_bandwidth_gb_per_hour"] = json!(b);
                }
                v
            })).collect::<Vec<_>>()},
            "compression": self.profiles.iter().map(|p| json!({
                "name": p.name, "ratio": p.ratio, "compress_gb_per_hour": p.compress,
                "decompress_gb_per_hour": p.decompress, "cost_per_gb": p.cost,
            })).collect::<Vec<_>>(),
        })
    }

    fn catalog(&self) -> Catalog {
        Catalog::from_json(&self.to_json().to_string()).expect("generated catalog is valid")
    }

    /// `(price per GB, GB/h)` of one hop, from the raw link and default tables.
    fn hop(&self, u: usize, v: usize) -> Option<(f64, f64)> {
        if let Some(l) = self.links.iter().find(|l| l.src == u && l.dst == v) {
            return Some((if l.peered { 0.0 } else { l.price }, l.bw));
        }
        let src_cloud = self.regions[u].cloud;
        let d = self.defaults[src_cloud].as_ref()?;
        match d.intra {
            Some((p, b)) if src_cloud == self.regions[v].cloud => Some((p, b)),
            _ => Some((d.price, d.bw)),
        }
    }
}

struct GStage {
    id: String,
    version: Option<&'static str>,
    caps: Vec<&'static str>,
    countries: Option<Vec<&'static str>>,
    sovereign: bool,
    pin: Option<(usize, Option<String>)>,
    group: bool,
    trials: u32,
    /// `None` lets the optimizer choose.
    instances: Option<u32>,
}

struct GJob {
    stages: Vec<GStage>,
    allow_spot: bool,
    doc: Value,
}

fn generate_job(rng: &mut ChaCha8Rng, w: &World, id: &str) -> GJob {
    let n = rng.random_range(1..=MAX_STAGES);
    let mut auto_left = 1;
    let mut trials_left = 1;
    let stages: Vec<GStage> = (0..n)
        .map(|i| {
            let instances = if auto_left > 0 && rng.random_bool(0.1) {
                auto_left -= 1;
                None
            } else {
                Some(if rng.random_bool(0.15) { 2 } else { 1 })
            };
            let trials = if trials_left > 0 && rng.random_bool(0.1) {
                trials_left -= 1;
                2
            } else {
                1
            };
            GStage {
                id: format!("s{i}"),
                version: if rng.random_bool(0.4) { Some(VERSIONS.choose(rng).unwrap()) } else { None },
                caps: TAGS.iter().copied().filter(|_| rng.random_bool(0.2)).collect(),
                countries: rng.random_bool(0.25).then(|| {
                    let mut c: Vec<&str> = COUNTRIES.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
                    if c.is_empty() {
                        c.push(COUNTRIES.choose(rng).unwrap());
                    }
                    c
                }),
                sovereign: rng.random_bool(0.15),
                pin: rng.random_bool(0.2).then(|| {
                    let r = &w.regions[rng.random_range(0..w.regions.len())];
                    (r.cloud, rng.random_bool(0.5).then(|| r.name.clone()))
                }),
                group: rng.random_bool(0.25),
                trials,
                instances,
            }
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(0.4) {
                edges.push(json!({"from": stages[a].id, "to": stages[b].id, "allow_compression": rng.random_bool(0.7)}));
            }
        }
    }
    let datasets: Vec<(String, String, usize)> = (0..rng.random_range(0..=2))
        .map(|d| {
            let loc = if rng.random_bool(0.2) {
                "external".to_string()
            } else {
                w.region_str(rng.random_range(0..w.regions.len()))
            };
            (format!("d{d}"), loc, rng.random_range(0..n))
        })
        .collect();
    let stage_docs: Vec<Value> = stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut req = json!({"service": {"name": "svc"}});
            if let Some(v) = s.version {
                req["service"]["version"] = json!(v);
            }
            if !s.caps.is_empty() {
                req["capabilities"] = json!(s.caps);
            }
            if let Some(c) = &s.countries {
                req["country_allow"] = json!(c);
            }
            if s.sovereign {
                req["sovereign"] = json!(true);
            }
            if let Some((c, r)) = &s.pin {
                let cloud = &w.clouds[*c].0;
                req["pin"] = json!(match r {
                    Some(r) => format!("{cloud}/{r}"),
                    None => cloud.clone(),
                });
            }
            if s.group {
                req["anti_affinity_group"] = json!("g");
            }
            let inputs: Vec<&String> = datasets.iter().filter(|d| d.2 == i).map(|d| &d.0).collect();
            json!({
                "id": s.id, "requirement": req, "work": steps(rng, 1, 40, 4.0),
                "output_size_gb": steps(rng, 0, 40, 4.0), "inputs": inputs,
                "parallel_trials": s.trials,
                "instances": match s.instances { Some(k) => json!(k), None => json!("auto") },
            })
        })
        .collect();
    let mut objective = match rng.random_range(0..3) {
        0 => json!({"mode": "min_cost"}),
        1 => json!({"mode": "min_time"}),
        _ => json!({"mode": "weighted", "weight_cost": steps(rng, 0, 8, 4.0),
                    "weight_time": steps(rng, 1, 8, 4.0), "weight_carbon": steps(rng, 0, 4, 4.0)}),
    };
    if rng.random_bool(0.15) {
        objective["deadline_hours"] = json!(steps(rng, 4, 80, 4.0));
    }
    if rng.random_bool(0.15) {
        objective["budget_usd"] = json!(steps(rng, 4, 400, 4.0));
    }
    let allow_spot = rng.random_bool(0.3);
    let doc = json!({
        "id": id,
        "datasets": datasets.iter().map(|(d, loc, _)| json!({"id": d, "location": loc, "size_gb": steps(rng, 0, 200, 4.0)})).collect::<Vec<_>>(),
        "stages": stage_docs,
        "edges": edges,
        "objective": objective,
        "allow_spot": allow_spot,
    });
    GJob { stages, allow_spot, doc }
}

/// Eligibility re-derived from the generator's own tables.
fn violations(w: &World, job: &GJob, plan: &PhysicalPlan<f64>) -> Vec<String> {
    let mut out = Vec::new();
    let mut per_stage: BTreeMap<&str, u32> = BTreeMap::new();
    let mut group_zones: BTreeSet<(String, String)> = BTreeSet::new();
    for p in &plan.placements {
        let Some(s) = job.stages.iter().find(|s| s.id == p.stage) else {
            out.push(format!("unknown stage {}", p.stage));
            continue;
        };
        *per_stage.entry(&s.id).or_default() += 1;
        let Some(o) = w.offerings.iter().find(|o| {
            w.region_ref(o.region) == p.offering.region && o.label == p.offering.instance_label
        }) else {
            out.push(format!("{}: unknown offering {}", p.stage, p.offering));
            continue;
        };
        let region = &w.regions[o.region];
        let who = format!("{}#{} on {}", p.stage, p.replica, p.offering);
        if s.version.is_some_and(|v| v != o.version) {
            out.push(format!("{who}: service version"));
        }
        if !s.caps.iter().all(|c| o.caps.contains(c)) {
            out.push(format!("{who}: capability"));
        }
        if s.countries.as_ref().is_some_and(|c| !c.contains(&region.country)) {
            out.push(format!("{who}: country"));
        }
        if s.sovereign && region.country != w.clouds[region.cloud].1 {
            out.push(format!("{who}: sovereignty"));
        }
        if let Some((c, r)) = &s.pin {
            if region.cloud != *c || r.as_ref().is_some_and(|r| *r != region.name) {
                out.push(format!("{who}: pin"));
            }
        }
        match p.price_tier {
            PriceTier::OnDemand => {}
            PriceTier::Spot if job.allow_spot && o.spot.is_some() => {}
            t => out.push(format!("{who}: tier {t}")),
        }
        match s.instances {
            Some(k) if k != p.instance_count => out.push(format!("{who}: instance count")),
            None if ![1, 2, 4, 8].contains(&p.instance_count) => out.push(format!("{who}: instance count")),
            _ => {}
        }
        if !region.zones.contains(&p.zone) {
            out.push(format!("{who}: zone {}", p.zone));
        }
        if s.group && !group_zones.insert((w.region_str(o.region), p.zone.clone())) {
            out.push(format!("{who}: anti-affinity zone {}", p.zone));
        }
    }
    for s in &job.stages {
        if per_stage.get(s.id.as_str()).copied().unwrap_or(0) != s.trials {
            out.push(format!("{}: replica count", s.id));
        }
    }
    out
}

struct Instance {
    world: World,
    job: GJob,
    spec: JobSpec,
    catalog: Catalog,
    plan: Option<PhysicalPlan<f64>>,
    best_outside_bounds: Option<PhysicalPlan<f64>>,
}

struct Suite {
    instances: Vec<Instance>,
    compared: usize,
    solved: usize,
    bounded: usize,
    infeasible: usize,
    redrawn: usize,
    elapsed: Duration,
    mismatches: Vec<String>,
}

fn outcome_key(r: &Result<PhysicalPlan<f64>, OptimizeError<f64>>) -> &'static str {
    match r {
        Ok(_) => "plan",
        Err(OptimizeError::Infeasible(_)) => "infeasible",
        Err(OptimizeError::NoPlanWithinBounds { .. }) => "bounds",
        Err(OptimizeError::TooLarge { .. }) => "too_large",
        Err(OptimizeError::Job(_)) => "job",
    }
}

fn random_suite() -> Suite {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20211);
    let mut suite = Suite {
        instances: Vec::new(),
        compared: 0,
        solved: 0,
        bounded: 0,
        infeasible: 0,
        redrawn: 0,
        elapsed: Duration::ZERO,
        mismatches: Vec::new(),
    };
    let config = OptimizerConfig::default();
    while suite.solved < ORACLE_INSTANCES && suite.compared < 20 * ORACLE_INSTANCES {
        let n_offerings = rng.random_range(1..=8);
        let world = World::generate(&mut rng, 3, 2, 6, n_offerings);
        let catalog = world.catalog();
        let job = generate_job(&mut rng, &world, &format!("j{}", suite.compared));
        let spec = JobSpec::from_json(&job.doc.to_string()).expect("generated job is valid");
        let too_many = spec
            .stages()
            .iter()
            .any(|s| catalog.eligible_offerings(&s.requirement).len() > MAX_OFFERINGS_PER_STAGE);
        let space = assignment_space(&spec, &catalog, &Exclusions::new()).unwrap_or(0);
        if too_many || space > MAX_SPACE {
            suite.redrawn += 1;
            continue;
        }
        suite.compared += 1;
        let fast = optimize::<f64>(&spec, &catalog, &Exclusions::new(), &config);
        let brute = brute_force_optimize::<f64>(&spec, &catalog, &Exclusions::new(), TransferOptions::default());
        let mut inst = Instance {
            world,
            job,
            spec,
            catalog,
            plan: None,
            best_outside_bounds: None,
        };
        let tag = format!("instance {}", suite.compared);
        match (fast, brute) {
            (Ok(a), Ok(b)) => {
                suite.solved += 1;
                if a.objective_value() != b.objective_value() {
                    suite.mismatches.push(format!(
                        "{tag}: objective {} vs oracle {}",
                        a.objective_value(),
                        b.objective_value()
                    ));
                } else if a.placements != b.placements {
                    suite.mismatches.push(format!("{tag}: placements {} vs oracle {}", a.label(), b.label()));
                }
                inst.plan = Some(a);
            }
            (
                Err(OptimizeError::NoPlanWithinBounds { best: a, .. }),
                Err(OptimizeError::NoPlanWithinBounds { best: b, .. }),
            ) => {
                suite.bounded += 1;
                if a.placements != b.placements || a.objective_value() != b.objective_value() {
                    suite.mismatches.push(format!("{tag}: best outside bounds {} vs oracle {}", a.label(), b.label()));
                }
                inst.best_outside_bounds = Some(*a);
            }
            (Err(OptimizeError::Infeasible(_)), Err(OptimizeError::Infeasible(_))) => suite.infeasible += 1,
            (a, b) => suite
                .mismatches
                .push(format!("{tag}: outcome {} vs oracle {}", outcome_key(&a), outcome_key(&b))),
        }
        suite.instances.push(inst);
    }
    suite.elapsed = start.elapsed();
    suite
}

fn criterion_1() -> Result<String, String> {
    let catalog = fixture("skypilot-2021.catalog");
    let job = fixture("inset-b.job");
    let start = Instant::now();
    let out = sky(&[
        "--catalog",
        catalog.to_str().unwrap(),
        "plan",
        job.to_str().unwrap(),
        "--objective",
        "min_cost",
        "--explain",
    ]);
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!("sky plan exited {:?}", out.status.code()));
    }
    let plan: PhysicalPlan<f64> = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let table = String::from_utf8_lossy(&out.stderr).to_string();
    let chosen: Vec<String> = plan.placements.iter().map(|p| p.offering.to_string()).collect();
    let want = ["azure/eastus/dc8-sgx", "gcp/us-central1/tpu-v3-8", "aws/us-east-1/inf1.xlarge"];
    if chosen != want {
        return Err(format!("placements {chosen:?}"));
    }
    let m = &plan.metrics;
    if !within(m.total_cost_usd, PIPELINE_COST_USD, PIPELINE_COST_TOL) {
        return Err(format!("cost {}", m.total_cost_usd));
    }
    if !within(m.makespan_hours, PIPELINE_MAKESPAN_H, PIPELINE_MAKESPAN_TOL) {
        return Err(format!("makespan {}", m.makespan_hours));
    }
    let line = table
        .lines()
        .find(|l| l.starts_with("savings vs azure:"))
        .ok_or("explain table lacks a savings line against azure")?;
    let pct = |key: &str| -> Result<i64, String> {
        let rest = line.split(key).nth(1).ok_or(format!("no {key} in {line:?}"))?;
        rest.trim_start()
            .split('%')
            .next()
            .and_then(|n| n.trim().parse().ok())
            .ok_or(format!("bad {key} in {line:?}"))
    };
    let (time_pct, cost_pct) = (pct("time")?, pct("cost")?);
    if (cost_pct - PIPELINE_COST_SAVINGS).abs() > SAVINGS_TOL_PTS || (time_pct - PIPELINE_TIME_SAVINGS).abs() > SAVINGS_TOL_PTS {
        return Err(format!("savings time {time_pct}% cost {cost_pct}%"));
    }
    let c = load_catalog(&catalog).unwrap();
    let j = parse_job(&job).unwrap();
    let (cloud, base) = single_cloud_baseline::<f64>(&j, &c, &OptimizerConfig::default()).ok_or("no baseline")?;
    if cloud != "azure"
        || !within(base.metrics.total_cost_usd, BASELINE_COST_USD, PIPELINE_COST_TOL)
        || !within(base.metrics.makespan_hours, BASELINE_MAKESPAN_H, PIPELINE_MAKESPAN_TOL)
    {
        return Err(format!(
            "baseline {cloud} ${} / {} h",
            base.metrics.total_cost_usd, base.metrics.makespan_hours
        ));
    }
    if savings_percent(&base.metrics.total_cost_usd, &m.total_cost_usd) != cost_pct {
        return Err("printed cost savings disagree with the baseline".into());
    }
    if elapsed >= PIPELINE_RUNTIME {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "${:.3} / {:.3} h, savings {cost_pct}% cost {time_pct}% time vs azure ${:.2} / {:.2} h, {:?}",
        m.total_cost_usd, m.makespan_hours, base.metrics.total_cost_usd, base.metrics.makespan_hours, elapsed
    ))
}

fn criterion_2(suite: &Suite) -> Result<String, String> {
    let detail = format!(
        "{} compared ({} with plans, {} only outside bounds, {} infeasible; {} redrawn) in {:?}",
        suite.compared, suite.solved, suite.bounded, suite.infeasible, suite.redrawn, suite.elapsed
    );
    if let Some(m) = suite.mismatches.first() {
        return Err(format!("{} mismatches, first: {m}; {detail}", suite.mismatches.len()));
    }
    if suite.solved < ORACLE_INSTANCES {
        return Err(format!("only {detail}"));
    }
    if suite.elapsed >= ORACLE_RUNTIME {
        return Err(format!("too slow: {detail}"));
    }
    Ok(detail)
}

fn ex(x: f64) -> Exact {
    Exact::of(x)
}

struct Route {
    weight: Exact,
    cost: Exact,
    time: Exact,
}

/// Every simple path with at most `k` intermediate regions, each with and without each profile.
fn exhaustive(w: &World, src: usize, dst: usize, size: f64, weight: &TransferWeight<Exact>, options: TransferOptions) -> Vec<(Vec<usize>, Option<usize>, Route)> {
    let mut paths = Vec::new();
    let mut stack = vec![vec![src]];
    while let Some(p) = stack.pop() {
        let last = *p.last().unwrap();
        for v in 0..w.regions.len() {
            if p.contains(&v) || w.hop(last, v).is_none() {
                continue;
            }
            let mut q = p.clone();
            q.push(v);
            if v == dst {
                paths.push(q);
            } else if q.len() - 1 < options.max_waypoints + 1 {
                stack.push(q);
            }
        }
    }
    let mut out = Vec::new();
    let mut variants = vec![None];
    if options.allow_compression && size > 0.0 {
        variants.extend((0..w.profiles.len()).map(Some));
    }
    for p in paths {
        for &variant in &variants {
            let s = ex(size);
            let (wire, mut cost, mut time) = match variant {
                None => (s.clone(), ex(0.0), ex(0.0)),
                Some(i) => {
                    let pr = &w.profiles[i];
                    (
                        s.clone() * ex(pr.ratio),
                        s.clone() * ex(pr.cost),
                        s.clone() / ex(pr.compress) + s.clone() / ex(pr.decompress),
                    )
                }
            };
            for h in p.windows(2) {
                let (price, bw) = w.hop(h[0], h[1]).unwrap();
                cost += ex(price) * wire.clone();
                time += wire.clone() / ex(bw);
            }
            let weight = weight.cost.clone() * cost.clone() + weight.time.clone() * time.clone();
            out.push((p.clone(), variant, Route { weight, cost, time }));
        }
    }
    out
}

fn criterion_3() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut checked, mut unroutable, mut waypoint_wins, mut peered_hops) = (0, 0, 0, 0);
    for _ in 0..TRANSFER_WORLDS {
        let w = World::generate(&mut rng, 4, 3, MAX_REGIONS, 1);
        let catalog = w.catalog();
        for _ in 0..TRANSFER_PAIRS_PER_WORLD {
            let src = rng.random_range(0..w.regions.len());
            let dst = rng.random_range(0..w.regions.len());
            let size = if rng.random_bool(0.1) { 0.0 } else { steps(&mut rng, 1, 400, 4.0) };
            let (wc, wt) = match rng.random_range(0..3) {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                _ => (steps(&mut rng, 0, 8, 4.0), steps(&mut rng, 1, 8, 4.0)),
            };
            let k = rng.random_range(0..=3);
            let allow = rng.random_bool(0.6);
            let weight = TransferWeight::<Exact> { cost: ex(wc), time: ex(wt) };
            let options = TransferOptions { max_waypoints: k, allow_compression: allow };
            let got = plan_transfer(&catalog, &w.region_ref(src), &w.region_ref(dst), ex(size), &weight, options);
            let case = format!("{} -> {} size {size} k {k}", w.region_str(src), w.region_str(dst));
            if src == dst {
                let p = got.map_err(|e| format!("{case}: {e}"))?;
                if p.hops() != 0 || p.cost_usd != ex(0.0) {
                    return Err(format!("{case}: colocated transfer not free"));
                }
                checked += 1;
                continue;
            }
            let routes = exhaustive(&w, src, dst, size, &weight, options);
            let Some(best) = routes.iter().map(|r| &r.2.weight).min() else {
                match got {
                    Err(TransferError::NoRoute(_)) => {
                        unroutable += 1;
                        continue;
                    }
                    other => return Err(format!("{case}: oracle finds no route, got {other:?}")),
                }
            };
            let p = got.map_err(|e| format!("{case}: {e}"))?;
            let path: Vec<usize> = p.path.iter().map(|r| w.region_index(r)).collect();
            let variant = p
                .compression
                .as_ref()
                .map(|c| w.profiles.iter().position(|pr| pr.name == c.profile).unwrap());
            let Some((_, _, own)) = routes.iter().find(|(rp, rv, _)| *rp == path && *rv == variant) else {
                return Err(format!("{case}: plan path {path:?} is not an admissible route"));
            };
            if own.cost != p.cost_usd || own.time != p.time_hours {
                return Err(format!("{case}: reported cost/time differ from the route's tariff"));
            }
            if own.weight != *best {
                return Err(format!("{case}: weight {} vs exhaustive {}", own.weight, best));
            }
            if let Some(direct) = routes.iter().find(|(rp, rv, _)| rp.len() == 2 && rv.is_none()) {
                if own.weight > direct.2.weight {
                    return Err(format!("{case}: worse than the direct route"));
                }
                if own.weight < direct.2.weight && path.len() > 2 {
                    waypoint_wins += 1;
                }
            }
            for h in path.windows(2) {
                if w.links.iter().any(|l| l.src == h[0] && l.dst == h[1] && l.peered) {
                    peered_hops += 1;
                    let one = sky_core::transfer::transfer_cost(&catalog, &[w.region_ref(h[0]), w.region_ref(h[1])], &ex(size), None)
                        .map_err(|e| e.to_string())?;
                    if one != ex(0.0) {
                        return Err(format!("{case}: peered hop billed {one}"));
                    }
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} routed cases equal exhaustive enumeration, {unroutable} unroutable agreed, \
{waypoint_wins} strictly better via waypoints, {peered_hops} peered hops billed $0"
    ))
}

fn criterion_4(suite: &Suite) -> Result<String, String> {
    let mut plans = 0;
    let mut bad = Vec::new();
    for inst in &suite.instances {
        for p in inst.plan.iter().chain(inst.best_outside_bounds.iter()) {
            plans += 1;
            bad.extend(violations(&inst.world, &inst.job, p).into_iter().map(|v| format!("{}: {v}", p.job_id)));
        }
    }
    if let Some(b) = bad.first() {
        return Err(format!("{} violations in {plans} plans, first: {b}", bad.len()));
    }
    let constrained = suite
        .instances
        .iter()
        .filter(|i| i.plan.is_some())
        .filter(|i| i.job.stages.iter().any(|s| s.countries.is_some() || s.sovereign || s.pin.is_some() || s.group))
        .count();
    Ok(format!("{plans} plans re-validated, {constrained} with location constraints, 0 violations"))
}

fn criterion_5() -> Result<String, String> {
    let catalog = load_catalog(fixture("skypilot-2021.catalog")).unwrap();
    let job = parse_job(fixture("inset-b.job")).unwrap();
    let tpu = "gcp/us-central1/tpu-v3-8".parse().unwrap();
    let mut capacity = CapacityState::from_catalog(&catalog);
    capacity.set_available(&tpu, 0).unwrap();
    let initial = capacity.clone();
    let trace = run_broker::<f64>(&job, &catalog, &mut capacity, &FaultModel::none(), &BrokerOptions::default())
        .map_err(|e| e.to_string())?;
    let fails = trace.count(|e| matches!(e, TraceEvent::ProvisionFail { .. }));
    let replans = trace.count(|e| matches!(e, TraceEvent::Replan { .. }));
    if fails == 0 || replans == 0 {
        return Err(format!("{fails} ProvisionFail, {replans} Replan"));
    }
    let mut doc = catalog.to_document();
    doc.offerings.retain(|o| !(o.region == "gcp/us-central1" && o.instance_label == "tpu-v3-8"));
    let without = Catalog::from_document(doc).map_err(|e| e.to_string())?;
    let oracle = brute_force_optimize::<f64>(&job, &without, &Exclusions::new(), TransferOptions::default())
        .map_err(|e| e.to_string())?;
    let last = trace.final_plan().ok_or("no final plan")?;
    if last.metrics.total_cost_usd != oracle.metrics.total_cost_usd || last.placements != oracle.placements {
        return Err(format!("final {} ${} vs oracle {} ${}", last.label(), last.metrics.total_cost_usd, oracle.label(), oracle.metrics.total_cost_usd));
    }
    if trace.actual_cost_usd != oracle.metrics.total_cost_usd || capacity != initial {
        return Err("run cost or released capacity disagree".into());
    }
    let chosen: Vec<String> = last.placements.iter().map(|p| p.offering.instance_label.clone()).collect();
    Ok(format!(
        "{fails} ProvisionFail + {replans} Replan, final plan {} at ${:.4} equals oracle",
        chosen.join(" -> "),
        last.metrics.total_cost_usd
    ))
}

fn criterion_6() -> Result<String, String> {
    let dir = std::env::temp_dir().join(format!("sky-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let catalog = fixture("skypilot-2021.catalog");
    let job = fixture("inset-b.job");
    let mut faulted = 0;
    let rates = ["0", "0.15", "0.6"];
    for rate in rates {
        let mut first: Option<(Vec<u8>, Vec<u8>, Option<i32>)> = None;
        for i in 0..DETERMINISM_REPEATS {
            let trace = dir.join(format!("trace-{rate}-{i}.jsonl"));
            let out = sky(&[
                "--catalog",
                catalog.to_str().unwrap(),
                "run",
                job.to_str().unwrap(),
                "--seed",
                "1234",
                "--fault-rate",
                rate,
                "--max-retries",
                "4",
                "--trace-out",
                trace.to_str().unwrap(),
            ]);
            let got = (std::fs::read(&trace).map_err(|e| e.to_string())?, out.stdout, out.status.code());
            match &first {
                None => first = Some(got),
                Some(f) if *f != got => return Err(format!("fault rate {rate}: run {i} differs from run 0")),
                _ => {}
            }
        }
        let (log, _, _) = first.unwrap();
        if String::from_utf8_lossy(&log).contains(r#""event":"stage_fail""#) {
            faulted += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    if faulted == 0 {
        return Err("no run observed a stage failure".into());
    }
    Ok(format!(
        "{} fault rates x {DETERMINISM_REPEATS} runs byte-identical (trace and invoice), {faulted} with stage failures",
        rates.len()
    ))
}

fn criterion_7(suite: &Suite) -> Result<String, String> {
    let mut exact_checked = 0;
    let mut faulted_checked = 0;
    let config = OptimizerConfig::default();
    for (n, inst) in suite.instances.iter().filter(|i| i.plan.is_some()).take(FIDELITY_INSTANCES).enumerate() {
        let plan = optimize::<Exact>(&inst.spec, &inst.catalog, &Exclusions::new(), &config).map_err(|e| e.to_string())?;
        let t = simulate(&plan, &Allocation::default(), &FaultModel::none(), &inst.spec, &inst.catalog)
            .map_err(|e| e.to_string())?;
        if t.actual_cost_usd != plan.metrics.total_cost_usd || t.actual_makespan_hours != plan.metrics.makespan_hours {
            return Err(format!("{}: zero-fault run drifts from plan", plan.job_id));
        }
        if invoice(&t, 0.0).items_total() != t.actual_cost_usd {
            return Err(format!("{}: invoice != actual cost", plan.job_id));
        }
        let fplan = inst.plan.as_ref().unwrap();
        let ft = simulate(fplan, &Allocation::default(), &FaultModel::none(), &inst.spec, &inst.catalog)
            .map_err(|e| e.to_string())?;
        if ft.actual_cost_usd != fplan.metrics.total_cost_usd || ft.actual_makespan_hours != fplan.metrics.makespan_hours {
            return Err(format!("{}: f64 zero-fault run drifts from plan", plan.job_id));
        }
        exact_checked += 1;

        let faults = FaultModel::with_rate(0.3, n as u64, 2);
        let trace = match simulate(&plan, &Allocation::default(), &faults, &inst.spec, &inst.catalog) {
            Ok(t) => t,
            Err(f) => *f.trace,
        };
        if invoice(&trace, 0.0).items_total() != trace.actual_cost_usd {
            return Err(format!("{}: faulted invoice != actual cost", plan.job_id));
        }
        let ftrace = match simulate(fplan, &Allocation::default(), &faults, &inst.spec, &inst.catalog) {
            Ok(t) => t,
            Err(f) => *f.trace,
        };
        let total = invoice(&ftrace, 0.0).items_total();
        if (total - ftrace.actual_cost_usd).abs() > INVOICE_F64_REL_TOL * ftrace.actual_cost_usd.abs().max(1.0) {
            return Err(format!("{}: f64 faulted invoice drifts", plan.job_id));
        }
        if trace.count(|e| matches!(e, TraceEvent::StageFail { .. })) > 0 {
            faulted_checked += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut jobs_run = 0;
    for q in 0..QUEUE_TRIALS {
        let n_offerings = rng.random_range(1..=6);
        let world = World::generate(&mut rng, 3, 2, 6, n_offerings);
        let catalog = world.catalog();
        let mut capacity = CapacityState::from_catalog(&catalog);
        for o in catalog.offerings() {
            capacity.set_available(&o.id(), rng.random_range(0..=8)).unwrap();
        }
        let initial = capacity.clone();
        let mut queue = BrokerQueue::<f64>::new(capacity);
        for j in 0..rng.random_range(1..=4) {
            let g = generate_job(&mut rng, &world, &format!("q{q}-{j}"));
            let spec = JobSpec::from_json(&g.doc.to_string()).unwrap();
            if assignment_space(&spec, &catalog, &Exclusions::new()).unwrap_or(0) > MAX_SPACE {
                continue;
            }
            queue_submit(&mut queue, spec);
            jobs_run += 1;
        }
        let faults = FaultModel::with_rate(0.2, q as u64, 1);
        for r in queue_drain(&mut queue, &catalog, &faults, &BrokerOptions::default()) {
            if let Some(t) = r.result.as_ref().ok().or_else(|| r.result.as_ref().err().and_then(|e| e.trace())) {
                let total = invoice(t, 0.0).items_total();
                if (total - t.actual_cost_usd).abs() > INVOICE_F64_REL_TOL * t.actual_cost_usd.abs().max(1.0) {
                    return Err(format!("{}: queued invoice drifts", r.job_id));
                }
            }
        }
        if queue.capacity() != &initial {
            return Err(format!("queue {q}: capacity not restored"));
        }
    }
    Ok(format!(
        "{exact_checked} plans reproduced exactly (Exact and f64), {faulted_checked} faulted invoices exact, \
{QUEUE_TRIALS} queues ({jobs_run} jobs) restored capacity"
    ))
}

fn crossover_job(n: u32) -> JobSpec {
    let size = n as f64;
    JobSpec::from_json(
        &json!({
            "id": format!("crossover-n{n}"),
            "datasets": [{"id": "input", "location": "local/site", "size_gb": size, "allow_compression": false}],
            "stages": [{"id": "solve", "requirement": {"service": {"name": "compute"}},
                        "work": CROSSOVER_WORK_PER_GB2 * size * size, "inputs": ["input"]}],
            "objective": {"mode": "min_time"},
        })
        .to_string(),
    )
    .unwrap()
}

fn criterion_8() -> Result<String, String> {
    let catalog = load_catalog(fixture("crossover.catalog")).unwrap();
    let local = catalog.offerings().iter().find(|o| o.cloud() == "local").unwrap();
    let remote = catalog.offerings().iter().find(|o| o.cloud() == "remote").unwrap();
    let link = catalog.link(&local.region, &remote.region).ok_or("no link")?;
    let analytic = 1.0 / (link.bandwidth_gb_per_hour * CROSSOVER_WORK_PER_GB2 * (1.0 / local.speed - 1.0 / remote.speed));

    let fixture_job = parse_job(fixture("crossover.job")).unwrap();
    let d = &fixture_job.datasets()[0];
    if fixture_job.stages()[0].work != CROSSOVER_WORK_PER_GB2 * d.size_gb * d.size_gb {
        return Err("crossover.job does not follow the quadratic work law".into());
    }

    let config = OptimizerConfig {
        transfer: TransferOptions { allow_compression: false, ..TransferOptions::default() },
        ..OptimizerConfig::default()
    };
    let mut chosen = Vec::new();
    for n in CROSSOVER_GRID {
        let plan = optimize::<f64>(&crossover_job(n), &catalog, &Exclusions::new(), &config).map_err(|e| e.to_string())?;
        chosen.push((n, plan.placements[0].cloud() == "remote"));
    }
    let first = chosen.iter().find(|c| c.1).map(|c| c.0).ok_or("never switches to remote")?;
    if chosen.iter().any(|&(n, r)| (n >= first) != r) {
        return Err("placement flips more than once across the grid".into());
    }
    let fixture_plan = optimize::<f64>(&fixture_job, &catalog, &Exclusions::new(), &config).map_err(|e| e.to_string())?;
    if (d.size_gb > analytic) != (fixture_plan.placements[0].cloud() == "remote") {
        return Err("fixture job lands on the wrong side of the crossover".into());
    }
    if (first as f64 - analytic).abs() > CROSSOVER_TOL_STEPS {
        return Err(format!("measured n* {first} vs analytic {analytic}"));
    }
    Ok(format!("measured switch at n = {first} GB, analytic n* = {analytic} (grid step 1)"))
}

fn main() -> ExitCode {
    let suite = std::sync::OnceLock::new();
    let suite = || suite.get_or_init(random_suite);
    type Check<'a> = Box<dyn Fn() -> Result<String, String> + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("1 three-cloud pipeline reproduction", Box::new(criterion_1)),
        ("2 oracle equivalence", Box::new(|| criterion_2(suite()))),
        ("3 transfer optimality", Box::new(criterion_3)),
        ("4 constraint soundness", Box::new(|| criterion_4(suite()))),
        ("5 replan loop", Box::new(criterion_5)),
        ("6 determinism", Box::new(criterion_6)),
        ("7 fidelity and conservation", Box::new(|| criterion_7(suite()))),
        ("8 superlinear crossover", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

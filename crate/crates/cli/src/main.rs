//! `sky`: plan and simulate jobs across clouds from a declarative catalog.

mod config;
mod explain;
mod select;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sky_core::catalog::{load_catalog, Catalog, CatalogError, PriceTier};
use sky_core::jobspec::{parse_job, JobError, JobSpec, Objective, ObjectiveMode};
use sky_core::optimizer::{optimize, single_cloud_baseline, Exclusions, OptimizeError, OptimizerConfig};
use sky_core::runtime::{invoice, run_broker, BrokerError, BrokerOptions, CapacityState, FaultModel};
use sky_core::transfer::TransferOptions;

use config::{BrokerConfig, ConfigError};
use select::{CapacityOverride, Selector};

#[derive(Parser)]
#[command(
    name = "sky",
    version,
    about = "Intercloud broker: validate, plan and simulate jobs over a cloud catalog",
    after_help = "Exit codes: 0 ok, 1 I/O error, 2 invalid input, 3 simulated stage failure, 4 no feasible or executable plan."
)]
struct Cli {
    /// Catalog file; overrides the config file's `catalog`.
    #[arg(long, global = true, value_name = "PATH")]
    catalog: Option<PathBuf>,
    /// Broker config (TOML).
    #[arg(long, global = true, value_name = "PATH", env = "SKY_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the catalog and, if given, a job against it.
    Validate {
        job: Option<PathBuf>,
    },
    /// Compute the best placement and print it as JSON.
    Plan {
        job: PathBuf,
        #[command(flatten)]
        planning: Planning,
        /// Forbid offerings, `[STAGE@]CLOUD[:REGION]:LABEL` with LABEL a prefix. Repeatable.
        #[arg(long, value_name = "SELECTOR")]
        exclude: Vec<Selector>,
        /// Print a time/cost table against the best single-cloud plan to stderr.
        #[arg(long)]
        explain: bool,
    },
    /// Provision and simulate a job; prints the invoice as JSON.
    Run {
        job: PathBuf,
        #[command(flatten)]
        planning: Planning,
        /// Seed for failure sampling and local search.
        #[arg(long)]
        seed: Option<u64>,
        /// Failures per simulated hour for every placement.
        #[arg(long, default_value_t = 0.0)]
        fault_rate: f64,
        /// Retries per unit before the run fails.
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        /// Available instances for matching offerings, `CLOUD[:REGION]:LABEL=N`. Repeatable.
        #[arg(long, value_name = "SELECTOR=N")]
        capacity: Vec<CapacityOverride>,
        /// Write the event log here, one JSON object per line.
        #[arg(long, value_name = "PATH")]
        trace_out: Option<PathBuf>,
    },
    /// Inspect the catalog.
    Catalog {
        #[command(subcommand)]
        what: CatalogCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Services offered by more than one cloud, then those offered by one.
    Compat,
    /// Every offering with its prices.
    Show,
}

#[derive(Args)]
struct Planning {
    /// Overrides the job's objective mode: min_cost, min_time or weighted.
    #[arg(long)]
    objective: Option<ObjectiveMode>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

const IO: u8 = 1;
const INVALID: u8 = 2;
const SIM_FAILURE: u8 = 3;
const NO_PLAN: u8 = 4;

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } => fail(IO, e),
            _ => fail(INVALID, e),
        }
    }
}

impl From<JobError> for Failure {
    fn from(e: JobError) -> Self {
        match e {
            JobError::Io { .. } => fail(IO, e),
            _ => fail(INVALID, e),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(m) => fail(IO, m),
            ConfigError::Invalid(m) => fail(INVALID, m),
        }
    }
}

impl From<OptimizeError<f64>> for Failure {
    fn from(e: OptimizeError<f64>) -> Self {
        match e {
            OptimizeError::Job(j) => j.into(),
            other => fail(NO_PLAN, other),
        }
    }
}

struct Setup {
    config: BrokerConfig,
    catalog: Catalog,
}

fn setup(cli: &Cli) -> Result<Setup, Failure> {
    let config = match &cli.config {
        Some(p) => BrokerConfig::load(p)?,
        None => BrokerConfig::default(),
    };
    let path = cli
        .catalog
        .clone()
        .or_else(|| config.catalog.clone())
        .ok_or_else(|| fail(INVALID, "no catalog: pass --catalog or set `catalog` in the config file"))?;
    let catalog = load_catalog(&path)?;
    Ok(Setup { config, catalog })
}

fn optimizer_config(config: &BrokerConfig, seed: u64) -> OptimizerConfig {
    let defaults = OptimizerConfig::default();
    OptimizerConfig {
        exact_bound: config.exact_bound.unwrap_or(defaults.exact_bound),
        transfer: TransferOptions {
            max_waypoints: config.max_waypoints.unwrap_or(defaults.transfer.max_waypoints),
            ..defaults.transfer
        },
        seed,
        ..defaults
    }
}

fn load_job(path: &Path, planning: &Planning, exclude: &[Selector], s: &Setup) -> Result<(JobSpec, Exclusions), Failure> {
    let job = parse_job(path)?;
    job.check_against(&s.catalog)?;
    let mode = match planning.objective {
        Some(m) => Some(m),
        None => s.config.objective_mode().map_err(|m| fail(INVALID, m))?,
    };
    let job = match mode {
        Some(mode) if mode != job.objective().mode => job.with_objective(Objective {
            mode,
            ..job.objective().clone()
        })?,
        _ => job,
    };
    let mut excluded = Exclusions::new();
    for sel in exclude {
        if let Some(stage) = &sel.stage {
            if job.stage(stage).is_none() {
                return Err(fail(INVALID, format!("selector {sel} names unknown stage {stage:?}")));
            }
        }
        for o in sel.resolve(&s.catalog).map_err(|m| fail(INVALID, m))? {
            for st in job.stages() {
                if sel.stage.as_ref().is_none_or(|name| *name == st.id) {
                    excluded.insert((st.id.clone(), o.clone()));
                }
            }
        }
    }
    Ok((job, excluded))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents serialize")
}

fn cmd_validate(s: &Setup, job: Option<&Path>) -> Result<(), Failure> {
    let c = &s.catalog;
    println!(
        "catalog ok: {} clouds, {} regions, {} offerings",
        c.clouds().len(),
        c.regions().len(),
        c.offerings().len()
    );
    if let Some(path) = job {
        let job = parse_job(path)?;
        job.check_against(c)?;
        println!(
            "job {} ok: {} stages, {} edges, {} datasets",
            job.id(),
            job.stages().len(),
            job.edges().len(),
            job.datasets().len()
        );
    }
    Ok(())
}

fn cmd_plan(s: &Setup, path: &Path, planning: &Planning, exclude: &[Selector], explain: bool) -> Result<(), Failure> {
    let (job, excluded) = load_job(path, planning, exclude, s)?;
    let config = optimizer_config(&s.config, s.config.seed.unwrap_or(0));
    let plan = match optimize::<f64>(&job, &s.catalog, &excluded, &config) {
        Ok(p) => p,
        Err(OptimizeError::NoPlanWithinBounds { best, best_cost_usd, best_makespan_hours }) => {
            println!("{}", json(&*best));
            return Err(fail(
                NO_PLAN,
                format!(
                    "no plan meets the deadline or budget; printed the best plan (${best_cost_usd:.4}, {best_makespan_hours:.4} h)"
                ),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    if explain {
        let baseline = single_cloud_baseline::<f64>(&job, &s.catalog, &config);
        eprint!("{}", explain::explain(&plan, baseline.as_ref()));
    }
    println!("{}", json(&plan));
    Ok(())
}

struct RunArgs<'a> {
    seed: Option<u64>,
    fault_rate: f64,
    max_retries: u32,
    capacity: &'a [CapacityOverride],
    trace_out: Option<&'a Path>,
}

fn cmd_run(s: &Setup, path: &Path, planning: &Planning, args: RunArgs) -> Result<(), Failure> {
    let (job, _) = load_job(path, planning, &[], s)?;
    let seed = args.seed.or(s.config.seed).unwrap_or(0);
    let mut capacity = CapacityState::from_catalog(&s.catalog);
    for o in args.capacity {
        for r in o.selector.resolve(&s.catalog).map_err(|m| fail(INVALID, m))? {
            capacity.set_available(&r, o.available).map_err(|e| fail(INVALID, e))?;
        }
    }
    let faults = FaultModel::with_rate(args.fault_rate, seed, args.max_retries);
    let options = BrokerOptions {
        optimizer: optimizer_config(&s.config, seed),
        max_replans: s.config.max_replans.unwrap_or(BrokerOptions::default().max_replans),
        credentials: s.config.credentials.clone(),
    };
    let result = run_broker::<f64>(&job, &s.catalog, &mut capacity, &faults, &options);
    let (trace, failure) = match &result {
        Ok(t) => (Some(t), None),
        Err(e) => {
            let code = match e {
                BrokerError::SimFailure(_) => SIM_FAILURE,
                BrokerError::Exhausted { .. } => NO_PLAN,
                BrokerError::Job(_) | BrokerError::Faults(_) => INVALID,
            };
            (e.trace(), Some(fail(code, e)))
        }
    };
    if let Some(trace) = trace {
        if let Some(out) = args.trace_out {
            std::fs::write(out, trace.to_jsonl()).map_err(|e| fail(IO, format!("{}: {e}", out.display())))?;
        }
        println!("{}", json(&invoice(trace, s.config.fee_percent.unwrap_or(0.0))));
    }
    failure.map_or(Ok(()), Err)
}

fn cmd_catalog(s: &Setup, what: &CatalogCommand) {
    let c = &s.catalog;
    match what {
        CatalogCommand::Compat => {
            let clouds_of = |id: &sky_core::catalog::ServiceId| {
                let mut v: Vec<&str> = c.offerings().iter().filter(|o| &o.service == id).map(|o| o.cloud()).collect();
                v.sort();
                v.dedup();
                v.join(",")
            };
            println!("compatibility set:");
            for id in c.compatibility_set() {
                println!("  {id}  [{}]", clouds_of(&id));
            }
            println!("proprietary set:");
            for id in c.proprietary_set() {
                println!("  {id}  [{}]", clouds_of(&id));
            }
        }
        CatalogCommand::Show => {
            println!(
                "{:<36} {:<20} {:>10} {:>10} {:>10} {:>8} {:>8}  capabilities",
                "offering", "service", "on_demand", "spot", "reserved", "speed", "capacity"
            );
            let price = |o: &sky_core::catalog::Offering, t| o.price(t).map(|p: f64| format!("{p:.4}")).unwrap_or_else(|| "-".into());
            for o in c.offerings() {
                println!(
                    "{:<36} {:<20} {:>10} {:>10} {:>10} {:>8} {:>8}  {}",
                    o.id().to_string(),
                    o.service.to_string(),
                    price(o, PriceTier::OnDemand),
                    price(o, PriceTier::Spot),
                    price(o, PriceTier::Reserved),
                    o.speed,
                    o.capacity,
                    o.capabilities.iter().cloned().collect::<Vec<_>>().join(",")
                );
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let s = setup(cli)?;
    match &cli.command {
        Command::Validate { job } => cmd_validate(&s, job.as_deref()),
        Command::Plan {
            job,
            planning,
            exclude,
            explain,
        } => cmd_plan(&s, job, planning, exclude, *explain),
        Command::Run {
            job,
            planning,
            seed,
            fault_rate,
            max_retries,
            capacity,
            trace_out,
        } => cmd_run(
            &s,
            job,
            planning,
            RunArgs {
                seed: *seed,
                fault_rate: *fault_rate,
                max_retries: *max_retries,
                capacity,
                trace_out: trace_out.as_deref(),
            },
        ),
        Command::Catalog { what } => {
            cmd_catalog(&s, what);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

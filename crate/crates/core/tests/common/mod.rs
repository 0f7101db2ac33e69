#![allow(dead_code)]

use std::path::PathBuf;

use sky_core::catalog::{load_catalog, Catalog};
use sky_core::jobspec::{parse_job, JobSpec};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn catalog(name: &str) -> Catalog {
    load_catalog(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn job(name: &str) -> JobSpec {
    parse_job(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

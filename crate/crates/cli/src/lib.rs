//! Experiment driver for the tube heat-flow checks: configuration,
//! suites, reports and plots.

pub mod config;
pub mod report;
pub mod suites;
pub mod svg;

use std::fs;
use std::io;
use std::path::Path;

use config::{ExperimentConfig, Suite};
use report::{summary_json, ReportRecord};
use suites::{run_suite, NumericalFailure, SuiteOutput};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Runs the suites in order and stops at the first numerical failure.
pub fn run_suites(cfg: &ExperimentConfig, suites: &[Suite]) -> Result<Vec<SuiteOutput>, NumericalFailure> {
    suites.iter().map(|&s| run_suite(cfg, s)).collect()
}

/// Writes every suite artifact and `report.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outputs: &[SuiteOutput]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for out in outputs {
        for (name, bytes) in &out.files {
            fs::write(dir.join(name), bytes)?;
        }
    }
    let records: Vec<ReportRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    fs::write(dir.join("report.json"), summary_json(&cfg.hash(), &records))
}

//! Runs the wide-area damping pipeline end to end and exposes each stage
//! with file-based inputs and outputs.
//!
//! The numerical work lives in [`wac_core`]; this crate adds configuration,
//! CSV/JSON formats, wall-clock timing and the online loop that regroups
//! machines when a disturbance is detected.

pub mod config;
pub mod error;
pub mod io;
pub mod json;
pub mod pipeline;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{Error, Result, Stage};
pub use pipeline::{run_pipeline, PipelineRun, RunReport, Scenario};

use std::time::Instant;

use wac_core::clock::Clock;

/// Wall clock measured from construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

//! Pipeline configuration. Every field has a default, so `{}` is a valid
//! config file and any subset of fields may be given.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wac_core::coherency::{DistanceForm, GroupingParams, Sigma};
use wac_core::modal::{DEFAULT_REDUCE_THRESHOLD, DEFAULT_REJECT_BELOW, INTER_AREA_BAND};
use wac_core::sysid::IdentifyOptions;
use wac_core::wac::{ControllerTuning, LQR_MAX_ITER, LQR_TOL};

use crate::error::{Error, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Unsquared,
    Squared,
}

impl From<Distance> for DistanceForm {
    fn from(d: Distance) -> Self {
        match d {
            Distance::Unsquared => DistanceForm::Unsquared,
            Distance::Squared => DistanceForm::Squared,
        }
    }
}

/// PRBS commissioning test, one control channel at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// pu on the control channel.
    pub amplitude: f64,
    /// Samples per PRBS chip.
    pub chip: usize,
    pub seconds_per_channel: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            amplitude: 0.02,
            chip: 10,
            seconds_per_channel: 30.0,
        }
    }
}

/// RMS trigger that starts a regrouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Largest per-machine RMS of Δω (pu) that counts as quiet.
    pub threshold: f64,
    /// Samples between checks.
    pub check_every: usize,
    /// Samples in each check window.
    pub check_window: usize,
    /// After firing, the trigger re-arms once a check window falls below
    /// this fraction of the threshold.
    pub rearm_fraction: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            threshold: 3e-4,
            check_every: 10,
            check_window: 50,
            rearm_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Plant and measurement sample period (s).
    pub ts: f64,
    /// Plant samples per controller and identification sample.
    pub decimation: usize,
    /// Ring buffer length in samples.
    pub buffer: usize,
    /// Post-disturbance samples used for regrouping.
    pub window_len: usize,
    /// Nyström landmarks; `null` uses every machine.
    pub landmarks: Option<usize>,
    /// Kernel width; `null` picks the median heuristic.
    pub sigma: Option<f64>,
    pub distance: Distance,
    pub k: usize,
    pub probe: ProbeConfig,
    pub arx_order: usize,
    /// Rows per pair used by identification; `null` uses all.
    pub n_obs: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub anderson: usize,
    pub band: [f64; 2],
    pub reduce_threshold: f64,
    pub reject_below: f64,
    pub rho: f64,
    pub q_noise: f64,
    pub r_noise: f64,
    pub u_limit: f64,
    pub trigger: TriggerConfig,
    /// Fraction of the peak that bounds the settled band.
    pub settle_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let id = IdentifyOptions::default();
        let tuning = ControllerTuning::default();
        PipelineConfig {
            ts: 0.01,
            decimation: 10,
            buffer: 6000,
            window_len: 500,
            landmarks: None,
            sigma: None,
            distance: Distance::Unsquared,
            k: 2,
            probe: ProbeConfig::default(),
            arx_order: id.order_k,
            n_obs: id.n_obs,
            tol: id.tol,
            max_iter: id.max_iter,
            anderson: id.anderson,
            band: [INTER_AREA_BAND.0, INTER_AREA_BAND.1],
            reduce_threshold: DEFAULT_REDUCE_THRESHOLD,
            reject_below: DEFAULT_REJECT_BELOW,
            rho: tuning.rho,
            q_noise: tuning.q_noise,
            r_noise: tuning.r_noise,
            u_limit: tuning.u_limit,
            trigger: TriggerConfig::default(),
            settle_fraction: 0.05,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(Stage::Config, m));
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("ts must be positive");
        }
        if self.decimation == 0 || self.k == 0 || self.arx_order == 0 {
            return bad("decimation, k and arx_order must be at least 1");
        }
        if self.window_len < 2 {
            return bad("window_len must be at least 2");
        }
        if self.trigger.check_every == 0 || self.trigger.check_window < 2 {
            return bad("trigger needs check_every >= 1 and check_window >= 2");
        }
        if self.window_len + self.trigger.check_window > self.buffer {
            return bad("buffer must hold window_len + trigger.check_window samples");
        }
        if !(self.trigger.threshold > 0.0) {
            return bad("trigger.threshold must be positive");
        }
        if !(self.trigger.rearm_fraction > 0.0 && self.trigger.rearm_fraction <= 1.0) {
            return bad("trigger.rearm_fraction must lie in (0, 1]");
        }
        if !(self.band[0] >= 0.0 && self.band[0] < self.band[1]) {
            return bad("band must be an increasing pair of frequencies");
        }
        if !(self.settle_fraction > 0.0 && self.settle_fraction < 1.0) {
            return bad("settle_fraction must lie in (0, 1)");
        }
        if !(self.probe.amplitude > 0.0 && self.probe.amplitude <= self.u_limit) || self.probe.chip == 0 {
            return bad("probe amplitude must lie in (0, u_limit] with a nonzero chip");
        }
        Ok(())
    }

    pub fn grouping(&self) -> GroupingParams {
        GroupingParams {
            sigma: self.sigma.map_or(Sigma::Auto, Sigma::Fixed),
            form: self.distance.into(),
            landmarks: self.landmarks,
            seed: self.seed,
        }
    }

    pub fn identify(&self) -> IdentifyOptions {
        IdentifyOptions {
            order_k: self.arx_order,
            n_obs: self.n_obs,
            tol: self.tol,
            max_iter: self.max_iter,
            anderson: self.anderson,
            normalize: true,
        }
    }

    pub fn tuning(&self) -> ControllerTuning {
        ControllerTuning {
            rho: self.rho,
            q_noise: self.q_noise,
            r_noise: self.r_noise,
            u_limit: self.u_limit,
            lqr_tol: LQR_TOL,
            lqr_max_iter: LQR_MAX_ITER,
        }
    }

    pub fn band(&self) -> (f64, f64) {
        (self.band[0], self.band[1])
    }

    /// Controller and identification sample period.
    pub fn control_ts(&self) -> f64 {
        self.ts * self.decimation as f64
    }
}

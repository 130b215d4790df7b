//! Individual stages. The command line and [`crate::run_pipeline`] call the
//! same functions, so chaining commands through files reproduces the
//! in-memory run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wac_core::clock::Clock;
use wac_core::coherency::{group_machines, CoherencyGrouping};
use wac_core::measurements::{MeasurementWindow, ProbeSignal};
use wac_core::modal::{
    dominant_mode, reduce_order, residue_matrix_at_mode, select_loops, ControlLoopSelection, ModalDecomposition,
    ModeDescriptor, ResidueMatrix, SelectedLoop,
};
use wac_core::plant::{
    build_ten_machine, build_two_area, closed_loop_eigen, simulate, DampingReport, PlantModel, SimulationResult,
    SimulationSpec, TenMachineParams, Topology, TwoAreaParams,
};
use wac_core::sysid::{identify_experiments, segment_experiments, ArxCommonDen};
use wac_core::wac::{synthesize, WacController};

use crate::config::PipelineConfig;
use crate::error::{AtStage, Error, Result, Stage};
use crate::json::PlantJson;

/// Built-in plants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantPreset {
    /// Two areas, machines {1,2} and {3,4}.
    #[serde(rename = "twoarea")]
    TwoArea,
    /// The same machines with machine 1 split off a stiff {2,3,4}.
    #[serde(rename = "twoarea-shifted")]
    TwoAreaShifted,
    /// Ten machines in four blocks.
    #[serde(rename = "tenmachine")]
    TenMachine,
}

impl PlantPreset {
    pub fn build(self) -> Result<PlantModel> {
        match self {
            PlantPreset::TwoArea => build_two_area(&TwoAreaParams::default()),
            PlantPreset::TwoAreaShifted => build_two_area(&TwoAreaParams {
                topology: Topology::Shifted,
                ..Default::default()
            }),
            PlantPreset::TenMachine => build_ten_machine(&TenMachineParams::default()),
        }
        .at(Stage::Simulate)
    }

    pub fn name(self) -> &'static str {
        match self {
            PlantPreset::TwoArea => "twoarea",
            PlantPreset::TwoAreaShifted => "twoarea-shifted",
            PlantPreset::TenMachine => "tenmachine",
        }
    }
}

impl fmt::Display for PlantPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "twoarea" => Ok(PlantPreset::TwoArea),
            "twoarea-shifted" => Ok(PlantPreset::TwoAreaShifted),
            "tenmachine" => Ok(PlantPreset::TenMachine),
            _ => Err(format!("unknown plant `{s}` (twoarea, twoarea-shifted, tenmachine)")),
        }
    }
}

/// A preset name or the path of a plant JSON file.
pub fn load_plant(spec: &str) -> Result<PlantModel> {
    match spec.parse::<PlantPreset>() {
        Ok(p) => p.build(),
        Err(msg) => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(Error::invalid(Stage::Simulate, msg));
            }
            let j: PlantJson = crate::io::read_json(path)?;
            PlantModel::new(j.to_config()?).at(Stage::Simulate)
        }
    }
}

/// Sequential PRBS on every control channel.
pub fn probe_spec(plant: &PlantModel, cfg: &PipelineConfig) -> SimulationSpec {
    SimulationSpec::sequential_probe(
        plant.control_channels(),
        cfg.ts,
        cfg.probe.seconds_per_channel,
        cfg.probe.amplitude,
        cfg.probe.chip,
        cfg.seed,
    )
}

pub fn commission(plant: &PlantModel, cfg: &PipelineConfig) -> Result<SimulationResult> {
    simulate(plant, &probe_spec(plant, cfg)).at(Stage::Simulate)
}

/// Decimates the probe record, splits it into single-input experiments
/// and identifies the common-denominator model.
pub fn identify_record(
    window: &MeasurementWindow,
    probes: &[ProbeSignal],
    cfg: &PipelineConfig,
    clock: &dyn Clock,
) -> Result<(ArxCommonDen, f64)> {
    let w = window.decimate(cfg.decimation).at(Stage::Identify)?;
    let probes: Vec<ProbeSignal> = probes.iter().map(|p| p.decimate(cfg.decimation)).collect();
    let t0 = clock.now();
    let exps = segment_experiments(&w, &probes).at(Stage::Identify)?;
    let model = identify_experiments(&exps, &cfg.identify()).at(Stage::Identify)?;
    if !model.converged {
        log::warn!("identification stopped after {} iterations, fit {:.3e}", model.iterations, model.fit);
    }
    Ok((model, (clock.now() - t0).max(0.0)))
}

pub fn cluster(window: &MeasurementWindow, cfg: &PipelineConfig, clock: &dyn Clock) -> Result<CoherencyGrouping> {
    let g = group_machines(window, cfg.k, &cfg.grouping(), clock).at(Stage::Cluster)?;
    if !g.empty_groups.is_empty() {
        log::warn!("groups {:?} are empty", g.empty_groups);
    }
    Ok(g)
}

/// Reduced model and residues at the dominant mode. Grouping-independent,
/// so it is computed once and reused by every reselection.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub reduced: ModalDecomposition,
    pub reduced_model: ArxCommonDen,
    pub mode: ModeDescriptor,
    pub residues: ResidueMatrix,
}

pub fn analyze(model: &ArxCommonDen, cfg: &PipelineConfig) -> Result<Analysis> {
    let s = Stage::Select;
    let full = ModalDecomposition::new(model).at(s)?;
    let reduced = reduce_order(&full, cfg.reduce_threshold).at(s)?;
    let mode = dominant_mode(&reduced, cfg.band()).at(s)?;
    let residues = residue_matrix_at_mode(&reduced, &mode).at(s)?;
    let reduced_model = reduced.to_model().at(s)?;
    log::info!(
        "order {} -> {}, mode {:.4} Hz, zeta {:.4}",
        model.order_k,
        reduced.order(),
        mode.frequency_hz,
        mode.damping_ratio
    );
    Ok(Analysis {
        reduced,
        reduced_model,
        mode,
        residues,
    })
}

pub fn select(a: &Analysis, grouping: &CoherencyGrouping, cfg: &PipelineConfig) -> Result<ControlLoopSelection> {
    select_loops(&a.residues, grouping, cfg.reject_below).at(Stage::Select)
}

/// One controller per loop, synthesized on scoped threads. Results keep
/// the order of `loops`.
pub fn synthesize_all(
    model: &ArxCommonDen,
    loops: &[SelectedLoop],
    cfg: &PipelineConfig,
    clock: &(dyn Clock + Sync),
) -> Result<Vec<WacController>> {
    let tuning = cfg.tuning();
    let out: Vec<wac_core::Result<WacController>> = std::thread::scope(|s| {
        let handles: Vec<_> = loops
            .iter()
            .map(|l| s.spawn(move || synthesize(model, l, &tuning, clock)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("synthesis thread panicked"))
            .collect()
    });
    let ctls = out.into_iter().collect::<wac_core::Result<Vec<_>>>().at(Stage::Synthesize)?;
    for c in &ctls {
        if !c.lqr.converged {
            log::warn!("Riccati iteration for group {} did not converge", c.selected.group);
        }
    }
    Ok(ctls)
}

pub fn closed_loop(plant: &PlantModel, controllers: &[WacController]) -> Result<DampingReport> {
    closed_loop_eigen(plant, controllers).at(Stage::ClosedLoop)
}

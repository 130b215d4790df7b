//! JSON forms of the stage artifacts and their conversions back into core
//! types. Each reader accepts exactly what the matching writer produces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wac_core::coherency::{CoherencyGrouping, SpectralEmbedding};
use wac_core::measurements::{DisturbanceEvent, MachineId};
use wac_core::modal::{ControlLoopSelection, ModeDescriptor, SelectedLoop};
use wac_core::plant::{ClosedLoopMode, DampingReport, Machine, ModeInfo, PlantConfig};
use wac_core::sysid::{ArxCommonDen, Pair};
use wac_core::wac::{KalmanState, LqrSolution, SignalScale, StateSpace, WacController};
use wac_core::{DMatrix, DVector};

use crate::error::{AtStage, Error, Result, Stage};

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn matrix(stage: Stage, what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::invalid(stage, format!("{what}: ragged matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn machine(stage: Stage, i: usize) -> Result<MachineId> {
    MachineId::new(i).at(stage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeJson {
    pub hz: f64,
    pub zeta: f64,
}

impl From<&ModeDescriptor> for ModeJson {
    fn from(m: &ModeDescriptor) -> Self {
        ModeJson {
            hz: m.frequency_hz,
            zeta: m.damping_ratio,
        }
    }
}

impl From<&ModeInfo> for ModeJson {
    fn from(m: &ModeInfo) -> Self {
        ModeJson { hz: m.hz, zeta: m.zeta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingJson {
    pub k: usize,
    /// Members of each group, keyed by group id.
    pub groups: BTreeMap<String, Vec<usize>>,
    /// Group id of each machine in machine order.
    pub assignment: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// Left out of run reports, which must be reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
    pub sigma: Option<f64>,
    pub l: Option<usize>,
    pub seed: u64,
    pub inertia: f64,
    pub empty_groups: Vec<usize>,
}

impl GroupingJson {
    pub fn new(g: &CoherencyGrouping, with_time: bool) -> Self {
        let groups = g
            .groups()
            .iter()
            .enumerate()
            .map(|(i, ms)| ((i + 1).to_string(), ms.iter().map(|m| m.index()).collect()))
            .collect();
        GroupingJson {
            k: g.k,
            groups,
            assignment: g.assignment.clone(),
            eigenvalues: g.embedding.eigenvalues.clone(),
            elapsed_s: with_time.then_some(g.elapsed),
            sigma: g.similarity.map(|s| s.sigma),
            l: g.similarity.map(|s| s.landmarks),
            seed: g.seed,
            inertia: g.inertia,
            empty_groups: g.empty_groups.clone(),
        }
    }

    /// Rebuilds enough of a grouping for loop selection; the spectral
    /// embedding itself is not stored.
    pub fn to_grouping(&self) -> Result<CoherencyGrouping> {
        let bad = |m: String| Error::invalid(Stage::Select, m);
        if self.assignment.iter().any(|&a| a == 0 || a > self.k) {
            return Err(bad(format!("assignment outside 1..={}", self.k)));
        }
        for (g, members) in &self.groups {
            let gi: usize = g.parse().map_err(|_| bad(format!("group key `{g}` is not an integer")))?;
            for &m in members {
                if self.assignment.get(m.wrapping_sub(1)) != Some(&gi) {
                    return Err(bad(format!("groups and assignment disagree on machine {m}")));
                }
            }
        }
        let n = self.assignment.len();
        Ok(CoherencyGrouping {
            assignment: self.assignment.clone(),
            k: self.k,
            centers: DMatrix::zeros(self.k, 0),
            inertia: self.inertia,
            elapsed: self.elapsed_s.unwrap_or(0.0),
            seed: self.seed,
            empty_groups: self.empty_groups.clone(),
            embedding: SpectralEmbedding {
                u_rows: DMatrix::zeros(n, 0),
                eigenvalues: self.eigenvalues.clone(),
                degree: DVector::zeros(n),
                degenerate_rows: Vec::new(),
                spectrum: self.eigenvalues.clone(),
            },
            similarity: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub order: usize,
    pub ts: f64,
    /// `a1..ak` of `1 + a1 z⁻¹ + … + ak z⁻ᵏ`.
    pub den: Vec<f64>,
    /// `b0..bk` keyed `"output,input"`.
    pub num: BTreeMap<String, Vec<f64>>,
    pub fit: f64,
    pub iterations: usize,
    pub stable: bool,
    pub converged: bool,
    pub output_scale: f64,
    pub input_scale: f64,
    pub rank_deficient: bool,
}

impl From<&ArxCommonDen> for ModelJson {
    fn from(m: &ArxCommonDen) -> Self {
        ModelJson {
            order: m.order_k,
            ts: m.ts,
            den: m.den.clone(),
            num: m
                .num
                .iter()
                .map(|(p, b)| (format!("{},{}", p.output.index(), p.input.index()), b.clone()))
                .collect(),
            fit: m.fit,
            iterations: m.iterations,
            stable: m.stable,
            converged: m.converged,
            output_scale: m.output_scale,
            input_scale: m.input_scale,
            rank_deficient: m.rank_deficient,
        }
    }
}

impl ModelJson {
    pub fn to_model(&self) -> Result<ArxCommonDen> {
        let stage = Stage::Select;
        if self.den.len() != self.order {
            return Err(Error::invalid(stage, "den length differs from order"));
        }
        let mut num = BTreeMap::new();
        for (key, b) in &self.num {
            let parsed = key
                .split_once(',')
                .and_then(|(o, i)| Some((o.trim().parse().ok()?, i.trim().parse().ok()?)));
            let (o, i) = parsed.ok_or_else(|| Error::invalid(stage, format!("num key `{key}` is not `m,p`")))?;
            num.insert(Pair::new(machine(stage, o)?, machine(stage, i)?), b.clone());
        }
        let mut m = ArxCommonDen::from_coefficients(self.ts, self.den.clone(), num).at(stage)?;
        m.fit = self.fit;
        m.iterations = self.iterations;
        m.converged = self.converged;
        m.output_scale = self.output_scale;
        m.input_scale = self.input_scale;
        m.rank_deficient = self.rank_deficient;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopJson {
    pub group: usize,
    pub output: usize,
    pub input: usize,
    pub residue: f64,
}

impl From<&SelectedLoop> for LoopJson {
    fn from(l: &SelectedLoop) -> Self {
        LoopJson {
            group: l.group,
            output: l.output.index(),
            input: l.input.index(),
            residue: l.residue,
        }
    }
}

impl LoopJson {
    pub fn to_loop(&self, stage: Stage) -> Result<SelectedLoop> {
        Ok(SelectedLoop {
            group: self.group,
            output: machine(stage, self.output)?,
            input: machine(stage, self.input)?,
            residue: self.residue,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionJson {
    pub mode: ModeJson,
    /// Rows follow `outputs`, columns follow `inputs`.
    pub residue_matrix: Vec<Vec<f64>>,
    pub outputs: Vec<usize>,
    pub inputs: Vec<usize>,
    pub loops: Vec<LoopJson>,
    pub rejected: Vec<LoopJson>,
    /// Order of the reduced model the residues come from.
    pub reduced_order: usize,
}

impl SelectionJson {
    pub fn new(sel: &ControlLoopSelection, rm: &wac_core::modal::ResidueMatrix, reduced_order: usize) -> Self {
        SelectionJson {
            mode: (&sel.mode).into(),
            residue_matrix: rows(&rm.values),
            outputs: rm.outputs.iter().map(|m| m.index()).collect(),
            inputs: rm.inputs.iter().map(|m| m.index()).collect(),
            loops: sel.loops.iter().map(LoopJson::from).collect(),
            rejected: sel.rejected.iter().map(LoopJson::from).collect(),
            reduced_order,
        }
    }

    pub fn loops(&self, stage: Stage) -> Result<Vec<SelectedLoop>> {
        self.loops.iter().map(|l| l.to_loop(stage)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    pub ts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanJson {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerJson {
    pub group: usize,
    pub output: usize,
    pub input: usize,
    pub residue: f64,
    pub order: usize,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub rho: f64,
    pub u_limit: f64,
    pub kf: KalmanJson,
    pub ss: StateSpaceJson,
    /// Physical output and input levels of the normalized design.
    pub scale: [f64; 2],
    pub converged: bool,
    pub horizon_used: usize,
    pub unstable_realization: bool,
}

impl From<&WacController> for ControllerJson {
    fn from(c: &WacController) -> Self {
        ControllerJson {
            group: c.selected.group,
            output: c.selected.output.index(),
            input: c.selected.input.index(),
            residue: c.selected.residue,
            order: c.order(),
            k: c.lqr.gain.iter().copied().collect(),
            p: rows(&c.lqr.riccati),
            rho: c.lqr.rho,
            u_limit: c.u_limit,
            kf: KalmanJson {
                q: rows(&c.kf.q_noise),
                r: rows(&c.kf.r_noise),
                h: c.kf.h_mat.iter().copied().collect(),
            },
            ss: StateSpaceJson {
                a: rows(&c.ss.a),
                b: c.ss.b.iter().copied().collect(),
                c: c.ss.c.iter().copied().collect(),
                d: c.ss.d[(0, 0)],
                ts: c.ss.ts,
            },
            scale: [c.scale.output, c.scale.input],
            converged: c.lqr.converged,
            horizon_used: c.lqr.horizon_used,
            unstable_realization: c.unstable_realization,
        }
    }
}

impl ControllerJson {
    /// A controller in its initial state (`x̂ = 0`, `L = I`).
    pub fn to_controller(&self) -> Result<WacController> {
        let stage = Stage::ClosedLoop;
        let p = self.order;
        let a = matrix(stage, "A", &self.ss.a)?;
        if a.shape() != (p, p) || self.ss.b.len() != p || self.ss.c.len() != p || self.k.len() != p {
            return Err(Error::invalid(stage, "controller dimensions disagree with order"));
        }
        let ss = StateSpace::new(
            a,
            DMatrix::from_column_slice(p, 1, &self.ss.b),
            DMatrix::from_row_slice(1, p, &self.ss.c),
            DMatrix::from_element(1, 1, self.ss.d),
            self.ss.ts,
        )
        .at(stage)?;
        let kf = KalmanState::new(
            DMatrix::from_row_slice(1, p, &self.kf.h),
            matrix(stage, "Q", &self.kf.q)?,
            matrix(stage, "R", &self.kf.r)?,
            DVector::zeros(p),
            DMatrix::identity(p, p),
        )
        .at(stage)?;
        Ok(WacController {
            selected: LoopJson {
                group: self.group,
                output: self.output,
                input: self.input,
                residue: self.residue,
            }
            .to_loop(stage)?,
            ss,
            lqr: LqrSolution {
                gain: DMatrix::from_row_slice(1, p, &self.k),
                riccati: matrix(stage, "P", &self.p)?,
                rho: self.rho,
                horizon_used: self.horizon_used,
                converged: self.converged,
            },
            kf,
            u_limit: self.u_limit,
            scale: SignalScale {
                output: self.scale[0],
                input: self.scale[1],
            },
            elapsed: 0.0,
            last_u: 0.0,
            unstable_realization: self.unstable_realization,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedModeJson {
    pub hz: f64,
    pub zeta: f64,
    /// Share of the mode carried by plant states.
    pub participation: f64,
}

impl From<&ClosedLoopMode> for ClosedModeJson {
    fn from(c: &ClosedLoopMode) -> Self {
        ClosedModeJson {
            hz: c.mode.hz,
            zeta: c.mode.zeta,
            participation: c.plant_participation,
        }
    }
}

/// Eigen report. `modes` are the closed-loop oscillatory modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingJson {
    pub modes: Vec<ClosedModeJson>,
    pub open_modes: Vec<ModeJson>,
    pub inter_area_open: Option<ModeJson>,
    pub inter_area_closed: Option<ModeJson>,
    pub zeta_ratio: Option<f64>,
    pub spectral_radius: f64,
    pub ts: f64,
}

impl From<&DampingReport> for DampingJson {
    fn from(r: &DampingReport) -> Self {
        DampingJson {
            modes: r.closed.iter().map(ClosedModeJson::from).collect(),
            open_modes: r.open.iter().map(ModeJson::from).collect(),
            inter_area_open: r.inter_area_open.as_ref().map(ModeJson::from),
            inter_area_closed: r.inter_area_closed.as_ref().map(ModeJson::from),
            zeta_ratio: r.zeta_ratio(),
            spectral_radius: r.spectral_radius,
            ts: r.ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventJson {
    pub time: f64,
    pub magnitude: f64,
    pub kind: String,
}

impl From<&DisturbanceEvent> for EventJson {
    fn from(e: &DisturbanceEvent) -> Self {
        EventJson {
            time: e.time,
            magnitude: e.magnitude,
            kind: e.kind.label().to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineJson {
    pub inertia: f64,
    pub damping: f64,
}

/// Plant configuration: machines, stiffness and channel matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantJson {
    pub machines: Vec<MachineJson>,
    pub stiffness: Vec<Vec<f64>>,
    pub local_damping: Vec<Vec<f64>>,
    /// Machines × control channels.
    pub actuator: Vec<Vec<f64>>,
    /// Machines × disturbance channels.
    pub disturbance: Vec<Vec<f64>>,
    pub actuator_lag: f64,
    pub base_freq: f64,
}

impl From<&PlantConfig> for PlantJson {
    fn from(c: &PlantConfig) -> Self {
        PlantJson {
            machines: c
                .machines
                .iter()
                .map(|m| MachineJson {
                    inertia: m.inertia,
                    damping: m.damping,
                })
                .collect(),
            stiffness: rows(&c.stiffness),
            local_damping: rows(&c.local_damping),
            actuator: rows(&c.actuator),
            disturbance: rows(&c.disturbance),
            actuator_lag: c.actuator_lag,
            base_freq: c.base_freq,
        }
    }
}

impl PlantJson {
    pub fn to_config(&self) -> Result<PlantConfig> {
        let s = Stage::Simulate;
        let cfg = PlantConfig {
            machines: self
                .machines
                .iter()
                .map(|m| Machine {
                    inertia: m.inertia,
                    damping: m.damping,
                })
                .collect(),
            stiffness: matrix(s, "stiffness", &self.stiffness)?,
            local_damping: matrix(s, "local_damping", &self.local_damping)?,
            actuator: matrix(s, "actuator", &self.actuator)?,
            disturbance: matrix(s, "disturbance", &self.disturbance)?,
            actuator_lag: self.actuator_lag,
            base_freq: self.base_freq,
        };
        cfg.validate().at(s)?;
        Ok(cfg)
    }
}

//! Linearized multi-machine swing model used as the test plant.
//!
//! States are `[δ (m), Δω (m), actuator (q)]`:
//!
//! ```text
//! dδ/dt  = ω_b Δω
//! 2H dΔω/dt = −K_s δ − (D + D_s) Δω + A_act a + E d
//! da/dt  = (u − a) / τ
//! ```
//!
//! `D_s` is a Laplacian of relative damping between machines (local
//! stabilizers); it leaves the common and inter-area motion alone when it is
//! only placed on intra-area links.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::invalid;
use crate::linalg::{cln, eigenvalues, expm, mode_of, participation_factors};
use crate::measurements::{DisturbanceEvent, DisturbanceKind, MachineId, MeasurementWindow, ProbeSignal};
use crate::modal::INTER_AREA_BAND;
use crate::wac::{StateSpace, WacController};
use crate::{Error, Result, C64};

pub const BASE_FREQ: f64 = 60.0;
pub const ACTUATOR_LAG: f64 = 0.05;
/// Minimum plant participation (magnitude of the summed complex
/// participation factors over plant states) for a closed-loop mode to count
/// as a plant mode.
pub const PLANT_PARTICIPATION_MIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Machine {
    /// Inertia constant H in seconds.
    pub inertia: f64,
    /// Damping D in pu torque per pu speed.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub machines: Vec<Machine>,
    /// Synchronizing torque matrix K_s (m×m, symmetric, zero row sums).
    pub stiffness: DMatrix<f64>,
    /// Relative damping Laplacian D_s (m×m).
    pub local_damping: DMatrix<f64>,
    /// Control channels to torque (m×q).
    pub actuator: DMatrix<f64>,
    /// Exogenous injections to torque (m×r).
    pub disturbance: DMatrix<f64>,
    pub actuator_lag: f64,
    pub base_freq: f64,
}

/// Weighted graph Laplacian on `m` nodes from `(i, j, w)` links (0-based).
pub fn laplacian(m: usize, links: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m, m);
    for &(i, j, w) in links {
        k[(i, j)] -= w;
        k[(j, i)] -= w;
        k[(i, i)] += w;
        k[(j, j)] += w;
    }
    k
}

fn check_laplacian(name: &'static str, k: &DMatrix<f64>, m: usize) -> Result<()> {
    if k.shape() != (m, m) {
        return Err(Error::DimensionMismatch {
            context: name,
            expected: m,
            found: k.nrows(),
        });
    }
    if let Some(v) = k.iter().find(|v| !v.is_finite()) {
        return Err(invalid(name, alloc::format!("non-finite entry {v}")));
    }
    let scale = k.amax().max(1.0);
    let tol = 1e-9 * scale;
    for i in 0..m {
        for j in 0..i {
            if (k[(i, j)] - k[(j, i)]).abs() > tol {
                return Err(invalid(name, "must be symmetric"));
            }
        }
        if k.row(i).sum().abs() > tol * m as f64 {
            return Err(invalid(name, "rows must sum to zero"));
        }
    }
    Ok(())
}

impl PlantConfig {
    /// Config with identity actuator and disturbance maps, no local damping.
    pub fn new(machines: Vec<Machine>, stiffness: DMatrix<f64>) -> Self {
        let m = machines.len();
        PlantConfig {
            machines,
            stiffness,
            local_damping: DMatrix::zeros(m, m),
            actuator: DMatrix::identity(m, m),
            disturbance: DMatrix::identity(m, m),
            actuator_lag: ACTUATOR_LAG,
            base_freq: BASE_FREQ,
        }
    }

    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.machines.len();
        if m == 0 {
            return Err(invalid("machines", "at least one machine required"));
        }
        for (i, mc) in self.machines.iter().enumerate() {
            if !(mc.inertia > 0.0 && mc.inertia.is_finite()) {
                return Err(invalid("inertia", alloc::format!("machine {} has H = {}", i + 1, mc.inertia)));
            }
            if !mc.damping.is_finite() {
                return Err(invalid("damping", alloc::format!("machine {} has D = {}", i + 1, mc.damping)));
            }
        }
        check_laplacian("stiffness", &self.stiffness, m)?;
        check_laplacian("local_damping", &self.local_damping, m)?;
        if self.actuator.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "actuator rows",
                expected: m,
                found: self.actuator.nrows(),
            });
        }
        if self.disturbance.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "disturbance rows",
                expected: m,
                found: self.disturbance.nrows(),
            });
        }
        if !(self.actuator_lag > 0.0) {
            return Err(invalid("actuator_lag", "must be positive"));
        }
        if !(self.base_freq > 0.0) {
            return Err(invalid("base_freq", "must be positive"));
        }
        Ok(())
    }
}

/// One continuous-time eigenvalue with its frequency and damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeInfo {
    pub pole: C64,
    pub hz: f64,
    pub zeta: f64,
}

impl ModeInfo {
    pub fn from_pole(pole: C64) -> Self {
        let (hz, zeta) = mode_of(pole);
        ModeInfo { pole, hz, zeta }
    }

    pub fn is_oscillatory(&self) -> bool {
        self.pole.im > 1e-9
    }

    pub fn in_band(&self, band: (f64, f64)) -> bool {
        self.is_oscillatory() && self.hz >= band.0 && self.hz <= band.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub config: PlantConfig,
    pub a_cont: DMatrix<f64>,
    /// Control input matrix (n×q), enters through the actuator lag.
    pub b_cont: DMatrix<f64>,
    /// Disturbance input matrix (n×r), enters as torque.
    pub e_cont: DMatrix<f64>,
    /// Selects the Δω states (m×n).
    pub c_out: DMatrix<f64>,
    pub eigen: Vec<ModeInfo>,
    /// False if any eigenvalue lies in the open right half plane.
    pub stable: bool,
}

impl PlantModel {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let m = config.machines.len();
        let q = config.actuator.ncols();
        let r = config.disturbance.ncols();
        let n = 2 * m + q;
        let wb = 2.0 * PI * config.base_freq;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, q);
        let mut e = DMatrix::zeros(n, r);
        let mut c = DMatrix::zeros(m, n);
        for i in 0..m {
            let inv2h = 1.0 / (2.0 * config.machines[i].inertia);
            a[(i, m + i)] = wb;
            for j in 0..m {
                a[(m + i, j)] = -inv2h * config.stiffness[(i, j)];
                a[(m + i, m + j)] = -inv2h * config.local_damping[(i, j)];
            }
            a[(m + i, m + i)] -= inv2h * config.machines[i].damping;
            for ch in 0..q {
                a[(m + i, 2 * m + ch)] = inv2h * config.actuator[(i, ch)];
            }
            for ch in 0..r {
                e[(m + i, ch)] = inv2h * config.disturbance[(i, ch)];
            }
            c[(i, m + i)] = 1.0;
        }
        for ch in 0..q {
            a[(2 * m + ch, 2 * m + ch)] = -1.0 / config.actuator_lag;
            b[(2 * m + ch, ch)] = 1.0 / config.actuator_lag;
        }
        let mut eigen: Vec<ModeInfo> = eigenvalues(&a).into_iter().map(ModeInfo::from_pole).collect();
        eigen.sort_by(|x, y| x.hz.total_cmp(&y.hz).then(x.pole.im.total_cmp(&y.pole.im)));
        let stable = eigen.iter().all(|md| md.pole.re <= 1e-9);
        Ok(PlantModel {
            config,
            a_cont: a,
            b_cont: b,
            e_cont: e,
            c_out: c,
            eigen,
            stable,
        })
    }

    pub fn machines(&self) -> usize {
        self.config.machines.len()
    }

    pub fn states(&self) -> usize {
        self.a_cont.nrows()
    }

    pub fn control_channels(&self) -> usize {
        self.b_cont.ncols()
    }

    pub fn disturbance_channels(&self) -> usize {
        self.e_cont.ncols()
    }

    /// Upper-half-plane modes, ascending frequency.
    pub fn oscillatory_modes(&self) -> Vec<ModeInfo> {
        self.eigen.iter().copied().filter(ModeInfo::is_oscillatory).collect()
    }

    /// Least damped mode in the inter-area band.
    pub fn inter_area_mode(&self) -> Option<ModeInfo> {
        least_damped(self.oscillatory_modes().into_iter(), INTER_AREA_BAND)
    }

    /// Storage function `ω_b Σ H Δω² + ½ δᵀ K_s δ`; nonincreasing for an
    /// unforced plant with nonnegative damping and a relaxed actuator.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let m = self.machines();
        let wb = 2.0 * PI * self.config.base_freq;
        let delta = x.rows(0, m);
        let omega = x.rows(m, m);
        let kinetic: f64 = (0..m)
            .map(|i| self.config.machines[i].inertia * omega[i] * omega[i])
            .sum();
        let potential = (delta.transpose() * &self.config.stiffness * delta)[0];
        wb * kinetic + 0.5 * potential
    }
}

fn least_damped(modes: impl Iterator<Item = ModeInfo>, band: (f64, f64)) -> Option<ModeInfo> {
    modes
        .filter(|md| md.in_band(band))
        .min_by(|a, b| a.zeta.total_cmp(&b.zeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Topology {
    /// Areas {1,2} and {3,4}.
    #[default]
    Nominal,
    /// Post-disturbance coupling: machine 1 weakly tied to a stiff {2,3,4}.
    Shifted,
}

/// Two-area, four-machine preset.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAreaParams {
    pub inertia: [f64; 4],
    pub damping: f64,
    pub intra_stiffness: f64,
    pub tie_stiffness: f64,
    pub local_damping: f64,
    pub topology: Topology,
}

impl Default for TwoAreaParams {
    fn default() -> Self {
        TwoAreaParams {
            inertia: [6.5, 6.5, 6.2, 6.2],
            damping: 1.0,
            intra_stiffness: 0.704,
            tie_stiffness: 0.1196,
            local_damping: 10.0,
            topology: Topology::Nominal,
        }
    }
}

impl TwoAreaParams {
    pub fn config(&self) -> PlantConfig {
        let (ka, kt) = (self.intra_stiffness, self.tie_stiffness);
        let (stiff, weak): (&[(usize, usize)], &[(usize, usize)]) = match self.topology {
            Topology::Nominal => (&[(0, 1), (2, 3)], &[(0, 2), (0, 3), (1, 2), (1, 3)]),
            Topology::Shifted => (&[(1, 2), (2, 3), (1, 3)], &[(0, 1), (0, 2), (0, 3)]),
        };
        let mut links: Vec<(usize, usize, f64)> = stiff.iter().map(|&(i, j)| (i, j, ka)).collect();
        links.extend(weak.iter().map(|&(i, j)| (i, j, kt)));
        let ds: Vec<(usize, usize, f64)> = stiff.iter().map(|&(i, j)| (i, j, self.local_damping)).collect();
        let machines = self
            .inertia
            .iter()
            .map(|&h| Machine {
                inertia: h,
                damping: self.damping,
            })
            .collect();
        let mut cfg = PlantConfig::new(machines, laplacian(4, &links));
        cfg.local_damping = laplacian(4, &ds);
        cfg
    }
}

pub fn build_two_area(params: &TwoAreaParams) -> Result<PlantModel> {
    PlantModel::new(params.config())
}

/// Ten machines in four coherent blocks joined by weak ties.
#[derive(Debug, Clone, PartialEq)]
pub struct TenMachineParams {
    pub inertia: [f64; 10],
    pub damping: f64,
    /// Machine indices (0-based) of each block.
    pub blocks: Vec<Vec<usize>>,
    pub intra_stiffness: f64,
    pub local_damping: f64,
    /// `(block, block, stiffness)` ties, spread over all machine pairs.
    pub ties: Vec<(usize, usize, f64)>,
}

impl Default for TenMachineParams {
    fn default() -> Self {
        TenMachineParams {
            inertia: [5.0, 5.5, 6.0, 4.5, 5.0, 5.5, 7.0, 6.5, 8.0, 9.0],
            damping: 1.0,
            blocks: vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7], vec![8, 9]],
            intra_stiffness: 0.8,
            local_damping: 10.0,
            ties: vec![
                (0, 1, 0.05),
                (1, 2, 0.04),
                (2, 3, 0.06),
                (0, 2, 0.02),
                (0, 3, 0.015),
                (1, 3, 0.02),
            ],
        }
    }
}

impl TenMachineParams {
    pub fn config(&self) -> Result<PlantConfig> {
        let m = 10;
        let mut links = Vec::new();
        let mut ds = Vec::new();
        for block in &self.blocks {
            for (a, &i) in block.iter().enumerate() {
                if i >= m {
                    return Err(Error::UnknownMachine(i + 1));
                }
                for &j in &block[a + 1..] {
                    links.push((i, j, self.intra_stiffness));
                    ds.push((i, j, self.local_damping));
                }
            }
        }
        for &(p, q, w) in &self.ties {
            let (bp, bq) = match (self.blocks.get(p), self.blocks.get(q)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(invalid("ties", "block index out of range")),
            };
            for &i in bp {
                for &j in bq {
                    links.push((i, j, w));
                }
            }
        }
        let machines = self
            .inertia
            .iter()
            .map(|&h| Machine {
                inertia: h,
                damping: self.damping,
            })
            .collect();
        let mut cfg = PlantConfig::new(machines, laplacian(m, &links));
        cfg.local_damping = laplacian(m, &ds);
        Ok(cfg)
    }
}

pub fn build_ten_machine(params: &TenMachineParams) -> Result<PlantModel> {
    PlantModel::new(params.config()?)
}

/// Exact zero-order-hold discretization. Inputs are `[control | disturbance]`,
/// outputs are the machine speeds.
pub fn discretize_zoh(model: &PlantModel, ts: f64) -> Result<StateSpace> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(invalid("ts", "sample period must be positive"));
    }
    let n = model.states();
    let q = model.control_channels();
    let r = model.disturbance_channels();
    let mut b = DMatrix::zeros(n, q + r);
    b.view_mut((0, 0), (n, q)).copy_from(&model.b_cont);
    b.view_mut((0, q), (n, r)).copy_from(&model.e_cont);
    let (ad, bd) = zoh(&model.a_cont, &b, ts);
    let d = DMatrix::zeros(model.machines(), q + r);
    StateSpace::new(ad, bd, model.c_out.clone(), d, ts)
}

/// `exp([[A, B], [0, 0]]·ts)` split into `(A_d, B_d)`.
pub fn zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let p = b.ncols();
    let mut aug = DMatrix::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, p)).copy_from(&(b * ts));
    let e = expm(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, p)).into_owned())
}

/// Pulse (finite `duration`) or step (`duration = ∞`) on one disturbance
/// channel (0-based column of the disturbance matrix).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbancePulse {
    pub channel: usize,
    pub start: f64,
    pub duration: f64,
    pub magnitude: f64,
    pub kind: DisturbanceKind,
}

impl DisturbancePulse {
    pub fn fault(channel: usize, start: f64, duration: f64, magnitude: f64) -> Self {
        DisturbancePulse {
            channel,
            start,
            duration,
            magnitude,
            kind: DisturbanceKind::Fault,
        }
    }

    fn sample_range(&self, ts: f64) -> (usize, usize) {
        let k0 = Float::round(self.start / ts).max(0.0) as usize;
        let len = if self.duration.is_finite() {
            Float::round(self.duration / ts).max(0.0) as usize
        } else {
            usize::MAX - k0
        };
        (k0, k0.saturating_add(len))
    }

    pub fn active(&self, k: usize, ts: f64) -> bool {
        let (a, b) = self.sample_range(ts);
        k >= a && k < b
    }
}

/// Band-limited random power injection: first-order filtered Gaussian noise
/// with standard deviation `std_dev` and corner `bandwidth_hz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindInjection {
    pub channel: usize,
    pub std_dev: f64,
    pub bandwidth_hz: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct WindState {
    spec: WindInjection,
    alpha: f64,
    level: f64,
    rng: ChaCha8Rng,
}

impl WindState {
    fn new(spec: WindInjection, ts: f64) -> Self {
        let alpha = Float::exp(-2.0 * PI * spec.bandwidth_hz * ts);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let z: f64 = StandardNormal.sample(&mut rng);
        WindState {
            spec,
            alpha,
            level: spec.std_dev * z,
            rng,
        }
    }

    fn next(&mut self) -> f64 {
        let out = self.level;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.level = self.alpha * self.level + Float::sqrt(1.0 - self.alpha * self.alpha) * self.spec.std_dev * z;
        out
    }
}

/// Additive white Gaussian noise on every recorded speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise {
    pub std_dev: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub ts: f64,
    pub duration: f64,
    /// Open-loop control inputs; `machine` names the control channel.
    pub inputs: Vec<ProbeSignal>,
    pub pulses: Vec<DisturbancePulse>,
    pub wind: Vec<WindInjection>,
    pub noise: Option<MeasurementNoise>,
    pub x0: Option<DVector<f64>>,
}

impl SimulationSpec {
    pub fn new(ts: f64, duration: f64) -> Self {
        SimulationSpec {
            ts,
            duration,
            inputs: Vec::new(),
            pulses: Vec::new(),
            wind: Vec::new(),
            noise: None,
            x0: None,
        }
    }

    pub fn samples(&self) -> usize {
        Float::round(self.duration / self.ts) as usize
    }

    /// One continuous run probing each control channel in turn with PRBS
    /// for `per_channel` seconds. Channel `c` uses seed `seed + c`.
    pub fn sequential_probe(
        channels: usize,
        ts: f64,
        per_channel: f64,
        amplitude: f64,
        chip: usize,
        seed: u64,
    ) -> Self {
        let seg = Float::round(per_channel / ts) as usize;
        let total = seg * channels;
        let mut spec = SimulationSpec::new(ts, total as f64 * ts);
        for c in 0..channels {
            let mut values = vec![0.0; total];
            let prbs = ProbeSignal::prbs(MachineId::from_column(c), seg, amplitude, chip, seed + c as u64);
            values[c * seg..(c + 1) * seg].copy_from_slice(&prbs.values);
            spec.inputs.push(ProbeSignal {
                machine: MachineId::from_column(c),
                values,
            });
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Recorded speeds, noise included.
    pub window: MeasurementWindow,
    pub inputs: Vec<ProbeSignal>,
    pub events: Vec<DisturbanceEvent>,
    /// Column pairs `(i, j)` of `relative_speeds`, 0-based, `i < j`.
    pub relative_pairs: Vec<(usize, usize)>,
    /// `Δω_i − Δω_j` for every pair, noise free.
    pub relative_speeds: DMatrix<f64>,
    /// Total control applied on each channel (open-loop inputs plus feedback).
    pub controls: DMatrix<f64>,
    pub final_state: DVector<f64>,
    /// Storage function at each sample.
    pub energy: Vec<f64>,
}

impl SimulationResult {
    pub fn relative_speed(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        let col = self.relative_pairs.iter().position(|&p| p == (a, b))?;
        Some(self.relative_speeds.column(col).iter().map(|v| sign * v).collect())
    }
}

/// Stepping ZOH simulator that can swap its model mid-run.
#[derive(Debug, Clone)]
pub struct PlantSimulator {
    model: PlantModel,
    ss: StateSpace,
    x: DVector<f64>,
    k: usize,
}

impl PlantSimulator {
    pub fn new(model: PlantModel, ts: f64) -> Result<Self> {
        let ss = discretize_zoh(&model, ts)?;
        let x = DVector::zeros(model.states());
        Ok(PlantSimulator { model, ss, x, k: 0 })
    }

    pub fn model(&self) -> &PlantModel {
        &self.model
    }

    pub fn ts(&self) -> f64 {
        self.ss.ts
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn set_state(&mut self, x: DVector<f64>) -> Result<()> {
        if x.len() != self.x.len() {
            return Err(Error::DimensionMismatch {
                context: "plant state",
                expected: self.x.len(),
                found: x.len(),
            });
        }
        self.x = x;
        Ok(())
    }

    /// Samples taken so far.
    pub fn sample_index(&self) -> usize {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.ss.ts
    }

    pub fn output(&self) -> DVector<f64> {
        &self.ss.c * &self.x
    }

    /// Advances one sample with `u` held on the control channels and `d` on
    /// the disturbance channels.
    pub fn step(&mut self, u: &[f64], d: &[f64]) -> Result<()> {
        let q = self.model.control_channels();
        let r = self.model.disturbance_channels();
        if u.len() != q || d.len() != r {
            return Err(Error::DimensionMismatch {
                context: "simulator inputs",
                expected: q + r,
                found: u.len() + d.len(),
            });
        }
        let w = DVector::from_iterator(q + r, u.iter().chain(d.iter()).copied());
        self.x = &self.ss.a * &self.x + &self.ss.b * w;
        self.k += 1;
        Ok(())
    }

    /// Replaces the plant, keeping the current state and clock.
    pub fn switch_model(&mut self, model: PlantModel) -> Result<()> {
        if model.states() != self.model.states()
            || model.control_channels() != self.model.control_channels()
            || model.disturbance_channels() != self.model.disturbance_channels()
        {
            return Err(Error::DimensionMismatch {
                context: "replacement plant",
                expected: self.model.states(),
                found: model.states(),
            });
        }
        self.ss = discretize_zoh(&model, self.ss.ts)?;
        self.model = model;
        Ok(())
    }
}

/// Decentralized controllers sampled every `decimation` plant samples, each
/// writing its output to its input channel with zero-order hold.
pub struct ControllerBank<'a> {
    pub controllers: &'a mut [WacController],
    pub decimation: usize,
    held: Vec<(usize, f64)>,
}

impl<'a> ControllerBank<'a> {
    pub fn new(controllers: &'a mut [WacController], decimation: usize) -> Self {
        let held = controllers.iter().map(|c| (c.selected.input.column(), 0.0)).collect();
        ControllerBank {
            controllers,
            decimation: decimation.max(1),
            held,
        }
    }

    /// Adds the held controller outputs to `u`, refreshing them on decimation
    /// instants from the measured speeds `y`.
    pub fn apply(&mut self, k: usize, y: &DVector<f64>, u: &mut [f64]) {
        if k.is_multiple_of(self.decimation) {
            for (c, h) in self.controllers.iter_mut().zip(self.held.iter_mut()) {
                let z = y[c.selected.output.column()];
                *h = (c.selected.input.column(), c.step(z));
            }
        }
        for &(ch, v) in &self.held {
            if ch < u.len() {
                u[ch] += v;
            }
        }
    }
}

/// Open-loop simulation.
pub fn simulate(model: &PlantModel, spec: &SimulationSpec) -> Result<SimulationResult> {
    simulate_with(model, spec, |_, _, _| {})
}

/// Simulation with a feedback hook called at every sample with the sample
/// index, the measured speeds and the control vector (pre-filled with the
/// open-loop inputs) to modify.
pub fn simulate_with<F>(model: &PlantModel, spec: &SimulationSpec, mut feedback: F) -> Result<SimulationResult>
where
    F: FnMut(usize, &DVector<f64>, &mut [f64]),
{
    if !(spec.duration > 0.0 && spec.duration.is_finite()) {
        return Err(invalid("duration", "must be positive"));
    }
    let ts = spec.ts;
    let mut sim = PlantSimulator::new(model.clone(), ts)?;
    if let Some(x0) = &spec.x0 {
        sim.set_state(x0.clone())?;
    }
    let m = model.machines();
    let q = model.control_channels();
    let r = model.disturbance_channels();
    let n_samples = spec.samples().max(1);
    for p in &spec.inputs {
        if p.machine.column() >= q {
            return Err(Error::UnknownMachine(p.machine.index()));
        }
    }
    for p in &spec.pulses {
        if p.channel >= r {
            return Err(invalid("pulse channel", alloc::format!("{} out of range", p.channel)));
        }
    }
    for w in &spec.wind {
        if w.channel >= r {
            return Err(invalid("wind channel", alloc::format!("{} out of range", w.channel)));
        }
    }
    let mut wind: Vec<WindState> = spec.wind.iter().map(|w| WindState::new(*w, ts)).collect();
    let mut noise_rng = spec.noise.map(|nz| (nz.std_dev, ChaCha8Rng::seed_from_u64(nz.seed)));

    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let mut samples = DMatrix::zeros(n_samples, m);
    let mut rel = DMatrix::zeros(n_samples, pairs.len());
    let mut controls = DMatrix::zeros(n_samples, q);
    let mut energy = Vec::with_capacity(n_samples);
    let mut u = vec![0.0; q];
    let mut d = vec![0.0; r];

    for k in 0..n_samples {
        let y = sim.output();
        for (c, &(i, j)) in pairs.iter().enumerate() {
            rel[(k, c)] = y[i] - y[j];
        }
        let mut meas = y.clone();
        if let Some((sd, rng)) = noise_rng.as_mut() {
            for v in meas.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += *sd * z;
            }
        }
        samples.row_mut(k).copy_from(&meas.transpose());
        energy.push(model.energy(sim.state()));

        u.iter_mut().for_each(|v| *v = 0.0);
        for p in &spec.inputs {
            if let Some(v) = p.values.get(k) {
                u[p.machine.column()] += v;
            }
        }
        feedback(k, &meas, &mut u);
        controls.row_mut(k).copy_from_slice(&u);

        d.iter_mut().for_each(|v| *v = 0.0);
        for p in &spec.pulses {
            if p.active(k, ts) {
                d[p.channel] += p.magnitude;
            }
        }
        for w in wind.iter_mut() {
            d[w.spec.channel] += w.next();
        }
        sim.step(&u, &d)?;
    }

    let mut events: Vec<DisturbanceEvent> = spec
        .pulses
        .iter()
        .map(|p| DisturbanceEvent {
            time: p.start,
            magnitude: p.magnitude,
            kind: p.kind,
        })
        .collect();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(SimulationResult {
        window: MeasurementWindow::new(ts, 0.0, samples)?,
        inputs: spec.inputs.clone(),
        events,
        relative_pairs: pairs,
        relative_speeds: rel,
        controls,
        final_state: sim.state().clone(),
        energy,
    })
}

/// Closed-loop simulation with a bank of controllers sampled every
/// `decimation` samples.
pub fn simulate_closed_loop(
    model: &PlantModel,
    spec: &SimulationSpec,
    controllers: &mut [WacController],
    decimation: usize,
) -> Result<SimulationResult> {
    let mut bank = ControllerBank::new(controllers, decimation);
    simulate_with(model, spec, |k, y, u| bank.apply(k, y, u))
}

/// Time after which `|x|` stays within `frac` of its peak. Zero for an
/// identically zero signal.
pub fn settling_time(x: &[f64], ts: f64, frac: f64) -> f64 {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    x.iter()
        .rposition(|v| v.abs() > frac * peak)
        .map_or(0.0, |i| (i + 1) as f64 * ts)
}

/// A closed-loop mode with the share of it carried by plant states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopMode {
    pub mode: ModeInfo,
    pub plant_participation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampingReport {
    /// Open-loop oscillatory modes of the continuous plant.
    pub open: Vec<ModeInfo>,
    /// Closed-loop oscillatory modes, mapped back to continuous time.
    pub closed: Vec<ClosedLoopMode>,
    pub inter_area_open: Option<ModeInfo>,
    /// Least damped in-band closed-loop mode with plant participation at
    /// least [`PLANT_PARTICIPATION_MIN`].
    pub inter_area_closed: Option<ModeInfo>,
    pub spectral_radius: f64,
    pub ts: f64,
}

impl DampingReport {
    /// Closed- over open-loop inter-area damping ratio.
    pub fn zeta_ratio(&self) -> Option<f64> {
        match (self.inter_area_open, self.inter_area_closed) {
            (Some(o), Some(c)) if o.zeta > 0.0 => Some(c.zeta / o.zeta),
            _ => None,
        }
    }
}

/// Augmented discrete closed-loop matrix over `[x; x̂₁; …]`, each controller
/// running its steady-state Kalman filter at the common sample period.
pub fn closed_loop_matrix(model: &PlantModel, controllers: &[WacController]) -> Result<(DMatrix<f64>, f64)> {
    let ts = match controllers.first() {
        Some(c) => c.ss.ts,
        None => return Err(invalid("controllers", "at least one controller required")),
    };
    if controllers.iter().any(|c| (c.ss.ts - ts).abs() > 1e-12 * ts) {
        return Err(invalid("controllers", "sample periods differ"));
    }
    let plant = discretize_zoh(model, ts)?;
    let n = plant.order();
    let m = model.machines();
    let q = model.control_channels();
    let total = n + controllers.iter().map(|c| c.order()).sum::<usize>();
    let mut acl = DMatrix::zeros(total, total);
    acl.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    let mut off = n;
    for c in controllers {
        let (out, inp) = (c.selected.output.column(), c.selected.input.column());
        if out >= m {
            return Err(Error::UnknownMachine(c.selected.output.index()));
        }
        if inp >= q {
            return Err(Error::UnknownMachine(c.selected.input.index()));
        }
        let d = c.order();
        let g = c.kf.steady_state_gain(&c.ss.a, 1e-12, 100_000)?;
        let k = &c.lqr.gain;
        let igh = DMatrix::<f64>::identity(d, d) - &g * &c.ss.c;
        let axh = &igh * (&c.ss.a - &c.ss.b * k);
        let hp = plant.c.row(out) / c.scale.output;
        let axx = &g * hp;
        let bp = plant.b.column(inp) * c.scale.input;
        acl.view_mut((off, off), (d, d)).copy_from(&axh);
        acl.view_mut((off, 0), (d, n)).copy_from(&axx);
        let bk = &bp * k;
        let top_h = -(&bk * &axh);
        let top_x = -(&bk * &axx);
        let mut tl = acl.view_mut((0, off), (n, d));
        tl += top_h;
        let mut tx = acl.view_mut((0, 0), (n, n));
        tx += top_x;
        off += d;
    }
    Ok((acl, ts))
}

/// Open- and closed-loop modal damping, saturation ignored.
pub fn closed_loop_eigen(model: &PlantModel, controllers: &[WacController]) -> Result<DampingReport> {
    let (acl, ts) = closed_loop_matrix(model, controllers)?;
    let n = model.states();
    let eig = eigenvalues(&acl);
    if eig.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::EigenFailure);
    }
    let rho = eig.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let mut closed = Vec::new();
    for z in eig {
        if z.norm() < 1e-12 || z.im <= 1e-12 {
            continue;
        }
        let s = cln(z) / ts;
        let share = participation_factors(&acl, z)[..n].iter().sum::<C64>().norm();
        closed.push(ClosedLoopMode {
            mode: ModeInfo::from_pole(s),
            plant_participation: share,
        });
    }
    closed.sort_by(|a, b| a.mode.hz.total_cmp(&b.mode.hz));
    let inter_area_closed = least_damped(
        closed
            .iter()
            .filter(|c| c.plant_participation >= PLANT_PARTICIPATION_MIN)
            .map(|c| c.mode),
        INTER_AREA_BAND,
    );
    Ok(DampingReport {
        open: model.oscillatory_modes(),
        closed,
        inter_area_open: model.inter_area_mode(),
        inter_area_closed,
        spectral_radius: rho,
        ts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::MachineId;

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let k = laplacian(3, &[(0, 1, 2.0), (1, 2, 0.5)]);
        for i in 0..3 {
            assert_eq!(k.row(i).sum(), 0.0);
        }
        assert_eq!(k[(1, 1)], 2.5);
    }

    #[test]
    fn default_two_area_modes() {
        let p = build_two_area(&TwoAreaParams::default()).unwrap();
        let osc = p.oscillatory_modes();
        let inband: Vec<_> = osc.iter().filter(|m| m.in_band(INTER_AREA_BAND)).collect();
        assert_eq!(inband.len(), 1);
        let ia = inband[0];
        assert!(ia.hz > 0.55 && ia.hz < 0.65, "{}", ia.hz);
        assert!(ia.zeta < 0.05);
        let local: Vec<_> = osc.iter().filter(|m| m.hz > 1.0 && m.hz < 1.2).collect();
        assert_eq!(local.len(), 2);
        assert!(p.stable);
    }

    #[test]
    fn single_zero_eigenvalue() {
        let p = build_two_area(&TwoAreaParams::default()).unwrap();
        let zeros = p.eigen.iter().filter(|m| m.pole.norm() < 1e-8).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = TwoAreaParams::default().config();
        cfg.machines[0].inertia = 0.0;
        assert!(PlantModel::new(cfg).is_err());
        let mut cfg = TwoAreaParams::default().config();
        cfg.stiffness[(0, 1)] += 1.0;
        assert!(PlantModel::new(cfg).is_err());
    }

    #[test]
    fn scalar_zoh() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let (ad, bd) = zoh(&a, &b, 0.1);
        assert!((ad[(0, 0)] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((bd[(0, 0)] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn pulse_sample_range() {
        let p = DisturbancePulse::fault(2, 1.0, 0.1, 0.5);
        let on: Vec<usize> = (0..200).filter(|&k| p.active(k, 0.01)).collect();
        assert_eq!(on.first(), Some(&100));
        assert_eq!(on.len(), 10);
        let step = DisturbancePulse {
            duration: f64::INFINITY,
            ..p
        };
        assert!(step.active(1_000_000, 0.01));
    }

    #[test]
    fn settling_time_cases() {
        assert_eq!(settling_time(&[0.0; 5], 0.1, 0.05), 0.0);
        let x = [1.0, 0.5, 0.2, 0.04, 0.01];
        assert!((settling_time(&x, 0.1, 0.05) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn switch_model_keeps_state() {
        let a = build_two_area(&TwoAreaParams::default()).unwrap();
        let b = build_two_area(&TwoAreaParams {
            topology: Topology::Shifted,
            ..Default::default()
        })
        .unwrap();
        let mut sim = PlantSimulator::new(a, 0.01).unwrap();
        sim.step(&[0.0; 4], &[0.3, 0.0, 0.0, 0.0]).unwrap();
        let x = sim.state().clone();
        sim.switch_model(b).unwrap();
        assert_eq!(sim.state(), &x);
        assert_eq!(sim.sample_index(), 1);
    }

    #[test]
    fn input_channel_bounds() {
        let p = build_two_area(&TwoAreaParams::default()).unwrap();
        let mut spec = SimulationSpec::new(0.01, 1.0);
        spec.inputs.push(ProbeSignal {
            machine: MachineId::new(5).unwrap(),
            values: vec![0.0; 10],
        });
        assert!(simulate(&p, &spec).is_err());
    }

    #[test]
    fn wind_is_seeded() {
        let p = build_two_area(&TwoAreaParams::default()).unwrap();
        let mut spec = SimulationSpec::new(0.01, 5.0);
        spec.wind.push(WindInjection {
            channel: 1,
            std_dev: 0.01,
            bandwidth_hz: 0.5,
            seed: 3,
        });
        let a = simulate(&p, &spec).unwrap();
        let b = simulate(&p, &spec).unwrap();
        assert_eq!(a.window, b.window);
        assert!(a.window.samples().amax() > 0.0);
    }
}

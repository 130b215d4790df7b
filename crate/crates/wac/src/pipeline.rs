//! The online loop: commission, then run the plant with the wide-area
//! controllers in the loop, regrouping and reselecting whenever the RMS
//! trigger fires.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wac_core::clock::Clock;
use wac_core::coherency::CoherencyGrouping;
use wac_core::measurements::{detect_disturbance, DisturbanceEvent, MeasurementWindow, ProbeSignal, StreamState};
use wac_core::modal::ControlLoopSelection;
use wac_core::plant::{settling_time, DisturbancePulse, PlantModel, PlantSimulator};
use wac_core::wac::WacController;
use wac_core::{DMatrix, DVector};

use crate::config::PipelineConfig;
use crate::error::{AtStage, Error, Result, Stage};
use crate::io;
use crate::json::{ControllerJson, DampingJson, EventJson, GroupingJson, ModeJson, ModelJson, SelectionJson};
use crate::stages::{self, Analysis, PlantPreset};
use crate::StdClock;

/// Pulse on one disturbance channel, optionally replacing the plant at the
/// same instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub time: f64,
    /// 1-based disturbance channel; for the presets, the machine.
    pub machine: usize,
    pub magnitude: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_to: Option<PlantPreset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedScenario {
    pub name: String,
    pub plant: PlantPreset,
    pub duration: f64,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

/// Recorded data instead of a plant: a probe record for commissioning and
/// an optional record replayed through the trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedScenario {
    pub name: String,
    pub probe_window: MeasurementWindow,
    pub probes: Vec<ProbeSignal>,
    pub replay: Option<MeasurementWindow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Simulated(SimulatedScenario),
    Recorded(RecordedScenario),
}

fn fault(time: f64, machine: usize, magnitude: f64) -> ScenarioEvent {
    ScenarioEvent {
        time,
        machine,
        magnitude,
        duration: 0.1,
        switch_to: None,
    }
}

impl Scenario {
    /// Fault on machine 3 at 1 s, two minutes of ringdown.
    pub fn two_area() -> Self {
        Scenario::Simulated(SimulatedScenario {
            name: "twoarea".into(),
            plant: PlantPreset::TwoArea,
            duration: 120.0,
            events: vec![fault(1.0, 3, 0.5)],
        })
    }

    /// Fault on machine 3 at 5 s; at 35 s the coupling shifts and machine 1
    /// is hit.
    pub fn switching() -> Self {
        Scenario::Simulated(SimulatedScenario {
            name: "switching".into(),
            plant: PlantPreset::TwoArea,
            duration: 70.0,
            events: vec![
                fault(5.0, 3, 0.5),
                ScenarioEvent {
                    switch_to: Some(PlantPreset::TwoAreaShifted),
                    ..fault(35.0, 1, 0.5)
                },
            ],
        })
    }

    /// No disturbance at all.
    pub fn quiet() -> Self {
        Scenario::Simulated(SimulatedScenario {
            name: "quiet".into(),
            plant: PlantPreset::TwoArea,
            duration: 30.0,
            events: Vec::new(),
        })
    }

    /// A preset name or the path of a scenario JSON file.
    pub fn load(spec: &str) -> Result<Self> {
        match spec {
            "twoarea" => Ok(Self::two_area()),
            "switching" => Ok(Self::switching()),
            "quiet" => Ok(Self::quiet()),
            _ => {
                let path = Path::new(spec);
                if !path.exists() {
                    return Err(Error::invalid(
                        Stage::Config,
                        format!("unknown scenario `{spec}` (twoarea, switching, quiet or a JSON file)"),
                    ));
                }
                Ok(Scenario::Simulated(io::read_json(path)?))
            }
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Scenario::Simulated(s) => &s.name,
            Scenario::Recorded(r) => &r.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingRecord {
    pub time: f64,
    /// `commissioning` or `trigger`.
    pub cause: String,
    pub event: Option<EventJson>,
    pub grouping: GroupingJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub time: f64,
    pub selection: SelectionJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub time: f64,
    pub controller: ControllerJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingJson {
    /// Machines `i, j` of `Δω_i − Δω_j`.
    pub pair: [usize; 2],
    pub open_s: f64,
    pub closed_s: f64,
}

/// Everything a run decides, without wall-clock times, so two runs with the
/// same config and seed serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub config: PipelineConfig,
    pub model: ModelJson,
    pub reduced_order: usize,
    pub mode: ModeJson,
    pub groupings: Vec<GroupingRecord>,
    /// Groupings started by the trigger.
    pub regroupings: usize,
    pub selections: Vec<SelectionRecord>,
    pub controllers: Vec<ControllerJson>,
    /// Controllers synthesized after commissioning because a selected loop
    /// changed.
    pub resynthesized: Vec<ControllerRecord>,
    /// Initial plant with the commissioned controllers.
    pub damping: Option<DampingJson>,
    /// Plant and controllers in force at the end, when either changed.
    pub final_damping: Option<DampingJson>,
    /// Measured from the first event up to the next one.
    pub settling: Vec<SettlingJson>,
    pub max_abs_control: Option<f64>,
    pub artifacts: Vec<String>,
}

/// Wall-clock seconds spent in each stage, file I/O excluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub commissioning_s: f64,
    pub identify_s: f64,
    pub analyze_s: f64,
    /// Every grouping, commissioning first.
    pub grouping_s: Vec<f64>,
    pub select_s: Vec<f64>,
    /// Every controller synthesis.
    pub synthesize_s: Vec<f64>,
    pub closed_loop_s: f64,
    pub online_s: f64,
    pub total_s: f64,
}

/// Sampled signals behind the CSV artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub ts: f64,
    pub pairs: Vec<(usize, usize)>,
    pub relative_closed: DMatrix<f64>,
    pub relative_open: DMatrix<f64>,
    pub controls: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub timing: StageTimes,
    pub series: Option<Series>,
    /// Controllers in force at the end of the run.
    pub controllers: Vec<WacController>,
}

const REPORT: &str = "report.json";
const TIMING: &str = "timing.json";
const MODEL: &str = "model.json";
const GROUPING: &str = "grouping.json";
const SELECTION: &str = "selection.json";
const CONTROLLERS: &str = "controllers.json";
const DAMPING: &str = "damping.json";
const REL_CLOSED: &str = "relative_speeds.csv";
const REL_OPEN: &str = "relative_speeds_open.csv";
const CONTROLS: &str = "controls.csv";

impl PipelineRun {
    /// Writes every artifact listed in the report into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let r = &self.report;
        io::write_json(&dir.join(REPORT), r)?;
        io::write_json(&dir.join(TIMING), &self.timing)?;
        io::write_json(&dir.join(MODEL), &r.model)?;
        io::write_json(&dir.join(GROUPING), &r.groupings[0].grouping)?;
        io::write_json(&dir.join(SELECTION), &r.selections[0].selection)?;
        io::write_json(&dir.join(CONTROLLERS), &r.controllers)?;
        if let Some(d) = &r.damping {
            io::write_json(&dir.join(DAMPING), d)?;
        }
        if let Some(s) = &self.series {
            let names: Vec<String> = s.pairs.iter().map(|(i, j)| format!("w{}-w{}", i + 1, j + 1)).collect();
            io::write_columns(&dir.join(REL_CLOSED), &names, 0.0, s.ts, &s.relative_closed)?;
            io::write_columns(&dir.join(REL_OPEN), &names, 0.0, s.ts, &s.relative_open)?;
            let u: Vec<String> = (1..=s.controls.ncols()).map(|i| format!("u{i}")).collect();
            io::write_columns(&dir.join(CONTROLS), &u, 0.0, s.ts, &s.controls)?;
        }
        Ok(())
    }
}

/// Armed/disarmed state machine on the RMS detector. After firing it waits
/// for `window_len` samples from the event, hands that window over for
/// regrouping, and re-arms once a check window is below
/// `rearm_fraction × threshold`.
#[derive(Debug, Clone)]
struct Trigger {
    armed: bool,
    pending: Option<(usize, DisturbanceEvent)>,
}

impl Trigger {
    fn new() -> Self {
        Trigger {
            armed: true,
            pending: None,
        }
    }

    fn observe(
        &mut self,
        stream: &StreamState,
        cfg: &PipelineConfig,
    ) -> Result<Option<(MeasurementWindow, DisturbanceEvent)>> {
        let rows = stream.total_rows();
        if let Some((row, ev)) = self.pending {
            if rows - row >= cfg.window_len {
                self.pending = None;
                let w = stream.extract_window(cfg.window_len).at(Stage::Online)?;
                return Ok(Some((w, ev)));
            }
            return Ok(None);
        }
        let t = &cfg.trigger;
        if !rows.is_multiple_of(t.check_every) || stream.len() < t.check_window {
            return Ok(None);
        }
        let w = stream.extract_window(t.check_window).at(Stage::Online)?;
        if self.armed {
            if let Some(ev) = detect_disturbance(&w, t.threshold).at(Stage::Online)? {
                self.armed = false;
                let row = ((ev.time - w.start_time()) / w.ts()).round() as usize + (rows - t.check_window);
                self.pending = Some((row, ev));
            }
        } else {
            let quiet = t.threshold * t.rearm_fraction;
            self.armed = detect_disturbance(&w, quiet).at(Stage::Online)?.is_none();
        }
        Ok(None)
    }
}

struct Active {
    ctl: WacController,
    held: f64,
}

/// Trigger, regrouping and the controller bank.
struct Online<'a> {
    cfg: &'a PipelineConfig,
    analysis: &'a Analysis,
    clock: &'a (dyn Clock + Sync),
    stream: StreamState,
    trigger: Trigger,
    active: Vec<Active>,
    groupings: Vec<GroupingRecord>,
    selections: Vec<SelectionRecord>,
    resynthesized: Vec<ControllerRecord>,
    timing: StageTimes,
}

impl<'a> Online<'a> {
    fn observe(&mut self, y: &DVector<f64>) -> Result<()> {
        let row: Vec<f64> = y.iter().copied().collect();
        self.stream.push_row(&row).at(Stage::Online)?;
        if let Some((w, ev)) = self.trigger.observe(&self.stream, self.cfg)? {
            let now = (self.stream.total_rows() - 1) as f64 * self.stream.ts();
            self.regroup(&w, &ev, now)?;
        }
        Ok(())
    }

    fn regroup(&mut self, w: &MeasurementWindow, ev: &DisturbanceEvent, now: f64) -> Result<()> {
        let g = stages::cluster(w, self.cfg, self.clock)?;
        self.timing.grouping_s.push(g.elapsed);
        log::info!("t = {now:.2} s: regrouped {:?}", g.assignment);
        self.groupings.push(GroupingRecord {
            time: now,
            cause: "trigger".into(),
            event: Some(ev.into()),
            grouping: GroupingJson::new(&g, false),
        });
        let t0 = self.clock.now();
        let sel = stages::select(self.analysis, &g, self.cfg)?;
        self.timing.select_s.push((self.clock.now() - t0).max(0.0));
        self.record_selection(&sel, now);

        let mut old: Vec<Option<Active>> = std::mem::take(&mut self.active).into_iter().map(Some).collect();
        let mut slots: Vec<Option<Active>> = Vec::with_capacity(sel.loops.len());
        let mut fresh = Vec::new();
        for l in &sel.loops {
            let kept = old
                .iter_mut()
                .find(|a| a.as_ref().is_some_and(|a| a.ctl.selected.pair() == l.pair()))
                .and_then(Option::take);
            match kept {
                Some(mut a) => {
                    a.ctl.selected = *l;
                    slots.push(Some(a));
                }
                None => {
                    fresh.push(*l);
                    slots.push(None);
                }
            }
        }
        let mut made = stages::synthesize_all(&self.analysis.reduced_model, &fresh, self.cfg, self.clock)?.into_iter();
        for slot in slots {
            let a = match slot {
                Some(a) => a,
                None => {
                    let ctl = made.next().expect("one controller per fresh loop");
                    self.timing.synthesize_s.push(ctl.elapsed);
                    self.resynthesized.push(ControllerRecord {
                        time: now,
                        controller: (&ctl).into(),
                    });
                    Active { ctl, held: 0.0 }
                }
            };
            self.active.push(a);
        }
        Ok(())
    }

    fn record_selection(&mut self, sel: &ControlLoopSelection, now: f64) {
        self.selections.push(SelectionRecord {
            time: now,
            selection: SelectionJson::new(sel, &self.analysis.residues, self.analysis.reduced.order()),
        });
    }

    /// Same sampling and hold as the core controller bank.
    fn control(&mut self, k: usize, y: &DVector<f64>, u: &mut [f64]) {
        if k.is_multiple_of(self.cfg.decimation) {
            for a in &mut self.active {
                a.held = a.ctl.step(y[a.ctl.selected.output.column()]);
            }
        }
        for a in &self.active {
            let ch = a.ctl.selected.input.column();
            if ch < u.len() {
                u[ch] += a.held;
            }
        }
    }
}

struct Trajectory {
    relative: DMatrix<f64>,
    controls: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
    final_plant: PlantModel,
}

fn run_plant(scn: &SimulatedScenario, cfg: &PipelineConfig, mut online: Option<&mut Online>) -> Result<Trajectory> {
    let plant = scn.plant.build()?;
    let ts = cfg.ts;
    let n = (scn.duration / ts).round() as usize;
    let m = plant.machines();
    let q = plant.control_channels();
    let r = plant.disturbance_channels();
    let mut pulses = Vec::new();
    let mut switches = Vec::new();
    for e in &scn.events {
        if e.machine == 0 || e.machine > r {
            return Err(Error::invalid(Stage::Simulate, format!("event channel {} out of range", e.machine)));
        }
        pulses.push(DisturbancePulse::fault(e.machine - 1, e.time, e.duration, e.magnitude));
        if let Some(p) = e.switch_to {
            switches.push(((e.time / ts).round() as usize, p.build()?));
        }
    }
    let mut sim = PlantSimulator::new(plant, ts).at(Stage::Simulate)?;
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let mut relative = DMatrix::zeros(n, pairs.len());
    let mut controls = DMatrix::zeros(n, q);
    let mut u = vec![0.0; q];
    let mut d = vec![0.0; r];
    for k in 0..n {
        for (kk, p) in &switches {
            if *kk == k {
                sim.switch_model(p.clone()).at(Stage::Simulate)?;
            }
        }
        let y = sim.output();
        for (c, &(i, j)) in pairs.iter().enumerate() {
            relative[(k, c)] = y[i] - y[j];
        }
        u.iter_mut().for_each(|v| *v = 0.0);
        if let Some(on) = online.as_deref_mut() {
            on.observe(&y)?;
            on.control(k, &y, &mut u);
        }
        controls.row_mut(k).copy_from_slice(&u);
        d.iter_mut().for_each(|v| *v = 0.0);
        for p in &pulses {
            if p.active(k, ts) {
                d[p.channel] += p.magnitude;
            }
        }
        sim.step(&u, &d).at(Stage::Simulate)?;
    }
    Ok(Trajectory {
        relative,
        controls,
        pairs,
        final_plant: sim.model().clone(),
    })
}

/// Runs every stage in order and returns the report and series; nothing is
/// written (see [`PipelineRun::write`]).
pub fn run_pipeline(cfg: &PipelineConfig, scenario: &Scenario) -> Result<PipelineRun> {
    cfg.validate()?;
    let clock = StdClock::new();
    let mut timing = StageTimes::default();

    let (plant, probe_window, probes) = match scenario {
        Scenario::Simulated(s) => {
            let plant = s.plant.build()?;
            let t0 = clock.now();
            let rec = stages::commission(&plant, cfg)?;
            timing.commissioning_s = clock.now() - t0;
            (Some(plant), rec.window, rec.inputs)
        }
        Scenario::Recorded(r) => (None, r.probe_window.clone(), r.probes.clone()),
    };

    let (model, t_id) = stages::identify_record(&probe_window, &probes, cfg, &clock)?;
    timing.identify_s = t_id;
    let t0 = clock.now();
    let analysis = stages::analyze(&model, cfg)?;
    timing.analyze_s = clock.now() - t0;

    let gw = probe_window.decimate(cfg.decimation).at(Stage::Cluster)?;
    let g0: CoherencyGrouping = stages::cluster(&gw, cfg, &clock)?;
    timing.grouping_s.push(g0.elapsed);
    let t0 = clock.now();
    let sel0 = stages::select(&analysis, &g0, cfg)?;
    timing.select_s.push(clock.now() - t0);
    let ctls0 = stages::synthesize_all(&analysis.reduced_model, &sel0.loops, cfg, &clock)?;
    timing.synthesize_s.extend(ctls0.iter().map(|c| c.elapsed));

    let damping = match &plant {
        Some(p) => {
            let t0 = clock.now();
            let d = stages::closed_loop(p, &ctls0)?;
            timing.closed_loop_s = clock.now() - t0;
            Some(DampingJson::from(&d))
        }
        None => None,
    };

    let mut online = Online {
        cfg,
        analysis: &analysis,
        clock: &clock,
        stream: StreamState::new(gw.machines(), cfg.ts, cfg.buffer, 0.0).at(Stage::Online)?,
        trigger: Trigger::new(),
        active: ctls0.iter().cloned().map(|ctl| Active { ctl, held: 0.0 }).collect(),
        groupings: vec![GroupingRecord {
            time: 0.0,
            cause: "commissioning".into(),
            event: None,
            grouping: GroupingJson::new(&g0, false),
        }],
        selections: Vec::new(),
        resynthesized: Vec::new(),
        timing: StageTimes::default(),
    };
    online.record_selection(&sel0, 0.0);

    let t0 = clock.now();
    let mut series = None;
    let mut settling = Vec::new();
    let mut max_abs_control = None;
    let mut final_plant = plant.clone();
    match scenario {
        Scenario::Simulated(s) => {
            let closed = run_plant(s, cfg, Some(&mut online))?;
            let open = run_plant(s, cfg, None)?;
            settling = settling_table(s, cfg, &open, &closed);
            max_abs_control = Some(closed.controls.amax());
            final_plant = Some(closed.final_plant);
            series = Some(Series {
                ts: cfg.ts,
                pairs: closed.pairs,
                relative_closed: closed.relative,
                relative_open: open.relative,
                controls: closed.controls,
            });
        }
        Scenario::Recorded(r) => {
            if let Some(w) = &r.replay {
                online.stream = StreamState::new(w.machines(), w.ts(), cfg.buffer, 0.0).at(Stage::Online)?;
                for row in 0..w.len() {
                    let y = w.samples().row(row).transpose();
                    online.observe(&y)?;
                }
            }
        }
    }
    timing.online_s = clock.now() - t0;

    let final_ctls: Vec<WacController> = online.active.iter().map(|a| a.ctl.clone()).collect();
    let changed_plant = match (scenario, &final_plant, &plant) {
        (Scenario::Simulated(_), Some(f), Some(p)) => f.config != p.config,
        _ => false,
    };
    let changed_ctls = final_ctls.len() != ctls0.len()
        || final_ctls.iter().zip(&ctls0).any(|(a, b)| a.selected.pair() != b.selected.pair());
    let final_damping = match &final_plant {
        Some(p) if (changed_plant || changed_ctls) && !final_ctls.is_empty() => {
            Some(DampingJson::from(&stages::closed_loop(p, &final_ctls)?))
        }
        _ => None,
    };

    let mut artifacts: Vec<String> = [REPORT, TIMING, MODEL, GROUPING, SELECTION, CONTROLLERS]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if damping.is_some() {
        artifacts.push(DAMPING.into());
    }
    if series.is_some() {
        artifacts.extend([REL_CLOSED, REL_OPEN, CONTROLS].iter().map(|s| s.to_string()));
    }

    timing.grouping_s.extend(online.timing.grouping_s);
    timing.select_s.extend(online.timing.select_s);
    timing.synthesize_s.extend(online.timing.synthesize_s);
    timing.total_s = clock.now();

    let regroupings = online.groupings.len() - 1;
    let report = RunReport {
        scenario: scenario.name().to_owned(),
        config: cfg.clone(),
        model: (&model).into(),
        reduced_order: analysis.reduced.order(),
        mode: (&analysis.mode).into(),
        groupings: online.groupings,
        regroupings,
        selections: online.selections,
        controllers: ctls0.iter().map(ControllerJson::from).collect(),
        resynthesized: online.resynthesized,
        damping,
        final_damping,
        settling,
        max_abs_control,
        artifacts,
    };
    Ok(PipelineRun {
        report,
        timing,
        series,
        controllers: final_ctls,
    })
}

/// Settling of every relative speed between the first event and the next.
fn settling_table(s: &SimulatedScenario, cfg: &PipelineConfig, open: &Trajectory, closed: &Trajectory) -> Vec<SettlingJson> {
    let mut times: Vec<f64> = s.events.iter().map(|e| e.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let Some(&first) = times.first() else {
        return Vec::new();
    };
    let n = closed.relative.nrows();
    let a = ((first / cfg.ts).round() as usize).min(n);
    let b = times.get(1).map_or(n, |t| ((t / cfg.ts).round() as usize).min(n));
    closed
        .pairs
        .iter()
        .enumerate()
        .map(|(c, &(i, j))| {
            let seg = |t: &Trajectory| -> Vec<f64> { t.relative.column(c).rows(a, b - a).iter().copied().collect() };
            SettlingJson {
                pair: [i + 1, j + 1],
                open_s: settling_time(&seg(open), cfg.ts, cfg.settle_fraction),
                closed_s: settling_time(&seg(closed), cfg.ts, cfg.settle_fraction),
            }
        })
        .collect()
}

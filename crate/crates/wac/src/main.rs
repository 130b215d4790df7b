use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use wac_core::measurements::{MachineId, ProbeSignal};
use wac_core::plant::{simulate, DisturbancePulse, SimulationSpec};
use wac::config::PipelineConfig;
use wac::error::{AtStage, Error, Result, Stage};
use wac::json::{ControllerJson, DampingJson, GroupingJson, ModelJson, PlantJson, SelectionJson};
use wac::pipeline::{RecordedScenario, Scenario};
use wac::stages::{self, load_plant};
use wac::{io, run_pipeline, StdClock};

/// Wide-area damping control: coherency grouping, identification, loop
/// selection and controller synthesis. Log level comes from `WAC_LOG`.
#[derive(Parser)]
#[command(name = "wac", version)]
struct Cli {
    /// Pipeline config JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a plant and write its speeds as measurement CSV.
    Simulate {
        /// twoarea, twoarea-shifted, tenmachine or a plant JSON file.
        #[arg(long, default_value = "twoarea")]
        plant: String,
        /// Run the sequential PRBS commissioning test.
        #[arg(long)]
        probe: bool,
        /// Pulse `machine:start:duration:magnitude` (repeatable).
        #[arg(long, value_parser = parse_fault)]
        fault: Vec<(usize, f64, f64, f64)>,
        /// Seconds to simulate; ignored with --probe.
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the control inputs as probe CSV.
        #[arg(long)]
        probes_out: Option<PathBuf>,
    },
    /// Group machines by coherency.
    Cluster {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        landmarks: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Keep every n-th row first.
        #[arg(long, default_value_t = 1)]
        decimate: usize,
        /// First row of the window (after decimation).
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Rows in the window; defaults to the rest of the file.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        ts: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identify a common-denominator ARX model from a probe record.
    Identify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        decimate: Option<usize>,
        #[arg(long)]
        ts: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick one control loop per group from the model residues.
    Select {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grouping: PathBuf,
        #[arg(long)]
        reject: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design the LQR/Kalman controller of every selected loop.
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        u_limit: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Open- and closed-loop modal damping of a plant with controllers.
    Closedloop {
        #[arg(long, default_value = "twoarea")]
        plant: String,
        #[arg(long)]
        controllers: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline and write its artifacts.
    Run {
        /// twoarea, switching, quiet or a scenario JSON file.
        #[arg(long, default_value = "twoarea", conflicts_with = "input")]
        scenario: String,
        /// Recorded probe measurements instead of a simulated plant.
        #[arg(long = "in", requires = "probes")]
        input: Option<PathBuf>,
        #[arg(long)]
        probes: Option<PathBuf>,
        /// Recorded measurements replayed through the trigger.
        #[arg(long, requires = "input")]
        replay: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "wac-run")]
        out: PathBuf,
    },
    /// Print the default config or a preset plant as JSON.
    Defaults {
        #[arg(value_parser = ["config", "plant"])]
        what: String,
        #[arg(long, default_value = "twoarea")]
        plant: String,
    },
}

fn parse_fault(s: &str) -> std::result::Result<(usize, f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || format!("`{s}` is not machine:start:duration:magnitude");
    if parts.len() != 4 {
        return Err(bad());
    }
    let m = parts[0].parse().map_err(|_| bad())?;
    let f = |i: usize| parts[i].parse::<f64>().map_err(|_| bad());
    Ok((m, f(1)?, f(2)?, f(3)?))
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let s = serde_json::to_string_pretty(value).expect("artifacts serialize");
            print_line(&s)
        }
    }
}

/// A closed pipe (`wac ... | head`) ends output quietly.
fn print_line(s: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let clock = StdClock::new();
    match cli.cmd {
        Cmd::Simulate {
            plant,
            probe,
            fault,
            duration,
            out,
            probes_out,
        } => {
            let plant = load_plant(&plant)?;
            let mut spec = if probe {
                stages::probe_spec(&plant, &cfg)
            } else {
                SimulationSpec::new(cfg.ts, duration)
            };
            for (m, start, dur, mag) in fault {
                if m == 0 {
                    return Err(Error::invalid(Stage::Simulate, "fault machines are numbered from 1"));
                }
                spec.pulses.push(DisturbancePulse::fault(m - 1, start, dur, mag));
            }
            let res = simulate(&plant, &spec).at(Stage::Simulate)?;
            io::write_measurements(&out, &res.window)?;
            if let Some(p) = probes_out {
                let n = res.window.len();
                let probes: Vec<ProbeSignal> = (0..plant.control_channels())
                    .map(|c| ProbeSignal {
                        machine: MachineId::from_column(c),
                        values: res.controls.column(c).iter().copied().take(n).collect(),
                    })
                    .collect();
                io::write_probes(&p, &probes, res.window.start_time(), res.window.ts())?;
            }
        }
        Cmd::Cluster {
            input,
            k,
            landmarks,
            sigma,
            decimate,
            start,
            len,
            ts,
            out,
        } => {
            cfg.k = k.unwrap_or(cfg.k);
            cfg.landmarks = landmarks.or(cfg.landmarks);
            cfg.sigma = sigma.or(cfg.sigma);
            let w = io::read_measurements(&input, ts)?.decimate(decimate).at(Stage::Cluster)?;
            let len = len.unwrap_or(w.len().saturating_sub(start));
            let w = w.slice(start, len).at(Stage::Cluster)?;
            let g = stages::cluster(&w, &cfg, &clock)?;
            emit(out.as_deref(), &GroupingJson::new(&g, true))?;
        }
        Cmd::Identify {
            input,
            probes,
            order,
            decimate,
            ts,
            out,
        } => {
            cfg.arx_order = order.unwrap_or(cfg.arx_order);
            cfg.decimation = decimate.unwrap_or(cfg.decimation);
            let w = io::read_measurements(&input, ts)?;
            let p = io::read_probes(&probes)?;
            let (model, elapsed) = stages::identify_record(&w, &p, &cfg, &clock)?;
            log::info!("identified in {elapsed:.3} s, {} iterations", model.iterations);
            emit(out.as_deref(), &ModelJson::from(&model))?;
        }
        Cmd::Select {
            model,
            grouping,
            reject,
            out,
        } => {
            cfg.reject_below = reject.unwrap_or(cfg.reject_below);
            let m = io::read_json::<ModelJson>(&model)?.to_model()?;
            let g = io::read_json::<GroupingJson>(&grouping)?.to_grouping()?;
            let a = stages::analyze(&m, &cfg)?;
            let sel = stages::select(&a, &g, &cfg)?;
            emit(out.as_deref(), &SelectionJson::new(&sel, &a.residues, a.reduced.order()))?;
        }
        Cmd::Synthesize {
            model,
            selection,
            rho,
            u_limit,
            out,
        } => {
            cfg.rho = rho.unwrap_or(cfg.rho);
            cfg.u_limit = u_limit.unwrap_or(cfg.u_limit);
            let m = io::read_json::<ModelJson>(&model)?.to_model()?;
            let sel: SelectionJson = io::read_json(&selection)?;
            let a = stages::analyze(&m, &cfg)?;
            if a.reduced.order() != sel.reduced_order {
                return Err(Error::invalid(
                    Stage::Synthesize,
                    format!(
                        "selection was made on a reduced model of order {}, this model reduces to {}",
                        sel.reduced_order,
                        a.reduced.order()
                    ),
                ));
            }
            let ctls = stages::synthesize_all(&a.reduced_model, &sel.loops(Stage::Synthesize)?, &cfg, &clock)?;
            emit(out.as_deref(), &ctls.iter().map(ControllerJson::from).collect::<Vec<_>>())?;
        }
        Cmd::Closedloop {
            plant,
            controllers,
            out,
        } => {
            let plant = load_plant(&plant)?;
            let js: Vec<ControllerJson> = io::read_json(&controllers)?;
            let ctls = js.iter().map(ControllerJson::to_controller).collect::<Result<Vec<_>>>()?;
            let report = stages::closed_loop(&plant, &ctls)?;
            emit(out.as_deref(), &DampingJson::from(&report))?;
        }
        Cmd::Run {
            scenario,
            input,
            probes,
            replay,
            k,
            out,
        } => {
            cfg.k = k.unwrap_or(cfg.k);
            let scn = match (input, probes) {
                (Some(i), Some(p)) => Scenario::Recorded(RecordedScenario {
                    name: i.display().to_string(),
                    probe_window: io::read_measurements(&i, None)?,
                    probes: io::read_probes(&p)?,
                    replay: replay.map(|r| io::read_measurements(&r, None)).transpose()?,
                }),
                _ => Scenario::load(&scenario)?,
            };
            let run = run_pipeline(&cfg, &scn)?;
            run.write(&out)?;
            let r = &run.report;
            log::info!("{} groupings, {} controllers", r.groupings.len(), r.controllers.len());
            print_line(&out.join("report.json").display().to_string())?;
        }
        Cmd::Defaults { what, plant } => {
            if what == "config" {
                emit(None, &cfg)?;
            } else {
                emit(None, &PlantJson::from(&load_plant(&plant)?.config))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("WAC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({"error": {"stage": "usage", "message": e.to_string().trim_end()}});
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use arraytac::analysis::calibrate::OPEN_LOOP_TARGET_HZ;
use arraytac::analysis::csv::{bode_csv, fd_csv, gnuplot_script, shore_csv, step_csv};
use arraytac::analysis::{
    calibrate_plant, calibrate_shore, force_displacement_curve, frequency_sweep, iou, kendall_tau, step_response, sus_score,
    AnnotationExport, FdConfig, LoopKind, ShoreConfig, StepConfig, SweepConfig,
};
use arraytac::config::SimConfig;
use arraytac::control::PenaltyOrder;
use arraytac::engine::server::{self, ServerConfig};
use arraytac::engine::{ClockMode, Engine, EngineConfig};
use arraytac::scene::Scene;
use arraytac::teletouch::scan::{grid_scan, scan_trajectory, StiffnessMap, PROBE_QUANTUM_MM};
use arraytac::teletouch::{start_relay, LocalSite, Phantom, RelayConfig, RemoteConfig, RemoteSite};

#[derive(Parser)]
#[command(name = "arraytac", version, about = "Simulated piezo-lever tactile display")]
struct Cli {
    /// Plant and controller JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Penalty exponent of the stiffness law.
    #[arg(long, global = true, value_parser = ["1", "2", "3"])]
    penalty_order: Option<String>,
    /// Also write a gnuplot script next to the CSV given with --out.
    #[arg(long, global = true)]
    gnuplot: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the display and serve its state over newline-delimited JSON.
    Serve {
        /// Extra scenes: `.tacmap` files or JSON ingest manifests.
        #[arg(long)]
        scene: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Remote palpation through a frame relay.
    #[command(subcommand)]
    Teletouch(Tele),
    /// Frequency response; CSV of gain and phase per frequency.
    Sweep {
        #[arg(long = "loop", value_enum, default_value = "closed")]
        kind: LoopArg,
        #[command(flatten)]
        out: Out,
    },
    /// 10–90% step metrics and the trace.
    Step {
        #[arg(long, default_value_t = 3.0)]
        mm: f64,
        #[command(flatten)]
        out: Out,
    },
    /// Force-displacement curve of a flat platform under increasing load.
    FdCurve {
        #[arg(long, default_value_t = 0.7)]
        k: f64,
        /// Defaults to --penalty-order (or the config's order).
        #[arg(long, value_parser = ["1", "2", "3"])]
        n: Option<String>,
        #[arg(long, default_value_t = 1.5)]
        max_force: f64,
        #[command(flatten)]
        out: Out,
    },
    /// Fit the plant damping or the Shore 00 regression.
    #[command(subcommand)]
    Calibrate(Calibrate),
    /// Score study outputs: IoU, Kendall tau, SUS, localization.
    #[command(subcommand)]
    Metrics(Metrics),
}

#[derive(Subcommand)]
enum Tele {
    /// Forward frames between one local and one remote site.
    Relay {
        #[arg(long, default_value = "127.0.0.1:7979")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, default_value_t = 0)]
        jitter_ms: u64,
    },
    /// Drive the local display from a scripted grid scan of the remote
    /// phantom and report latency and the stiffest spots found.
    Local {
        #[arg(long, default_value = "127.0.0.1:7979")]
        addr: String,
        #[arg(long, default_value_t = 3.0)]
        scan_step_mm: f64,
        /// Seconds spent at each scan point.
        #[arg(long, default_value_t = 0.002)]
        dwell_s: f64,
        #[arg(long, default_value_t = 2)]
        peaks: usize,
        #[arg(long, default_value_t = 12.0)]
        min_separation_mm: f64,
    },
    /// Answer poses with probe presses on a phantom.
    Remote {
        #[arg(long, default_value = "127.0.0.1:7979")]
        addr: String,
        /// Built-in name (two_tumor, four_tumor, breast) or JSON file.
        #[arg(long, default_value = "two_tumor")]
        phantom: String,
    },
}

#[derive(Subcommand)]
enum Calibrate {
    /// Fit load damping so the open-loop bandwidth hits a target.
    Plant {
        #[arg(long, default_value_t = OPEN_LOOP_TARGET_HZ)]
        target_hz: f64,
        /// Write the calibrated config JSON here.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Press the display at each k and fit the Shore 00 regression.
    Shore {
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Subcommand)]
enum Metrics {
    /// `{"a": [bool], "b": [bool]}`
    Iou {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// `{"ranking": [f64], "truth": [f64]}`
    Tau {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// `{"responses": [10 × 1..=5]}`
    Sus {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Annotation export scored against phantom inclusion centers.
    Loc {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the built-in phantom named by the export's scene_id.
        #[arg(long)]
        phantom: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopArg {
    Open,
    Closed,
}

#[derive(Args)]
struct Out {
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn penalty(s: &str) -> PenaltyOrder {
    match s {
        "1" => PenaltyOrder::Linear,
        "3" => PenaltyOrder::Cubic,
        _ => PenaltyOrder::Quadratic,
    }
}

fn emit(out: &Out, gnuplot: bool, csv: &str, plot: impl FnOnce(&str) -> String) -> Result<()> {
    match &out.out {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            if gnuplot {
                let gp = path.with_extension("gp");
                std::fs::write(&gp, plot(&path.display().to_string()))
                    .with_context(|| format!("writing {}", gp.display()))?;
                eprintln!("wrote {} and {}", path.display(), gp.display());
            }
        }
        None => {
            if gnuplot {
                bail!("--gnuplot needs --out to name the CSV");
            }
            print!("{csv}");
        }
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let sim = match &cli.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    }
    .with_penalty_order(cli.penalty_order.as_deref().map(penalty));
    let params = sim.plant;
    let ctrl = sim.controller();

    match cli.cmd {
        Command::Serve { scene, bind, seed } => {
            let mut scenes = Scene::builtins();
            // Scenes given on the command line come first, so the first one
            // is what clients see on connect.
            for (i, p) in scene.iter().enumerate() {
                let s = Scene::load(p).with_context(|| format!("loading scene {}", p.display()))?;
                scenes.insert(i, s);
            }
            let engine = EngineConfig {
                params,
                controller: ctrl,
                seed,
                ..EngineConfig::default()
            };
            server::serve(bind.as_str(), ServerConfig { engine, scenes })?;
        }
        Command::Teletouch(Tele::Relay { addr, delay_ms, jitter_ms }) => {
            let relay = start_relay(
                addr.as_str(),
                RelayConfig {
                    delay: Duration::from_millis(delay_ms),
                    jitter: Duration::from_millis(jitter_ms),
                    seed: 0,
                },
            )?;
            relay.wait();
        }
        Command::Teletouch(Tele::Remote { addr, phantom }) => {
            let phantom = Phantom::resolve(&phantom)?;
            let answered = RemoteSite::connect(addr.as_str(), phantom, RemoteConfig::default())?.wait()?;
            log::info!("remote site answered {answered} poses");
        }
        Command::Teletouch(Tele::Local {
            addr,
            scan_step_mm,
            dwell_s,
            peaks,
            min_separation_mm,
        }) => {
            if !(scan_step_mm > 0.0 && dwell_s > 0.0) {
                bail!("scan step and dwell must be positive");
            }
            let mut local = LocalSite::connect(addr.as_str())?;
            let points = grid_scan(arraytac::scene::WORKSPACE_MM, scan_step_mm, 2.5);
            let mut traj = scan_trajectory(&points, dwell_s, 2.0);
            let mut engine = Engine::new(EngineConfig {
                params,
                controller: ctrl,
                ..EngineConfig::default()
            })?;
            local.set_recording(true);
            let duration = points.len() as f64 * dwell_s;
            engine.run(&mut traj, &mut local, Some(duration), ClockMode::RealTime, |_| true)?;
            local.wait_for_echo(local.last_seq(), Duration::from_secs(2));
            let records = local.take_records();
            let stats = local.stats();
            let map = StiffnessMap::from_records(&records, PROBE_QUANTUM_MM);
            let found: Vec<_> = map
                .peaks(peaks, min_separation_mm)
                .into_iter()
                .map(|(x, y, k)| serde_json::json!({"x": x, "y": y, "k": k}))
                .collect();
            let report = serde_json::json!({
                "poses_sent": local.last_seq(),
                "replies": records.len(),
                "mean_rtt_s": stats.mean_rtt_s(),
                "mean_end_to_end_s": stats.mean_end_to_end_s(),
                "max_end_to_end_s": stats.max_end_to_end_s,
                "budget_exceeded": stats.budget_exceeded(),
                "peaks": found,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            local.close();
        }
        Command::Sweep { kind, out } => {
            let kind = match kind {
                LoopArg::Open => LoopKind::Open,
                LoopArg::Closed => LoopKind::Closed,
            };
            let bode = frequency_sweep(&params, &ctrl, kind, &SweepConfig::default())?;
            eprintln!(
                "bandwidth {:.2} Hz (-3 dB at {:?} Hz, -90 deg at {:?} Hz)",
                bode.bandwidth_hz().unwrap_or(f64::NAN),
                bode.w_bw_hz,
                bode.w_pw_hz
            );
            emit(&out, cli.gnuplot, &bode_csv(&bode), |csv| {
                gnuplot_script(csv, "frequency response", (1, "frequency (Hz)"), &[(2, "gain (dB)"), (3, "phase (deg)")], true)
            })?;
        }
        Command::Step { mm, out } => {
            let r = step_response(&params, &ctrl, &StepConfig { step_mm: mm, ..StepConfig::default() })?;
            let m = &r.metrics;
            eprintln!(
                "rise {:?} s, fall {:?} s, overshoot {:.3}%, steady-state error {:.3e} um",
                m.rise_time_s, m.fall_time_s, m.overshoot_pct, m.steady_state_error_um
            );
            emit(&out, cli.gnuplot, &step_csv(&r), |csv| {
                gnuplot_script(csv, "step response", (1, "time (s)"), &[(2, "reference (mm)"), (3, "height (mm)")], false)
            })?;
        }
        Command::FdCurve { k, n, max_force, out } => {
            let fd = FdConfig {
                k,
                order: n.as_deref().map_or(ctrl.penalty_order, penalty),
                max_force_n: max_force,
                ..FdConfig::default()
            };
            let curve = force_displacement_curve(&params, &ctrl, &fd)?;
            eprintln!(
                "yield intercept {:.4} N, post-yield slope {:.4} N/mm{}",
                curve.yield_intercept_n.unwrap_or(f64::NAN),
                curve.post_yield_slope_n_per_mm.unwrap_or(f64::NAN),
                if curve.unstable { ", unstable law" } else { "" }
            );
            emit(&out, cli.gnuplot, &fd_csv(&curve, &params), |csv| {
                gnuplot_script(csv, "force-displacement", (2, "displacement (mm)"), &[(1, "force (N)"), (5, "closed form (N)")], false)
            })?;
        }
        Command::Calibrate(Calibrate::Plant { target_hz, save }) => {
            let cal = calibrate_plant(&params, target_hz)?;
            eprintln!(
                "damping {:.6} N s/m gives {:.3} Hz after {} sweeps",
                cal.params.load.damping_n_s_per_m, cal.achieved_hz, cal.sweeps
            );
            let cfg = SimConfig {
                plant: cal.params,
                controller: sim.controller,
            };
            let json = serde_json::to_string_pretty(&cfg)?;
            match save {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Command::Calibrate(Calibrate::Shore { out }) => {
            let cal = calibrate_shore(&params, &ctrl, &ShoreConfig::default())?;
            let r = cal.regression;
            eprintln!("k = {:.6} * shore + {:.6} (R^2 {:.5})", r.slope, r.intercept, r.r2);
            emit(&out, cli.gnuplot, &shore_csv(&cal), |csv| {
                gnuplot_script(csv, "Shore 00 calibration", (4, "Shore 00"), &[(1, "k")], false)
            })?;
        }
        Command::Metrics(m) => {
            let value = match m {
                Metrics::Iou { input } => {
                    #[derive(Deserialize)]
                    struct In {
                        a: Vec<bool>,
                        b: Vec<bool>,
                    }
                    let i: In = read_json(&input)?;
                    serde_json::json!({ "iou": iou(&i.a, &i.b)? })
                }
                Metrics::Tau { input } => {
                    #[derive(Deserialize)]
                    struct In {
                        ranking: Vec<f64>,
                        truth: Vec<f64>,
                    }
                    let i: In = read_json(&input)?;
                    serde_json::json!({ "tau": kendall_tau(&i.ranking, &i.truth)? })
                }
                Metrics::Sus { input } => {
                    #[derive(Deserialize)]
                    struct In {
                        responses: Vec<u8>,
                    }
                    let i: In = read_json(&input)?;
                    serde_json::json!({ "sus": sus_score(&i.responses)? })
                }
                Metrics::Loc { input, phantom } => {
                    let export = AnnotationExport::load(&input)?;
                    let phantom = match phantom {
                        Some(p) => Phantom::resolve(&p)?,
                        None => Phantom::builtin(&export.scene_id).with_context(|| {
                            format!("scene {:?} is not a built-in phantom; pass --phantom", export.scene_id)
                        })?,
                    };
                    serde_json::to_value(export.score(&phantom.centers_mm())?)?
                }
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
    }
    Ok(())
}

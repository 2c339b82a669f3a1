//! Anchoring the simulated plant to target dynamics, and the Shore 00
//! calibration of the stiffness parameter.

use serde::{Deserialize, Serialize};

use super::sweep::{frequency_sweep, log_space, parallel_map, LoopKind, SweepConfig};
use super::AnalysisError;
use crate::control::{ControllerConfig, RenderCommand};
use crate::plant::PlantParams;
use crate::shore::{shore_from_deformation, ShoreRegression, CALIBRATION_FORCES_N};
use crate::unit::Unit;

/// Open-loop target the default plant is calibrated to, Hz.
pub const OPEN_LOOP_TARGET_HZ: f64 = 15.29;

const DAMPING_RANGE: (f64, f64) = (0.5, 500.0);

/// A sweep concentrated around `target_hz`, cheap enough to run inside the
/// bisection.
pub fn focused_sweep(target_hz: f64) -> SweepConfig {
    SweepConfig {
        frequencies_hz: log_space(target_hz / 4.0, target_hz * 4.0, 24),
        min_cycles: 3,
        max_cycles: 8,
        nominal_window_s: 0.25,
        ..SweepConfig::default()
    }
}

pub fn open_loop_bandwidth(params: &PlantParams, sweep: &SweepConfig) -> Result<f64, AnalysisError> {
    let cfg = ControllerConfig::for_plant(params);
    let bode = frequency_sweep(params, &cfg, LoopKind::Open, sweep)?;
    bode.bandwidth_hz()
        .ok_or_else(|| AnalysisError::Divergence("no bandwidth crossing inside the sweep".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantCalibration {
    pub params: PlantParams,
    pub achieved_hz: f64,
    pub sweeps: usize,
}

/// Tune the load damping until the open-loop bandwidth is within 10 % of
/// `target_hz` (aiming for 0.5 %). Parameters already within tolerance come
/// back unchanged.
pub fn calibrate_plant(params: &PlantParams, target_hz: f64) -> Result<PlantCalibration, AnalysisError> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(AnalysisError::Input(format!("bad target {target_hz} Hz")));
    }
    let sweep = focused_sweep(target_hz);
    let at = |c: f64| -> Result<f64, AnalysisError> {
        let mut p = *params;
        p.load.damping_n_s_per_m = c;
        open_loop_bandwidth(&p, &sweep)
    };
    let current = open_loop_bandwidth(params, &sweep)?;
    let mut sweeps = 1;
    if ((current - target_hz) / target_hz).abs() < 0.1 {
        return Ok(PlantCalibration {
            params: *params,
            achieved_hz: current,
            sweeps,
        });
    }

    let (mut lo, mut hi) = DAMPING_RANGE;
    // Bandwidth falls as damping rises. Probe the ends with their own grids
    // so the crossing lies inside the sweep.
    let reach = |c: f64, guess: f64| -> Result<f64, AnalysisError> {
        let mut p = *params;
        p.load.damping_n_s_per_m = c;
        open_loop_bandwidth(&p, &SweepConfig { frequencies_hz: log_space(guess / 100.0, guess * 100.0, 40), ..focused_sweep(guess) })
    };
    let fastest = reach(lo, target_hz)?;
    let slowest = reach(hi, target_hz)?;
    sweeps += 2;
    if target_hz > fastest || target_hz < slowest {
        return Err(AnalysisError::Unreachable {
            target_hz,
            lo_hz: slowest,
            hi_hz: fastest,
        });
    }
    let mut best = (f64::INFINITY, params.load.damping_n_s_per_m, current);
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        let bw = match at(mid) {
            Ok(bw) => bw,
            // No crossing inside the focused grid: far faster than the target.
            Err(AnalysisError::Divergence(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        sweeps += 1;
        let rel = ((bw - target_hz) / target_hz).abs();
        if rel < best.0 {
            best = (rel, mid, bw);
        }
        if rel < 0.005 {
            break;
        }
        if bw > target_hz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rel, damping, achieved_hz) = best;
    if rel >= 0.1 {
        return Err(AnalysisError::Divergence(format!(
            "calibration stalled {:.1} % away from {target_hz} Hz",
            rel * 100.0
        )));
    }
    let mut out = *params;
    out.load.damping_n_s_per_m = damping;
    log::info!("calibrated damping {damping} N*s/m -> {achieved_hz:.3} Hz after {sweeps} sweeps");
    Ok(PlantCalibration {
        params: out,
        achieved_hz,
        sweeps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShoreSample {
    pub k: f64,
    pub force_n: f64,
    pub deformation_mm: f64,
    pub shore: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShoreCalibration {
    pub regression: ShoreRegression,
    pub samples: Vec<ShoreSample>,
    /// Mean reading per k level, in input order.
    pub per_k: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShoreConfig {
    pub ks: Vec<f64>,
    pub forces_n: Vec<f64>,
    pub platform_height_mm: f64,
    pub press_s: f64,
}

impl Default for ShoreConfig {
    fn default() -> Self {
        Self {
            ks: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            forces_n: CALIBRATION_FORCES_N.to_vec(),
            platform_height_mm: 3.0,
            press_s: 0.4,
        }
    }
}

/// Equilibrium indentation of a flat platform pressed with `force_n`.
pub fn press_deformation(
    params: &PlantParams,
    config: &ControllerConfig,
    k: f64,
    force_n: f64,
    platform_height_mm: f64,
    press_s: f64,
) -> Result<f64, AnalysisError> {
    let cmd = RenderCommand::new(platform_height_mm, k, 0.0)?;
    let mut unit = Unit::new(*params, *config, 0, platform_height_mm)?;
    unit.hold(&cmd, 0.0, 0.05)?;
    let r = unit.hold(&cmd, force_n, press_s)?;
    Ok((platform_height_mm - r.height_mm).max(0.0))
}

pub fn calibrate_shore(
    params: &PlantParams,
    config: &ControllerConfig,
    shore: &ShoreConfig,
) -> Result<ShoreCalibration, AnalysisError> {
    if shore.forces_n.is_empty() {
        return Err(AnalysisError::Input("no probe forces".into()));
    }
    let jobs: Vec<(f64, f64)> = shore
        .ks
        .iter()
        .flat_map(|&k| shore.forces_n.iter().map(move |&f| (k, f)))
        .collect();
    let samples = parallel_map(&jobs, |&(k, f)| {
        press_deformation(params, config, k, f, shore.platform_height_mm, shore.press_s).map(|d| ShoreSample {
            k,
            force_n: f,
            deformation_mm: d,
            shore: shore_from_deformation(d),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let per_k: Vec<(f64, f64)> = shore
        .ks
        .iter()
        .map(|&k| {
            let readings: Vec<f64> = samples.iter().filter(|s| s.k == k).map(|s| s.shore).collect();
            (k, readings.iter().sum::<f64>() / readings.len() as f64)
        })
        .collect();
    let ks: Vec<f64> = per_k.iter().map(|p| p.0).collect();
    let readings: Vec<f64> = per_k.iter().map(|p| p.1).collect();
    let regression = ShoreRegression::fit(&ks, &readings)?;
    Ok(ShoreCalibration {
        regression,
        samples,
        per_k,
    })
}

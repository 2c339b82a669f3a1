//! Frequency-response identification by sinusoidal sweep.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::fit::least_squares;
use super::AnalysisError;
use crate::control::{ControlStage, ControllerConfig, RenderCommand};
use crate::plant::{PlantParams, INNER_DT, STROKE_MM};
use crate::unit::Unit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    /// Drive voltage straight to the piezo, no feedback.
    Open,
    /// Height reference through the rendering controller.
    Closed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub frequencies_hz: Vec<f64>,
    pub amplitude_mm: f64,
    pub center_mm: f64,
    pub min_cycles: u32,
    pub max_cycles: u32,
    /// Time spent per point is roughly this long once the cycle count is
    /// clamped into `min_cycles..=max_cycles`.
    pub nominal_window_s: f64,
    pub settle_s: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            frequencies_hz: log_space(0.5, 400.0, 40),
            amplitude_mm: 0.05,
            center_mm: 2.5,
            min_cycles: 3,
            max_cycles: 20,
            nominal_window_s: 1.0,
            settle_s: 0.1,
        }
    }
}

impl SweepConfig {
    pub fn cycles_at(&self, f_hz: f64) -> u32 {
        ((f_hz * self.nominal_window_s).round() as u32).clamp(self.min_cycles, self.max_cycles)
    }

    /// Simulated seconds needed for the whole sweep.
    pub fn simulated_seconds(&self) -> f64 {
        self.frequencies_hz
            .iter()
            .map(|&f| self.settle_s + (self.cycles_at(f) + 1) as f64 / f)
            .sum()
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodePoint {
    pub frequency_hz: f64,
    pub gain_db: f64,
    pub phase_deg: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodeResult {
    pub kind: LoopKind,
    pub points: Vec<BodePoint>,
    /// First −3 dB crossing, Hz.
    pub w_bw_hz: Option<f64>,
    /// First −90° crossing, Hz.
    pub w_pw_hz: Option<f64>,
}

impl BodeResult {
    /// The smaller of the two crossings.
    pub fn bandwidth_hz(&self) -> Option<f64> {
        match (self.w_bw_hz, self.w_pw_hz) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

fn log_crossing(points: &[BodePoint], level: f64, value: impl Fn(&BodePoint) -> f64) -> Option<f64> {
    let valid: Vec<&BodePoint> = points.iter().filter(|p| !p.clipped).collect();
    let first = valid.first()?;
    if value(first) < level {
        return Some(first.frequency_hz);
    }
    valid.windows(2).find_map(|w| {
        let (v0, v1) = (value(w[0]), value(w[1]));
        if v0 >= level && v1 < level {
            let (l0, l1) = (w[0].frequency_hz.ln(), w[1].frequency_hz.ln());
            Some((l0 + (level - v0) / (v1 - v0) * (l1 - l0)).exp())
        } else {
            None
        }
    })
}

/// Gain and phase of the unit's height response at one frequency.
pub fn measure_point(
    params: &PlantParams,
    config: &ControllerConfig,
    kind: LoopKind,
    f_hz: f64,
    sweep: &SweepConfig,
) -> Result<BodePoint, AnalysisError> {
    if !(f_hz > 0.0 && f_hz.is_finite()) {
        return Err(AnalysisError::Input(format!("bad frequency {f_hz}")));
    }
    let amp = sweep.amplitude_mm;
    let center = sweep.center_mm;
    if amp <= 0.0 || center - amp < 0.0 || center + amp > STROKE_MM {
        return Err(AnalysisError::Input(
            "sweep amplitude must keep the reference inside the stroke".into(),
        ));
    }
    let mut unit = Unit::new(*params, *config, 0, center)?;
    let w = 2.0 * PI * f_hz;
    let cycles = sweep.cycles_at(f_hz);
    // Discard the settle time plus one full cycle, then fit an integer
    // number of cycles.
    let skip = ((sweep.settle_s + 1.0 / f_hz) / INNER_DT).round() as usize;
    let keep = (cycles as f64 / f_hz / INNER_DT).round() as usize;
    let mut ts = Vec::with_capacity(keep);
    let mut ys = Vec::with_capacity(keep);
    let mut clipped = false;
    let u_per_mm = 1000.0 / (params.amplification * params.beta_um_per_v);
    let u_center = params.u_base_v + center * u_per_mm;
    for i in 0..skip + keep {
        let t = i as f64 * INNER_DT;
        let reference = center + amp * (w * t).sin();
        let y = unit.measured_height_mm();
        let report = match kind {
            LoopKind::Open => unit.drive(u_center + amp * u_per_mm * (w * t).sin(), 0.0)?,
            LoopKind::Closed => unit.tick(&RenderCommand::new(reference, 1.0, 0.0)?, 0.0)?,
        };
        if i >= skip {
            ts.push(t);
            ys.push(y);
            let at_stop = y <= 1e-9 || y >= STROKE_MM - 1e-9;
            let saturated = match report.control {
                Some(c) => {
                    c.state.stage == ControlStage::Yielding
                        || c.u_output_v <= params.u_base_v
                        || c.u_output_v >= c.state.output_clamp_v.1
                }
                None => report.u_output_v <= params.u_base_v || report.u_output_v >= params.u_max_v,
            };
            clipped |= at_stop || saturated;
        }
    }
    let coef = least_squares(
        3,
        ts.len(),
        |s, phi| {
            phi[0] = (w * ts[s]).sin();
            phi[1] = (w * ts[s]).cos();
            phi[2] = 1.0;
        },
        &ys,
    )?;
    let gain = (coef[0].powi(2) + coef[1].powi(2)).sqrt() / amp;
    Ok(BodePoint {
        frequency_hz: f_hz,
        gain_db: 20.0 * gain.log10(),
        phase_deg: coef[1].atan2(coef[0]).to_degrees(),
        clipped,
    })
}

/// Map `f` over `items` on all available cores, preserving order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break local;
                        }
                        local.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Sweep the configured frequencies (in parallel) and locate the crossings.
pub fn frequency_sweep(
    params: &PlantParams,
    config: &ControllerConfig,
    kind: LoopKind,
    sweep: &SweepConfig,
) -> Result<BodeResult, AnalysisError> {
    if sweep.frequencies_hz.is_empty() {
        return Err(AnalysisError::Input("empty frequency grid".into()));
    }
    let mut points = parallel_map(&sweep.frequencies_hz, |&f| {
        measure_point(params, config, kind, f, sweep)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    // Unwrap phase so it stays continuous across the grid.
    for i in 1..points.len() {
        let prev = points[i - 1].phase_deg;
        let mut ph = points[i].phase_deg;
        while ph - prev > 180.0 {
            ph -= 360.0;
        }
        while ph - prev < -180.0 {
            ph += 360.0;
        }
        points[i].phase_deg = ph;
    }
    Ok(BodeResult {
        kind,
        w_bw_hz: log_crossing(&points, -3.0, |p| p.gain_db),
        w_pw_hz: log_crossing(&points, -90.0, |p| p.phase_deg),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_space_endpoints() {
        let g = log_space(0.5, 400.0, 40);
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[39] - 400.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn crossing_interpolates_in_log_frequency() {
        let pts = [
            BodePoint { frequency_hz: 10.0, gain_db: -1.0, phase_deg: -10.0, clipped: false },
            BodePoint { frequency_hz: 1000.0, gain_db: -5.0, phase_deg: -100.0, clipped: false },
        ];
        let f = log_crossing(&pts, -3.0, |p| p.gain_db).unwrap();
        assert!((f - 100.0).abs() < 1e-9);
        let mut clipped = pts;
        clipped[1].clipped = true;
        assert_eq!(log_crossing(&clipped, -3.0, |p| p.gain_db), None);
    }

    #[test]
    fn low_frequency_open_loop_is_unity() {
        let p = PlantParams::default();
        let cfg = ControllerConfig::for_plant(&p);
        let pt = measure_point(&p, &cfg, LoopKind::Open, 1.0, &SweepConfig::default()).unwrap();
        assert!(pt.gain_db.abs() < 0.1, "{pt:?}");
        assert!(!pt.clipped);
    }
}

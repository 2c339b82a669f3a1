//! Step-response metrics of the closed loop.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::control::{ControllerConfig, RenderCommand};
use crate::plant::{PlantParams, INNER_DT, STROKE_MM};
use crate::unit::Unit;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 10–90 % rise time of the up-step, s. `None` for a zero step.
    pub rise_time_s: Option<f64>,
    /// 90–10 % fall time of the return step, s.
    pub fall_time_s: Option<f64>,
    /// Final tracking error of the up-step at the end-effector, µm.
    pub steady_state_error_um: f64,
    /// Peak excursion past the target, percent of the step.
    pub overshoot_pct: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t_s: f64,
    pub reference_mm: f64,
    pub height_mm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub metrics: StepMetrics,
    pub trace: Vec<TracePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub step_mm: f64,
    pub hold_s: f64,
    /// Trace decimation, inner ticks per recorded sample.
    pub record_every: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            step_mm: 3.0,
            hold_s: 0.3,
            record_every: 10,
        }
    }
}

/// First time after `from` at which the signal crosses `level` going in
/// direction `rising`, linearly interpolated between samples.
fn crossing(trace: &[(f64, f64)], from: usize, level: f64, rising: bool) -> Option<f64> {
    trace[from..].windows(2).find_map(|w| {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        let hit = if rising {
            y0 < level && y1 >= level
        } else {
            y0 > level && y1 <= level
        };
        hit.then(|| t0 + (level - y0) / (y1 - y0) * (t1 - t0))
    })
}

/// Step 0 → `step_mm` and back, each held for `hold_s`.
pub fn step_response(
    params: &PlantParams,
    config: &ControllerConfig,
    step: &StepConfig,
) -> Result<StepResult, AnalysisError> {
    let h = step.step_mm;
    if !(0.0..=STROKE_MM).contains(&h) {
        return Err(AnalysisError::Input(format!("step {h} mm is outside the stroke")));
    }
    let mut unit = Unit::new(*params, *config, 0, 0.0)?;
    let n = (step.hold_s / INNER_DT).round() as usize;
    let mut up = Vec::with_capacity(n);
    let mut down = Vec::with_capacity(n);
    let mut trace = Vec::new();
    for phase in 0..2 {
        let target = if phase == 0 { h } else { 0.0 };
        let cmd = RenderCommand::new(target, 1.0, 0.0)?;
        for i in 0..n {
            let t = (phase * n + i) as f64 * INNER_DT;
            let y = unit.state().x_actuator_mm;
            if phase == 0 { up.push((t, y)) } else { down.push((t, y)) }
            if i % step.record_every.max(1) == 0 {
                trace.push(TracePoint { t_s: t, reference_mm: target, height_mm: y });
            }
            unit.tick(&cmd, 0.0)?;
        }
    }
    if h == 0.0 {
        return Ok(StepResult {
            metrics: StepMetrics {
                rise_time_s: None,
                fall_time_s: None,
                steady_state_error_um: 0.0,
                overshoot_pct: 0.0,
            },
            trace,
        });
    }
    let final_up = up.last().map(|p| p.1).unwrap_or(0.0);
    let final_down = down.last().map(|p| p.1).unwrap_or(0.0);
    let tol = 0.01 * h;
    if (final_up - h).abs() > tol || final_down.abs() > tol {
        return Err(AnalysisError::Divergence(format!(
            "response did not settle: ended at {final_up:.4} mm and {final_down:.4} mm"
        )));
    }
    let rise = match (crossing(&up, 0, 0.1 * h, true), crossing(&up, 0, 0.9 * h, true)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let fall = match (crossing(&down, 0, 0.9 * h, false), crossing(&down, 0, 0.1 * h, false)) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let peak = up.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(StepResult {
        metrics: StepMetrics {
            rise_time_s: rise,
            fall_time_s: fall,
            steady_state_error_um: (final_up - h).abs() * 1000.0,
            overshoot_pct: ((peak - h) / h * 100.0).max(0.0),
        },
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossing_interpolates() {
        let tr = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)];
        assert_eq!(crossing(&tr, 0, 0.5, true), Some(0.5));
        assert_eq!(crossing(&tr, 0, 1.5, false), None);
    }

    #[test]
    fn zero_step_is_flagged() {
        let p = PlantParams::default();
        let cfg = ControllerConfig::for_plant(&p);
        let r = step_response(
            &p,
            &cfg,
            &StepConfig {
                step_mm: 0.0,
                hold_s: 0.05,
                record_every: 10,
            },
        )
        .unwrap();
        assert_eq!(r.metrics.rise_time_s, None);
        assert_eq!(r.metrics.overshoot_pct, 0.0);
    }
}

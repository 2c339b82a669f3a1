//! Quasi-static force–displacement curves of a loaded unit.

use serde::{Deserialize, Serialize};

use super::fit::poly_fit;
use super::AnalysisError;
use crate::control::{ControlStage, ControllerConfig, PenaltyOrder, RenderCommand, StiffnessLaw};
use crate::plant::PlantParams;
use crate::unit::Unit;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub k: f64,
    pub order: PenaltyOrder,
    pub target_height_mm: f64,
    pub max_force_n: f64,
    pub steps: usize,
    /// Hold time per force level, s.
    pub dwell_s: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            k: 0.7,
            order: PenaltyOrder::Quadratic,
            target_height_mm: 3.0,
            max_force_n: 1.5,
            steps: 30,
            dwell_s: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdPoint {
    pub force_n: f64,
    pub displacement_mm: f64,
    /// Piezo-side shortfall, µm.
    pub epsilon_um: f64,
    pub yielding: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdCurve {
    pub law: StiffnessLaw,
    pub points: Vec<FdPoint>,
    /// Force at zero displacement extrapolated from the post-yield samples.
    pub yield_intercept_n: Option<f64>,
    /// Slope of the post-yield fit at zero displacement, N/mm.
    pub post_yield_slope_n_per_mm: Option<f64>,
    /// The law lost positive stiffness; the curve stops there.
    pub unstable: bool,
    /// The end-effector reached the lower stop; the curve stops there.
    pub bottomed: bool,
}

/// Closed-form force at end-effector displacement `d_mm` past yield.
pub fn closed_form_force(law: &StiffnessLaw, params: &PlantParams, displacement_mm: f64) -> f64 {
    law.force_at_n(params, params.height_to_piezo_um(displacement_mm))
}

/// Closed-form force-displacement samples of the yield phase (no loop).
pub fn closed_form_curve(law: &StiffnessLaw, params: &PlantParams, max_displacement_mm: f64, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|i| {
            let d = max_displacement_mm * i as f64 / n as f64;
            (d, closed_form_force(law, params, d))
        })
        .collect()
}

pub fn force_displacement_curve(
    params: &PlantParams,
    config: &ControllerConfig,
    fd: &FdConfig,
) -> Result<FdCurve, AnalysisError> {
    if !(fd.max_force_n > 0.0) || fd.steps == 0 {
        return Err(AnalysisError::Input("need a positive max force and at least one step".into()));
    }
    let mut cfg = *config;
    cfg.penalty_order = fd.order;
    let cmd = RenderCommand::new(fd.target_height_mm, fd.k, 0.0)?;
    let mut unit = Unit::new(*params, cfg, 0, fd.target_height_mm)?;
    let law = unit.controller().law_for(fd.k, fd.target_height_mm);
    unit.hold(&cmd, 0.0, fd.dwell_s)?;

    let mut points = Vec::with_capacity(fd.steps + 1);
    let (mut unstable, mut bottomed) = (false, false);
    for i in 0..=fd.steps {
        let force = fd.max_force_n * i as f64 / fd.steps as f64;
        let r = unit.hold(&cmd, force, fd.dwell_s)?;
        let displacement = fd.target_height_mm - r.measured_height_mm;
        let epsilon = params.height_to_piezo_um(displacement);
        let yielding = unit.pid().stage == ControlStage::Yielding;
        if r.height_mm <= 1e-9 {
            bottomed = true;
            break;
        }
        if yielding && !law.is_stable_at(epsilon) {
            unstable = true;
            break;
        }
        points.push(FdPoint {
            force_n: force,
            displacement_mm: displacement,
            epsilon_um: epsilon,
            yielding,
        });
    }

    let post: Vec<&FdPoint> = points.iter().filter(|p| p.yielding).collect();
    let degree = fd.order.exponent() as usize;
    let fit = if post.len() > degree {
        let xs: Vec<f64> = post.iter().map(|p| p.displacement_mm).collect();
        let ys: Vec<f64> = post.iter().map(|p| p.force_n).collect();
        poly_fit(&xs, &ys, degree).ok()
    } else {
        None
    };
    Ok(FdCurve {
        law,
        yield_intercept_n: fit.as_ref().map(|f| f.coeffs[0]),
        post_yield_slope_n_per_mm: fit.as_ref().map(|f| f.derivative(0.0)),
        points,
        unstable,
        bottomed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::compute_yield_force;

    #[test]
    fn linear_law_has_scaled_slope() {
        let p = PlantParams::default();
        let cfg = ControllerConfig::for_plant(&p);
        let fd = FdConfig {
            k: 0.8,
            order: PenaltyOrder::Linear,
            max_force_n: 2.0,
            steps: 20,
            ..FdConfig::default()
        };
        let c = force_displacement_curve(&p, &cfg, &fd).unwrap();
        let slope = c.post_yield_slope_n_per_mm.unwrap();
        let expect = 0.8 * p.passive_stiffness_n_per_mm();
        assert!(((slope - expect) / expect).abs() < 1e-3, "{slope} vs {expect}");
        let fy = compute_yield_force(&c.law, &p);
        assert!(((c.yield_intercept_n.unwrap() - fy) / fy).abs() < 1e-3);
    }
}

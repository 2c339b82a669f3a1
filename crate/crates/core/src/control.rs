//! Per-unit rendering controller: a PID position loop, the
//! two-stage stiffness law, and vibrotactile friction superposed on the
//! position reference.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{PlantParams, STROKE_MM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("{what} = {value} is outside {lo}..={hi}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid controller configuration: {0}")]
    Config(String),
}

fn check_range(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64, ControlError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(ControlError::OutOfRange { what, value, lo, hi })
    }
}

/// Per-unit target handed to the controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderCommand {
    pub target_height_mm: f64,
    pub k: f64,
    pub f: f64,
}

impl Default for RenderCommand {
    fn default() -> Self {
        Self {
            target_height_mm: 0.0,
            k: 1.0,
            f: 0.0,
        }
    }
}

impl RenderCommand {
    pub fn new(target_height_mm: f64, k: f64, f: f64) -> Result<Self, ControlError> {
        Ok(Self {
            target_height_mm: check_range("target_height_mm", target_height_mm, 0.0, STROKE_MM)?,
            k: check_range("k", k, 0.0, 1.0)?,
            f: check_range("f", f, 0.0, 1.0)?,
        })
    }

    /// Clamp every field into range; NaN falls back to the default.
    pub fn sanitized(self) -> Self {
        let d = Self::default();
        let fix = |v: f64, dv: f64, hi: f64| if v.is_nan() { dv } else { v.clamp(0.0, hi) };
        Self {
            target_height_mm: fix(self.target_height_mm, d.target_height_mm, STROKE_MM),
            k: fix(self.k, d.k, 1.0),
            f: fix(self.f, d.f, 1.0),
        }
    }
}

/// Exponent of the penalty term in the yield-phase law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PenaltyOrder {
    Linear,
    #[default]
    Quadratic,
    Cubic,
}

impl PenaltyOrder {
    pub fn exponent(self) -> i32 {
        match self {
            Self::Linear => 1,
            Self::Quadratic => 2,
            Self::Cubic => 3,
        }
    }
}

impl TryFrom<u8> for PenaltyOrder {
    type Error = ControlError;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        match n {
            1 => Ok(Self::Linear),
            2 => Ok(Self::Quadratic),
            3 => Ok(Self::Cubic),
            _ => Err(ControlError::Config(format!("penalty order must be 1, 2 or 3, got {n}"))),
        }
    }
}

impl From<PenaltyOrder> for u8 {
    fn from(o: PenaltyOrder) -> u8 {
        o.exponent() as u8
    }
}

/// Voltage at which the PID stage hands over to the yield stage.
pub fn compute_u_limit(k: f64, u_base_v: f64, u_max_v: f64) -> Result<f64, ControlError> {
    let k = check_range("k", k, 0.0, 1.0)?;
    Ok((k + 4.0) / 5.0 * (u_max_v - u_base_v) + u_base_v)
}

/// Yield-phase law for one command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StiffnessLaw {
    pub order: PenaltyOrder,
    pub k: f64,
    pub u_limit_v: f64,
    pub x_piezo_limit_um: f64,
    pub x_piezo_target_um: f64,
}

impl StiffnessLaw {
    pub fn new(
        params: &PlantParams,
        k: f64,
        order: PenaltyOrder,
        target_height_mm: f64,
    ) -> Result<Self, ControlError> {
        let u_limit_v = compute_u_limit(k, params.u_base_v, params.u_max_v)?;
        let target = check_range("target_height_mm", target_height_mm, 0.0, STROKE_MM)?;
        Ok(Self {
            order,
            k,
            u_limit_v,
            x_piezo_limit_um: params.beta_um_per_v * (u_limit_v - params.u_base_v),
            x_piezo_target_um: params.height_to_piezo_um(target),
        })
    }

    fn base(&self, epsilon_um: f64) -> f64 {
        (1.0 - (1.0 - self.k) * epsilon_um / self.x_piezo_limit_um).max(0.0)
    }

    /// Deformation beyond which the penalty base reaches zero, µm.
    pub fn admissible_epsilon_um(&self) -> f64 {
        if self.k >= 1.0 {
            f64::INFINITY
        } else {
            self.x_piezo_limit_um / (1.0 - self.k)
        }
    }

    pub fn penalty(&self, epsilon_um: f64) -> f64 {
        self.base(epsilon_um.max(0.0)).powi(self.order.exponent())
    }

    /// Commanded piezo displacement during the yield phase, µm.
    pub fn commanded_displacement_um(&self, epsilon_um: f64) -> f64 {
        self.x_piezo_limit_um * self.penalty(epsilon_um)
    }

    /// Analytic d x_cmd / d ε.
    pub fn slope(&self, epsilon_um: f64) -> f64 {
        let n = self.order.exponent();
        -(n as f64) * (1.0 - self.k) * self.base(epsilon_um.max(0.0)).powi(n - 1)
    }

    /// Analytic d² x_cmd / d ε², 1/µm.
    pub fn curvature(&self, epsilon_um: f64) -> f64 {
        let n = self.order.exponent();
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        nf * (nf - 1.0) * (1.0 - self.k).powi(2) / self.x_piezo_limit_um
            * self.base(epsilon_um.max(0.0)).powi(n - 2)
    }

    /// Stiffness felt at the end-effector during the yield phase, N/mm.
    pub fn equivalent_stiffness_n_per_mm(&self, params: &PlantParams, epsilon_um: f64) -> f64 {
        params.passive_stiffness_n_per_mm() * (self.slope(epsilon_um) + 1.0)
    }

    /// True when the yield phase still pushes back at this deformation.
    pub fn is_stable_at(&self, epsilon_um: f64) -> bool {
        self.slope(epsilon_um) > -1.0
    }

    /// Static force at the end-effector for a piezo-side deformation ε.
    pub fn force_at_n(&self, params: &PlantParams, epsilon_um: f64) -> f64 {
        params.k_piezo_n_per_um / params.amplification
            * (self.commanded_displacement_um(epsilon_um) - self.x_piezo_target_um + epsilon_um)
    }
}

/// Output voltage of the yield stage for a deformation ε (µm, piezo side).
pub fn feedforward_output(
    law: &StiffnessLaw,
    epsilon_um: f64,
    u_base_v: f64,
) -> Result<f64, ControlError> {
    if !(law.x_piezo_limit_um > 0.0) {
        return Err(ControlError::Config(
            "stiffness law has zero displacement headroom".into(),
        ));
    }
    let u = (law.u_limit_v - u_base_v) * law.penalty(epsilon_um) + u_base_v;
    Ok(u.clamp(u_base_v, law.u_limit_v))
}

/// Force at which the yield stage engages.
pub fn compute_yield_force(law: &StiffnessLaw, params: &PlantParams) -> f64 {
    params.k_piezo_n_per_um / params.amplification
        * (law.x_piezo_limit_um - law.x_piezo_target_um).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    pub amplitude_max_mm: f64,
    pub frequency_max_hz: f64,
    pub gain_max: f64,
}

impl Default for FrictionConfig {
    fn default() -> Self {
        Self {
            amplitude_max_mm: 0.2,
            frequency_max_hz: 200.0,
            gain_max: 2.0,
        }
    }
}

impl FrictionConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        check_range("amplitude_max_mm", self.amplitude_max_mm, 0.0, STROKE_MM)?;
        check_range("frequency_max_hz", self.frequency_max_hz, 0.0, 512.0)?;
        check_range("gain_max", self.gain_max, 1.0, 100.0)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrictionOutput {
    pub offset_mm: f64,
    pub gain_scale: f64,
    pub amplitude_mm: f64,
    pub frequency_hz: f64,
}

/// Vibration added to the position reference for friction level `f`.
pub fn friction_offset(f: f64, t: f64, cfg: &FrictionConfig) -> FrictionOutput {
    let f = if f.is_nan() { 0.0 } else { f.clamp(0.0, 1.0) };
    let amplitude_mm = f * cfg.amplitude_max_mm;
    let frequency_hz = f * cfg.frequency_max_hz;
    FrictionOutput {
        offset_mm: amplitude_mm * (2.0 * PI * frequency_hz * t).sin(),
        gain_scale: 1.0 + f * (cfg.gain_max - 1.0),
        amplitude_mm,
        frequency_hz,
    }
}

/// PID gains in volts per micrometre of piezo-side error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp_v_per_um: f64,
    pub ki_v_per_um_s: f64,
    pub kd_v_s_per_um: f64,
    pub derivative_cutoff_hz: f64,
    /// Rate limit on the shape reference, mm/s.
    pub slew_limit_mm_per_s: f64,
}

/// Crossover used for the committed default gains.
pub const DEFAULT_LOOP_BANDWIDTH_HZ: f64 = 200.0;

impl PidGains {
    /// Gains whose zeros cancel the load poles, leaving an integrator loop
    /// that crosses over at `bandwidth_hz`.
    pub fn tuned_for(params: &PlantParams, bandwidth_hz: f64) -> Self {
        let m = params.load.mass_kg;
        let c = params.load.damping_n_s_per_m;
        let k = params.lever_stiffness_n_per_m();
        let wc = 2.0 * PI * bandwidth_hz;
        let kd = wc * m / k;
        let beta = params.beta_um_per_v;
        Self {
            kp_v_per_um: kd * c / m / beta,
            ki_v_per_um_s: kd * k / m / beta,
            kd_v_s_per_um: kd / beta,
            derivative_cutoff_hz: 10.0 * bandwidth_hz,
            slew_limit_mm_per_s: 300.0,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = [
            self.kp_v_per_um,
            self.ki_v_per_um_s,
            self.kd_v_s_per_um,
        ]
        .iter()
        .all(|g| g.is_finite() && *g >= 0.0)
            && self.derivative_cutoff_hz > 0.0
            && self.slew_limit_mm_per_s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ControlError::Config(
                "gains must be non-negative; cutoff and slew limit positive".into(),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlStage {
    #[default]
    Tracking,
    Yielding,
}

/// Per-unit controller memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    pub integrator_um_s: f64,
    pub last_error_um: f64,
    pub derivative_um_per_s: f64,
    /// Rate-limited shape reference; `None` until the first tick.
    pub reference_mm: Option<f64>,
    pub stage: ControlStage,
    pub output_clamp_v: (f64, f64),
}

impl PidState {
    pub fn new(gains: PidGains, params: &PlantParams) -> Self {
        Self {
            gains,
            integrator_um_s: 0.0,
            last_error_um: 0.0,
            derivative_um_per_s: 0.0,
            reference_mm: None,
            stage: ControlStage::Tracking,
            output_clamp_v: (params.u_base_v, params.u_max_v),
        }
    }
}

/// Result of one controller tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    pub u_output_v: f64,
    pub x_piezo_cmd_um: f64,
    pub epsilon_um: f64,
    pub state: PidState,
}

/// Controller settings shared by all units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub gains: PidGains,
    pub friction: FrictionConfig,
    pub penalty_order: PenaltyOrder,
    pub exit_hysteresis_v: f64,
}

impl ControllerConfig {
    pub fn for_plant(params: &PlantParams) -> Self {
        Self {
            gains: PidGains::tuned_for(params, DEFAULT_LOOP_BANDWIDTH_HZ),
            friction: FrictionConfig::default(),
            penalty_order: PenaltyOrder::default(),
            exit_hysteresis_v: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        self.gains.validate()?;
        self.friction.validate()?;
        check_range("exit_hysteresis_v", self.exit_hysteresis_v, 0.0, 10.0)?;
        Ok(())
    }
}

/// Stateless controller; all memory lives in [`PidState`].
#[derive(Clone, Copy, Debug)]
pub struct Controller {
    pub params: PlantParams,
    pub config: ControllerConfig,
}

impl Controller {
    pub fn new(params: PlantParams, config: ControllerConfig) -> Result<Self, ControlError> {
        params
            .validate()
            .map_err(|e| ControlError::Config(e.to_string()))?;
        config.validate()?;
        Ok(Self { params, config })
    }

    pub fn initial_state(&self) -> PidState {
        PidState::new(self.config.gains, &self.params)
    }

    /// The stiffness law the controller applies for `cmd` at reference height.
    pub fn law_for(&self, k: f64, reference_mm: f64) -> StiffnessLaw {
        StiffnessLaw::new(
            &self.params,
            k.clamp(0.0, 1.0),
            self.config.penalty_order,
            reference_mm.clamp(0.0, STROKE_MM),
        )
        .expect("clamped inputs are in range")
    }

    /// One inner tick. `measured_height_mm` comes from the Hall inverse.
    pub fn tick(
        &self,
        pid: &PidState,
        measured_height_mm: f64,
        cmd: &RenderCommand,
        t: f64,
        dt: f64,
    ) -> ControlOutput {
        let p = &self.params;
        let g = &pid.gains;
        let cmd = cmd.sanitized();
        let measured = if measured_height_mm.is_finite() {
            measured_height_mm.clamp(0.0, STROKE_MM)
        } else {
            pid.reference_mm.unwrap_or(0.0)
        };
        let dt = if dt.is_finite() && dt > 0.0 { dt } else { crate::plant::INNER_DT };

        let first = pid.reference_mm.is_none();
        let prev_ref = pid.reference_mm.unwrap_or(measured);
        let max_step = g.slew_limit_mm_per_s * dt;
        let shaped = prev_ref + (cmd.target_height_mm - prev_ref).clamp(-max_step, max_step);
        let fr = friction_offset(cmd.f, t, &self.config.friction);
        let reference = (shaped + fr.offset_mm).clamp(0.0, STROKE_MM);
        let law = self.law_for(cmd.k, reference);

        let x_meas = p.height_to_piezo_um(measured);
        let error = law.x_piezo_target_um - x_meas;
        let raw_d = if first { 0.0 } else { (error - pid.last_error_um) / dt };
        let alpha = dt / (dt + 1.0 / (2.0 * PI * g.derivative_cutoff_hz));
        let derivative = pid.derivative_um_per_s + alpha * (raw_d - pid.derivative_um_per_s);
        // Bumpless start: the first tick assumes the unit rests where it
        // was measured and seeds the integrator with the matching drive.
        let held = if first && g.ki_v_per_um_s > 0.0 {
            x_meas / p.beta_um_per_v / g.ki_v_per_um_s
        } else {
            pid.integrator_um_s
        };
        let integrator = held + error * dt;

        let u_pid = p.u_base_v
            + fr.gain_scale * g.kp_v_per_um * error
            + g.ki_v_per_um_s * integrator
            + g.kd_v_s_per_um * derivative;
        let epsilon = error.max(0.0);
        let yield_out = || {
            feedforward_output(&law, epsilon, p.u_base_v).unwrap_or(law.u_limit_v)
        };

        let track = |u: f64| -> (ControlStage, f64, bool) {
            if u >= law.u_limit_v {
                (ControlStage::Yielding, yield_out(), false)
            } else if u <= p.u_base_v {
                (ControlStage::Tracking, p.u_base_v, false)
            } else {
                (ControlStage::Tracking, u, true)
            }
        };
        let (stage, u_out, integrate) = match pid.stage {
            ControlStage::Tracking => track(u_pid),
            ControlStage::Yielding => {
                if u_pid < law.u_limit_v - self.config.exit_hysteresis_v {
                    track(u_pid)
                } else {
                    (ControlStage::Yielding, yield_out(), false)
                }
            }
        };
        let eps_out = if stage == ControlStage::Yielding { epsilon } else { 0.0 };

        ControlOutput {
            u_output_v: u_out,
            x_piezo_cmd_um: p.voltage_to_piezo_um(u_out),
            epsilon_um: eps_out,
            state: PidState {
                gains: *g,
                integrator_um_s: if integrate { integrator } else { held },
                last_error_um: error,
                derivative_um_per_s: derivative,
                reference_mm: Some(shaped),
                stage,
                output_clamp_v: (p.u_base_v, law.u_limit_v),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{hall_inverse, ActuatorState, Plant, INNER_DT};

    fn params() -> PlantParams {
        PlantParams::default()
    }

    fn law(k: f64, order: PenaltyOrder) -> StiffnessLaw {
        StiffnessLaw::new(&params(), k, order, 3.0).unwrap()
    }

    #[test]
    fn u_limit_examples() {
        assert_eq!(compute_u_limit(1.0, 10.0, 150.0).unwrap(), 150.0);
        assert_eq!(compute_u_limit(0.0, 10.0, 150.0).unwrap(), 0.8 * 140.0 + 10.0);
        assert_eq!(compute_u_limit(0.5, 10.0, 150.0).unwrap(), 136.0);
        assert!(compute_u_limit(1.1, 10.0, 150.0).is_err());
        assert!(compute_u_limit(-0.1, 10.0, 150.0).is_err());
    }

    #[test]
    fn law_invariants() {
        let p = params();
        for i in 0..=10 {
            let k = i as f64 / 10.0;
            let l = StiffnessLaw::new(&p, k, PenaltyOrder::Quadratic, 2.0).unwrap();
            assert!(p.u_base_v <= l.u_limit_v && l.u_limit_v <= p.u_max_v);
            let expect = p.beta_um_per_v * (l.u_limit_v - p.u_base_v);
            assert!((l.x_piezo_limit_um - expect).abs() < 1e-12);
        }
        assert_eq!(law(1.0, PenaltyOrder::Quadratic).u_limit_v, p.u_max_v);
    }

    #[test]
    fn feedforward_examples() {
        let p = params();
        let l = law(0.6, PenaltyOrder::Quadratic);
        assert_eq!(feedforward_output(&l, 0.0, p.u_base_v).unwrap(), l.u_limit_v);
        let half = feedforward_output(&l, l.x_piezo_limit_um / 2.0, p.u_base_v).unwrap();
        let expect = (l.u_limit_v - p.u_base_v) * 0.64 + p.u_base_v;
        assert!(((half - expect) / expect).abs() < 1e-12);
        let l1 = law(1.0, PenaltyOrder::Cubic);
        for eps in [0.0, 3.0, 40.0, 1e4] {
            assert_eq!(feedforward_output(&l1, eps, p.u_base_v).unwrap(), l1.u_limit_v);
        }
        let mut bad = l;
        bad.x_piezo_limit_um = 0.0;
        assert!(feedforward_output(&bad, 1.0, p.u_base_v).is_err());
    }

    #[test]
    fn yield_force_examples() {
        let mut p = params();
        p.k_piezo_n_per_um = 50.0;
        let mut l = law(0.8, PenaltyOrder::Quadratic);
        l.x_piezo_target_um = l.x_piezo_limit_um - 10.0;
        assert!((compute_yield_force(&l, &p) - 4.0).abs() < 1e-12);
        l.x_piezo_target_um = l.x_piezo_limit_um;
        assert_eq!(compute_yield_force(&l, &p), 0.0);
        let p = params();
        let mut last = -1.0;
        for i in 0..=20 {
            let f = compute_yield_force(&law(0.5 + i as f64 / 40.0, PenaltyOrder::Quadratic), &p);
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn linear_penalty_gives_scaled_stiffness() {
        let p = params();
        for k in [0.5, 0.63, 0.8, 1.0] {
            let l = law(k, PenaltyOrder::Linear);
            for eps in [0.0, 1.0, 5.0] {
                let h = 1e-3;
                let f1 = l.force_at_n(&p, eps);
                let f2 = l.force_at_n(&p, eps + h);
                // N per µm piezo-side → N/mm at the end-effector.
                let measured = (f2 - f1) / h * 1000.0 / p.amplification;
                let expect = k * p.passive_stiffness_n_per_mm();
                assert!(((measured - expect) / expect).abs() < 1e-6, "k={k}");
            }
        }
    }

    #[test]
    fn quadratic_derivatives_match_closed_form() {
        for i in 1..=10 {
            let k = 0.5 + i as f64 * 0.05;
            let l = law(k, PenaltyOrder::Quadratic);
            let xl = l.x_piezo_limit_um;
            let top = l.admissible_epsilon_um().min(4.0 * xl);
            for j in 0..50 {
                let eps = top * (j as f64 + 0.5) / 50.0;
                let h = 1e-4;
                let fd = (l.commanded_displacement_um(eps + h) - l.commanded_displacement_um(eps - h))
                    / (2.0 * h);
                let closed = -2.0 * (1.0 - k) * (1.0 - (1.0 - k) * eps / xl);
                assert!((fd - closed).abs() <= 1e-6 * closed.abs().max(1e-9) + 1e-9);
                assert!((l.slope(eps) - closed).abs() <= 1e-12 * closed.abs().max(1.0));
                assert!(l.slope(eps) > -1.0);
                assert_eq!(l.curvature(eps), 2.0 * (1.0 - k).powi(2) / xl);
            }
        }
    }

    #[test]
    fn quadratic_stiffness_positive_and_increasing() {
        let p = params();
        for k in [0.55, 0.7, 0.9] {
            let l = law(k, PenaltyOrder::Quadratic);
            let top = l.admissible_epsilon_um();
            let mut last = 0.0;
            for j in 0..200 {
                let keff = l.equivalent_stiffness_n_per_mm(&p, top * j as f64 / 200.0);
                assert!(keff > 0.0 && keff > last);
                last = keff;
            }
        }
    }

    #[test]
    fn cubic_boundary() {
        let stable = law(0.7, PenaltyOrder::Cubic);
        let top = stable.admissible_epsilon_um();
        assert!((0..=100).all(|j| stable.is_stable_at(top * j as f64 / 100.0)));
        let unstable = law(0.6, PenaltyOrder::Cubic);
        assert!((0..=100).any(|j| !unstable.is_stable_at(unstable.admissible_epsilon_um() * j as f64 / 100.0)));
    }

    #[test]
    fn friction_examples() {
        let cfg = FrictionConfig::default();
        let z = friction_offset(0.0, 0.123, &cfg);
        assert_eq!(z.offset_mm, 0.0);
        assert_eq!(z.gain_scale, 1.0);
        assert_eq!(friction_offset(1.0, 0.0, &cfg).frequency_hz, 200.0);
        let levels: Vec<f64> = (0..5)
            .map(|i| friction_offset(i as f64 / 4.0, 0.0, &cfg).frequency_hz)
            .collect();
        assert_eq!(levels, vec![0.0, 50.0, 100.0, 150.0, 200.0]);
        assert_eq!(friction_offset(1.0, 0.0, &cfg).gain_scale, 2.0);
    }

    #[test]
    fn penalty_order_serde() {
        assert_eq!(serde_json::to_string(&PenaltyOrder::Cubic).unwrap(), "3");
        assert_eq!(serde_json::from_str::<PenaltyOrder>("1").unwrap(), PenaltyOrder::Linear);
        assert!(serde_json::from_str::<PenaltyOrder>("4").is_err());
    }

    fn run(
        ctrl: &Controller,
        plant: &Plant,
        s: &mut ActuatorState,
        pid: &mut PidState,
        cmd: RenderCommand,
        force: f64,
        t0: f64,
        steps: usize,
    ) -> ControlOutput {
        let mut out = None;
        for i in 0..steps {
            let h = hall_inverse(&ctrl.params, s.hall_mt);
            let o = ctrl.tick(pid, h, &cmd, t0 + i as f64 * INNER_DT, INNER_DT);
            *pid = o.state;
            *s = plant.step(s, o.x_piezo_cmd_um, force).unwrap();
            out = Some(o);
        }
        out.unwrap()
    }

    #[test]
    fn tracks_target_without_load() {
        let p = params();
        let ctrl = Controller::new(p, ControllerConfig::for_plant(&p)).unwrap();
        let plant = Plant::new(p, INNER_DT).unwrap();
        let mut s = ActuatorState::at_rest(&p, 0.0);
        let mut pid = ctrl.initial_state();
        let cmd = RenderCommand::new(3.0, 1.0, 0.0).unwrap();
        run(&ctrl, &plant, &mut s, &mut pid, cmd, 0.0, 0.0, 5000);
        let err_um = (p.height_to_piezo_um(3.0) - s.x_piezo_um).abs();
        assert!(err_um < 1.0, "error {err_um} um");
        assert_eq!(pid.stage, ControlStage::Tracking);
    }

    #[test]
    fn heavy_load_with_full_stiffness_pins_output() {
        let p = params();
        let ctrl = Controller::new(p, ControllerConfig::for_plant(&p)).unwrap();
        let plant = Plant::new(p, INNER_DT).unwrap();
        let mut s = ActuatorState::at_rest(&p, 3.0);
        let mut pid = ctrl.initial_state();
        let cmd = RenderCommand::new(3.0, 1.0, 0.0).unwrap();
        run(&ctrl, &plant, &mut s, &mut pid, cmd, 0.0, 0.0, 2000);
        let o = run(&ctrl, &plant, &mut s, &mut pid, cmd, 3.0, 0.2, 5000);
        assert_eq!(o.state.stage, ControlStage::Yielding);
        assert_eq!(o.u_output_v, p.u_max_v);
        assert!(o.epsilon_um > 0.0);
    }

    #[test]
    fn no_windup_after_saturation() {
        let p = params();
        let ctrl = Controller::new(p, ControllerConfig::for_plant(&p)).unwrap();
        let plant = Plant::new(p, INNER_DT).unwrap();
        let mut s = ActuatorState::at_rest(&p, 0.0);
        let mut pid = ctrl.initial_state();
        let cmd = RenderCommand::new(3.0, 0.7, 0.0).unwrap();
        run(&ctrl, &plant, &mut s, &mut pid, cmd, 0.0, 0.0, 3000);
        run(&ctrl, &plant, &mut s, &mut pid, cmd, 2.0, 0.3, 3000);
        assert_eq!(pid.stage, ControlStage::Yielding);
        run(&ctrl, &plant, &mut s, &mut pid, cmd, 0.0, 0.6, 5000);
        assert_eq!(pid.stage, ControlStage::Tracking);
        let err_um = (p.height_to_piezo_um(3.0) - s.x_piezo_um).abs();
        assert!(err_um < 1.0, "error {err_um} um");
    }
}

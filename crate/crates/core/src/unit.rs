//! One actuator unit in closed loop: plant, controller, and a noisy Hall
//! readout, stepped together at the inner rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::{ControlError, ControlOutput, Controller, ControllerConfig, PenaltyOrder, PidState, RenderCommand};
use crate::plant::{hall_inverse, hall_read, ActuatorState, Plant, PlantError, PlantParams, INNER_DT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Snapshot of one unit after a tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitReport {
    pub height_mm: f64,
    pub measured_height_mm: f64,
    pub hall_mt: f64,
    pub u_output_v: f64,
    pub control: Option<ControlOutput>,
}

#[derive(Clone, Debug)]
pub struct Unit {
    plant: Plant,
    controller: Controller,
    state: ActuatorState,
    pid: PidState,
    rng: ChaCha8Rng,
    hall_mt: f64,
    u_output_v: f64,
    time_s: f64,
}

impl Unit {
    pub fn new(
        params: PlantParams,
        config: ControllerConfig,
        seed: u64,
        initial_height_mm: f64,
    ) -> Result<Self, SimError> {
        let plant = Plant::new(params, INNER_DT)?;
        let controller = Controller::new(params, config)?;
        let state = ActuatorState::at_rest(&params, initial_height_mm);
        let pid = controller.initial_state();
        let mut unit = Self {
            plant,
            controller,
            state,
            pid,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hall_mt: state.hall_mt,
            u_output_v: params.u_base_v + state.x_piezo_um / params.beta_um_per_v,
            time_s: 0.0,
        };
        unit.read_sensor()?;
        Ok(unit)
    }

    fn read_sensor(&mut self) -> Result<(), SimError> {
        self.hall_mt = hall_read(self.plant.params(), self.state.x_actuator_mm, &mut self.rng)?;
        Ok(())
    }

    pub fn params(&self) -> &PlantParams {
        self.plant.params()
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn state(&self) -> &ActuatorState {
        &self.state
    }

    pub fn pid(&self) -> &PidState {
        &self.pid
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn set_penalty_order(&mut self, order: PenaltyOrder) {
        self.controller.config.penalty_order = order;
    }

    pub fn last_output_v(&self) -> f64 {
        self.u_output_v
    }

    pub fn last_hall_mt(&self) -> f64 {
        self.hall_mt
    }

    /// Height the controller sees: the inverted (possibly noisy) Hall reading.
    pub fn measured_height_mm(&self) -> f64 {
        hall_inverse(self.plant.params(), self.hall_mt)
    }

    fn report(&self, control: Option<ControlOutput>) -> UnitReport {
        UnitReport {
            height_mm: self.state.x_actuator_mm,
            measured_height_mm: self.measured_height_mm(),
            hall_mt: self.hall_mt,
            u_output_v: self.u_output_v,
            control,
        }
    }

    /// Closed-loop inner tick.
    pub fn tick(&mut self, cmd: &RenderCommand, external_force_n: f64) -> Result<UnitReport, SimError> {
        let measured = self.measured_height_mm();
        let out = self
            .controller
            .tick(&self.pid, measured, cmd, self.time_s, INNER_DT);
        self.pid = out.state;
        self.u_output_v = out.u_output_v;
        self.state = self.plant.step(&self.state, out.x_piezo_cmd_um, external_force_n)?;
        self.time_s += INNER_DT;
        self.read_sensor()?;
        Ok(self.report(Some(out)))
    }

    /// Open-loop inner tick: drive voltage applied directly to the piezo.
    pub fn drive(&mut self, u_v: f64, external_force_n: f64) -> Result<UnitReport, SimError> {
        let p = *self.plant.params();
        let u = u_v.clamp(p.u_base_v, p.u_max_v);
        self.u_output_v = u;
        self.state = self
            .plant
            .step(&self.state, p.voltage_to_piezo_um(u), external_force_n)?;
        self.time_s += INNER_DT;
        self.read_sensor()?;
        Ok(self.report(None))
    }

    /// Run closed loop for `duration_s` with fixed inputs; returns the last report.
    pub fn hold(
        &mut self,
        cmd: &RenderCommand,
        external_force_n: f64,
        duration_s: f64,
    ) -> Result<UnitReport, SimError> {
        let n = (duration_s / INNER_DT).round().max(1.0) as usize;
        let mut last = self.report(None);
        for _ in 0..n {
            last = self.tick(cmd, external_force_n)?;
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_units_are_identical() {
        let p = PlantParams {
            noise_std_hall_mt: 0.3,
            ..PlantParams::default()
        };
        let cfg = ControllerConfig::for_plant(&p);
        let cmd = RenderCommand::new(2.0, 0.8, 0.5).unwrap();
        let mut a = Unit::new(p, cfg, 11, 0.0).unwrap();
        let mut b = Unit::new(p, cfg, 11, 0.0).unwrap();
        for _ in 0..3000 {
            let ra = a.tick(&cmd, 0.2).unwrap();
            let rb = b.tick(&cmd, 0.2).unwrap();
            assert_eq!(ra.height_mm.to_bits(), rb.height_mm.to_bits());
            assert_eq!(ra.hall_mt.to_bits(), rb.hall_mt.to_bits());
        }
    }

    #[test]
    fn open_loop_reaches_free_position() {
        let p = PlantParams::default();
        let mut u = Unit::new(p, ControllerConfig::for_plant(&p), 0, 0.0).unwrap();
        for _ in 0..5000 {
            u.drive(80.0, 0.0).unwrap();
        }
        let free = p.piezo_to_height_mm(p.voltage_to_piezo_um(80.0));
        assert!((u.state().x_actuator_mm - free).abs() < 1e-9);
    }
}

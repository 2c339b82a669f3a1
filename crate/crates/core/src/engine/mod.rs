//! The 16-unit display loop: controllers and plants at the inner rate,
//! render commands refreshed from the pose every `RENDER_DIVIDER` ticks.

pub mod server;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, PenaltyOrder, RenderCommand};
use crate::plant::{PlantParams, INNER_DT};
use crate::scene::{sample_window, SampleMode, SampleWindow, Scene, WORKSPACE_MM, WORKSPACE_Z_MM, UNITS};
use crate::shore::ShoreRegression;
use crate::unit::{SimError, Unit};

/// Inner ticks per render-command refresh (10 kHz / 500 Hz).
pub const RENDER_DIVIDER: u64 = 20;

/// Position of the sliding platform (the virtual fingertip).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformPose {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub timestamp_us: u64,
}

impl PlatformPose {
    pub fn new(x_mm: f64, y_mm: f64, z_mm: f64) -> Self {
        Self { x_mm, y_mm, z_mm, timestamp_us: 0 }.clamped()
    }

    /// Clamp into the platform workspace; NaN coordinates go to 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64, hi: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, hi) };
        Self {
            x_mm: c(self.x_mm, WORKSPACE_MM.0),
            y_mm: c(self.y_mm, WORKSPACE_MM.1),
            z_mm: c(self.z_mm, WORKSPACE_Z_MM),
            timestamp_us: self.timestamp_us,
        }
    }
}

/// Supplies the platform pose. `None` means no fresh pose is available.
pub trait PoseSource {
    fn pose_at(&mut self, t_s: f64) -> Option<PlatformPose>;
}

/// A fixed pose.
#[derive(Clone, Copy, Debug)]
pub struct StaticPose(pub PlatformPose);

impl PoseSource for StaticPose {
    fn pose_at(&mut self, _t: f64) -> Option<PlatformPose> {
        Some(self.0)
    }
}

/// Piecewise-linear trajectory through `(t_s, pose)` waypoints; holds the
/// last waypoint afterwards.
#[derive(Clone, Debug)]
pub struct ScriptedPoses {
    waypoints: Vec<(f64, PlatformPose)>,
}

impl ScriptedPoses {
    pub fn new(mut waypoints: Vec<(f64, PlatformPose)>) -> Self {
        waypoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { waypoints }
    }

    pub fn at(&self, t: f64) -> Option<PlatformPose> {
        let w = &self.waypoints;
        let first = w.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        for pair in w.windows(2) {
            let ((t0, a), (t1, b)) = (pair[0], pair[1]);
            if t <= t1 {
                let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return Some(PlatformPose::new(
                    a.x_mm + s * (b.x_mm - a.x_mm),
                    a.y_mm + s * (b.y_mm - a.y_mm),
                    a.z_mm + s * (b.z_mm - a.z_mm),
                ));
            }
        }
        w.last().map(|p| p.1)
    }
}

impl PoseSource for ScriptedPoses {
    fn pose_at(&mut self, t: f64) -> Option<PlatformPose> {
        self.at(t)
    }
}

/// Render commands for one refresh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledCommands {
    pub commands: [RenderCommand; UNITS],
    pub stale: bool,
}

/// Produces the 16 per-unit commands for a pose.
pub trait CommandSource {
    fn commands(&mut self, pose: &PlatformPose, t_s: f64) -> SampledCommands;

    /// Identifier reported in snapshots.
    fn scene_id(&self) -> &str;
}

/// Samples a local scene under the fingertip window.
#[derive(Clone, Debug)]
pub struct SceneSampler {
    pub scene: Scene,
    pub regression: ShoreRegression,
    pub mode: SampleMode,
    /// Platform height at which the scene is touched without offset, mm.
    pub z_reference_mm: f64,
}

impl SceneSampler {
    pub fn new(scene: Scene) -> Self {
        Self {
            scene,
            regression: ShoreRegression::default(),
            mode: SampleMode::Point,
            z_reference_mm: 0.0,
        }
    }

    pub fn sample(&self, pose: &PlatformPose) -> [RenderCommand; UNITS] {
        sample_window(
            &self.scene.source,
            &SampleWindow::at(pose.x_mm, pose.y_mm),
            pose.z_mm - self.z_reference_mm,
            &self.regression,
            self.mode,
        )
    }
}

impl CommandSource for SceneSampler {
    fn commands(&mut self, pose: &PlatformPose, _t: f64) -> SampledCommands {
        SampledCommands {
            commands: self.sample(pose),
            stale: false,
        }
    }

    fn scene_id(&self) -> &str {
        &self.scene.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSnapshot {
    pub height_mm: f64,
    pub target_mm: f64,
    pub k: f64,
    pub f: f64,
    pub u_output_v: f64,
    pub hall_mt: f64,
}

/// A consistent cut of all 16 units after one inner tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub tick: u64,
    pub sim_time_s: f64,
    pub pose: PlatformPose,
    pub units: [UnitSnapshot; UNITS],
    pub scene_id: String,
    /// Pose or commands are being held from an earlier refresh.
    pub stale: bool,
    /// Wall-clock render refreshes per second; only measured when paced.
    pub render_rate_hz: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClockMode {
    AsFastAsPossible,
    RealTime,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EngineConfig {
    pub params: PlantParams,
    pub controller: ControllerConfig,
    pub seed: u64,
    pub snapshot_hz: f64,
    pub initial_pose: PlatformPose,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let params = PlantParams::default();
        Self {
            params,
            controller: ControllerConfig::for_plant(&params),
            seed: 0,
            snapshot_hz: 100.0,
            initial_pose: PlatformPose::new(WORKSPACE_MM.0 / 2.0, WORKSPACE_MM.1 / 2.0, 0.0),
        }
    }
}

pub struct Engine {
    config: EngineConfig,
    units: Vec<Unit>,
    commands: [RenderCommand; UNITS],
    forces_n: [f64; UNITS],
    pose: PlatformPose,
    pose_stale: bool,
    commands_stale: bool,
    scene_id: String,
    tick: u64,
    snapshot_every: u64,
    render_rate_hz: Option<f64>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, SimError> {
        let units = (0..UNITS as u64)
            .map(|i| {
                // Distinct, reproducible noise stream per unit.
                let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i);
                Unit::new(config.params, config.controller, seed, 0.0)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut e = Self {
            config,
            units,
            commands: [RenderCommand::default(); UNITS],
            forces_n: [0.0; UNITS],
            pose: config.initial_pose.clamped(),
            pose_stale: false,
            commands_stale: false,
            scene_id: String::new(),
            tick: 0,
            snapshot_every: 1,
            render_rate_hz: None,
        };
        e.set_snapshot_rate(config.snapshot_hz);
        Ok(e)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn sim_time_s(&self) -> f64 {
        self.tick as f64 * INNER_DT
    }

    pub fn pose(&self) -> PlatformPose {
        self.pose
    }

    pub fn commands(&self) -> &[RenderCommand; UNITS] {
        &self.commands
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Record a wall-clock render rate measured by an external pacer.
    pub fn set_render_rate_hz(&mut self, hz: Option<f64>) {
        self.render_rate_hz = hz;
    }

    pub fn set_penalty_order(&mut self, order: PenaltyOrder) {
        self.config.controller.penalty_order = order;
        for u in &mut self.units {
            u.set_penalty_order(order);
        }
    }

    pub fn set_snapshot_rate(&mut self, hz: f64) {
        let hz = if hz.is_finite() && hz > 0.0 { hz } else { 100.0 };
        self.config.snapshot_hz = hz;
        self.snapshot_every = ((1.0 / INNER_DT / hz).round() as u64).max(1);
    }

    /// Downward force on one pin, N.
    pub fn set_external_force(&mut self, unit: usize, force_n: f64) {
        if let Some(f) = self.forces_n.get_mut(unit) {
            *f = if force_n.is_finite() { force_n.max(0.0) } else { 0.0 };
        }
    }

    fn refresh<P: PoseSource + ?Sized, C: CommandSource + ?Sized>(&mut self, poses: &mut P, source: &mut C) {
        let t = self.sim_time_s();
        match poses.pose_at(t) {
            Some(p) => {
                let mut p = p.clamped();
                p.timestamp_us = (t * 1e6).round() as u64;
                self.pose = p;
                self.pose_stale = false;
            }
            None => self.pose_stale = true,
        }
        let sampled = source.commands(&self.pose, t);
        self.commands = sampled.commands;
        self.commands_stale = sampled.stale;
        if self.scene_id != source.scene_id() {
            self.scene_id = source.scene_id().to_string();
        }
    }

    /// Advance one inner tick. Returns a snapshot on decimation ticks.
    pub fn step<P: PoseSource + ?Sized, C: CommandSource + ?Sized>(
        &mut self,
        poses: &mut P,
        source: &mut C,
    ) -> Result<Option<EngineSnapshot>, SimError> {
        if self.tick.is_multiple_of(RENDER_DIVIDER) {
            self.refresh(poses, source);
        }
        for (i, unit) in self.units.iter_mut().enumerate() {
            unit.tick(&self.commands[i], self.forces_n[i])?;
        }
        self.tick += 1;
        Ok(self.tick.is_multiple_of(self.snapshot_every).then(|| self.snapshot()))
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        let mut units = [UnitSnapshot {
            height_mm: 0.0,
            target_mm: 0.0,
            k: 1.0,
            f: 0.0,
            u_output_v: 0.0,
            hall_mt: 0.0,
        }; UNITS];
        for (i, u) in self.units.iter().enumerate() {
            let r = u.state();
            units[i] = UnitSnapshot {
                height_mm: r.x_actuator_mm,
                target_mm: self.commands[i].target_height_mm,
                k: self.commands[i].k,
                f: self.commands[i].f,
                u_output_v: u.last_output_v(),
                hall_mt: u.last_hall_mt(),
            };
        }
        EngineSnapshot {
            tick: self.tick,
            sim_time_s: self.sim_time_s(),
            pose: self.pose,
            units,
            scene_id: self.scene_id.clone(),
            stale: self.pose_stale || self.commands_stale,
            render_rate_hz: self.render_rate_hz,
        }
    }

    /// Run for `duration_s` of simulated time, handing each snapshot to
    /// `sink`; the sink returns `false` to stop early.
    pub fn run<P, C, F>(
        &mut self,
        poses: &mut P,
        source: &mut C,
        duration_s: Option<f64>,
        mode: ClockMode,
        mut sink: F,
    ) -> Result<RunStats, SimError>
    where
        P: PoseSource + ?Sized,
        C: CommandSource + ?Sized,
        F: FnMut(&EngineSnapshot) -> bool,
    {
        let start_tick = self.tick;
        let end = duration_s.map(|d| start_tick + (d / INNER_DT).round() as u64);
        let mut pacer = Pacer::new();
        let mut renders = 0u64;
        loop {
            if end.is_some_and(|e| self.tick >= e) {
                break;
            }
            if self.tick.is_multiple_of(RENDER_DIVIDER) {
                renders += 1;
                if mode == ClockMode::RealTime {
                    let rate = pacer.render_tick((self.tick - start_tick) as f64 * INNER_DT);
                    if rate.is_some() {
                        self.render_rate_hz = rate;
                    }
                }
            }
            if let Some(snap) = self.step(poses, source)? {
                if !sink(&snap) {
                    break;
                }
            }
        }
        Ok(RunStats {
            ticks: self.tick - start_tick,
            render_refreshes: renders,
            wall_s: pacer.elapsed_s(),
        })
    }
}

/// Sleeps the caller so simulated time tracks wall time, and measures the
/// achieved render rate over windows of at least half a second.
#[derive(Debug)]
pub struct Pacer {
    start: Instant,
    window_start: Instant,
    window_renders: u64,
    rate_hz: Option<f64>,
}

impl Default for Pacer {
    fn default() -> Self {
        Self::new()
    }
}

impl Pacer {
    pub fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            window_start: now,
            window_renders: 0,
            rate_hz: None,
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    /// Call once per render refresh with the simulated time since start.
    pub fn render_tick(&mut self, sim_elapsed_s: f64) -> Option<f64> {
        let due = Duration::from_secs_f64(sim_elapsed_s.max(0.0));
        if let Some(wait) = due.checked_sub(self.start.elapsed()) {
            std::thread::sleep(wait);
        }
        self.window_renders += 1;
        let span = self.window_start.elapsed().as_secs_f64();
        if span >= 0.5 {
            self.rate_hz = Some(self.window_renders as f64 / span);
            self.window_start = Instant::now();
            self.window_renders = 0;
        }
        self.rate_hz
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub ticks: u64,
    pub render_refreshes: u64,
    pub wall_s: f64,
}

impl RunStats {
    pub fn sim_s(&self) -> f64 {
        self.ticks as f64 * INNER_DT
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ShapeKind, StudyShape};

    #[test]
    fn static_pose_over_flat_scene_holds() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        let mut poses = StaticPose(PlatformPose::new(30.0, 30.0, 0.0));
        let mut src = SceneSampler::new(Scene::flat());
        e.run(&mut poses, &mut src, Some(0.5), ClockMode::AsFastAsPossible, |_| true)
            .unwrap();
        let s = e.snapshot();
        assert_eq!(s.scene_id, "flat");
        for u in &s.units {
            assert!((u.height_mm - 3.0).abs() < 1e-3, "{}", u.height_mm);
        }
    }

    #[test]
    fn refresh_happens_every_twentieth_tick() {
        struct Counting(u64, SceneSampler);
        impl CommandSource for Counting {
            fn commands(&mut self, p: &PlatformPose, t: f64) -> SampledCommands {
                self.0 += 1;
                self.1.commands(p, t)
            }
            fn scene_id(&self) -> &str {
                "count"
            }
        }
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        let mut src = Counting(0, SceneSampler::new(Scene::flat()));
        let mut poses = StaticPose(PlatformPose::default());
        let stats = e.run(&mut poses, &mut src, Some(0.1), ClockMode::AsFastAsPossible, |_| true).unwrap();
        assert_eq!(stats.ticks, 1000);
        assert_eq!(src.0, 50);
    }

    #[test]
    fn starvation_holds_last_pose_and_flags_stale() {
        struct Once(bool);
        impl PoseSource for Once {
            fn pose_at(&mut self, _t: f64) -> Option<PlatformPose> {
                std::mem::replace(&mut self.0, false).then(|| PlatformPose::new(12.0, 20.0, 0.0))
            }
        }
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        let mut src = SceneSampler::new(Scene::shape(ShapeKind::Cone));
        let mut last = None;
        e.run(&mut Once(true), &mut src, Some(0.05), ClockMode::AsFastAsPossible, |s| {
            last = Some(s.clone());
            true
        })
        .unwrap();
        let s = last.unwrap();
        assert!(s.stale);
        assert_eq!((s.pose.x_mm, s.pose.y_mm), (12.0, 20.0));
    }

    #[test]
    fn scripted_interpolation() {
        let s = ScriptedPoses::new(vec![
            (0.0, PlatformPose::new(10.0, 30.0, 0.0)),
            (1.0, PlatformPose::new(50.0, 30.0, 4.0)),
        ]);
        let p = s.at(0.25).unwrap();
        assert!((p.x_mm - 20.0).abs() < 1e-12 && (p.z_mm - 1.0).abs() < 1e-12);
        assert_eq!(s.at(7.0).unwrap().x_mm, 50.0);
        let _ = StudyShape::standard(ShapeKind::Cube);
    }

    #[test]
    fn pose_clamped_to_workspace() {
        let p = PlatformPose::new(-5.0, 99.0, 400.0);
        assert_eq!((p.x_mm, p.y_mm, p.z_mm), (0.0, 60.0, 185.0));
    }
}

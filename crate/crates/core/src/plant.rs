//! Single actuator unit: a piezo stack behind an ideal lever, a Hall-sensor
//! position readout, and a viscous fingertip load riding on the end-effector.
//!
//! Units follow the device conventions: piezo displacements in micrometres,
//! end-effector heights in millimetres, forces in newtons, flux density in mT.
//! The load dynamics are integrated exactly over each step (zero-order hold on
//! the commanded displacement and the external force), so a step is a pure
//! function of its inputs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// End-effector stroke, mm.
pub const STROKE_MM: f64 = 5.0;
/// Inner control period (10 kHz), s.
pub const INNER_DT: f64 = 1.0e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("{what} = {value} is outside {lo}..={hi}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid plant configuration: {0}")]
    Config(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
}

/// Cubic Hall model `c0 + c1·x + c2·x² + c3·x³`, x in mm, result in mT.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallCoeffs(pub [f64; 4]);

impl HallCoeffs {
    pub fn eval(&self, x_mm: f64) -> f64 {
        let [c0, c1, c2, c3] = self.0;
        ((c3 * x_mm + c2) * x_mm + c1) * x_mm + c0
    }

    pub fn slope(&self, x_mm: f64) -> f64 {
        let [_, c1, c2, c3] = self.0;
        (3.0 * c3 * x_mm + 2.0 * c2) * x_mm + c1
    }

    /// Smallest derivative over `[lo, hi]`. The derivative is a quadratic, so
    /// its minimum sits at an endpoint or at the vertex.
    pub fn min_slope_on(&self, lo: f64, hi: f64) -> f64 {
        let [_, _, c2, c3] = self.0;
        let mut m = self.slope(lo).min(self.slope(hi));
        if c3 != 0.0 {
            let vertex = -c2 / (3.0 * c3);
            if vertex > lo && vertex < hi {
                m = m.min(self.slope(vertex));
            }
        }
        m
    }
}

/// Second-order fingertip load seen by the end-effector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    pub mass_kg: f64,
    pub damping_n_s_per_m: f64,
}

/// Physical constants of one unit. Serialized with unit-suffixed key names.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub amplification: f64,
    pub k_piezo_n_per_um: f64,
    pub beta_um_per_v: f64,
    pub u_base_v: f64,
    pub u_max_v: f64,
    pub x_piezo_max_um: f64,
    /// Informational only.
    pub x0_natural_length_mm: f64,
    pub hall_coeffs_mt: HallCoeffs,
    pub load: LoadModel,
    pub noise_std_hall_mt: f64,
}

/// Load damping that puts the open-loop -3 dB point at 15.29 Hz for the
/// default mass and piezo stiffness (output of `calibrate_plant`).
pub const CALIBRATED_DAMPING_N_S_PER_M: f64 = 7.084_956_560_562_685;

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            amplification: 125.0,
            k_piezo_n_per_um: 10.0,
            beta_um_per_v: 40.0 / 140.0,
            u_base_v: 10.0,
            u_max_v: 150.0,
            x_piezo_max_um: 40.0,
            x0_natural_length_mm: 36.0,
            hall_coeffs_mt: HallCoeffs([60.0, 18.0, -2.4, 0.12]),
            load: LoadModel {
                mass_kg: 0.005,
                damping_n_s_per_m: CALIBRATED_DAMPING_N_S_PER_M,
            },
            noise_std_hall_mt: 0.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let finite = [
            self.amplification,
            self.k_piezo_n_per_um,
            self.beta_um_per_v,
            self.u_base_v,
            self.u_max_v,
            self.x_piezo_max_um,
            self.load.mass_kg,
            self.load.damping_n_s_per_m,
            self.noise_std_hall_mt,
        ]
        .iter()
        .chain(self.hall_coeffs_mt.0.iter())
        .all(|v| v.is_finite());
        if !finite {
            return Err(PlantError::Config("all parameters must be finite".into()));
        }
        if self.amplification <= 1.0 {
            return Err(PlantError::Config("amplification must exceed 1".into()));
        }
        if self.k_piezo_n_per_um <= 0.0 || self.beta_um_per_v <= 0.0 {
            return Err(PlantError::Config(
                "piezo stiffness and beta must be positive".into(),
            ));
        }
        if self.u_max_v <= self.u_base_v || self.u_base_v < 0.0 {
            return Err(PlantError::Config("need 0 <= u_base < u_max".into()));
        }
        if self.free_stroke_um() > self.x_piezo_max_um * (1.0 + 1e-12) {
            return Err(PlantError::Config(format!(
                "beta*(u_max-u_base) = {} um exceeds the piezo free stroke {} um",
                self.free_stroke_um(),
                self.x_piezo_max_um
            )));
        }
        if self.load.mass_kg <= 0.0 || self.load.damping_n_s_per_m < 0.0 {
            return Err(PlantError::Config(
                "load mass must be positive and damping non-negative".into(),
            ));
        }
        if self.noise_std_hall_mt < 0.0 {
            return Err(PlantError::Config("noise std must be non-negative".into()));
        }
        if self.hall_coeffs_mt.min_slope_on(0.0, STROKE_MM) <= 0.0 {
            return Err(PlantError::Config(
                "Hall polynomial must be strictly increasing over the stroke".into(),
            ));
        }
        Ok(())
    }

    /// Largest commanded piezo displacement, µm.
    pub fn free_stroke_um(&self) -> f64 {
        self.beta_um_per_v * (self.u_max_v - self.u_base_v)
    }

    /// Piezo stiffness reflected through the lever to the end-effector, N/m.
    pub fn lever_stiffness_n_per_m(&self) -> f64 {
        self.k_piezo_n_per_um * 1.0e6 / (self.amplification * self.amplification)
    }

    /// Passive stiffness `K_piezo / A²` at the end-effector, N/mm.
    pub fn passive_stiffness_n_per_mm(&self) -> f64 {
        self.lever_stiffness_n_per_m() * 1.0e-3
    }

    pub fn height_to_piezo_um(&self, height_mm: f64) -> f64 {
        height_mm * 1000.0 / self.amplification
    }

    pub fn piezo_to_height_mm(&self, x_piezo_um: f64) -> f64 {
        x_piezo_um * self.amplification / 1000.0
    }

    pub fn voltage_to_piezo_um(&self, u_v: f64) -> f64 {
        self.beta_um_per_v * (u_v - self.u_base_v)
    }

    pub fn hall_full_scale_mt(&self) -> f64 {
        self.hall_coeffs_mt.eval(STROKE_MM) - self.hall_coeffs_mt.eval(0.0)
    }

    pub fn from_json(text: &str) -> Result<Self, PlantError> {
        let p: Self = serde_json::from_str(text).map_err(|e| PlantError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plant params serialize")
    }
}

/// Per-tick state of one unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub x_piezo_um: f64,
    pub x_actuator_mm: f64,
    pub f_actuator_n: f64,
    pub f_piezo_n: f64,
    pub hall_mt: f64,
    pub load_velocity_m_per_s: f64,
}

impl ActuatorState {
    /// Unit resting at `height_mm` with the piezo commanded to the same
    /// position (no force).
    pub fn at_rest(params: &PlantParams, height_mm: f64) -> Self {
        let h = height_mm.clamp(0.0, STROKE_MM);
        Self {
            x_piezo_um: params.height_to_piezo_um(h),
            x_actuator_mm: h,
            f_actuator_n: 0.0,
            f_piezo_n: 0.0,
            hall_mt: params.hall_coeffs_mt.eval(h),
            load_velocity_m_per_s: 0.0,
        }
    }
}

/// `K_piezo · (x_cmd − x_piezo)`; positive pushes the end-effector up.
pub fn piezo_force(params: &PlantParams, x_piezo_cmd_um: f64, x_piezo_um: f64) -> f64 {
    params.k_piezo_n_per_um * (x_piezo_cmd_um - x_piezo_um)
}

/// Noiseless Hall reading at end-effector height `x_mm`.
pub fn hall_forward(params: &PlantParams, x_mm: f64) -> Result<f64, PlantError> {
    if !x_mm.is_finite() {
        return Err(PlantError::NonFinite("x_actuator"));
    }
    if !(0.0..=STROKE_MM).contains(&x_mm) {
        return Err(PlantError::OutOfRange {
            what: "x_actuator_mm",
            value: x_mm,
            lo: 0.0,
            hi: STROKE_MM,
        });
    }
    Ok(params.hall_coeffs_mt.eval(x_mm))
}

/// Hall reading with Gaussian sensor noise of `noise_std_hall_mt`.
pub fn hall_read<R: Rng + ?Sized>(
    params: &PlantParams,
    x_mm: f64,
    rng: &mut R,
) -> Result<f64, PlantError> {
    let clean = hall_forward(params, x_mm)?;
    if params.noise_std_hall_mt > 0.0 {
        let n = Normal::new(0.0, params.noise_std_hall_mt)
            .map_err(|e| PlantError::Config(e.to_string()))?;
        Ok(clean + n.sample(rng))
    } else {
        Ok(clean)
    }
}

/// Height whose noiseless reading equals `reading`. Readings outside the
/// image of the stroke clamp to the nearest end. Safeguarded Newton.
pub fn hall_inverse(params: &PlantParams, reading: f64) -> f64 {
    let h = &params.hall_coeffs_mt;
    let (lo_r, hi_r) = (h.eval(0.0), h.eval(STROKE_MM));
    if !reading.is_finite() || reading <= lo_r {
        return 0.0;
    }
    if reading >= hi_r {
        return STROKE_MM;
    }
    let (mut lo, mut hi) = (0.0, STROKE_MM);
    let mut x = STROKE_MM * (reading - lo_r) / (hi_r - lo_r);
    for _ in 0..60 {
        let r = h.eval(x) - reading;
        if r == 0.0 {
            return x;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - r / h.slope(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < 1e-14 {
            return next;
        }
        x = next;
    }
    x
}

/// Exact one-step propagator for the load about its equilibrium.
#[derive(Clone, Copy, Debug)]
struct Propagator([[f64; 2]; 2]);

impl Propagator {
    /// `exp(M·dt)` for `M = [[0, 1], [-k/m, -c/m]]`, closed form for 2×2.
    fn new(k: f64, c: f64, m: f64, dt: f64) -> Self {
        let tr = -c / m;
        let det = k / m;
        let half = 0.5 * tr;
        let disc = half * half - det;
        let (ch, sh) = if disc > 0.0 {
            let s = disc.sqrt();
            ((s * dt).cosh(), (s * dt).sinh() / s)
        } else if disc < 0.0 {
            let w = (-disc).sqrt();
            ((w * dt).cos(), (w * dt).sin() / w)
        } else {
            (1.0, dt)
        };
        let e = (half * dt).exp();
        // exp(M t) = e^{tr t/2} [ ch·I + sh·(M − tr/2·I) ]
        Self([
            [e * (ch + sh * (0.0 - half)), e * sh],
            [e * sh * (-det), e * (ch + sh * (tr - half))],
        ])
    }
}

/// A unit bound to a fixed step size, with the propagator precomputed.
#[derive(Clone, Copy, Debug)]
pub struct Plant {
    params: PlantParams,
    dt: f64,
    k_lever: f64,
    prop: Propagator,
}

impl Plant {
    pub fn new(params: PlantParams, dt: f64) -> Result<Self, PlantError> {
        params.validate()?;
        if !dt.is_finite() {
            return Err(PlantError::NonFinite("dt"));
        }
        if dt <= 0.0 || dt > INNER_DT * (1.0 + 1e-9) {
            return Err(PlantError::OutOfRange {
                what: "dt",
                value: dt,
                lo: 0.0,
                hi: INNER_DT,
            });
        }
        let k_lever = params.lever_stiffness_n_per_m();
        let prop = Propagator::new(
            k_lever,
            params.load.damping_n_s_per_m,
            params.load.mass_kg,
            dt,
        );
        Ok(Self {
            params,
            dt,
            k_lever,
            prop,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance one step with the commanded piezo displacement and the downward
    /// external force held constant over the step.
    pub fn step(
        &self,
        state: &ActuatorState,
        x_piezo_cmd_um: f64,
        external_force_n: f64,
    ) -> Result<ActuatorState, PlantError> {
        if !x_piezo_cmd_um.is_finite() {
            return Err(PlantError::NonFinite("x_piezo_cmd"));
        }
        if !external_force_n.is_finite() {
            return Err(PlantError::NonFinite("external_force"));
        }
        if !(state.x_actuator_mm.is_finite() && state.load_velocity_m_per_s.is_finite()) {
            return Err(PlantError::NonFinite("state"));
        }
        if external_force_n < 0.0 {
            return Err(PlantError::OutOfRange {
                what: "external_force_n",
                value: external_force_n,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let p = &self.params;
        let x_cmd = x_piezo_cmd_um.clamp(0.0, p.x_piezo_max_um);
        let a = p.amplification;

        // Equilibrium of the end-effector for the held inputs, metres.
        let y_eq = a * x_cmd * 1e-6 - external_force_n / self.k_lever;
        let z = state.x_actuator_mm * 1e-3 - y_eq;
        let v = state.load_velocity_m_per_s;
        let m = &self.prop.0;
        let z1 = m[0][0] * z + m[0][1] * v;
        let mut v1 = m[1][0] * z + m[1][1] * v;
        let mut y1 = (y_eq + z1) * 1e3;
        if y1 <= 0.0 {
            y1 = 0.0;
            v1 = 0.0;
        } else if y1 >= STROKE_MM {
            y1 = STROKE_MM;
            v1 = 0.0;
        }

        let x_piezo = p.height_to_piezo_um(y1);
        let f_piezo = piezo_force(p, x_cmd, x_piezo);
        Ok(ActuatorState {
            x_piezo_um: x_piezo,
            x_actuator_mm: y1,
            f_actuator_n: f_piezo / a,
            f_piezo_n: f_piezo,
            hall_mt: p.hall_coeffs_mt.eval(y1),
            load_velocity_m_per_s: v1,
        })
    }

    /// Kinetic plus lever-spring energy relative to the equilibrium for the
    /// given held inputs, J.
    pub fn mechanical_energy(
        &self,
        state: &ActuatorState,
        x_piezo_cmd_um: f64,
        external_force_n: f64,
    ) -> f64 {
        let y_eq =
            self.params.amplification * x_piezo_cmd_um * 1e-6 - external_force_n / self.k_lever;
        let z = state.x_actuator_mm * 1e-3 - y_eq;
        0.5 * self.params.load.mass_kg * state.load_velocity_m_per_s.powi(2)
            + 0.5 * self.k_lever * z * z
    }
}

/// Stateless form of [`Plant::step`].
pub fn step_plant(
    state: &ActuatorState,
    params: &PlantParams,
    x_piezo_cmd_um: f64,
    external_force_n: f64,
    dt: f64,
) -> Result<ActuatorState, PlantError> {
    Plant::new(*params, dt)?.step(state, x_piezo_cmd_um, external_force_n)
}

//! Soft-tissue phantoms with embedded inclusions, and the remote probe that
//! presses into them.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TeleError;
use crate::scene::{GRID, UNITS};
use crate::shore::{shore00_to_k, stiffness_to_shore, ShoreRegression};

/// Depth over which an inclusion's influence decays by 1/e, mm.
pub const ATTENUATION_LENGTH_MM: f64 = 10.0;
/// Spacing of the 4×4 probe sample points, mm.
pub const PROBE_PITCH_MM: f64 = 1.5;
/// Relative amplitude of the ragged-boundary perturbation.
const IRREGULAR_AMPLITUDE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Silicone,
    Pla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Smooth,
    Irregular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center_mm: (f64, f64),
    pub depth_mm: f64,
    pub radius_mm: f64,
    pub material: Material,
    pub stiffness_scale: f64,
    pub boundary: Boundary,
}

impl Inclusion {
    /// Added relative stiffness at `(x, y)`.
    pub fn influence(&self, x_mm: f64, y_mm: f64) -> f64 {
        let dx = x_mm - self.center_mm.0;
        let dy = y_mm - self.center_mm.1;
        let q = (dx * dx + dy * dy).sqrt() / self.radius_mm;
        let bump = (-q * q).exp();
        let kernel = match self.boundary {
            Boundary::Smooth => bump,
            Boundary::Irregular => {
                // Lobed, rippled rim. The q² factor keeps the peak at the
                // center: e^{-q²}(1 + a·q²) is decreasing for a < 1.
                let theta = dy.atan2(dx);
                let phase = 0.37 * self.center_mm.0 + 0.61 * self.center_mm.1;
                let ripple = (7.0 * theta + phase).sin() * (3.0 * PI * q).cos();
                bump + IRREGULAR_AMPLITUDE * q * q * bump * ripple
            }
        };
        self.stiffness_scale * kernel * (-self.depth_mm / ATTENUATION_LENGTH_MM).exp()
    }

    /// Ordering key for severity: harder first, then larger.
    pub fn severity(&self) -> (f64, f64) {
        (self.stiffness_scale, self.radius_mm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceProfile {
    Flat { height_mm: f64 },
    /// Paraboloid cap, `peak_mm` at the center falling to `base_mm` at the
    /// edge midpoints.
    Dome { base_mm: f64, peak_mm: f64 },
}

impl Default for SurfaceProfile {
    fn default() -> Self {
        SurfaceProfile::Flat { height_mm: 3.0 }
    }
}

fn default_contact() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phantom {
    #[serde(default)]
    pub name: String,
    pub extent_mm: (f64, f64),
    #[serde(default)]
    pub surface: SurfaceProfile,
    pub base_stiffness_n_per_mm: f64,
    /// Probe-to-tissue contact spring turning press depth into force.
    #[serde(default = "default_contact")]
    pub contact_stiffness_n_per_mm: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
}

/// One press of the remote probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSample {
    pub heights_mm: [f64; UNITS],
    pub k: [f64; UNITS],
    /// `normal_force / indentation` per cell, or the tissue stiffness when
    /// there is no contact.
    pub stiffness_n_per_mm: [f64; UNITS],
    pub indentation_mm: [f64; UNITS],
    pub normal_force_n: f64,
    /// Some sample point fell outside the phantom.
    pub boundary: bool,
}

impl ProbeSample {
    pub fn mean_indentation_mm(&self) -> f64 {
        self.indentation_mm.iter().sum::<f64>() / UNITS as f64
    }
}

/// Workspace position of probe cell `j·4 + i` around `(x, y)`.
pub fn probe_point(x_mm: f64, y_mm: f64, cell: usize) -> (f64, f64) {
    let (i, j) = (cell % GRID, cell / GRID);
    (
        x_mm + (i as f64 - 1.5) * PROBE_PITCH_MM,
        y_mm + (j as f64 - 1.5) * PROBE_PITCH_MM,
    )
}

impl Phantom {
    pub fn validate(&self) -> Result<(), TeleError> {
        let bad = |m: String| Err(TeleError::Phantom(m));
        let (w, h) = self.extent_mm;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return bad(format!("extent {w}x{h} must be positive"));
        }
        if !(self.base_stiffness_n_per_mm > 0.0 && self.base_stiffness_n_per_mm.is_finite()) {
            return bad("base stiffness must be positive".into());
        }
        if !(self.contact_stiffness_n_per_mm > 0.0 && self.contact_stiffness_n_per_mm.is_finite()) {
            return bad("contact stiffness must be positive".into());
        }
        let surf_ok = match self.surface {
            SurfaceProfile::Flat { height_mm } => height_mm.is_finite() && height_mm >= 0.0,
            SurfaceProfile::Dome { base_mm, peak_mm } => base_mm >= 0.0 && peak_mm >= base_mm && peak_mm.is_finite(),
        };
        if !surf_ok {
            return bad("surface heights must be finite, non-negative, and peak >= base".into());
        }
        for (n, inc) in self.inclusions.iter().enumerate() {
            let (x, y) = inc.center_mm;
            if !((0.0..=w).contains(&x) && (0.0..=h).contains(&y)) {
                return bad(format!("inclusion {n} center ({x}, {y}) outside extent"));
            }
            if !(inc.radius_mm > 0.0 && inc.radius_mm.is_finite()) {
                return bad(format!("inclusion {n} radius must be positive"));
            }
            if !(inc.depth_mm >= 0.0 && inc.depth_mm.is_finite()) {
                return bad(format!("inclusion {n} depth must be non-negative"));
            }
            if !(inc.stiffness_scale >= 1.0 && inc.stiffness_scale.is_finite()) {
                return bad(format!("inclusion {n} stiffness scale must be at least 1"));
            }
        }
        let hardest_silicone = self
            .inclusions
            .iter()
            .filter(|i| i.material == Material::Silicone)
            .map(|i| i.stiffness_scale)
            .fold(f64::NEG_INFINITY, f64::max);
        let softest_pla = self
            .inclusions
            .iter()
            .filter(|i| i.material == Material::Pla)
            .map(|i| i.stiffness_scale)
            .fold(f64::INFINITY, f64::min);
        if softest_pla <= hardest_silicone {
            return bad("every pla inclusion must be stiffer than every silicone one".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TeleError> {
        let p: Phantom = serde_json::from_str(text).map_err(|e| TeleError::Phantom(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, TeleError> {
        let text = std::fs::read_to_string(path).map_err(|e| TeleError::Phantom(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn contains(&self, x_mm: f64, y_mm: f64) -> bool {
        (0.0..=self.extent_mm.0).contains(&x_mm) && (0.0..=self.extent_mm.1).contains(&y_mm)
    }

    pub fn surface_mm(&self, x_mm: f64, y_mm: f64) -> f64 {
        if !self.contains(x_mm, y_mm) {
            return 0.0;
        }
        match self.surface {
            SurfaceProfile::Flat { height_mm } => height_mm,
            SurfaceProfile::Dome { base_mm, peak_mm } => {
                let u = (2.0 * x_mm / self.extent_mm.0 - 1.0).powi(2);
                let v = (2.0 * y_mm / self.extent_mm.1 - 1.0).powi(2);
                base_mm + (peak_mm - base_mm) * (1.0 - u - v).max(0.0)
            }
        }
    }

    /// Tissue stiffness under the probe at `(x, y)`, N/mm.
    pub fn stiffness_at(&self, x_mm: f64, y_mm: f64) -> f64 {
        let extra: f64 = if self.contains(x_mm, y_mm) {
            self.inclusions.iter().map(|i| i.influence(x_mm, y_mm)).sum()
        } else {
            0.0
        };
        self.base_stiffness_n_per_mm * (1.0 + extra)
    }

    /// Inclusion centers, mm.
    pub fn centers_mm(&self) -> Vec<(f64, f64)> {
        self.inclusions.iter().map(|i| i.center_mm).collect()
    }

    /// Inclusion indices from least to most severe.
    pub fn severity_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.inclusions.len()).collect();
        idx.sort_by(|&a, &b| {
            let (sa, sb) = (self.inclusions[a].severity(), self.inclusions[b].severity());
            sa.0.total_cmp(&sb.0).then(sa.1.total_cmp(&sb.1))
        });
        idx
    }

    /// Two inclusions, one hard and ragged, one soft and smooth.
    pub fn two_tumor() -> Self {
        Self {
            name: "two_tumor".into(),
            extent_mm: (60.0, 60.0),
            surface: SurfaceProfile::Flat { height_mm: 3.0 },
            base_stiffness_n_per_mm: 1.0,
            contact_stiffness_n_per_mm: default_contact(),
            inclusions: vec![
                Inclusion {
                    center_mm: (18.0, 22.0),
                    depth_mm: 5.0,
                    radius_mm: 6.0,
                    material: Material::Pla,
                    stiffness_scale: 2.0,
                    boundary: Boundary::Irregular,
                },
                Inclusion {
                    center_mm: (41.0, 38.5),
                    depth_mm: 5.0,
                    radius_mm: 6.0,
                    material: Material::Silicone,
                    stiffness_scale: 1.2,
                    boundary: Boundary::Smooth,
                },
            ],
        }
    }

    /// Four inclusions of increasing hardness and size, one per quadrant.
    pub fn four_tumor() -> Self {
        let inc = |c, r, material, s, boundary| Inclusion {
            center_mm: c,
            depth_mm: 5.0,
            radius_mm: r,
            material,
            stiffness_scale: s,
            boundary,
        };
        Self {
            name: "four_tumor".into(),
            extent_mm: (60.0, 60.0),
            surface: SurfaceProfile::Flat { height_mm: 3.0 },
            base_stiffness_n_per_mm: 1.0,
            contact_stiffness_n_per_mm: default_contact(),
            inclusions: vec![
                inc((45.0, 45.0), 7.0, Material::Pla, 2.0, Boundary::Irregular),
                inc((15.0, 15.0), 5.0, Material::Silicone, 1.0, Boundary::Smooth),
                inc((15.0, 45.0), 8.0, Material::Pla, 2.8, Boundary::Irregular),
                inc((45.0, 15.0), 6.0, Material::Silicone, 1.4, Boundary::Smooth),
            ],
        }
    }

    /// Curved surface with one malignant and one benign inclusion.
    pub fn breast() -> Self {
        Self {
            name: "breast".into(),
            extent_mm: (60.0, 60.0),
            surface: SurfaceProfile::Dome { base_mm: 1.5, peak_mm: 4.0 },
            base_stiffness_n_per_mm: 0.9,
            contact_stiffness_n_per_mm: default_contact(),
            inclusions: vec![
                Inclusion {
                    center_mm: (22.0, 34.0),
                    depth_mm: 8.0,
                    radius_mm: 7.0,
                    material: Material::Pla,
                    stiffness_scale: 2.2,
                    boundary: Boundary::Irregular,
                },
                Inclusion {
                    center_mm: (40.0, 24.0),
                    depth_mm: 6.0,
                    radius_mm: 6.0,
                    material: Material::Silicone,
                    stiffness_scale: 1.2,
                    boundary: Boundary::Smooth,
                },
            ],
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "two_tumor" => Some(Self::two_tumor()),
            "four_tumor" => Some(Self::four_tumor()),
            "breast" => Some(Self::breast()),
            _ => None,
        }
    }

    /// A built-in name or a path to a phantom JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, TeleError> {
        match Self::builtin(name_or_path) {
            Some(p) => Ok(p),
            None => Self::load(Path::new(name_or_path)),
        }
    }
}

/// Press the probe at `(x, y)` `press_mm` deep into the surface.
///
/// The contact spring sets one normal force for the whole patch; each cell
/// then sinks by `force / local stiffness`. Friction is not sensed.
pub fn probe_sample(phantom: &Phantom, x_mm: f64, y_mm: f64, press_mm: f64, reg: &ShoreRegression) -> ProbeSample {
    let press = if press_mm.is_finite() { press_mm.max(0.0) } else { 0.0 };
    let force = phantom.contact_stiffness_n_per_mm * press;
    let mut s = ProbeSample {
        heights_mm: [0.0; UNITS],
        k: [1.0; UNITS],
        stiffness_n_per_mm: [0.0; UNITS],
        indentation_mm: [0.0; UNITS],
        normal_force_n: force,
        boundary: false,
    };
    for c in 0..UNITS {
        let (px, py) = probe_point(x_mm, y_mm, c);
        s.boundary |= !phantom.contains(px, py);
        let tissue = phantom.stiffness_at(px, py);
        let delta = force / tissue;
        // Recompute from what a force sensor and an indentation gauge would
        // report rather than passing the model value through.
        let measured = if delta > 0.0 { force / delta } else { tissue };
        s.indentation_mm[c] = delta;
        s.stiffness_n_per_mm[c] = measured;
        s.heights_mm[c] = (phantom.surface_mm(px, py) - delta).max(0.0);
        s.k[c] = shore00_to_k(stiffness_to_shore(measured), reg);
    }
    s
}

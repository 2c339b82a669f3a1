//! Analytic heightfields of the shape-discrimination set.

use serde::{Deserialize, Serialize};

use super::WORKSPACE_MM;
use crate::plant::STROKE_MM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Hemisphere,
    Cone,
    Cube,
    BowPrism,
    SemiEllipsoid,
    TriPrism,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Hemisphere,
        ShapeKind::Cone,
        ShapeKind::Cube,
        ShapeKind::BowPrism,
        ShapeKind::SemiEllipsoid,
        ShapeKind::TriPrism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Hemisphere => "hemisphere",
            ShapeKind::Cone => "cone",
            ShapeKind::Cube => "cube",
            ShapeKind::BowPrism => "bow_prism",
            ShapeKind::SemiEllipsoid => "semi_ellipsoid",
            ShapeKind::TriPrism => "tri_prism",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// A study shape standing on the workspace plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyShape {
    pub kind: ShapeKind,
    /// Base extent along x (and along y, except for the semi-ellipsoid).
    pub footprint_mm: f64,
    pub peak_height_mm: f64,
    pub center_mm: (f64, f64),
}

impl StudyShape {
    /// Centered in the workspace with a 40 mm footprint and full 5 mm relief.
    pub fn standard(kind: ShapeKind) -> Self {
        Self {
            kind,
            footprint_mm: 40.0,
            peak_height_mm: STROKE_MM,
            center_mm: (WORKSPACE_MM.0 / 2.0, WORKSPACE_MM.1 / 2.0),
        }
    }

    pub fn height_at(&self, x_mm: f64, y_mm: f64) -> f64 {
        shape_heightfield(self, x_mm, y_mm)
    }
}

/// Height of `shape` at workspace point `(x, y)`; zero outside the footprint.
pub fn shape_heightfield(shape: &StudyShape, x_mm: f64, y_mm: f64) -> f64 {
    let dx = x_mm - shape.center_mm.0;
    let dy = y_mm - shape.center_mm.1;
    let half = shape.footprint_mm / 2.0;
    let h = shape.peak_height_mm.clamp(0.0, STROKE_MM);
    if !(dx.is_finite() && dy.is_finite()) || half <= 0.0 {
        return 0.0;
    }
    let inside_square = dx.abs() <= half && dy.abs() <= half;
    let z = match shape.kind {
        ShapeKind::Hemisphere => {
            let r = (dx * dx + dy * dy).sqrt() / half;
            if r < 1.0 { h * (1.0 - r * r).sqrt() } else { 0.0 }
        }
        ShapeKind::Cone => {
            let r = (dx * dx + dy * dy).sqrt() / half;
            if r < 1.0 { h * (1.0 - r) } else { 0.0 }
        }
        ShapeKind::Cube => {
            if inside_square { h } else { 0.0 }
        }
        ShapeKind::BowPrism => {
            if inside_square && h > 0.0 {
                // Circular arc through the two base edges and the apex.
                let rc = (half * half + h * h) / (2.0 * h);
                ((rc * rc - dx * dx).sqrt() - (rc - h)).max(0.0)
            } else {
                0.0
            }
        }
        ShapeKind::TriPrism => {
            if inside_square { h * (1.0 - dx.abs() / half) } else { 0.0 }
        }
        ShapeKind::SemiEllipsoid => {
            let b = shape.footprint_mm / 3.0;
            let q = (dx / half).powi(2) + (dy / b).powi(2);
            if q < 1.0 { h * (1.0 - q).sqrt() } else { 0.0 }
        }
    };
    z.clamp(0.0, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hemisphere_geometry() {
        let r = 4.0;
        let s = StudyShape {
            kind: ShapeKind::Hemisphere,
            footprint_mm: 2.0 * r,
            peak_height_mm: r,
            center_mm: (30.0, 30.0),
        };
        assert_eq!(s.height_at(30.0, 30.0), r);
        let at_half = s.height_at(30.0 + r / 2.0, 30.0);
        assert!((at_half - r * 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(s.height_at(30.0 + r, 30.0), 0.0);
    }

    #[test]
    fn zero_outside_footprint_and_bounded() {
        for kind in ShapeKind::ALL {
            let s = StudyShape::standard(kind);
            assert_eq!(s.height_at(5.0, 5.0), 0.0, "{kind:?}");
            assert_eq!(s.height_at(30.0, 55.0), 0.0, "{kind:?}");
            for i in 0..=60 {
                for j in 0..=60 {
                    let z = s.height_at(i as f64, j as f64);
                    assert!((0.0..=5.0).contains(&z));
                }
            }
            assert!(s.height_at(30.0, 30.0) > 4.99, "{kind:?} apex");
        }
    }

    #[test]
    fn prisms_are_extruded_along_y() {
        for kind in [ShapeKind::BowPrism, ShapeKind::TriPrism, ShapeKind::Cube] {
            let s = StudyShape::standard(kind);
            for y in [12.0, 25.0, 30.0, 48.0] {
                assert_eq!(s.height_at(35.0, y), s.height_at(35.0, 30.0));
            }
        }
        let bow = StudyShape::standard(ShapeKind::BowPrism);
        assert!(bow.height_at(49.999, 30.0) < 0.01);
    }

    #[test]
    fn names_round_trip() {
        for kind in ShapeKind::ALL {
            assert_eq!(ShapeKind::from_name(kind.name()), Some(kind));
        }
    }
}

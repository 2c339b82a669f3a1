//! Tactile scenes and the sliding-window sampler that turns a platform pose
//! into 16 per-unit render commands.

pub mod ingest;
pub mod map;
pub mod shapes;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::RenderCommand;
use crate::plant::STROKE_MM;
use crate::shore::{shore00_to_k, ShoreRegression};

pub use ingest::{assemble_from_manifest, assemble_tacmap, Placement, Raster, SceneManifest, Segment, SegmentProps};
pub use map::TactileMap;
pub use shapes::{shape_heightfield, ShapeKind, StudyShape};

/// Horizontal workspace of the sliding platform, mm.
pub const WORKSPACE_MM: (f64, f64) = (60.0, 60.0);
/// Vertical travel of the sliding platform, mm.
pub const WORKSPACE_Z_MM: f64 = 185.0;
/// Pins per side of the display.
pub const GRID: usize = 4;
pub const UNITS: usize = GRID * GRID;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene data: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("image error: {0}")]
    Image(String),
}

/// Stiffness as carried by a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellStiffness {
    /// Background or unknown; rendered rigid.
    Undefined,
    Shore00(f64),
    /// Normalized k given directly.
    Normalized(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSample {
    pub depth_mm: f64,
    pub stiffness: CellStiffness,
    pub friction: f64,
}

impl CellSample {
    pub const BACKGROUND: CellSample = CellSample {
        depth_mm: 0.0,
        stiffness: CellStiffness::Undefined,
        friction: 0.0,
    };
}

/// Anything that can be queried for surface properties at a workspace point.
pub trait TactileSource {
    fn cell(&self, x_mm: f64, y_mm: f64) -> CellSample;
}

impl TactileSource for TactileMap {
    fn cell(&self, x_mm: f64, y_mm: f64) -> CellSample {
        match self.cell_at(x_mm, y_mm) {
            None => CellSample::BACKGROUND,
            Some(c) => {
                let s = self.stiffness()[c];
                if s.is_nan() {
                    return CellSample::BACKGROUND;
                }
                let f = self.friction()[c];
                CellSample {
                    depth_mm: self.depth()[c] as f64,
                    stiffness: CellStiffness::Shore00(s as f64),
                    friction: if f.is_nan() { 0.0 } else { f as f64 },
                }
            }
        }
    }
}

impl TactileSource for StudyShape {
    /// Shape perception runs rigid and frictionless.
    fn cell(&self, x_mm: f64, y_mm: f64) -> CellSample {
        CellSample {
            depth_mm: self.height_at(x_mm, y_mm),
            stiffness: CellStiffness::Normalized(1.0),
            friction: 0.0,
        }
    }
}

/// A flat platform with uniform properties everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatPlatform {
    pub height_mm: f64,
    pub k: f64,
    pub friction: f64,
}

impl Default for FlatPlatform {
    /// The stiffness-study platform: 3 mm high, friction off.
    fn default() -> Self {
        Self {
            height_mm: 3.0,
            k: 1.0,
            friction: 0.0,
        }
    }
}

impl TactileSource for FlatPlatform {
    fn cell(&self, _x: f64, _y: f64) -> CellSample {
        CellSample {
            depth_mm: self.height_mm,
            stiffness: CellStiffness::Normalized(self.k),
            friction: self.friction,
        }
    }
}

#[derive(Clone, Debug)]
pub enum SceneSource {
    Flat(FlatPlatform),
    Shape(StudyShape),
    Map(Arc<TactileMap>),
}

impl TactileSource for SceneSource {
    fn cell(&self, x: f64, y: f64) -> CellSample {
        match self {
            SceneSource::Flat(f) => f.cell(x, y),
            SceneSource::Shape(s) => s.cell(x, y),
            SceneSource::Map(m) => m.cell(x, y),
        }
    }
}

/// A named scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub source: SceneSource,
}

impl Scene {
    pub fn flat() -> Self {
        Self {
            id: "flat".into(),
            source: SceneSource::Flat(FlatPlatform::default()),
        }
    }

    pub fn shape(kind: ShapeKind) -> Self {
        Self {
            id: kind.name().into(),
            source: SceneSource::Shape(StudyShape::standard(kind)),
        }
    }

    pub fn map(id: impl Into<String>, map: TactileMap) -> Self {
        Self {
            id: id.into(),
            source: SceneSource::Map(Arc::new(map)),
        }
    }

    /// A `.tacmap` file or a JSON ingest manifest, named after the file stem.
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        let is_manifest = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let map = if is_manifest {
            assemble_from_manifest(path)?
        } else {
            TactileMap::load(path)?
        };
        Ok(Scene::map(id, map))
    }

    /// The flat platform followed by the six study shapes.
    pub fn builtins() -> Vec<Scene> {
        std::iter::once(Scene::flat())
            .chain(ShapeKind::ALL.into_iter().map(Scene::shape))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// One point at each pin's cell center.
    #[default]
    Point,
    /// Mean over a 5×5 sub-grid of each pin's cell.
    PatchAverage,
}

/// Contact patch under the fingertip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleWindow {
    pub center_mm: (f64, f64),
    pub side_mm: f64,
}

impl SampleWindow {
    pub const DEFAULT_SIDE_MM: f64 = 6.0;

    pub fn at(x_mm: f64, y_mm: f64) -> Self {
        Self {
            center_mm: (x_mm, y_mm),
            side_mm: Self::DEFAULT_SIDE_MM,
        }
    }

    /// Center clamped so the whole patch stays inside the workspace.
    pub fn clamped_center(&self) -> (f64, f64) {
        let h = (self.side_mm / 2.0).min(WORKSPACE_MM.0 / 2.0);
        let c = |v: f64, hi: f64| if v.is_nan() { hi / 2.0 } else { v.clamp(h, hi - h) };
        (c(self.center_mm.0, WORKSPACE_MM.0), c(self.center_mm.1, WORKSPACE_MM.1))
    }

    /// Workspace position of pin `(i, j)`'s cell center; unit index `j·4 + i`.
    pub fn pin_position(&self, i: usize, j: usize) -> (f64, f64) {
        let (cx, cy) = self.clamped_center();
        let pitch = self.side_mm / GRID as f64;
        (
            cx + (i as f64 - 1.5) * pitch,
            cy + (j as f64 - 1.5) * pitch,
        )
    }
}

fn command_for(sample: CellSample, z_offset_mm: f64, reg: &ShoreRegression) -> RenderCommand {
    if matches!(sample.stiffness, CellStiffness::Undefined) {
        return RenderCommand::default();
    }
    let k = match sample.stiffness {
        CellStiffness::Shore00(s) => shore00_to_k(s, reg),
        CellStiffness::Normalized(k) => k,
        CellStiffness::Undefined => 1.0,
    };
    RenderCommand {
        target_height_mm: (sample.depth_mm - z_offset_mm).clamp(0.0, STROKE_MM),
        k,
        f: sample.friction,
    }
    .sanitized()
}

/// The 16 commands for a fingertip at `window` with platform height offset
/// `z_offset_mm`.
pub fn sample_window<S: TactileSource + ?Sized>(
    source: &S,
    window: &SampleWindow,
    z_offset_mm: f64,
    reg: &ShoreRegression,
    mode: SampleMode,
) -> [RenderCommand; UNITS] {
    let mut out = [RenderCommand::default(); UNITS];
    let pitch = window.side_mm / GRID as f64;
    for j in 0..GRID {
        for i in 0..GRID {
            let (x, y) = window.pin_position(i, j);
            out[j * GRID + i] = match mode {
                SampleMode::Point => command_for(source.cell(x, y), z_offset_mm, reg),
                SampleMode::PatchAverage => {
                    let mut acc = (0.0, 0.0, 0.0);
                    let mut n = 0.0;
                    for a in 0..5 {
                        for b in 0..5 {
                            let px = x + (a as f64 - 2.0) / 5.0 * pitch;
                            let py = y + (b as f64 - 2.0) / 5.0 * pitch;
                            let c = command_for(source.cell(px, py), z_offset_mm, reg);
                            acc.0 += c.target_height_mm;
                            acc.1 += c.k;
                            acc.2 += c.f;
                            n += 1.0;
                        }
                    }
                    RenderCommand {
                        target_height_mm: acc.0 / n,
                        k: acc.1 / n,
                        f: acc.2 / n,
                    }
                }
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shore::DEFAULT_SHORE_REGRESSION;

    #[test]
    fn flat_platform_is_uniform() {
        let flat = FlatPlatform::default();
        for (x, y) in [(0.0, 0.0), (30.0, 12.0), (60.0, 60.0)] {
            let c = sample_window(&flat, &SampleWindow::at(x, y), 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
            assert!(c.iter().all(|u| u.target_height_mm == 3.0 && u.f == 0.0));
        }
    }

    #[test]
    fn shapes_render_rigid_and_frictionless() {
        let s = StudyShape::standard(ShapeKind::Cone);
        let c = sample_window(&s, &SampleWindow::at(30.0, 30.0), 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        assert!(c.iter().all(|u| u.k == 1.0 && u.f == 0.0));
    }

    #[test]
    fn hemisphere_center_taller_than_corners() {
        let s = StudyShape::standard(ShapeKind::Hemisphere);
        let w = SampleWindow::at(30.0, 30.0);
        let c = sample_window(&s, &w, 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        for j in 0..4 {
            for i in 0..4 {
                let (x, y) = w.pin_position(i, j);
                assert_eq!(c[j * 4 + i].target_height_mm, s.height_at(x, y));
            }
        }
        assert!(c[5].target_height_mm > c[0].target_height_mm);
    }

    #[test]
    fn background_cells_render_default() {
        let m = TactileMap::uniform(4, 4, 1.0, 2.0, f32::NAN, 0.5).unwrap();
        let c = sample_window(&m, &SampleWindow::at(2.0, 2.0), 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        assert!(c.iter().all(|u| *u == RenderCommand::default()));
    }

    #[test]
    fn z_offset_lowers_targets() {
        let flat = FlatPlatform { height_mm: 4.0, ..FlatPlatform::default() };
        let c = sample_window(&flat, &SampleWindow::at(30.0, 30.0), 1.5, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        assert!(c.iter().all(|u| u.target_height_mm == 2.5));
        let c = sample_window(&flat, &SampleWindow::at(30.0, 30.0), 9.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        assert!(c.iter().all(|u| u.target_height_mm == 0.0));
    }

    #[test]
    fn patch_average_of_uniform_is_uniform() {
        let m = TactileMap::uniform(120, 120, 0.5, 2.0, 40.0, 0.25).unwrap();
        let w = SampleWindow::at(30.0, 30.0);
        let p = sample_window(&m, &w, 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::Point);
        let a = sample_window(&m, &w, 0.0, &DEFAULT_SHORE_REGRESSION, SampleMode::PatchAverage);
        for (x, y) in p.iter().zip(&a) {
            assert!((x.target_height_mm - y.target_height_mm).abs() < 1e-12);
            assert!((x.k - y.k).abs() < 1e-12);
        }
    }
}

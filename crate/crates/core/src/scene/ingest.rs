//! Building tactile maps from externally produced depth and segment rasters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::map::TactileMap;
use super::SceneError;
use crate::plant::STROKE_MM;

/// A single-channel raster with values normalized to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, SceneError> {
        if values.len() != width * height {
            return Err(SceneError::Dimension(format!(
                "raster of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    /// Load a PNG or PGM, converting to 16-bit gray then to [0, 1].
    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let img = image::open(path)
            .map_err(|e| SceneError::Image(format!("{}: {e}", path.display())))?
            .into_luma16();
        let (w, h) = img.dimensions();
        let values = img.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
        Self::new(w as usize, h as usize, values)
    }
}

/// Per-segment properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentProps {
    #[serde(default)]
    pub label: String,
    pub shore00: f32,
    pub friction: f32,
}

/// A binary segment mask (cells with value > 0.5) and its properties.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub mask: Raster,
    pub props: SegmentProps,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub cell_size_mm: f32,
    pub origin_mm: (f32, f32),
    pub max_relief_mm: f32,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            cell_size_mm: 0.5,
            origin_mm: (0.0, 0.0),
            max_relief_mm: STROKE_MM as f32,
        }
    }
}

/// Stack depth and segments into a map. Raster values are relief (larger
/// is taller), affinely rescaled over the whole raster to `0..=max_relief`;
/// a constant raster maps to zero. Cells outside every mask are background:
/// zero depth, NaN stiffness, zero friction. Where masks overlap the later
/// segment wins.
pub fn assemble_tacmap(depth: &Raster, segments: &[Segment], placement: &Placement) -> Result<TactileMap, SceneError> {
    for (i, s) in segments.iter().enumerate() {
        if s.mask.width != depth.width || s.mask.height != depth.height {
            return Err(SceneError::Dimension(format!(
                "mask {i} is {}x{}, depth is {}x{}",
                s.mask.width, s.mask.height, depth.width, depth.height
            )));
        }
        if !(s.props.friction.is_finite() && (0.0..=1.0).contains(&s.props.friction)) {
            return Err(SceneError::Format(format!("segment {i} friction outside [0, 1]")));
        }
        if !s.props.shore00.is_finite() {
            return Err(SceneError::Format(format!("segment {i} has non-finite Shore value")));
        }
    }
    let max_relief = placement.max_relief_mm.clamp(0.0, STROKE_MM as f32);
    let finite = depth.values.iter().filter(|v| v.is_finite());
    let lo = finite.clone().cloned().fold(f32::INFINITY, f32::min);
    let hi = finite.cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = hi - lo;

    let n = depth.width * depth.height;
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, s) in segments.iter().enumerate() {
        for (cell, &v) in owner.iter_mut().zip(&s.mask.values) {
            if v > 0.5 {
                *cell = Some(i);
            }
        }
    }
    let mut d = Vec::with_capacity(n);
    let mut st = Vec::with_capacity(n);
    let mut fr = Vec::with_capacity(n);
    for (c, who) in owner.iter().enumerate() {
        match who {
            Some(i) => {
                let raw = depth.values[c];
                let relief = if span > 0.0 && raw.is_finite() {
                    (raw - lo) / span * max_relief
                } else {
                    0.0
                };
                d.push(relief.clamp(0.0, max_relief));
                st.push(segments[*i].props.shore00);
                fr.push(segments[*i].props.friction);
            }
            None => {
                d.push(0.0);
                st.push(f32::NAN);
                fr.push(0.0);
            }
        }
    }
    TactileMap::new(depth.width, depth.height, placement.cell_size_mm, placement.origin_mm, d, st, fr)
}

/// JSON property table that ties raster files to segment properties. Paths
/// are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub depth: PathBuf,
    #[serde(default = "default_cell")]
    pub cell_size_mm: f32,
    #[serde(default)]
    pub origin_mm: (f32, f32),
    #[serde(default = "default_relief")]
    pub max_relief_mm: f32,
    #[serde(default)]
    pub segments: Vec<ManifestSegment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSegment {
    pub mask: PathBuf,
    #[serde(flatten)]
    pub props: SegmentProps,
}

fn default_cell() -> f32 {
    0.5
}

fn default_relief() -> f32 {
    STROKE_MM as f32
}

pub fn assemble_from_manifest(path: &Path) -> Result<TactileMap, SceneError> {
    let text = std::fs::read_to_string(path)?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| SceneError::Format(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let depth = Raster::load(&dir.join(&manifest.depth))?;
    let segments = manifest
        .segments
        .iter()
        .map(|s| {
            Ok(Segment {
                mask: Raster::load(&dir.join(&s.mask))?,
                props: s.props.clone(),
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    assemble_tacmap(
        &depth,
        &segments,
        &Placement {
            cell_size_mm: manifest.cell_size_mm,
            origin_mm: manifest.origin_mm,
            max_relief_mm: manifest.max_relief_mm,
        },
    )
}

//! Three-layer tactile maps and the `.tacmap` binary container.

use std::io::{Read, Write};
use std::path::Path;

use super::SceneError;

pub const MAGIC: &[u8; 4] = b"TACM";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 4 + 4;

/// Aligned depth (mm), stiffness (Shore 00, NaN for background) and friction
/// layers, row-major with row 0 at `origin.y`.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileMap {
    width: usize,
    height: usize,
    cell_size_mm: f32,
    origin_mm: (f32, f32),
    depth: Vec<f32>,
    stiffness: Vec<f32>,
    friction: Vec<f32>,
}

impl TactileMap {
    pub fn new(
        width: usize,
        height: usize,
        cell_size_mm: f32,
        origin_mm: (f32, f32),
        depth: Vec<f32>,
        stiffness: Vec<f32>,
        friction: Vec<f32>,
    ) -> Result<Self, SceneError> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| SceneError::Format("map dimensions overflow".into()))?;
        if width == 0 || height == 0 {
            return Err(SceneError::Format("map must have at least one cell".into()));
        }
        if depth.len() != n || stiffness.len() != n || friction.len() != n {
            return Err(SceneError::Dimension(format!(
                "layers have {}, {}, {} cells; expected {n}",
                depth.len(),
                stiffness.len(),
                friction.len()
            )));
        }
        if !(cell_size_mm > 0.0 && cell_size_mm.is_finite()) {
            return Err(SceneError::Format(format!("bad cell size {cell_size_mm}")));
        }
        if friction.iter().any(|f| !f.is_nan() && !(0.0..=1.0).contains(f)) {
            return Err(SceneError::Format("friction must lie in [0, 1] or be NaN".into()));
        }
        Ok(Self {
            width,
            height,
            cell_size_mm,
            origin_mm,
            depth,
            stiffness,
            friction,
        })
    }

    /// A map of a single repeated cell value.
    pub fn uniform(
        width: usize,
        height: usize,
        cell_size_mm: f32,
        depth_mm: f32,
        shore00: f32,
        friction: f32,
    ) -> Result<Self, SceneError> {
        let n = width * height;
        Self::new(
            width,
            height,
            cell_size_mm,
            (0.0, 0.0),
            vec![depth_mm; n],
            vec![shore00; n],
            vec![friction; n],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size_mm(&self) -> f32 {
        self.cell_size_mm
    }

    pub fn origin_mm(&self) -> (f32, f32) {
        self.origin_mm
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn stiffness(&self) -> &[f32] {
        &self.stiffness
    }

    pub fn friction(&self) -> &[f32] {
        &self.friction
    }

    /// Cell containing workspace point `(x, y)`, if any.
    pub fn cell_at(&self, x_mm: f64, y_mm: f64) -> Option<usize> {
        let fx = (x_mm - self.origin_mm.0 as f64) / self.cell_size_mm as f64;
        let fy = (y_mm - self.origin_mm.1 as f64) / self.cell_size_mm as f64;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        (i < self.width && j < self.height).then(|| j * self.width + i)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SceneError> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 12 * self.depth.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&self.cell_size_mm.to_le_bytes());
        buf.extend_from_slice(&self.origin_mm.0.to_le_bytes());
        buf.extend_from_slice(&self.origin_mm.1.to_le_bytes());
        for layer in [&self.depth, &self.stiffness, &self.friction] {
            for v in layer.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SceneError> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| SceneError::Format("truncated header".into()))?;
        if &header[0..4] != MAGIC {
            return Err(SceneError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(SceneError::Format(format!("unsupported version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().expect("4 bytes"));
        let f32_at = |o: usize| f32::from_le_bytes(header[o..o + 4].try_into().expect("4 bytes"));
        let width = u32_at(6) as usize;
        let height = u32_at(10) as usize;
        let cell = f32_at(14);
        let origin = (f32_at(18), f32_at(22));
        let n = width
            .checked_mul(height)
            .filter(|n| *n <= 1 << 28)
            .ok_or_else(|| SceneError::Format("implausible map dimensions".into()))?;
        let mut body = vec![0u8; 12 * n];
        r.read_exact(&mut body)
            .map_err(|_| SceneError::Format("truncated layers".into()))?;
        let mut layers = body
            .chunks_exact(4 * n)
            .map(|chunk| {
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>()
            });
        let depth = layers.next().expect("three layers");
        let stiffness = layers.next().expect("three layers");
        let friction = layers.next().expect("three layers");
        Self::new(width, height, cell, origin, depth, stiffness, friction)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

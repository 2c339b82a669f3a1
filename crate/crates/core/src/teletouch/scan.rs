//! Turning tactile replies into findings: where the inclusions are, and how
//! they rank by severity when felt on the display.

use std::collections::HashMap;

use super::phantom::{probe_point, probe_sample, Phantom};
use super::sites::ScanRecord;
use crate::analysis::kendall_tau;
use crate::analysis::AnalysisError;
use crate::control::{ControllerConfig, RenderCommand};
use crate::engine::{PlatformPose, ScriptedPoses};
use crate::plant::{PlantParams, INNER_DT};
use crate::scene::UNITS;
use crate::shore::{shore_from_deformation, ShoreRegression};
use crate::unit::{SimError, Unit};

/// Serpentine raster over `[margin, extent - margin]` in both axes.
pub fn grid_scan(extent_mm: (f64, f64), step_mm: f64, margin_mm: f64) -> Vec<(f64, f64)> {
    let axis = |len: f64| {
        let n = ((len - 2.0 * margin_mm) / step_mm).floor().max(0.0) as usize;
        (0..=n).map(|i| margin_mm + i as f64 * step_mm).collect::<Vec<_>>()
    };
    let (xs, ys) = (axis(extent_mm.0), axis(extent_mm.1));
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y) in ys.iter().enumerate() {
        if row % 2 == 0 {
            out.extend(xs.iter().map(|&x| (x, y)));
        } else {
            out.extend(xs.iter().rev().map(|&x| (x, y)));
        }
    }
    out
}

/// Pose trajectory visiting each scan point for `dwell_s`, pressing
/// `press_mm`.
pub fn scan_trajectory(points: &[(f64, f64)], dwell_s: f64, press_mm: f64) -> ScriptedPoses {
    let mut w = Vec::with_capacity(2 * points.len());
    for (i, &(x, y)) in points.iter().enumerate() {
        let t0 = i as f64 * dwell_s;
        let p = PlatformPose::new(x, y, press_mm);
        w.push((t0, p));
        // Hold until just before the next point, then jump.
        w.push((t0 + dwell_s - INNER_DT, p));
    }
    ScriptedPoses::new(w)
}

/// Stiffness readings binned on a fine grid.
#[derive(Clone, Debug, Default)]
pub struct StiffnessMap {
    quantum_mm: f64,
    bins: HashMap<(i64, i64), (f64, u32)>,
}

impl StiffnessMap {
    pub fn new(quantum_mm: f64) -> Self {
        Self {
            quantum_mm,
            bins: HashMap::new(),
        }
    }

    pub fn add(&mut self, x_mm: f64, y_mm: f64, k: f64) {
        if !(x_mm.is_finite() && y_mm.is_finite() && k.is_finite()) {
            return;
        }
        let key = ((x_mm / self.quantum_mm).round() as i64, (y_mm / self.quantum_mm).round() as i64);
        let e = self.bins.entry(key).or_insert((0.0, 0));
        e.0 += k;
        e.1 += 1;
    }

    /// Spread one 4×4 patch around the probe pose.
    pub fn add_patch(&mut self, x_mm: f64, y_mm: f64, k: &[f64; UNITS]) {
        for (c, &kc) in k.iter().enumerate() {
            let (px, py) = probe_point(x_mm, y_mm, c);
            self.add(px, py, kc);
        }
    }

    pub fn from_records(records: &[ScanRecord], quantum_mm: f64) -> Self {
        let mut m = Self::new(quantum_mm);
        for r in records {
            m.add_patch(r.pose.x as f64, r.pose.y as f64, &r.tactile.k.map(|v| v as f64));
        }
        m
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// The `n` highest bins at least `min_separation_mm` apart, strongest
    /// first, as `(x, y, mean k)`.
    pub fn peaks(&self, n: usize, min_separation_mm: f64) -> Vec<(f64, f64, f64)> {
        let mut cells: Vec<(f64, f64, f64)> = self
            .bins
            .iter()
            .map(|(&(i, j), &(sum, c))| (i as f64 * self.quantum_mm, j as f64 * self.quantum_mm, sum / c as f64))
            .collect();
        // Highest first; ties broken by position so the result is stable.
        cells.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.total_cmp(&b.0)).then(a.1.total_cmp(&b.1)));
        let mut out: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
        for c in cells {
            if out.len() == n {
                break;
            }
            if out.iter().all(|p| (p.0 - c.0).hypot(p.1 - c.1) >= min_separation_mm) {
                out.push(c);
            }
        }
        out
    }
}

/// Scan `phantom` directly (no network) and return the binned map.
pub fn direct_scan(phantom: &Phantom, step_mm: f64, press_mm: f64, reg: &ShoreRegression) -> StiffnessMap {
    let mut m = StiffnessMap::new(PROBE_QUANTUM_MM);
    for (x, y) in grid_scan(phantom.extent_mm, step_mm, 2.5) {
        let s = probe_sample(phantom, x, y, press_mm, reg);
        m.add_patch(x, y, &s.k);
    }
    m
}

/// Bin size used for localization maps, mm.
pub const PROBE_QUANTUM_MM: f64 = 0.5;

/// Hardness an operator reads off one pin showing `k`: a single press with
/// `force_n`, with the deformation taken from the unit's own (noisy) Hall
/// readout rather than the true position.
pub fn perceived_hardness(
    params: &PlantParams,
    config: &ControllerConfig,
    k: f64,
    force_n: f64,
    seed: u64,
) -> Result<f64, SimError> {
    const PLATFORM_MM: f64 = 3.0;
    let cmd = RenderCommand::new(PLATFORM_MM, k, 0.0)?;
    let mut unit = Unit::new(*params, *config, seed, PLATFORM_MM)?;
    unit.hold(&cmd, 0.0, 0.05)?;
    unit.hold(&cmd, force_n, 0.4)?;
    Ok(shore_from_deformation((PLATFORM_MM - unit.measured_height_mm()).max(0.0)))
}

/// Press force used when ranking inclusions on the display, N.
pub const RANKING_FORCE_N: f64 = 1.5;

/// One ranking trial: feel each inclusion center on the display and rank by
/// perceived hardness. Returns Kendall τ against the true severity order.
pub fn severity_trial(
    phantom: &Phantom,
    params: &PlantParams,
    config: &ControllerConfig,
    reg: &ShoreRegression,
    seed: u64,
) -> Result<f64, AnalysisError> {
    let mut truth = vec![0.0; phantom.inclusions.len()];
    for (rank, &i) in phantom.severity_order().iter().enumerate() {
        truth[i] = rank as f64;
    }
    let mut felt = Vec::with_capacity(truth.len());
    for (i, inc) in phantom.inclusions.iter().enumerate() {
        let s = probe_sample(phantom, inc.center_mm.0, inc.center_mm.1, 2.0, reg);
        // Center four cells straddle the probe axis.
        let k = [5, 6, 9, 10].iter().map(|&c| s.k[c]).sum::<f64>() / 4.0;
        let unit_seed = seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(i as u64);
        felt.push(perceived_hardness(params, config, k, RANKING_FORCE_N, unit_seed)?);
    }
    kendall_tau(&felt, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shore::DEFAULT_SHORE_REGRESSION;

    #[test]
    fn serpentine_covers_grid() {
        let g = grid_scan((10.0, 6.0), 2.0, 1.0);
        assert_eq!(g.len(), 5 * 3);
        assert_eq!(g[0], (1.0, 1.0));
        assert_eq!(g[4], (9.0, 1.0));
        assert_eq!(g[5], (9.0, 3.0));
    }

    #[test]
    fn peaks_respect_separation() {
        let mut m = StiffnessMap::new(1.0);
        m.add(0.0, 0.0, 0.9);
        m.add(1.0, 0.0, 0.89);
        m.add(10.0, 0.0, 0.8);
        let p = m.peaks(2, 5.0);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].0, p[1].0), (0.0, 10.0));
    }

    #[test]
    fn direct_scan_finds_two_tumors() {
        let ph = Phantom::two_tumor();
        let m = direct_scan(&ph, 3.0, 2.0, &DEFAULT_SHORE_REGRESSION);
        let found: Vec<(f64, f64)> = m.peaks(2, 12.0).iter().map(|p| (p.0, p.1)).collect();
        let e = crate::analysis::localization_error(&found, &ph.centers_mm()).unwrap();
        assert!(e.per_truth_cm.iter().all(|&d| d < 0.5), "{e:?}");
    }
}

//! Shore 00 hardness scale and its linear map to the normalized stiffness k.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Indenter travel that spans the full 0–100 scale, mm.
pub const SHORE_TRAVEL_MM: f64 = 2.5;
/// Normal forces used when calibrating against the scale, N.
pub const CALIBRATION_FORCES_N: [f64; 3] = [1.0, 1.5, 2.0];
/// Range of k over which the stiffness law is effective.
pub const K_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShoreError {
    #[error("need at least {needed} distinct stiffness levels, got {got}")]
    Insufficient { needed: usize, got: usize },
    #[error("degenerate regression: {0}")]
    Degenerate(String),
}

/// Reading of a linear Shore 00 durometer for an indentation depth.
pub fn shore_from_deformation(deformation_mm: f64) -> f64 {
    (100.0 * (1.0 - deformation_mm / SHORE_TRAVEL_MM)).clamp(0.0, 100.0)
}

/// Reading for a linear material of the given stiffness (N/mm), averaged
/// over the calibration forces.
pub fn stiffness_to_shore(stiffness_n_per_mm: f64) -> f64 {
    if !(stiffness_n_per_mm > 0.0) {
        return 0.0;
    }
    CALIBRATION_FORCES_N
        .iter()
        .map(|f| shore_from_deformation(f / stiffness_n_per_mm))
        .sum::<f64>()
        / CALIBRATION_FORCES_N.len() as f64
}

/// `k = slope · shore + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShoreRegression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Regression obtained by `calibrate shore` on the default plant and
/// controller; regenerate with `arraytac calibrate shore`.
pub const DEFAULT_SHORE_REGRESSION: ShoreRegression = ShoreRegression {
    slope: 0.008_021_316_514_663_26,
    intercept: 0.333_322_704_635_991_95,
    r2: 0.994_837_856_777_131_8,
};

impl Default for ShoreRegression {
    fn default() -> Self {
        DEFAULT_SHORE_REGRESSION
    }
}

impl ShoreRegression {
    /// Least-squares line through `(shore, k)` pairs.
    pub fn fit(ks: &[f64], shores: &[f64]) -> Result<Self, ShoreError> {
        let mut distinct: Vec<f64> = ks.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 3 {
            return Err(ShoreError::Insufficient {
                needed: 3,
                got: distinct.len(),
            });
        }
        let n = ks.len() as f64;
        let mx = shores.iter().sum::<f64>() / n;
        let my = ks.iter().sum::<f64>() / n;
        let sxx: f64 = shores.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = shores.iter().zip(ks).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ks.iter().map(|y| (y - my).powi(2)).sum();
        if sxx <= 1e-12 * (1.0 + mx * mx) {
            return Err(ShoreError::Degenerate(
                "all stiffness levels read the same Shore value".into(),
            ));
        }
        let slope = sxy / sxx;
        Ok(Self {
            slope,
            intercept: my - slope * mx,
            r2: sxy * sxy / (sxx * syy),
        })
    }

    pub fn to_k(&self, shore: f64) -> f64 {
        shore00_to_k(shore, self)
    }

    pub fn to_shore(&self, k: f64) -> f64 {
        k_to_shore00(k, self)
    }
}

/// Normalized stiffness for a Shore 00 value, clamped to the effective range.
/// Undefined (NaN) hardness renders as rigid.
pub fn shore00_to_k(shore: f64, reg: &ShoreRegression) -> f64 {
    if shore.is_nan() {
        return K_RANGE.1;
    }
    (reg.slope * shore + reg.intercept).clamp(K_RANGE.0, K_RANGE.1)
}

/// Inverse of the unclamped regression line.
pub fn k_to_shore00(k: f64, reg: &ShoreRegression) -> f64 {
    (k - reg.intercept) / reg.slope
}

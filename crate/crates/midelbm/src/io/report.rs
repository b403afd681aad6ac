//! Fit report: the quality summary written next to a fitted shape file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::{point_in_hull, FitResult};
use crate::Real;

use super::{read_to_string, write_bytes, IoError};

/// Summary of one fitting run, serialized as JSON. Quartiles are over the
/// per-point surface residuals |f - 1| of the final model; the control-point
/// counts record what the anomaly sweeps zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub points: usize,
    pub seed: u64,
    /// Loss after the evolutionary stage, before refinement.
    pub coarse_loss: f64,
    pub final_loss: f64,
    pub mean_abs_residual: f64,
    /// Min, lower quartile, median, upper quartile, max.
    pub residual_quartiles: [f64; 5],
    pub control_points_active: usize,
    pub zeroed_outside_hull: usize,
    pub zeroed_nonpositive: usize,
}

impl FitReport {
    pub fn from_fit<T: Real>(fit: &FitResult<T>, seed: u64) -> Self {
        let f = |v: T| v.to_f64().expect("scalar converts to f64");
        let mut residuals: Vec<f64> = fit.residuals.iter().map(|&r| f(r)).collect();
        residuals.sort_by(f64::total_cmp);
        let mean = residuals.iter().sum::<f64>() / residuals.len().max(1) as f64;

        let mut active = 0;
        let mut outside = 0;
        let mut nonpositive = 0;
        for cp in fit.metaball_centered.control_points() {
            if f(cp.weight) > 0.0 {
                active += 1;
            } else if point_in_hull(&fit.hull, &cp.position) {
                nonpositive += 1;
            } else {
                outside += 1;
            }
        }

        FitReport {
            points: fit.hull.points().len(),
            seed,
            coarse_loss: f(fit.ga_loss),
            final_loss: f(fit.final_loss),
            mean_abs_residual: mean,
            residual_quartiles: [
                quantile(&residuals, 0.0),
                quantile(&residuals, 0.25),
                quantile(&residuals, 0.5),
                quantile(&residuals, 0.75),
                quantile(&residuals, 1.0),
            ],
            control_points_active: active,
            zeroed_outside_hull: outside,
            zeroed_nonpositive: nonpositive,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::structure(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_bytes(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::from_json(&read_to_string(path)?, path)
    }
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = q * (sorted.len() - 1) as f64;
    let low = rank.floor() as usize;
    let high = rank.ceil() as usize;
    let fraction = rank - low as f64;
    sorted[low] + (sorted[high] - sorted[low]) * fraction
}

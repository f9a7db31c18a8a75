use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("grid bounds must satisfy 0 < x_min < x_max (got {x_min}, {x_max})")]
    BadBounds { x_min: f64, x_max: f64 },
    #[error("grid values must be positive and strictly increasing (index {0})")]
    NotIncreasing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// A one-dimensional sampling grid `(x_min, x_max, points)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn linear(x_min: f64, x_max: f64, points: usize) -> Self {
        Self { x_min, x_max, points, spacing: Spacing::Linear }
    }

    pub fn log(x_min: f64, x_max: f64, points: usize) -> Self {
        Self { x_min, x_max, points, spacing: Spacing::Log }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.points < 2 {
            return Err(GridError::TooFewPoints(self.points));
        }
        if !(self.x_min > 0.0 && self.x_max > self.x_min && self.x_max.is_finite()) {
            return Err(GridError::BadBounds { x_min: self.x_min, x_max: self.x_max });
        }
        Ok(())
    }

    /// Grid nodes; the endpoints are reproduced exactly.
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.points;
        let last = (n - 1) as f64;
        let mut out: Vec<f64> = match self.spacing {
            Spacing::Linear => {
                let h = (self.x_max - self.x_min) / last;
                (0..n).map(|i| self.x_min + h * i as f64).collect()
            }
            Spacing::Log => {
                let (a, b) = (self.x_min.ln(), self.x_max.ln());
                (0..n).map(|i| (a + (b - a) * i as f64 / last).exp()).collect()
            }
        };
        out[0] = self.x_min;
        out[n - 1] = self.x_max;
        out
    }
}

/// Checks that an explicit grid is positive and strictly increasing.
pub fn validate_increasing(values: &[f64]) -> Result<(), GridError> {
    if values.is_empty() {
        return Err(GridError::TooFewPoints(0));
    }
    for (i, v) in values.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) || (i > 0 && *v <= values[i - 1]) {
            return Err(GridError::NotIncreasing(i));
        }
    }
    Ok(())
}

/// `points` log-spaced values from `hi` down to `lo` (descending).
pub fn log_descending(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    let mut v = GridSpec::log(lo, hi, points).nodes();
    v.reverse();
    v
}

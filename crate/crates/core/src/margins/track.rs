//! Day-indexed tracks of log-scale marginal parameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A log-parameter value per day, with the smoothing hyperparameters the
/// track was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalTrack {
    /// First day index covered.
    pub day0: u32,
    /// Log-scale parameter per day, contiguous from `day0`.
    pub values: Vec<f64>,
    /// Smoothing range in days.
    pub range_days: f64,
    /// Smoothing marginal standard deviation.
    pub marginal_sd: f64,
}

impl TemporalTrack {
    pub fn new(day0: u32, values: Vec<f64>, range_days: f64, marginal_sd: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("temporal track has no days".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "temporal track contains non-finite entries".into(),
            ));
        }
        Ok(TemporalTrack {
            day0,
            values,
            range_days,
            marginal_sd,
        })
    }

    pub fn n_days(&self) -> usize {
        self.values.len()
    }

    pub fn covers(&self, day: u32) -> bool {
        day >= self.day0 && ((day - self.day0) as usize) < self.values.len()
    }

    pub fn value(&self, day: u32) -> Result<f64> {
        if !self.covers(day) {
            return Err(Error::InvalidInput(format!(
                "day {day} outside fitted range [{}, {}]",
                self.day0,
                self.day0 as usize + self.values.len() - 1
            )));
        }
        Ok(self.values[(day - self.day0) as usize])
    }
}

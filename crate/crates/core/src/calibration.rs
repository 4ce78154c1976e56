//! Per-shape level calibration.
//!
//! The fixed table compensates for the output stage delivering square pulses
//! stronger and triangular pulses weaker at the same digital level. The RMS
//! mode equalises energy per pulse instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{db_to_linear, SampleBuffer, Shape};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("gain would push peak to {peak:.6}, beyond full scale")]
    Clipping { peak: f64 },
    #[error("buffer is silent; no scale reaches a target RMS")]
    UndefinedScale,
    #[error("invalid calibration value: {0}")]
    Invalid(String),
}

pub fn default_gain_db(shape: Shape) -> f64 {
    match shape {
        Shape::Square => -2.0,
        Shape::Sine => 2.0,
        Shape::Triangle => 6.0,
        Shape::Saw | Shape::Russian | Shape::Arbitrary => 0.0,
    }
}

/// Gain offset in dB per shape. Shapes without an entry get 0 dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainTable {
    entries: BTreeMap<Shape, f64>,
}

impl Default for GainTable {
    fn default() -> Self {
        Self {
            entries: Shape::ALL
                .iter()
                .map(|&shape| (shape, default_gain_db(shape)))
                .filter(|(_, db)| *db != 0.0)
                .collect(),
        }
    }
}

impl GainTable {
    /// A table with every shape at 0 dB.
    pub fn flat() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn gain_db(&self, shape: Shape) -> f64 {
        self.entries.get(&shape).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, shape: Shape, gain_db: f64) {
        self.entries.insert(shape, gain_db);
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        match self.entries.iter().find(|(_, db)| !db.is_finite()) {
            Some((shape, db)) => Err(CalibrationError::Invalid(format!("gain for {shape} is {db}"))),
            None => Ok(()),
        }
    }
}

/// Multiplies every sample by `10^(gain_db / 20)`. Never clips: a result
/// beyond full scale is an error.
pub fn apply_gain(buffer: &SampleBuffer, gain_db: f64) -> Result<SampleBuffer, CalibrationError> {
    if !gain_db.is_finite() {
        return Err(CalibrationError::Invalid(format!("gain {gain_db} dB")));
    }
    if gain_db == 0.0 {
        return Ok(buffer.clone());
    }
    scale(buffer, db_to_linear(gain_db))
}

fn scale(buffer: &SampleBuffer, factor: f64) -> Result<SampleBuffer, CalibrationError> {
    let peak = buffer.peak() * factor;
    if peak > 1.0 {
        return Err(CalibrationError::Clipping { peak });
    }
    let samples = buffer.samples().iter().map(|v| v * factor).collect();
    Ok(SampleBuffer::from_trusted(buffer.sample_rate_hz(), samples))
}

/// RMS over the samples that carry signal (non-zero), so the result does not
/// depend on how much silence sits between pulses.
pub fn support_rms(buffer: &SampleBuffer) -> Option<f64> {
    let (sum, n) = buffer
        .samples()
        .iter()
        .filter(|v| **v != 0.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Scales `buffer` so its support RMS equals `target_rms`. Returns the new
/// buffer and the factor applied.
pub fn normalize_rms(buffer: &SampleBuffer, target_rms: f64) -> Result<(SampleBuffer, f64), CalibrationError> {
    if !target_rms.is_finite() || target_rms <= 0.0 {
        return Err(CalibrationError::Invalid(format!("target RMS {target_rms}")));
    }
    let current = support_rms(buffer).ok_or(CalibrationError::UndefinedScale)?;
    let factor = target_rms / current;
    Ok((scale(buffer, factor)?, factor))
}

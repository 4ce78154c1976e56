//! Waveform synthesis for electrical muscle stimulation research.
//!
//! Pulse trains (square, sine, triangle and sawtooth pulses, mono- or
//! biphasic), russian current and arbitrary tables are rendered as
//! normalized sample buffers, checked against a configurable safety
//! envelope, and written to WAV files or streamed to a sink under live
//! control.

pub mod audio;
pub mod calibration;
pub mod physiology;
pub mod program;
pub mod safety;
pub mod service;
pub mod waveform;

pub use calibration::GainTable;
pub use safety::{SafetyEnvelope, ValidationReport, Verdict};
pub use waveform::{Polarity, PulseTrainParams, RussianParams, SampleBuffer, Shape, Stimulus, WaveformSpec};

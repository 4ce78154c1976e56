//! Stimulation programs: ordered segments with ramps, loaded from a small
//! TOML format and rendered deterministically.
//!
//! ```toml
//! version = 1
//!
//! [[segments]]
//! shape = "square"
//! polarity = "biphasic"
//! frequency_hz = 100
//! pulse_width_us = 200
//! amplitude = 0.8
//! duration_s = 10
//! ramp_in_s = 2
//! ```
//!
//! See `docs/program-format.md` for every field.

pub mod live;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::calibration::GainTable;
use crate::safety::{self, SafetyEnvelope, ValidationReport};
use crate::waveform::{
    PulseTrainParams, RussianParams, SampleBuffer, Shape, SignalParams, Stimulus, SynthError, Voice, WaveformSpec,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: `{path}`: {message}")]
    Field { line: usize, path: String, message: String },
    #[error("program has no segments")]
    NoSegments,
    #[error("unsupported program version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("line {line}: `{path}` rejected by the safety envelope\n{report}")]
    SafetyReject {
        line: usize,
        path: String,
        report: ValidationReport,
    },
    #[error("synthesis: {0}")]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub stimulus: Stimulus,
    pub duration_s: f64,
    pub ramp_in_s: f64,
    pub ramp_out_s: f64,
    /// Validation result at load time, after clamping when enabled.
    pub report: ValidationReport,
}

impl Segment {
    pub fn new(stimulus: Stimulus, duration_s: f64) -> Self {
        Self {
            stimulus,
            duration_s,
            ramp_in_s: 0.0,
            ramp_out_s: 0.0,
            report: ValidationReport::pass(),
        }
    }

    pub fn with_ramps(mut self, ramp_in_s: f64, ramp_out_s: f64) -> Self {
        self.ramp_in_s = ramp_in_s;
        self.ramp_out_s = ramp_out_s;
        self
    }

    /// Level of a cycle starting `t` seconds into the segment.
    pub fn ramp_scale(&self, t: f64) -> f64 {
        let rise = if self.ramp_in_s > 0.0 {
            (t / self.ramp_in_s).min(1.0)
        } else {
            1.0
        };
        let fall = if self.ramp_out_s > 0.0 {
            ((self.duration_s - t) / self.ramp_out_s).clamp(0.0, 1.0)
        } else {
            1.0
        };
        rise.min(fall).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulationProgram {
    pub segments: Vec<Segment>,
    pub envelope: Option<SafetyEnvelope>,
}

impl StimulationProgram {
    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Every segment finding, plus a warning if the whole run is too long.
    pub fn report(&self, envelope: &SafetyEnvelope) -> ValidationReport {
        let findings = self.segments.iter().flat_map(|s| s.report.findings.iter().cloned());
        ValidationReport::pass()
            .merge(findings)
            .merge(safety::validate_duration(self.total_duration_s(), envelope))
    }
}

/// How a program is checked while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Takes precedence over an `[envelope]` table in the file.
    pub envelope: Option<SafetyEnvelope>,
    /// Clamp out-of-range segments instead of rejecting them.
    pub clamp: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    version: u32,
    envelope: Option<SafetyEnvelope>,
    #[serde(default)]
    calibrate: bool,
    gain_table: Option<GainTable>,
    #[serde(default)]
    segments: Vec<Spanned<RawSegment>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    shape: String,
    polarity: Option<String>,
    interphase_gap_us: Option<f64>,
    frequency_hz: Option<f64>,
    pulse_width_us: Option<f64>,
    carrier_hz: Option<f64>,
    burst_ms: Option<f64>,
    interburst_ms: Option<f64>,
    table: Option<Vec<f64>>,
    amplitude: Option<f64>,
    gain_db: Option<f64>,
    duration_s: f64,
    #[serde(default)]
    ramp_in_s: f64,
    #[serde(default)]
    ramp_out_s: f64,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_program(text: &str) -> Result<StimulationProgram, ProgramError> {
    parse_program_with(text, &LoadOptions::default())
}

pub fn parse_program_with(text: &str, options: &LoadOptions) -> Result<StimulationProgram, ProgramError> {
    let raw: RawProgram = toml::from_str(text).map_err(|e| ProgramError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    if raw.version != FORMAT_VERSION {
        return Err(ProgramError::UnsupportedVersion(raw.version));
    }
    if let Some(env) = &raw.envelope {
        env.validate().map_err(|e| ProgramError::Field {
            line: 1,
            path: "envelope".into(),
            message: e.to_string(),
        })?;
    }
    if raw.segments.is_empty() {
        return Err(ProgramError::NoSegments);
    }
    let envelope = options
        .envelope
        .clone()
        .or_else(|| raw.envelope.clone())
        .unwrap_or_default();
    let gains = raw.gain_table.clone().unwrap_or_default();

    let mut segments = Vec::with_capacity(raw.segments.len());
    for (i, spanned) in raw.segments.iter().enumerate() {
        let line = line_of(text, spanned.span().start);
        let seg = spanned.get_ref();
        let field = |name: &str, message: String| ProgramError::Field {
            line,
            path: format!("segments[{i}].{name}"),
            message,
        };
        let mut stimulus = segment_stimulus(seg, raw.calibrate, &gains).map_err(|(name, msg)| field(name, msg))?;

        if !(seg.duration_s.is_finite() && seg.duration_s > 0.0) {
            return Err(field("duration_s", format!("{} must be > 0", seg.duration_s)));
        }
        for (name, ramp) in [("ramp_in_s", seg.ramp_in_s), ("ramp_out_s", seg.ramp_out_s)] {
            if !(ramp.is_finite() && ramp >= 0.0) {
                return Err(field(name, format!("{ramp} must be >= 0")));
            }
        }
        if seg.ramp_in_s + seg.ramp_out_s > seg.duration_s {
            return Err(field(
                "ramp_out_s",
                format!(
                    "ramps ({} s + {} s) exceed the segment duration {} s",
                    seg.ramp_in_s, seg.ramp_out_s, seg.duration_s
                ),
            ));
        }

        let mut report = safety::validate(&stimulus, &envelope);
        if report.is_reject() && options.clamp {
            stimulus = safety::clamp(&stimulus, &envelope);
            report = safety::validate(&stimulus, &envelope);
        }
        if report.is_reject() {
            return Err(ProgramError::SafetyReject {
                line,
                path: format!("segments[{i}]"),
                report,
            });
        }
        let report = report.merge(safety::validate_duration(seg.duration_s, &envelope));
        segments.push(Segment {
            stimulus,
            duration_s: seg.duration_s,
            ramp_in_s: seg.ramp_in_s,
            ramp_out_s: seg.ramp_out_s,
            report,
        });
    }
    Ok(StimulationProgram {
        segments,
        envelope: raw.envelope,
    })
}

type FieldError = (&'static str, String);

fn segment_stimulus(seg: &RawSegment, calibrate: bool, gains: &GainTable) -> Result<Stimulus, FieldError> {
    let shape: Shape = seg.shape.parse().map_err(|e| ("shape", e))?;
    let polarity = match &seg.polarity {
        Some(p) => p.parse().map_err(|e| ("polarity", e))?,
        None => Default::default(),
    };
    let gain_db = match seg.gain_db {
        Some(g) => g,
        None if calibrate => gains.gain_db(shape),
        None => 0.0,
    };
    let amplitude = seg.amplitude.unwrap_or(1.0);
    let forbid = |present: bool, name: &'static str| {
        if present {
            Err((name, format!("not used by shape {shape}")))
        } else {
            Ok(())
        }
    };

    let stimulus = if shape == Shape::Russian {
        forbid(seg.frequency_hz.is_some(), "frequency_hz")?;
        forbid(seg.pulse_width_us.is_some(), "pulse_width_us")?;
        forbid(seg.table.is_some(), "table")?;
        forbid(seg.interphase_gap_us.is_some(), "interphase_gap_us")?;
        let d = RussianParams::default();
        Stimulus::russian(RussianParams {
            carrier_hz: seg.carrier_hz.unwrap_or(d.carrier_hz),
            burst_ms: seg.burst_ms.unwrap_or(d.burst_ms),
            interburst_ms: seg.interburst_ms.unwrap_or(d.interburst_ms),
            amplitude,
            gain_db,
        })
    } else {
        forbid(seg.carrier_hz.is_some(), "carrier_hz")?;
        forbid(seg.burst_ms.is_some(), "burst_ms")?;
        forbid(seg.interburst_ms.is_some(), "interburst_ms")?;
        let frequency_hz = seg.frequency_hz.ok_or(("frequency_hz", "required".to_string()))?;
        let mut spec = WaveformSpec::new(shape, polarity);
        let pulse_width_us = if shape == Shape::Arbitrary {
            forbid(seg.pulse_width_us.is_some(), "pulse_width_us")?;
            spec.table = Some(
                seg.table
                    .clone()
                    .ok_or(("table", "required for arbitrary".to_string()))?,
            );
            0.0
        } else {
            forbid(seg.table.is_some(), "table")?;
            seg.pulse_width_us.ok_or(("pulse_width_us", "required".to_string()))?
        };
        spec.interphase_gap_us = seg.interphase_gap_us.unwrap_or(0.0);
        Stimulus::train(
            spec,
            PulseTrainParams {
                frequency_hz,
                pulse_width_us,
                amplitude,
                gain_db,
            },
        )
    };
    Ok(stimulus)
}

/// Segment start indices plus the total length, in samples.
pub fn segment_bounds(program: &StimulationProgram, sample_rate_hz: u32) -> Vec<usize> {
    let rate = f64::from(sample_rate_hz);
    let mut elapsed = 0.0;
    let mut bounds = vec![0];
    for seg in &program.segments {
        elapsed += seg.duration_s;
        bounds.push((elapsed * rate).round() as usize);
    }
    bounds
}

/// Concatenates the segments. Ramps scale whole pulses: each pulse takes
/// the ramp level at its onset.
pub fn render_program(program: &StimulationProgram, sample_rate_hz: u32) -> Result<SampleBuffer, ProgramError> {
    let bounds = segment_bounds(program, sample_rate_hz);
    let mut samples = vec![0.0; *bounds.last().unwrap_or(&0)];
    let rate = f64::from(sample_rate_hz);
    for (seg, w) in program.segments.iter().zip(bounds.windows(2)) {
        let voice = Voice::new(&seg.stimulus, sample_rate_hz)?;
        voice.fill(&mut samples[w[0]..w[1]], true, |_, onset| {
            seg.ramp_scale(onset as f64 / rate)
        });
    }
    Ok(SampleBuffer::from_trusted(sample_rate_hz, samples))
}

impl StimulationProgram {
    pub fn single(stimulus: Stimulus, duration_s: f64) -> Self {
        Self {
            segments: vec![Segment::new(stimulus, duration_s)],
            envelope: None,
        }
    }

    /// Sorted distinct shapes, for reporting.
    pub fn shapes(&self) -> Vec<Shape> {
        let mut shapes: Vec<Shape> = self.segments.iter().map(|s| s.stimulus.spec.shape).collect();
        shapes.sort();
        shapes.dedup();
        shapes
    }

    /// Repetition rate of each segment.
    pub fn rates_hz(&self) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| match s.stimulus.params {
                SignalParams::Train(p) => p.frequency_hz,
                SignalParams::Russian(p) => p.burst_rate_hz(),
            })
            .collect()
    }
}

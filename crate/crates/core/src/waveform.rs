//! Sample-accurate synthesis of stimulation pulses, pulse trains, Russian
//! current and table-driven waveforms.
//!
//! Every renderer here is a pure function of its inputs. Pulse onsets are
//! placed with a drift-free schedule, `onset_k = round(k * rate / f)`, so the
//! quantisation error of any onset stays below half a sample no matter how
//! long the train runs. Pulse width, on the other hand, is quantised once per
//! render and stays constant.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default render rate. At 44.1 kHz a 40 µs phase is under two samples.
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 192_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("peak level {peak:.6} (amplitude {amplitude} at {gain_db} dB) exceeds full scale")]
    OutOfRange { amplitude: f64, gain_db: f64, peak: f64 },
    #[error("pulse of {pulse_us:.3} µs does not fit in a {period_us:.3} µs period")]
    PulseExceedsPeriod { pulse_us: f64, period_us: f64 },
    #[error("pulse of {pulse_samples} samples does not fit between onsets {spacing} samples apart")]
    PulseExceedsSpacing { pulse_samples: usize, spacing: u64 },
    #[error("sample {index} = {value} is outside [-1, 1]")]
    SampleOutOfRange { index: usize, value: f64 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sine,
    Triangle,
    Saw,
    Square,
    Russian,
    Arbitrary,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Sine,
        Shape::Triangle,
        Shape::Saw,
        Shape::Square,
        Shape::Russian,
        Shape::Arbitrary,
    ];

    /// Shapes that have a single-pulse form.
    pub const PULSE: [Shape; 4] = [Shape::Sine, Shape::Triangle, Shape::Saw, Shape::Square];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Sine => "sine",
            Shape::Triangle => "triangle",
            Shape::Saw => "saw",
            Shape::Square => "square",
            Shape::Russian => "russian",
            Shape::Arbitrary => "arbitrary",
        }
    }

    pub fn is_pulse(self) -> bool {
        Shape::PULSE.contains(&self)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .iter()
            .copied()
            .find(|shape| shape.as_str() == s)
            .ok_or_else(|| format!("unknown shape `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Monophasic,
    Biphasic,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Monophasic => "monophasic",
            Polarity::Biphasic => "biphasic",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monophasic" => Ok(Polarity::Monophasic),
            "biphasic" => Ok(Polarity::Biphasic),
            _ => Err(format!("unknown polarity `{s}`")),
        }
    }
}

/// What to draw: shape, polarity and the shape-specific extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub shape: Shape,
    #[serde(default)]
    pub polarity: Polarity,
    /// Silence between the two phases of a biphasic pulse.
    #[serde(default)]
    pub interphase_gap_us: f64,
    /// One period of an arbitrary waveform, values in [-1, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
}

impl WaveformSpec {
    pub fn new(shape: Shape, polarity: Polarity) -> Self {
        Self {
            shape,
            polarity,
            interphase_gap_us: 0.0,
            table: None,
        }
    }

    pub fn monophasic(shape: Shape) -> Self {
        Self::new(shape, Polarity::Monophasic)
    }

    pub fn biphasic(shape: Shape) -> Self {
        Self::new(shape, Polarity::Biphasic)
    }

    pub fn russian() -> Self {
        Self::new(Shape::Russian, Polarity::Monophasic)
    }

    pub fn arbitrary(table: Vec<f64>) -> Self {
        Self {
            table: Some(table),
            ..Self::new(Shape::Arbitrary, Polarity::Monophasic)
        }
    }

    pub fn with_gap_us(mut self, gap_us: f64) -> Self {
        self.interphase_gap_us = gap_us;
        self
    }

    pub fn is_biphasic(&self) -> bool {
        self.polarity == Polarity::Biphasic
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        match (&self.table, self.shape) {
            (Some(table), Shape::Arbitrary) => validate_table(table)?,
            (None, Shape::Arbitrary) => return Err(invalid("table", "arbitrary shape needs a table")),
            (Some(_), shape) => {
                return Err(invalid(
                    "table",
                    format!("a table is only allowed for arbitrary, not {shape}"),
                ))
            }
            (None, _) => {}
        }
        if !self.interphase_gap_us.is_finite() || self.interphase_gap_us < 0.0 {
            return Err(invalid("interphase_gap_us", "must be finite and >= 0"));
        }
        if self.interphase_gap_us > 0.0 && !self.is_biphasic() {
            return Err(invalid(
                "interphase_gap_us",
                "only biphasic pulses have an interphase gap",
            ));
        }
        Ok(())
    }
}

pub(crate) fn validate_table(table: &[f64]) -> Result<(), SynthError> {
    if table.len() < 2 {
        return Err(invalid(
            "table",
            format!("needs at least 2 entries, got {}", table.len()),
        ));
    }
    if let Some((i, v)) = table.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > 1.0) {
        return Err(invalid("table", format!("entry {i} = {v} is outside [-1, 1]")));
    }
    Ok(())
}

pub fn db_to_linear(gain_db: f64) -> f64 {
    10f64.powf(gain_db / 20.0)
}

fn peak_level(amplitude: f64, gain_db: f64) -> Result<f64, SynthError> {
    if !amplitude.is_finite() || !(0.0..=1.0).contains(&amplitude) {
        return Err(invalid("amplitude", format!("{amplitude} is outside [0, 1]")));
    }
    if !gain_db.is_finite() {
        return Err(invalid("gain_db", "must be finite"));
    }
    let peak = amplitude * db_to_linear(gain_db);
    if peak > 1.0 {
        return Err(SynthError::OutOfRange {
            amplitude,
            gain_db,
            peak,
        });
    }
    Ok(peak)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainParams {
    pub frequency_hz: f64,
    /// Width of one phase.
    pub pulse_width_us: f64,
    #[serde(default = "full_scale")]
    pub amplitude: f64,
    #[serde(default)]
    pub gain_db: f64,
}

fn full_scale() -> f64 {
    1.0
}

impl PulseTrainParams {
    pub fn new(frequency_hz: f64, pulse_width_us: f64, amplitude: f64) -> Self {
        Self {
            frequency_hz,
            pulse_width_us,
            amplitude,
            gain_db: 0.0,
        }
    }

    pub fn with_gain_db(mut self, gain_db: f64) -> Self {
        self.gain_db = gain_db;
        self
    }

    pub fn period_us(&self) -> f64 {
        1e6 / self.frequency_hz
    }

    /// Peak level after gain, or an error if it would leave full scale.
    pub fn peak(&self) -> Result<f64, SynthError> {
        peak_level(self.amplitude, self.gain_db)
    }

    /// Total on-time of one pulse for `spec`, gap included.
    pub fn pulse_duration_us(&self, spec: &WaveformSpec) -> f64 {
        if spec.is_biphasic() {
            2.0 * self.pulse_width_us + spec.interphase_gap_us
        } else {
            self.pulse_width_us
        }
    }

    pub fn validate_for(&self, spec: &WaveformSpec) -> Result<(), SynthError> {
        spec.validate()?;
        if !self.frequency_hz.is_finite() || self.frequency_hz <= 0.0 {
            return Err(invalid("frequency_hz", "must be finite and > 0"));
        }
        self.peak()?;
        if spec.shape == Shape::Arbitrary {
            return Ok(());
        }
        if !self.pulse_width_us.is_finite() || self.pulse_width_us <= 0.0 {
            return Err(invalid("pulse_width_us", "must be finite and > 0"));
        }
        let pulse_us = self.pulse_duration_us(spec);
        let period_us = self.period_us();
        if pulse_us >= period_us {
            return Err(SynthError::PulseExceedsPeriod { pulse_us, period_us });
        }
        Ok(())
    }
}

/// Burst-modulated carrier. Defaults are 2.5 kHz, 10 ms on, 10 ms off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RussianParams {
    #[serde(default = "RussianParams::default_carrier")]
    pub carrier_hz: f64,
    #[serde(default = "RussianParams::default_burst")]
    pub burst_ms: f64,
    #[serde(default = "RussianParams::default_burst")]
    pub interburst_ms: f64,
    #[serde(default = "full_scale")]
    pub amplitude: f64,
    #[serde(default)]
    pub gain_db: f64,
}

impl Default for RussianParams {
    fn default() -> Self {
        Self {
            carrier_hz: Self::default_carrier(),
            burst_ms: Self::default_burst(),
            interburst_ms: Self::default_burst(),
            amplitude: 1.0,
            gain_db: 0.0,
        }
    }
}

impl RussianParams {
    fn default_carrier() -> f64 {
        2500.0
    }

    fn default_burst() -> f64 {
        10.0
    }

    pub fn burst_rate_hz(&self) -> f64 {
        1000.0 / (self.burst_ms + self.interburst_ms)
    }

    pub fn duty(&self) -> f64 {
        self.burst_ms / (self.burst_ms + self.interburst_ms)
    }

    pub fn peak(&self) -> Result<f64, SynthError> {
        peak_level(self.amplitude, self.gain_db)
    }

    /// Rate-independent checks; the Nyquist check needs a sample rate.
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.carrier_hz.is_finite() || self.carrier_hz <= 0.0 {
            return Err(invalid("carrier_hz", "must be finite and > 0"));
        }
        if !self.burst_ms.is_finite() || self.burst_ms <= 0.0 {
            return Err(invalid("burst_ms", "must be finite and > 0"));
        }
        if !self.interburst_ms.is_finite() || self.interburst_ms < 0.0 {
            return Err(invalid("interburst_ms", "must be finite and >= 0"));
        }
        self.peak()?;
        Ok(())
    }

    pub fn validate_at(&self, sample_rate_hz: u32) -> Result<(), SynthError> {
        self.validate()?;
        let nyquist = f64::from(sample_rate_hz) / 2.0;
        if self.carrier_hz >= nyquist {
            return Err(invalid(
                "carrier_hz",
                format!("{} Hz is at or above Nyquist ({nyquist} Hz)", self.carrier_hz),
            ));
        }
        Ok(())
    }
}

/// Timing and level parameters, one variant per signal family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalParams {
    Train(PulseTrainParams),
    Russian(RussianParams),
}

impl SignalParams {
    pub fn amplitude(&self) -> f64 {
        match self {
            SignalParams::Train(p) => p.amplitude,
            SignalParams::Russian(p) => p.amplitude,
        }
    }

    pub fn gain_db(&self) -> f64 {
        match self {
            SignalParams::Train(p) => p.gain_db,
            SignalParams::Russian(p) => p.gain_db,
        }
    }

    pub fn set_gain_db(&mut self, gain_db: f64) {
        match self {
            SignalParams::Train(p) => p.gain_db = gain_db,
            SignalParams::Russian(p) => p.gain_db = gain_db,
        }
    }

    /// Pulses (or bursts, or table periods) per second.
    pub fn repetition_hz(&self) -> f64 {
        match self {
            SignalParams::Train(p) => p.frequency_hz,
            SignalParams::Russian(p) => p.burst_rate_hz(),
        }
    }
}

/// A complete description of one steady output signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub spec: WaveformSpec,
    pub params: SignalParams,
}

impl Stimulus {
    pub fn train(spec: WaveformSpec, params: PulseTrainParams) -> Self {
        Self {
            spec,
            params: SignalParams::Train(params),
        }
    }

    pub fn russian(params: RussianParams) -> Self {
        Self {
            spec: WaveformSpec::russian(),
            params: SignalParams::Russian(params),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        match (&self.params, self.spec.shape) {
            (SignalParams::Russian(p), Shape::Russian) => {
                self.spec.validate()?;
                p.validate()
            }
            (SignalParams::Train(p), shape) if shape != Shape::Russian => p.validate_for(&self.spec),
            (_, shape) => Err(invalid(
                "params",
                format!("parameter family does not match shape {shape}"),
            )),
        }
    }

    pub fn render(&self, duration_s: f64, sample_rate_hz: u32) -> Result<SampleBuffer, SynthError> {
        match &self.params {
            SignalParams::Train(p) => render_train(&self.spec, p, duration_s, sample_rate_hz),
            SignalParams::Russian(p) => {
                self.validate()?;
                render_russian(p, duration_s, sample_rate_hz)
            }
        }
    }
}

/// Mono samples in [-1, 1] at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    sample_rate_hz: u32,
    samples: Vec<f64>,
}

impl SampleBuffer {
    pub fn new(sample_rate_hz: u32, samples: Vec<f64>) -> Result<Self, SynthError> {
        check_rate(sample_rate_hz)?;
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(SynthError::SampleOutOfRange { index, value });
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn silence(sample_rate_hz: u32, len: usize) -> Self {
        Self {
            sample_rate_hz,
            samples: vec![0.0; len],
        }
    }

    /// Callers guarantee the range invariant.
    pub(crate) fn from_trusted(sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        debug_assert!(samples.iter().all(|v| v.abs() <= 1.0));
        Self {
            sample_rate_hz,
            samples,
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

fn check_rate(sample_rate_hz: u32) -> Result<(), SynthError> {
    if sample_rate_hz == 0 {
        return Err(invalid("sample_rate_hz", "must be > 0"));
    }
    Ok(())
}

fn duration_samples(duration_s: f64, sample_rate_hz: u32) -> Result<usize, SynthError> {
    if !duration_s.is_finite() || duration_s < 0.0 {
        return Err(invalid("duration_s", "must be finite and >= 0"));
    }
    Ok((duration_s * f64::from(sample_rate_hz)).round() as usize)
}

/// Samples in one phase of width `width_us`; never less than one.
pub fn phase_samples(width_us: f64, sample_rate_hz: u32) -> usize {
    ((width_us * f64::from(sample_rate_hz) / 1e6).round() as usize).max(1)
}

fn gap_samples(gap_us: f64, sample_rate_hz: u32) -> usize {
    (gap_us * f64::from(sample_rate_hz) / 1e6).round() as usize
}

/// Unit-peak phase of `n` samples. Sample `k` sits at phase position `k / n`.
fn unit_phase(shape: Shape, n: usize) -> Vec<f64> {
    let n_f = n as f64;
    (0..n)
        .map(|k| {
            let k = k as f64;
            match shape {
                Shape::Square => 1.0,
                Shape::Sine => (PI * k / n_f).sin(),
                Shape::Triangle => 1.0 - (2.0 * k - n_f).abs() / n_f,
                // reaches full amplitude on the last sample of the phase
                Shape::Saw => (k + 1.0) / n_f,
                Shape::Russian | Shape::Arbitrary => unreachable!("not a pulse shape"),
            }
        })
        .collect()
}

/// Unit-peak pulse for a pulse shape, gap and negative phase included.
fn unit_pulse(spec: &WaveformSpec, width_us: f64, sample_rate_hz: u32) -> Vec<f64> {
    let phase = unit_phase(spec.shape, phase_samples(width_us, sample_rate_hz));
    if !spec.is_biphasic() {
        return phase;
    }
    let gap = gap_samples(spec.interphase_gap_us, sample_rate_hz);
    let mut pulse = Vec::with_capacity(2 * phase.len() + gap);
    pulse.extend_from_slice(&phase);
    pulse.extend(std::iter::repeat_n(0.0, gap));
    pulse.extend(phase.iter().map(|v| -v));
    pulse
}

/// One pulse at the given rate: a single phase for monophasic specs, or the
/// positive phase, the gap and the mirrored negative phase for biphasic ones.
pub fn synth_pulse(
    spec: &WaveformSpec,
    params: &PulseTrainParams,
    sample_rate_hz: u32,
) -> Result<SampleBuffer, SynthError> {
    check_rate(sample_rate_hz)?;
    if !spec.shape.is_pulse() {
        return Err(invalid("shape", format!("{} has no single-pulse form", spec.shape)));
    }
    params.validate_for(spec)?;
    let peak = params.peak()?;
    let samples = unit_pulse(spec, params.pulse_width_us, sample_rate_hz)
        .into_iter()
        .map(|v| v * peak)
        .collect();
    Ok(SampleBuffer::from_trusted(sample_rate_hz, samples))
}

/// How successive cycles are spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Spacing {
    /// `rate / f` samples per cycle; onsets rounded from the exact position.
    Fractional(f64),
    /// Exact integer number of samples per cycle.
    Whole(u64),
}

#[derive(Debug, Clone, PartialEq)]
enum CycleKind {
    /// A fixed unit-peak pulse at the start of each cycle, zeros after it.
    Pulse(Vec<f64>),
    /// A table repeated once per cycle with zero-order hold.
    Table { table: Vec<f64>, frequency_hz: f64 },
}

/// A validated stimulus prepared for a fixed sample rate.
///
/// The output is a sequence of cycles (pulse periods, burst periods or table
/// periods). Cycle `k` starts at [`Voice::onset`]`(k)` samples after the
/// origin. Cycles can be drawn with individual level scales, which is what
/// ramps and pulse-boundary updates build on.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    sample_rate_hz: u32,
    peak: f64,
    spacing: Spacing,
    kind: CycleKind,
}

impl Voice {
    pub fn new(stimulus: &Stimulus, sample_rate_hz: u32) -> Result<Self, SynthError> {
        check_rate(sample_rate_hz)?;
        stimulus.validate()?;
        let rate = f64::from(sample_rate_hz);
        match (&stimulus.params, stimulus.spec.shape) {
            (SignalParams::Russian(p), _) => {
                p.validate_at(sample_rate_hz)?;
                let on = ((p.burst_ms * rate / 1e3).round() as usize).max(1);
                let off = (p.interburst_ms * rate / 1e3).round() as u64;
                let w = 2.0 * PI * p.carrier_hz / rate;
                let burst = (0..on).map(|j| (w * j as f64).sin()).collect();
                Ok(Self {
                    sample_rate_hz,
                    peak: p.peak()?,
                    spacing: Spacing::Whole(on as u64 + off),
                    kind: CycleKind::Pulse(burst),
                })
            }
            (SignalParams::Train(p), Shape::Arbitrary) => Ok(Self {
                sample_rate_hz,
                peak: p.peak()?,
                spacing: Spacing::Fractional(rate / p.frequency_hz),
                kind: CycleKind::Table {
                    table: stimulus.spec.table.clone().unwrap_or_default(),
                    frequency_hz: p.frequency_hz,
                },
            }),
            (SignalParams::Train(p), _) => {
                let pulse = unit_pulse(&stimulus.spec, p.pulse_width_us, sample_rate_hz);
                let spacing = rate / p.frequency_hz;
                let min_spacing = spacing.floor() as u64;
                if pulse.len() as u64 > min_spacing {
                    return Err(SynthError::PulseExceedsSpacing {
                        pulse_samples: pulse.len(),
                        spacing: min_spacing,
                    });
                }
                Ok(Self {
                    sample_rate_hz,
                    peak: p.peak()?,
                    spacing: Spacing::Fractional(spacing),
                    kind: CycleKind::Pulse(pulse),
                })
            }
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// Start of cycle `k`, in samples from the origin.
    pub fn onset(&self, k: u64) -> u64 {
        match self.spacing {
            Spacing::Fractional(spacing) => (k as f64 * spacing).round() as u64,
            Spacing::Whole(n) => k * n,
        }
    }

    /// Non-zero samples at the start of each cycle; `None` for table voices,
    /// which fill the whole cycle.
    pub fn pulse_len(&self) -> Option<usize> {
        match &self.kind {
            CycleKind::Pulse(p) => Some(p.len()),
            CycleKind::Table { .. } => None,
        }
    }

    /// Sample `offset` into cycle `k`, scaled by `scale` on top of the peak.
    pub fn cycle_sample(&self, k: u64, offset: u64, scale: f64) -> f64 {
        let level = self.peak * scale;
        match &self.kind {
            CycleKind::Pulse(pulse) => pulse.get(offset as usize).map_or(0.0, |v| v * level),
            CycleKind::Table { table, frequency_hz } => {
                let rel = self.onset(k) + offset;
                let phase = (rel as f64 * frequency_hz / f64::from(self.sample_rate_hz)).fract();
                let idx = ((phase * table.len() as f64) as usize).min(table.len() - 1);
                table[idx] * level
            }
        }
    }

    /// Draws cycles into `out`, whose index 0 is the origin. `scale(k, onset)`
    /// sets each cycle's level. With `drop_partial`, pulses that would run
    /// past the end of `out` are left out entirely.
    pub fn fill(&self, out: &mut [f64], drop_partial: bool, mut scale: impl FnMut(u64, u64) -> f64) {
        let len = out.len() as u64;
        let mut k = 0;
        loop {
            let start = self.onset(k);
            if start >= len {
                break;
            }
            let end = self.onset(k + 1).min(len);
            let s = scale(k, start);
            match &self.kind {
                CycleKind::Pulse(pulse) => {
                    let pulse_end = start + pulse.len() as u64;
                    if pulse_end > len && drop_partial {
                        break;
                    }
                    let stop = pulse_end.min(len);
                    for (slot, v) in out[start as usize..stop as usize].iter_mut().zip(pulse) {
                        *slot = v * self.peak * s;
                    }
                }
                CycleKind::Table { .. } => {
                    for i in start..end {
                        out[i as usize] = self.cycle_sample(k, i - start, s);
                    }
                }
            }
            k += 1;
        }
    }
}

/// A pulse train of `duration_s`. Pulses that would not complete inside the
/// buffer are omitted; everything between pulses is exactly zero.
pub fn render_train(
    spec: &WaveformSpec,
    params: &PulseTrainParams,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<SampleBuffer, SynthError> {
    check_rate(sample_rate_hz)?;
    if spec.shape == Shape::Russian {
        return Err(invalid("shape", "russian current is rendered with render_russian"));
    }
    if spec.shape == Shape::Arbitrary {
        let table = spec.table.as_deref().unwrap_or_default();
        let mut buf = render_arbitrary(table, params.frequency_hz, duration_s, sample_rate_hz)?;
        let peak = params.peak()?;
        if peak != 1.0 {
            buf.samples.iter_mut().for_each(|v| *v *= peak);
        }
        return Ok(buf);
    }
    let len = duration_samples(duration_s, sample_rate_hz)?;
    let voice = Voice::new(&Stimulus::train(spec.clone(), *params), sample_rate_hz)?;
    let mut samples = vec![0.0; len];
    voice.fill(&mut samples, true, |_, _| 1.0);
    Ok(SampleBuffer::from_trusted(sample_rate_hz, samples))
}

/// Burst-modulated sine. The carrier phase restarts at every burst and the
/// gaps between bursts are exact zeros.
pub fn render_russian(
    params: &RussianParams,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<SampleBuffer, SynthError> {
    check_rate(sample_rate_hz)?;
    let len = duration_samples(duration_s, sample_rate_hz)?;
    let voice = Voice::new(&Stimulus::russian(*params), sample_rate_hz)?;
    let mut samples = vec![0.0; len];
    voice.fill(&mut samples, true, |_, _| 1.0);
    Ok(SampleBuffer::from_trusted(sample_rate_hz, samples))
}

/// Repeats `table` once per period at `frequency_hz`. The phase-to-index map
/// is linear and each entry is held for `period / table.len()`.
pub fn render_arbitrary(
    table: &[f64],
    frequency_hz: f64,
    duration_s: f64,
    sample_rate_hz: u32,
) -> Result<SampleBuffer, SynthError> {
    check_rate(sample_rate_hz)?;
    validate_table(table)?;
    if !frequency_hz.is_finite() || frequency_hz <= 0.0 {
        return Err(invalid("frequency_hz", "must be finite and > 0"));
    }
    let len = duration_samples(duration_s, sample_rate_hz)?;
    let stimulus = Stimulus::train(
        WaveformSpec::arbitrary(table.to_vec()),
        PulseTrainParams::new(frequency_hz, 1.0, 1.0),
    );
    let voice = Voice::new(&stimulus, sample_rate_hz)?;
    let mut samples = vec![0.0; len];
    voice.fill(&mut samples, false, |_, _| 1.0);
    Ok(SampleBuffer::from_trusted(sample_rate_hz, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: u32 = 192_000;

    #[test]
    fn reference_square_pulse_has_23_samples_per_phase() {
        let spec = WaveformSpec::biphasic(Shape::Square);
        let params = PulseTrainParams::new(160.0, 120.0, 1.0);
        let pulse = synth_pulse(&spec, &params, RATE).unwrap();
        let s = pulse.samples();
        assert_eq!(s.len(), 46);
        assert!(s[..23].iter().all(|&v| v == 1.0));
        assert!(s[23..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn half_sine_matches_closed_form() {
        let spec = WaveformSpec::monophasic(Shape::Sine);
        let params = PulseTrainParams::new(50.0, 200.0, 0.5);
        let pulse = synth_pulse(&spec, &params, RATE).unwrap();
        assert_eq!(pulse.len(), 38);
        for (k, v) in pulse.samples().iter().enumerate() {
            let expected = 0.5 * (PI * k as f64 / 38.0).sin();
            assert!((v - expected).abs() < 1e-15, "k={k}");
        }
        assert!((pulse.samples()[19] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_amplitude_gives_silent_pulse() {
        for shape in Shape::PULSE {
            for spec in [WaveformSpec::monophasic(shape), WaveformSpec::biphasic(shape)] {
                let pulse = synth_pulse(&spec, &PulseTrainParams::new(100.0, 300.0, 0.0), RATE).unwrap();
                assert!(pulse.samples().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn triangle_peaks_at_midpoint_and_saw_ramps_up() {
        let tri = unit_phase(Shape::Triangle, 10);
        assert_eq!(tri[5], 1.0);
        assert_eq!(tri[0], 0.0);
        assert_eq!(tri[3], tri[7]);
        let saw = unit_phase(Shape::Saw, 4);
        assert_eq!(saw, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn biphasic_negative_phase_is_exact_negation() {
        let spec = WaveformSpec::biphasic(Shape::Triangle).with_gap_us(50.0);
        let params = PulseTrainParams::new(100.0, 300.0, 0.7);
        let pulse = synth_pulse(&spec, &params, RATE).unwrap();
        let n = phase_samples(300.0, RATE);
        let gap = gap_samples(50.0, RATE);
        let s = pulse.samples();
        assert_eq!(s.len(), 2 * n + gap);
        assert!(s[n..n + gap].iter().all(|&v| v == 0.0));
        for k in 0..n {
            assert_eq!(s[k], -s[n + gap + k]);
        }
    }

    #[test]
    fn tiny_width_still_gives_one_sample() {
        assert_eq!(phase_samples(1.0, 44_100), 1);
        let pulse = synth_pulse(
            &WaveformSpec::monophasic(Shape::Square),
            &PulseTrainParams::new(100.0, 1.0, 1.0),
            44_100,
        )
        .unwrap();
        assert_eq!(pulse.samples(), &[1.0]);
    }

    #[test]
    fn gain_beyond_full_scale_is_an_error() {
        let params = PulseTrainParams::new(100.0, 200.0, 0.9).with_gain_db(2.0);
        let err = synth_pulse(&WaveformSpec::monophasic(Shape::Sine), &params, RATE).unwrap_err();
        assert!(matches!(err, SynthError::OutOfRange { .. }));
        let ok = PulseTrainParams::new(100.0, 200.0, 0.5).with_gain_db(2.0);
        assert!(synth_pulse(&WaveformSpec::monophasic(Shape::Sine), &ok, RATE).is_ok());
    }

    #[test]
    fn pulse_longer_than_period_is_rejected() {
        let spec = WaveformSpec::biphasic(Shape::Square);
        let params = PulseTrainParams::new(1000.0, 500.0, 1.0);
        assert!(matches!(
            render_train(&spec, &params, 1.0, RATE),
            Err(SynthError::PulseExceedsPeriod { .. })
        ));
        let mono = WaveformSpec::monophasic(Shape::Square);
        assert!(render_train(&mono, &params, 1.0, RATE).is_ok());
    }

    #[test]
    fn spec_invariants() {
        assert!(WaveformSpec::monophasic(Shape::Square)
            .with_gap_us(10.0)
            .validate()
            .is_err());
        assert!(WaveformSpec::biphasic(Shape::Square)
            .with_gap_us(10.0)
            .validate()
            .is_ok());
        assert!(WaveformSpec::arbitrary(vec![0.5]).validate().is_err());
        assert!(WaveformSpec::arbitrary(vec![0.5, 1.5]).validate().is_err());
        assert!(WaveformSpec::monophasic(Shape::Arbitrary).validate().is_err());
        let mut sine = WaveformSpec::monophasic(Shape::Sine);
        sine.table = Some(vec![0.0, 0.0]);
        assert!(sine.validate().is_err());
    }

    #[test]
    fn zero_duration_renders_empty() {
        let spec = WaveformSpec::biphasic(Shape::Square);
        let params = PulseTrainParams::new(160.0, 120.0, 1.0);
        assert!(render_train(&spec, &params, 0.0, RATE).unwrap().is_empty());
        assert!(render_russian(&RussianParams::default(), 0.0, RATE).unwrap().is_empty());
    }

    #[test]
    fn train_onsets_follow_the_accumulator() {
        let spec = WaveformSpec::monophasic(Shape::Square);
        let params = PulseTrainParams::new(7.0, 100.0, 1.0);
        let buf = render_train(&spec, &params, 3.0, 44_100).unwrap();
        let s = buf.samples();
        let onsets: Vec<usize> = (0..s.len())
            .filter(|&i| s[i] > 0.0 && (i == 0 || s[i - 1] == 0.0))
            .collect();
        assert_eq!(onsets.len(), 21);
        for (k, &onset) in onsets.iter().enumerate() {
            let ideal = k as f64 * 44_100.0 / 7.0;
            assert!((onset as f64 - ideal).abs() <= 0.5);
        }
    }

    #[test]
    fn monophasic_square_dc_is_duty_times_amplitude() {
        let spec = WaveformSpec::monophasic(Shape::Square);
        let params = PulseTrainParams::new(50.0, 200.0, 1.0);
        let buf = render_train(&spec, &params, 1.0, RATE).unwrap();
        // 38 samples per pulse vs 38.4 ideal
        assert!((buf.mean() - 0.01).abs() <= 50.0 / f64::from(RATE));
        assert_eq!(buf.mean(), 50.0 * 38.0 / f64::from(RATE));
    }

    #[test]
    fn russian_nyquist_check() {
        let params = RussianParams {
            carrier_hz: 30_000.0,
            ..Default::default()
        };
        assert!(render_russian(&params, 0.1, 48_000).is_err());
        assert!(render_russian(&params, 0.1, 96_000).is_ok());
    }

    #[test]
    fn russian_defaults_are_50hz_half_duty() {
        let p = RussianParams::default();
        assert_eq!(p.burst_rate_hz(), 50.0);
        assert_eq!(p.duty(), 0.5);
    }

    #[test]
    fn russian_without_gaps_is_a_continuous_sine() {
        let params = RussianParams {
            interburst_ms: 0.0,
            ..Default::default()
        };
        let buf = render_russian(&params, 0.1, 48_000).unwrap();
        for (i, v) in buf.samples().iter().enumerate() {
            let expected = (2.0 * PI * 2500.0 * i as f64 / 48_000.0).sin();
            assert!((v - expected).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn russian_zero_amplitude_is_silent() {
        let params = RussianParams {
            amplitude: 0.0,
            ..Default::default()
        };
        let buf = render_russian(&params, 0.5, 48_000).unwrap();
        assert!(buf.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arbitrary_zero_table_is_silent() {
        let buf = render_arbitrary(&[0.0, 0.0], 37.0, 0.5, 48_000).unwrap();
        assert_eq!(buf.len(), 24_000);
        assert!(buf.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_entry_table_is_a_50hz_square() {
        let rate = 48_000;
        let buf = render_arbitrary(&[1.0, -1.0], 50.0, 1.0, rate).unwrap();
        // direct construction: 10 ms high, 10 ms low
        let half = 480;
        let direct: Vec<f64> = (0..48_000)
            .map(|i| if (i / half) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(buf.samples(), direct.as_slice());
    }

    #[test]
    fn arbitrary_rejects_bad_tables() {
        assert!(render_arbitrary(&[], 50.0, 1.0, RATE).is_err());
        assert!(render_arbitrary(&[0.0, 1.2], 50.0, 1.0, RATE).is_err());
        assert!(render_arbitrary(&[0.0, f64::NAN], 50.0, 1.0, RATE).is_err());
    }

    #[test]
    fn sample_buffer_rejects_out_of_range() {
        assert!(SampleBuffer::new(48_000, vec![0.0, 1.0000001]).is_err());
        assert!(SampleBuffer::new(0, vec![]).is_err());
        assert!(SampleBuffer::new(48_000, vec![-1.0, 1.0]).is_ok());
    }

    #[test]
    fn shape_names_round_trip() {
        for shape in Shape::ALL {
            assert_eq!(shape.as_str().parse::<Shape>().unwrap(), shape);
        }
        assert!("quadratic".parse::<Shape>().is_err());
    }
}

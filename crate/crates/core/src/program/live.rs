//! Live parameter changes.
//!
//! A change never cuts a pulse: it takes effect at the first scheduled
//! cycle onset at or after the sample where it arrived. From silence it
//! takes effect immediately. An emergency halt is the one exception and
//! zeroes the output from the next sample on.
//!
//! [`LiveRenderer`] produces the stream chunk by chunk. [`render_history`]
//! renders the same event log offline by a separate route, for checking
//! streamed captures.

use serde::{Deserialize, Serialize};

use crate::safety::{self, SafetyEnvelope, ValidationReport};
use crate::waveform::{
    Polarity, PulseTrainParams, RussianParams, SampleBuffer, Shape, SignalParams, Stimulus, SynthError, Voice,
    WaveformSpec,
};

/// A partial parameter set; absent fields keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interphase_gap_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_width_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interburst_ms: Option<f64>,
}

/// Pulse-train values used when switching away from russian current.
pub const DEFAULT_TRAIN: PulseTrainParams = PulseTrainParams {
    frequency_hz: 50.0,
    pulse_width_us: 200.0,
    amplitude: 1.0,
    gain_db: 0.0,
};

impl LiveUpdate {
    /// The stimulus that results from applying this update to `current`.
    /// Amplitude and gain carry over between pulse trains and russian
    /// current; family-specific fields fall back to defaults.
    pub fn merge(&self, current: &Stimulus) -> Stimulus {
        let shape = self.shape.unwrap_or(current.spec.shape);
        let amplitude = self.amplitude.unwrap_or(current.params.amplitude());
        let gain_db = self.gain_db.unwrap_or(current.params.gain_db());
        if shape == Shape::Russian {
            let base = match current.params {
                SignalParams::Russian(p) => p,
                SignalParams::Train(_) => RussianParams::default(),
            };
            return Stimulus::russian(RussianParams {
                carrier_hz: self.carrier_hz.unwrap_or(base.carrier_hz),
                burst_ms: self.burst_ms.unwrap_or(base.burst_ms),
                interburst_ms: self.interburst_ms.unwrap_or(base.interburst_ms),
                amplitude,
                gain_db,
            });
        }
        let base = match current.params {
            SignalParams::Train(p) => p,
            SignalParams::Russian(_) => DEFAULT_TRAIN,
        };
        let mut spec = if current.spec.shape == Shape::Russian {
            WaveformSpec::biphasic(shape)
        } else {
            WaveformSpec {
                shape,
                ..current.spec.clone()
            }
        };
        if let Some(p) = self.polarity {
            spec.polarity = p;
        }
        if let Some(g) = self.interphase_gap_us {
            spec.interphase_gap_us = g;
        }
        if let Some(t) = &self.table {
            spec.table = Some(t.clone());
        }
        if shape != Shape::Arbitrary {
            spec.table = None;
        }
        Stimulus::train(
            spec,
            PulseTrainParams {
                frequency_hz: self.frequency_hz.unwrap_or(base.frequency_hz),
                pulse_width_us: self.pulse_width_us.unwrap_or(base.pulse_width_us),
                amplitude,
                gain_db,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Out-of-envelope updates are clamped and applied.
    #[default]
    Clamp,
    /// Out-of-envelope updates are refused.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedUpdate {
    pub stimulus: Stimulus,
    /// Report for the stimulus as applied.
    pub report: ValidationReport,
    /// Report for the requested stimulus when it had to be clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_from: Option<ValidationReport>,
}

/// Merges, validates and, depending on `mode`, clamps an update. On refusal
/// the report explains why and the current parameters stay in force.
pub fn apply_update(
    current: &Stimulus,
    update: &LiveUpdate,
    envelope: &SafetyEnvelope,
    mode: UpdateMode,
) -> Result<AppliedUpdate, ValidationReport> {
    let requested = update.merge(current);
    let report = safety::validate(&requested, envelope);
    if !report.is_reject() {
        return Ok(AppliedUpdate {
            stimulus: requested,
            report,
            clamped_from: None,
        });
    }
    if mode == UpdateMode::Reject {
        return Err(report);
    }
    let stimulus = safety::clamp(&requested, envelope);
    let after = safety::validate(&stimulus, envelope);
    if after.is_reject() {
        return Err(after);
    }
    Ok(AppliedUpdate {
        stimulus,
        report: after,
        clamped_from: Some(report),
    })
}

#[derive(Debug, Clone)]
struct Active {
    voice: Voice,
    origin: u64,
    cycle: u64,
    cycle_start: u64,
    next_onset: u64,
}

/// Streaming renderer with pulse-boundary scheduling.
#[derive(Debug, Clone)]
pub struct LiveRenderer {
    sample_rate_hz: u32,
    position: u64,
    active: Option<Active>,
    pending: Option<Option<Voice>>,
}

impl LiveRenderer {
    pub fn new(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            position: 0,
            active: None,
            pending: None,
        }
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    /// Index of the next sample to be rendered.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn is_silent(&self) -> bool {
        self.active.is_none() && matches!(self.pending, None | Some(None))
    }

    /// Queues a new target (`None` for silence) for the next cycle onset.
    /// A later call before that onset replaces the earlier one.
    pub fn schedule(&mut self, target: Option<&Stimulus>) -> Result<(), SynthError> {
        let voice = target.map(|s| Voice::new(s, self.sample_rate_hz)).transpose()?;
        self.pending = Some(voice);
        Ok(())
    }

    /// Emergency halt: output is zero from the next sample on.
    pub fn halt(&mut self) {
        self.active = None;
        self.pending = None;
    }

    pub fn render(&mut self, out: &mut [f64]) {
        for slot in out {
            let n = self.position;
            let at_onset = self.active.as_ref().is_none_or(|a| a.next_onset == n);
            if at_onset {
                if let Some(next) = self.pending.take() {
                    self.active = next.map(|voice| Active {
                        next_onset: n + voice.onset(1),
                        voice,
                        origin: n,
                        cycle: 0,
                        cycle_start: n,
                    });
                } else if let Some(a) = &mut self.active {
                    a.cycle += 1;
                    a.cycle_start = n;
                    a.next_onset = a.origin + a.voice.onset(a.cycle + 1);
                }
            }
            *slot = self
                .active
                .as_ref()
                .map_or(0.0, |a| a.voice.cycle_sample(a.cycle, n - a.cycle_start, 1.0));
            self.position += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Change {
    Set(Stimulus),
    Silence,
    Halt,
}

/// A change as received, stamped with the sample index it arrived at.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at_sample: u64,
    pub change: Change,
}

/// Renders `len` samples of the stream an ordered event log describes.
pub fn render_history(events: &[Event], len: usize, sample_rate_hz: u32) -> Result<SampleBuffer, SynthError> {
    let mut out = vec![0.0; len];
    let mut active: Option<(Voice, u64)> = None;
    let mut pending: Option<(u64, Option<Voice>)> = None;

    // first scheduled onset of the active voice at or after `at`
    let effective = |active: &Option<(Voice, u64)>, at: u64| -> u64 {
        match active {
            None => at,
            Some((voice, origin)) => {
                let rel = at.saturating_sub(*origin);
                let spacing = voice.onset(1).max(1);
                let mut k = rel / spacing;
                while k > 0 && *origin + voice.onset(k) >= at {
                    k -= 1;
                }
                while *origin + voice.onset(k) < at {
                    k += 1;
                }
                *origin + voice.onset(k)
            }
        }
    };
    let draw = |out: &mut [f64], active: &Option<(Voice, u64)>, end: u64| {
        if let Some((voice, origin)) = active {
            let (start, end) = (*origin as usize, (end as usize).min(out.len()));
            if start < end {
                voice.fill(&mut out[start..end], false, |_, _| 1.0);
            }
        }
    };

    for event in events {
        if let Some((at, _)) = &pending {
            let when = effective(&active, *at);
            if when < event.at_sample {
                draw(&mut out, &active, when);
                let (_, next) = pending.take().unwrap_or_default();
                active = next.map(|v| (v, when));
            }
        }
        match &event.change {
            Change::Halt => {
                draw(&mut out, &active, event.at_sample);
                active = None;
                pending = None;
            }
            Change::Silence => {
                let at = pending.as_ref().map_or(event.at_sample, |(at, _)| *at);
                pending = Some((at, None));
            }
            Change::Set(stimulus) => {
                let at = pending.as_ref().map_or(event.at_sample, |(at, _)| *at);
                pending = Some((at, Some(Voice::new(stimulus, sample_rate_hz)?)));
            }
        }
    }
    if let Some((at, next)) = pending {
        let when = effective(&active, at);
        if when < len as u64 {
            draw(&mut out, &active, when);
            active = next.map(|v| (v, when));
        }
    }
    draw(&mut out, &active, len as u64);
    Ok(SampleBuffer::from_trusted(sample_rate_hz, out))
}

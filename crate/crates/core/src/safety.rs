//! Parameter envelope checks and clamping.
//!
//! Two tiers: values outside the *hard* ranges are rejected, values inside
//! the hard ranges but outside the *typical* ranges pass with a warning.
//! Russian current is checked on its burst rate; the carrier is part of the
//! definition of the waveform and is not held to the pulse-rate bounds.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{
    db_to_linear, validate_table, PulseTrainParams, RussianParams, Shape, SignalParams, Stimulus, WaveformSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("envelope field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("envelope file: {0}")]
    Parse(String),
}

/// Closed interval `[lo, hi]`, written as a two-element array in files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && self.lo <= v && v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Nearest point in the interval; NaN goes to the lower bound.
    pub fn clamp(&self, v: f64) -> f64 {
        if v.is_nan() {
            self.lo
        } else {
            v.clamp(self.lo, self.hi)
        }
    }

    fn check(&self, field: &'static str) -> Result<(), EnvelopeError> {
        let ok = self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi;
        if ok {
            Ok(())
        } else {
            Err(EnvelopeError::Invalid {
                field,
                reason: format!(
                    "[{}, {}] must be a non-empty interval of positive values",
                    self.lo, self.hi
                ),
            })
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyEnvelope {
    pub freq_hard: Interval,
    pub freq_typical: Interval,
    pub width_hard: Interval,
    pub max_continuous_s: f64,
    pub russian_burst_rate_hard: Interval,
}

impl Default for SafetyEnvelope {
    fn default() -> Self {
        Self {
            freq_hard: Interval::new(1.0, 500.0),
            freq_typical: Interval::new(1.0, 150.0),
            width_hard: Interval::new(30.0, 800.0),
            max_continuous_s: 300.0,
            russian_burst_rate_hard: Interval::new(1.0, 150.0),
        }
    }
}

impl SafetyEnvelope {
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        self.freq_hard.check("freq_hard")?;
        self.freq_typical.check("freq_typical")?;
        self.width_hard.check("width_hard")?;
        self.russian_burst_rate_hard.check("russian_burst_rate_hard")?;
        if !self.freq_hard.contains_interval(&self.freq_typical) {
            return Err(EnvelopeError::Invalid {
                field: "freq_typical",
                reason: format!("{} is not inside freq_hard {}", self.freq_typical, self.freq_hard),
            });
        }
        if !(self.max_continuous_s.is_finite() && self.max_continuous_s > 0.0) {
            return Err(EnvelopeError::Invalid {
                field: "max_continuous_s",
                reason: "must be finite and > 0".into(),
            });
        }
        // some biphasic pulse of minimum width must fit at the lowest rate
        if 2.0 * self.width_hard.lo >= 1e6 / self.freq_hard.lo {
            return Err(EnvelopeError::Invalid {
                field: "width_hard",
                reason: "no biphasic pulse of the minimum width fits the longest period".into(),
            });
        }
        Ok(())
    }

    /// Parses a TOML envelope; missing fields keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, EnvelopeError> {
        let envelope: SafetyEnvelope = toml::from_str(text).map_err(|e| EnvelopeError::Parse(e.to_string()))?;
        envelope.validate()?;
        Ok(envelope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Shape,
    FrequencyHz,
    PulseWidthUs,
    InterphaseGapUs,
    BurstRateHz,
    CarrierHz,
    BurstMs,
    InterburstMs,
    Amplitude,
    GainDb,
    Table,
    DurationS,
}

impl Parameter {
    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Shape => "shape",
            Parameter::FrequencyHz => "frequency_hz",
            Parameter::PulseWidthUs => "pulse_width_us",
            Parameter::InterphaseGapUs => "interphase_gap_us",
            Parameter::BurstRateHz => "burst_rate_hz",
            Parameter::CarrierHz => "carrier_hz",
            Parameter::BurstMs => "burst_ms",
            Parameter::InterburstMs => "interburst_ms",
            Parameter::Amplitude => "amplitude",
            Parameter::GainDb => "gain_db",
            Parameter::Table => "table",
            Parameter::DurationS => "duration_s",
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Hard,
}

/// Ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    PassWithWarnings,
    Reject,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::PassWithWarnings => "pass_with_warnings",
            Verdict::Reject => "reject",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub parameter: Parameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<Interval>,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let verdict = if findings.iter().any(|f| f.severity == Severity::Hard) {
            Verdict::Reject
        } else if findings.is_empty() {
            Verdict::Pass
        } else {
            Verdict::PassWithWarnings
        };
        Self { verdict, findings }
    }

    pub fn pass() -> Self {
        Self::from_findings(Vec::new())
    }

    pub fn is_reject(&self) -> bool {
        self.verdict == Verdict::Reject
    }

    pub fn merge(mut self, more: impl IntoIterator<Item = Finding>) -> Self {
        self.findings.extend(more);
        Self::from_findings(self.findings)
    }

    pub fn has_finding(&self, parameter: Parameter, severity: Severity) -> bool {
        self.findings
            .iter()
            .any(|f| f.parameter == parameter && f.severity == severity)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", self.verdict)?;
        for finding in &self.findings {
            let tag = match finding.severity {
                Severity::Warning => "warning",
                Severity::Hard => "REJECT",
            };
            writeln!(f, "  {tag} {}: {}", finding.parameter, finding.message)?;
        }
        Ok(())
    }
}

struct Findings(Vec<Finding>);

impl Findings {
    fn hard(&mut self, parameter: Parameter, bound: Option<Interval>, message: String) {
        self.0.push(Finding {
            parameter,
            bound,
            severity: Severity::Hard,
            message,
        });
    }

    fn warn(&mut self, parameter: Parameter, bound: Option<Interval>, message: String) {
        self.0.push(Finding {
            parameter,
            bound,
            severity: Severity::Warning,
            message,
        });
    }

    /// Hard range first; the typical range only matters inside it.
    fn range(&mut self, parameter: Parameter, value: f64, hard: Interval, typical: Option<Interval>, unit: &str) {
        if !hard.contains(value) {
            self.hard(
                parameter,
                Some(hard),
                format!("{value} {unit} is outside the hard range {hard}"),
            );
        } else if let Some(typical) = typical.filter(|t| !t.contains(value)) {
            self.warn(
                parameter,
                Some(typical),
                format!("{value} {unit} is outside the typical range {typical}"),
            );
        }
    }

    fn level(&mut self, amplitude: f64, gain_db: f64) {
        if !(amplitude.is_finite() && (0.0..=1.0).contains(&amplitude)) {
            self.hard(
                Parameter::Amplitude,
                Some(Interval::new(0.0, 1.0)),
                format!("amplitude {amplitude} is outside [0, 1]"),
            );
            return;
        }
        if !gain_db.is_finite() {
            self.hard(Parameter::GainDb, None, format!("gain {gain_db} dB is not finite"));
            return;
        }
        let peak = amplitude * db_to_linear(gain_db);
        if peak > 1.0 {
            self.hard(
                Parameter::GainDb,
                None,
                format!("amplitude {amplitude} at {gain_db} dB peaks at {peak:.4}, beyond full scale"),
            );
        }
    }
}

/// Checks a stimulus against `envelope`. Accepts any input; problems are
/// reported as findings, never as errors.
pub fn validate(stimulus: &Stimulus, envelope: &SafetyEnvelope) -> ValidationReport {
    let mut f = Findings(Vec::new());
    let spec = &stimulus.spec;
    match (&stimulus.params, spec.shape) {
        (SignalParams::Russian(p), Shape::Russian) => validate_russian(&mut f, p, envelope),
        (SignalParams::Train(p), shape) if shape != Shape::Russian => validate_train(&mut f, spec, p, envelope),
        (_, shape) => f.hard(Parameter::Shape, None, format!("parameters do not match shape {shape}")),
    }
    ValidationReport::from_findings(f.0)
}

fn validate_train(f: &mut Findings, spec: &WaveformSpec, p: &PulseTrainParams, env: &SafetyEnvelope) {
    f.range(
        Parameter::FrequencyHz,
        p.frequency_hz,
        env.freq_hard,
        Some(env.freq_typical),
        "Hz",
    );
    f.level(p.amplitude, p.gain_db);

    if spec.shape == Shape::Arbitrary {
        match spec.table.as_deref() {
            Some(table) => {
                if let Err(e) = validate_table(table) {
                    f.hard(Parameter::Table, None, e.to_string());
                }
            }
            None => f.hard(Parameter::Table, None, "arbitrary shape without a table".into()),
        }
        f.warn(
            Parameter::PulseWidthUs,
            None,
            "arbitrary waveform content is not bounded by the pulse-width range".into(),
        );
        return;
    }
    if spec.table.is_some() {
        f.hard(
            Parameter::Table,
            None,
            format!("a table is not allowed for {}", spec.shape),
        );
    }

    f.range(Parameter::PulseWidthUs, p.pulse_width_us, env.width_hard, None, "µs");
    let gap = spec.interphase_gap_us;
    if !(gap.is_finite() && gap >= 0.0) {
        f.hard(
            Parameter::InterphaseGapUs,
            None,
            format!("interphase gap {gap} µs is invalid"),
        );
        return;
    }
    if gap > 0.0 && !spec.is_biphasic() {
        f.hard(
            Parameter::InterphaseGapUs,
            None,
            "only biphasic pulses have an interphase gap".into(),
        );
    }
    if p.frequency_hz.is_finite() && p.frequency_hz > 0.0 && p.pulse_width_us.is_finite() {
        let pulse_us = p.pulse_duration_us(spec);
        let period_us = p.period_us();
        if pulse_us >= period_us {
            f.hard(
                Parameter::PulseWidthUs,
                None,
                format!("pulse of {pulse_us} µs does not fit in the {period_us:.3} µs period"),
            );
        }
    }
}

fn validate_russian(f: &mut Findings, p: &RussianParams, env: &SafetyEnvelope) {
    f.level(p.amplitude, p.gain_db);
    if !(p.carrier_hz.is_finite() && p.carrier_hz > 0.0) {
        f.hard(
            Parameter::CarrierHz,
            None,
            format!("carrier {} Hz is invalid", p.carrier_hz),
        );
    }
    let burst_ok = p.burst_ms.is_finite() && p.burst_ms > 0.0;
    let gap_ok = p.interburst_ms.is_finite() && p.interburst_ms >= 0.0;
    if !burst_ok {
        f.hard(
            Parameter::BurstMs,
            None,
            format!("burst of {} ms is invalid", p.burst_ms),
        );
    }
    if !gap_ok {
        f.hard(
            Parameter::InterburstMs,
            None,
            format!("inter-burst of {} ms is invalid", p.interburst_ms),
        );
    }
    if burst_ok && gap_ok {
        f.range(
            Parameter::BurstRateHz,
            p.burst_rate_hz(),
            env.russian_burst_rate_hard,
            Some(env.freq_typical),
            "Hz",
        );
    }
}

/// Warns when a single continuous run exceeds the envelope's limit.
pub fn validate_duration(duration_s: f64, envelope: &SafetyEnvelope) -> Option<Finding> {
    (duration_s > envelope.max_continuous_s).then(|| Finding {
        parameter: Parameter::DurationS,
        bound: Some(Interval::new(0.0, envelope.max_continuous_s)),
        severity: Severity::Warning,
        message: format!(
            "{duration_s} s of continuous output exceeds {} s; watch for heating",
            envelope.max_continuous_s
        ),
    })
}

/// Moves every out-of-range value to the nearest admissible one so that the
/// result never validates as a reject. Values already admissible are left
/// alone, which makes the operation idempotent.
pub fn clamp(stimulus: &Stimulus, envelope: &SafetyEnvelope) -> Stimulus {
    let mut spec = stimulus.spec.clone();
    let params = match (stimulus.params, spec.shape) {
        (SignalParams::Russian(p), Shape::Russian) => SignalParams::Russian(clamp_russian(p, envelope)),
        (SignalParams::Train(p), Shape::Russian) => SignalParams::Russian(clamp_russian(
            RussianParams {
                amplitude: p.amplitude,
                gain_db: p.gain_db,
                ..RussianParams::default()
            },
            envelope,
        )),
        (SignalParams::Russian(p), _) => {
            let train =
                PulseTrainParams::new(p.burst_rate_hz(), envelope.width_hard.lo, p.amplitude).with_gain_db(p.gain_db);
            SignalParams::Train(clamp_train(&mut spec, train, envelope))
        }
        (SignalParams::Train(p), _) => SignalParams::Train(clamp_train(&mut spec, p, envelope)),
    };
    if spec.shape == Shape::Russian {
        spec.polarity = Default::default();
        spec.interphase_gap_us = 0.0;
        spec.table = None;
    }
    Stimulus { spec, params }
}

fn clamp_level(amplitude: f64, gain_db: f64) -> (f64, f64) {
    let amplitude = Interval::new(0.0, 1.0).clamp(amplitude);
    let mut gain_db = if gain_db.is_finite() { gain_db } else { 0.0 };
    if amplitude * db_to_linear(gain_db) > 1.0 {
        gain_db = -20.0 * amplitude.log10();
        while amplitude * db_to_linear(gain_db) > 1.0 {
            gain_db -= 1e-9;
        }
    }
    (amplitude, gain_db)
}

fn clamp_train(spec: &mut WaveformSpec, p: PulseTrainParams, env: &SafetyEnvelope) -> PulseTrainParams {
    let mut p = p;
    (p.amplitude, p.gain_db) = clamp_level(p.amplitude, p.gain_db);
    if !env.freq_hard.contains(p.frequency_hz) {
        p.frequency_hz = env.freq_hard.clamp(p.frequency_hz);
    }

    if spec.shape == Shape::Arbitrary {
        let table = spec
            .table
            .take()
            .unwrap_or_default()
            .into_iter()
            .map(|v| Interval::new(-1.0, 1.0).clamp(if v.is_nan() { 0.0 } else { v }))
            .collect::<Vec<_>>();
        spec.table = Some(if table.len() < 2 { vec![0.0, 0.0] } else { table });
        spec.interphase_gap_us = 0.0;
        return p;
    }
    spec.table = None;

    if !env.width_hard.contains(p.pulse_width_us) {
        p.pulse_width_us = env.width_hard.clamp(p.pulse_width_us);
    }
    let gap = spec.interphase_gap_us;
    if !(gap.is_finite() && gap >= 0.0) || !spec.is_biphasic() {
        spec.interphase_gap_us = 0.0;
    }

    let fits = |spec: &WaveformSpec, p: &PulseTrainParams| p.pulse_duration_us(spec) < p.period_us();
    if !fits(spec, &p) && spec.is_biphasic() {
        let room = p.period_us() - 2.0 * p.pulse_width_us;
        spec.interphase_gap_us = (room / 2.0).max(0.0);
    }
    if !fits(spec, &p) {
        let phases = if spec.is_biphasic() { 2.0 } else { 1.0 };
        let widest = 0.99 * p.period_us() / phases;
        p.pulse_width_us = widest.max(env.width_hard.lo);
    }
    // a validated envelope always fits a minimum-width pulse at freq_hard.lo
    for _ in 0..64 {
        if fits(spec, &p) {
            break;
        }
        let lowered = 1e6 / (p.pulse_duration_us(spec) * 1.01);
        p.frequency_hz = env.freq_hard.clamp(lowered.min(p.frequency_hz * 0.99));
    }
    p
}

fn clamp_russian(p: RussianParams, env: &SafetyEnvelope) -> RussianParams {
    let defaults = RussianParams::default();
    let mut p = p;
    (p.amplitude, p.gain_db) = clamp_level(p.amplitude, p.gain_db);
    if !(p.carrier_hz.is_finite() && p.carrier_hz > 0.0) {
        p.carrier_hz = defaults.carrier_hz;
    }
    if !(p.burst_ms.is_finite() && p.burst_ms > 0.0) {
        p.burst_ms = defaults.burst_ms;
    }
    if !(p.interburst_ms.is_finite() && p.interburst_ms >= 0.0) {
        p.interburst_ms = 0.0;
    }
    let hard = env.russian_burst_rate_hard;
    let rate = p.burst_rate_hz();
    if !hard.contains(rate) {
        // keep the duty cycle, stretch or squeeze the period
        let stretch = rate / hard.clamp(rate);
        p.burst_ms *= stretch;
        p.interburst_ms *= stretch;
        while p.burst_rate_hz() > hard.hi {
            p.burst_ms *= 1.0 + 1e-12;
            p.interburst_ms *= 1.0 + 1e-12;
        }
        while p.burst_rate_hz() < hard.lo {
            p.burst_ms *= 1.0 - 1e-12;
            p.interburst_ms *= 1.0 - 1e-12;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(f: f64, w: f64) -> Stimulus {
        Stimulus::train(WaveformSpec::biphasic(Shape::Square), PulseTrainParams::new(f, w, 1.0))
    }

    fn train_params(s: &Stimulus) -> PulseTrainParams {
        match s.params {
            SignalParams::Train(p) => p,
            SignalParams::Russian(_) => panic!("expected train"),
        }
    }

    #[test]
    fn reference_settings_warn_above_typical() {
        let env = SafetyEnvelope::default();
        let report = validate(&square(160.0, 120.0), &env);
        assert_eq!(report.verdict, Verdict::PassWithWarnings);
        assert!(report.has_finding(Parameter::FrequencyHz, Severity::Warning));
    }

    #[test]
    fn wide_pulse_is_rejected() {
        let report = validate(&square(100.0, 900.0), &SafetyEnvelope::default());
        assert_eq!(report.verdict, Verdict::Reject);
        assert!(report.has_finding(Parameter::PulseWidthUs, Severity::Hard));
    }

    #[test]
    fn russian_defaults_pass() {
        let report = validate(&Stimulus::russian(RussianParams::default()), &SafetyEnvelope::default());
        assert_eq!(report.verdict, Verdict::Pass, "{report}");
    }

    #[test]
    fn kilohertz_is_rejected() {
        let report = validate(&square(1000.0, 120.0), &SafetyEnvelope::default());
        assert_eq!(report.verdict, Verdict::Reject);
        assert!(report.has_finding(Parameter::FrequencyHz, Severity::Hard));
    }

    #[test]
    fn russian_fast_bursts_are_rejected() {
        let p = RussianParams {
            burst_ms: 1.0,
            interburst_ms: 1.0,
            ..Default::default()
        };
        let report = validate(&Stimulus::russian(p), &SafetyEnvelope::default());
        assert!(report.has_finding(Parameter::BurstRateHz, Severity::Hard));
    }

    #[test]
    fn clamp_examples() {
        let env = SafetyEnvelope::default();
        assert_eq!(train_params(&clamp(&square(1000.0, 120.0), &env)).frequency_hz, 500.0);
        assert_eq!(train_params(&clamp(&square(100.0, 10.0), &env)).pulse_width_us, 30.0);
        let fine = square(100.0, 200.0);
        assert_eq!(clamp(&fine, &env), fine);
    }

    #[test]
    fn clamp_fixes_level_and_russian_rate() {
        let env = SafetyEnvelope::default();
        let hot = Stimulus::train(
            WaveformSpec::monophasic(Shape::Sine),
            PulseTrainParams::new(50.0, 200.0, 1.0).with_gain_db(6.0),
        );
        let fixed = clamp(&hot, &env);
        assert_ne!(validate(&fixed, &env).verdict, Verdict::Reject);
        let fast = Stimulus::russian(RussianParams {
            burst_ms: 1.0,
            interburst_ms: 3.0,
            ..Default::default()
        });
        let slowed = clamp(&fast, &env);
        let SignalParams::Russian(p) = slowed.params else {
            panic!()
        };
        assert!(p.burst_rate_hz() <= 150.0);
        assert!((p.duty() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn long_sessions_warn() {
        let env = SafetyEnvelope::default();
        assert!(validate_duration(120.0, &env).is_none());
        let finding = validate_duration(600.0, &env).unwrap();
        assert_eq!(finding.severity, Severity::Warning);
    }

    #[test]
    fn envelope_checks() {
        assert!(SafetyEnvelope::default().validate().is_ok());
        let env = SafetyEnvelope {
            freq_typical: Interval::new(1.0, 600.0),
            ..Default::default()
        };
        assert!(env.validate().is_err());
        let env = SafetyEnvelope {
            width_hard: Interval::new(0.0, 100.0),
            ..Default::default()
        };
        assert!(env.validate().is_err());
    }

    #[test]
    fn partial_envelope_file_keeps_defaults() {
        let env = SafetyEnvelope::from_toml("freq_hard = [1, 300]\n").unwrap();
        assert_eq!(env.freq_hard, Interval::new(1.0, 300.0));
        assert_eq!(env.width_hard, SafetyEnvelope::default().width_hard);
        assert!(SafetyEnvelope::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn arbitrary_always_carries_a_width_warning() {
        let s = Stimulus::train(
            WaveformSpec::arbitrary(vec![0.0, 0.5, 0.0, -0.5]),
            PulseTrainParams::new(50.0, 1.0, 1.0),
        );
        let report = validate(&s, &SafetyEnvelope::default());
        assert_eq!(report.verdict, Verdict::PassWithWarnings);
    }
}

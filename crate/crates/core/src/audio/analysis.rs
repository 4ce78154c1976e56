//! Software oscilloscope: recovers pulse rate, phase width, level statistics
//! and the dominant spectral component from a buffer.
//!
//! Onsets are upward crossings of 50% of the buffer peak. After an onset the
//! detector stays disarmed until it sees [`REARM_SILENCE`] consecutive
//! samples below the noise floor (1% of peak), so the carrier cycles inside
//! a Russian burst count as one pulse and the negative phase of a biphasic
//! pulse never counts as a new one.

use std::collections::HashMap;
use std::fmt::Write as _;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::waveform::SampleBuffer;

pub const ONSET_FRACTION: f64 = 0.5;
pub const NOISE_FLOOR_FRACTION: f64 = 0.01;
pub const REARM_SILENCE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub sample_rate_hz: u32,
    pub samples: usize,
    pub detected_frequency_hz: Option<f64>,
    /// Most common run length of same-sign samples above the noise floor.
    pub detected_pulse_width_samples: Option<usize>,
    pub dc_offset: f64,
    pub rms: f64,
    pub peak: f64,
    pub dominant_spectral_hz: Option<f64>,
    pub pulse_count: usize,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl AnalysisReport {
    pub const CSV_HEADER: &'static str = "sample_rate_hz,samples,detected_frequency_hz,\
detected_pulse_width_samples,dc_offset,rms,peak,dominant_spectral_hz,pulse_count";

    /// `key: value` lines, `none` for missing detections.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sample_rate_hz: {}", self.sample_rate_hz);
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "detected_frequency_hz: {}", opt(&self.detected_frequency_hz));
        let _ = writeln!(
            s,
            "detected_pulse_width_samples: {}",
            opt(&self.detected_pulse_width_samples)
        );
        let _ = writeln!(s, "dc_offset: {}", self.dc_offset);
        let _ = writeln!(s, "rms: {}", self.rms);
        let _ = writeln!(s, "peak: {}", self.peak);
        let _ = writeln!(s, "dominant_spectral_hz: {}", opt(&self.dominant_spectral_hz));
        let _ = writeln!(s, "pulse_count: {}", self.pulse_count);
        s
    }

    /// Header and one row; missing detections are empty fields.
    pub fn to_csv(&self) -> String {
        let o = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{}\n{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.sample_rate_hz,
            self.samples,
            o(self.detected_frequency_hz.map(|v| v.to_string())),
            o(self.detected_pulse_width_samples.map(|v| v.to_string())),
            self.dc_offset,
            self.rms,
            self.peak,
            o(self.dominant_spectral_hz.map(|v| v.to_string())),
            self.pulse_count
        )
    }
}

pub fn analyze(buffer: &SampleBuffer) -> AnalysisReport {
    let samples = buffer.samples();
    let rate = buffer.sample_rate_hz();
    let onsets = pulse_onsets(samples);
    let detected_frequency_hz = match (onsets.first(), onsets.last()) {
        (Some(&first), Some(&last)) if onsets.len() >= 2 && last > first => {
            Some((onsets.len() - 1) as f64 * f64::from(rate) / (last - first) as f64)
        }
        _ => None,
    };
    AnalysisReport {
        sample_rate_hz: rate,
        samples: samples.len(),
        detected_frequency_hz,
        detected_pulse_width_samples: mode(&phase_runs(samples)),
        dc_offset: buffer.mean(),
        rms: buffer.rms(),
        peak: buffer.peak(),
        dominant_spectral_hz: dominant_frequency(buffer),
        pulse_count: onsets.len(),
    }
}

/// Sample indices where a pulse (or burst) starts.
pub fn pulse_onsets(samples: &[f64]) -> Vec<usize> {
    let peak = samples.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let threshold = ONSET_FRACTION * peak;
    let floor = NOISE_FLOOR_FRACTION * peak;
    let mut onsets = Vec::new();
    let mut armed = true;
    let mut silent_run = REARM_SILENCE;
    let mut prev = 0.0;
    for (i, &v) in samples.iter().enumerate() {
        if v.abs() < floor {
            silent_run += 1;
            if silent_run >= REARM_SILENCE {
                armed = true;
            }
        } else {
            silent_run = 0;
        }
        if armed && v >= threshold && prev < threshold {
            onsets.push(i);
            armed = false;
        }
        prev = v;
    }
    onsets
}

/// Lengths of maximal same-sign runs above the noise floor.
pub fn phase_runs(samples: &[f64]) -> Vec<usize> {
    let peak = samples.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let floor = NOISE_FLOOR_FRACTION * peak;
    let mut runs = Vec::new();
    let mut current = 0usize;
    let mut sign = 0i8;
    for &v in samples {
        let s = if v >= floor {
            1
        } else if v <= -floor {
            -1
        } else {
            0
        };
        if s != 0 && s == sign {
            current += 1;
        } else {
            if current > 0 {
                runs.push(current);
            }
            current = usize::from(s != 0);
        }
        sign = s;
    }
    if current > 0 {
        runs.push(current);
    }
    runs
}

fn mode(values: &[usize]) -> Option<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
}

/// Frequency of the strongest non-DC bin of the power spectrum.
pub fn dominant_frequency(buffer: &SampleBuffer) -> Option<f64> {
    let n = buffer.len();
    if n < 2 || buffer.peak() == 0.0 {
        return None;
    }
    let mut spectrum: Vec<Complex<f64>> = buffer.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let (bin, power) = spectrum[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm_sqr()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    (power > 0.0).then(|| bin as f64 * f64::from(buffer.sample_rate_hz()) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{render_russian, render_train, PulseTrainParams, RussianParams, Shape, WaveformSpec};

    #[test]
    fn reference_square_is_recovered() {
        let buf = render_train(
            &WaveformSpec::biphasic(Shape::Square),
            &PulseTrainParams::new(160.0, 120.0, 1.0),
            1.0,
            192_000,
        )
        .unwrap();
        let r = analyze(&buf);
        assert_eq!(r.pulse_count, 160);
        assert!((r.detected_frequency_hz.unwrap() - 160.0).abs() < 1.6);
        assert_eq!(r.detected_pulse_width_samples, Some(23));
        assert!(r.dc_offset.abs() <= 1e-4);
    }

    #[test]
    fn silence_has_no_pulses() {
        let r = analyze(&SampleBuffer::silence(48_000, 4800));
        assert_eq!(r.pulse_count, 0);
        assert_eq!(r.detected_frequency_hz, None);
        assert_eq!(r.detected_pulse_width_samples, None);
        assert_eq!(r.dominant_spectral_hz, None);
        assert_eq!(r.peak, 0.0);
    }

    #[test]
    fn russian_carrier_dominates_spectrum() {
        let buf = render_russian(&RussianParams::default(), 1.0, 48_000).unwrap();
        let r = analyze(&buf);
        assert!((r.dominant_spectral_hz.unwrap() - 2500.0).abs() <= 1.0);
        assert_eq!(r.pulse_count, 50);
        assert!((r.detected_frequency_hz.unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn runs_split_on_sign_and_silence() {
        let s = [0.0, 1.0, 1.0, -1.0, -1.0, -1.0, 0.0, 0.5, 0.0];
        assert_eq!(phase_runs(&s), vec![2, 3, 1]);
    }

    #[test]
    fn onsets_need_silence_to_rearm() {
        // a single silent sample between bumps does not re-arm
        let s = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(pulse_onsets(&s), vec![2, 7]);
    }

    #[test]
    fn text_and_csv_forms() {
        let r = analyze(&SampleBuffer::silence(48_000, 10));
        let text = r.to_text();
        assert!(text.contains("pulse_count: 0\n"));
        assert!(text.contains("detected_frequency_hz: none\n"));
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }
}

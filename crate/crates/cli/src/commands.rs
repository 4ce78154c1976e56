use std::fmt;
use std::fs;
use std::path::Path;

use emsynth::audio::analysis::analyze as analyze_buffer;
use emsynth::audio::sink::{open_sink, SinkConfig, SinkKind};
use emsynth::audio::wav::{decode_wav, encode_wav, WavFormat};
use emsynth::calibration::default_gain_db;
use emsynth::physiology::{self, fit_sd_model, SdModel};
use emsynth::program::live::UpdateMode;
use emsynth::program::{parse_program_with, render_program, LoadOptions, ProgramError, StimulationProgram};
use emsynth::safety::{self, SafetyEnvelope};
use emsynth::service::{self, ServeLimits, ServiceConfig, ServiceCore};
use emsynth::waveform::{PulseTrainParams, RussianParams, Shape, SignalParams, Stimulus, WaveformSpec};

use crate::{AnalyzeArgs, EnvelopeArgs, RenderArgs, SdCurveArgs, ServeArgs, SinkChoice, ValidateArgs};

pub const EXIT_SAFETY: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum Failure {
    Safety(String),
    Parse(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Safety(_) => EXIT_SAFETY,
            Failure::Parse(_) => EXIT_PARSE,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Safety(m) | Failure::Parse(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

fn parse_err(e: impl fmt::Display) -> Failure {
    Failure::Parse(e.to_string())
}

impl From<ProgramError> for Failure {
    fn from(e: ProgramError) -> Self {
        match e {
            ProgramError::SafetyReject { .. } => Failure::Safety(e.to_string()),
            other => Failure::Parse(other.to_string()),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_envelope(args: &EnvelopeArgs) -> Result<Option<SafetyEnvelope>, Failure> {
    args.envelope
        .as_deref()
        .map(|p| SafetyEnvelope::from_toml(&read_text(p)?).map_err(|e| Failure::Parse(format!("{}: {e}", p.display()))))
        .transpose()
}

fn describe(s: &Stimulus) -> String {
    match s.params {
        SignalParams::Russian(p) => format!(
            "russian {} Hz carrier, {} ms on / {} ms off, amplitude {}, gain {} dB",
            p.carrier_hz, p.burst_ms, p.interburst_ms, p.amplitude, p.gain_db
        ),
        SignalParams::Train(p) if s.spec.shape == Shape::Arbitrary => format!(
            "arbitrary table at {} Hz, amplitude {}, gain {} dB",
            p.frequency_hz, p.amplitude, p.gain_db
        ),
        SignalParams::Train(p) => format!(
            "{} {} {} Hz, {} us, gap {} us, amplitude {}, gain {} dB",
            s.spec.shape,
            s.spec.polarity,
            p.frequency_hz,
            p.pulse_width_us,
            s.spec.interphase_gap_us,
            p.amplitude,
            p.gain_db
        ),
    }
}

fn inline_stimulus(a: &RenderArgs) -> Result<Stimulus, Failure> {
    let shape = a
        .shape
        .ok_or_else(|| parse_err("--shape is required without --program"))?;
    let gain_db = a
        .gain
        .unwrap_or(if a.calibrated { default_gain_db(shape) } else { 0.0 });
    let unused = |present: bool, flag: &str| {
        if present {
            Err(Failure::Parse(format!("{flag} does not apply to shape {shape}")))
        } else {
            Ok(())
        }
    };
    if shape == Shape::Russian {
        unused(a.freq.is_some(), "--freq")?;
        unused(a.width.is_some(), "--width")?;
        unused(a.table.is_some(), "--table")?;
        let d = RussianParams::default();
        return Ok(Stimulus::russian(RussianParams {
            carrier_hz: a.carrier.unwrap_or(d.carrier_hz),
            burst_ms: a.burst.unwrap_or(d.burst_ms),
            interburst_ms: a.interburst.unwrap_or(d.interburst_ms),
            amplitude: a.amp,
            gain_db,
        }));
    }
    unused(a.carrier.is_some(), "--carrier")?;
    unused(a.burst.is_some(), "--burst")?;
    unused(a.interburst.is_some(), "--interburst")?;
    let freq = a.freq.ok_or_else(|| parse_err("--freq is required"))?;
    let (spec, width) = if shape == Shape::Arbitrary {
        unused(a.width.is_some(), "--width")?;
        let table = a
            .table
            .clone()
            .ok_or_else(|| parse_err("--table is required for shape arbitrary"))?;
        (WaveformSpec::arbitrary(table), 0.0)
    } else {
        unused(a.table.is_some(), "--table")?;
        let width = a.width.ok_or_else(|| parse_err("--width is required"))?;
        (WaveformSpec::new(shape, a.polarity).with_gap_us(a.gap), width)
    };
    Ok(Stimulus::train(
        spec,
        PulseTrainParams::new(freq, width, a.amp).with_gain_db(gain_db),
    ))
}

pub fn render(a: &RenderArgs) -> Result<(), Failure> {
    let format = WavFormat::new(a.rate, a.format).map_err(parse_err)?;
    let cli_envelope = load_envelope(&a.envelope)?;

    let (program, envelope) = if let Some(path) = &a.program {
        let options = LoadOptions {
            envelope: cli_envelope.clone(),
            clamp: a.clamp,
        };
        let program = parse_program_with(&read_text(path)?, &options)
            .map_err(|e| Failure::from(e).prefixed(&path.display().to_string()))?;
        let envelope = cli_envelope.or_else(|| program.envelope.clone()).unwrap_or_default();
        (program, envelope)
    } else {
        let envelope = cli_envelope.unwrap_or_default();
        let duration = a.dur.ok_or_else(|| parse_err("--dur is required without --program"))?;
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(parse_err(format!("--dur {duration} must be >= 0")));
        }
        let requested = inline_stimulus(a)?;
        let mut report = safety::validate(&requested, &envelope);
        let mut stimulus = requested;
        if report.is_reject() {
            if !a.clamp {
                print!("{report}");
                return Err(Failure::Safety(
                    "parameters rejected by the safety envelope (use --clamp to clamp)".into(),
                ));
            }
            print!("requested {report}");
            stimulus = safety::clamp(&stimulus, &envelope);
            report = safety::validate(&stimulus, &envelope);
            eprintln!("warning: clamped to {}", describe(&stimulus));
        }
        let mut program = StimulationProgram::single(stimulus, duration);
        program.segments[0].report = report;
        (program, envelope)
    };

    print!("{}", program.report(&envelope));
    let buffer = render_program(&program, a.rate).map_err(parse_err)?;
    let bytes = encode_wav(&buffer, &format).map_err(parse_err)?;
    fs::write(&a.out, bytes).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    println!(
        "wrote {} ({} samples, {:.3} s, {} Hz, {})",
        a.out.display(),
        buffer.len(),
        buffer.duration_s(),
        a.rate,
        a.format
    );
    Ok(())
}

impl Failure {
    fn prefixed(self, prefix: &str) -> Self {
        match self {
            Failure::Safety(m) => Failure::Safety(format!("{prefix}: {m}")),
            Failure::Parse(m) => Failure::Parse(format!("{prefix}: {m}")),
            Failure::Io(m) => Failure::Io(format!("{prefix}: {m}")),
        }
    }
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let bytes = read_bytes(&a.input)?;
    let (buffer, _) = decode_wav(&bytes).map_err(|e| Failure::Parse(format!("{}: {e}", a.input.display())))?;
    let report = analyze_buffer(&buffer);
    print!("{}", if a.csv { report.to_csv() } else { report.to_text() });
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> Result<(), Failure> {
    let cli_envelope = load_envelope(&a.envelope)?;
    let options = LoadOptions {
        envelope: cli_envelope.clone(),
        clamp: a.clamp,
    };
    let program = match parse_program_with(&read_text(&a.program)?, &options) {
        Ok(p) => p,
        Err(ProgramError::SafetyReject { line, path, report }) => {
            print!("{report}");
            return Err(Failure::Safety(format!(
                "{}: line {line}: `{path}` rejected by the safety envelope",
                a.program.display()
            )));
        }
        Err(e) => return Err(Failure::from(e).prefixed(&a.program.display().to_string())),
    };
    let envelope = cli_envelope.or_else(|| program.envelope.clone()).unwrap_or_default();
    println!(
        "segments: {}, total duration: {} s",
        program.segments.len(),
        program.total_duration_s()
    );
    for (i, seg) in program.segments.iter().enumerate() {
        println!("segment {i}: {} for {} s", describe(&seg.stimulus), seg.duration_s);
    }
    print!("{}", program.report(&envelope));
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>, Failure> {
    let text = read_text(path)?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [t, y] => t.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(p) => points.push(p),
            // a header row is allowed
            None if n == 0 => {}
            None => {
                return Err(Failure::Parse(format!(
                    "{}: line {}: expected `duration_us,threshold`",
                    path.display(),
                    n + 1
                )))
            }
        }
    }
    Ok(points)
}

pub fn sd_curve(a: &SdCurveArgs) -> Result<(), Failure> {
    let model = match &a.fit {
        Some(path) => {
            let fit = fit_sd_model(&read_points(path)?).map_err(parse_err)?;
            eprintln!(
                "fit: rheobase {} chronaxie_us {} rms_residual {}",
                fit.model.rheobase, fit.model.chronaxie_us, fit.rms_residual
            );
            fit.model
        }
        None => SdModel::new(a.rheobase.unwrap_or_default(), a.chronaxie.unwrap_or_default()).map_err(parse_err)?,
    };
    let curve = physiology::sd_curve(&model, a.from, a.to, a.points).map_err(parse_err)?;
    let mut out = String::from("duration_us,threshold\n");
    for (t, y) in curve {
        out.push_str(&format!("{t},{y}\n"));
    }
    print!("{out}");
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), Failure> {
    if !a.bind.ip().is_loopback() {
        if !a.allow_remote {
            return Err(parse_err(format!(
                "refusing to bind {}: the control protocol has no authentication; pass --allow-remote to override",
                a.bind
            )));
        }
        eprintln!(
            "WARNING: binding {} exposes stimulation control to the network without authentication",
            a.bind
        );
    }
    if a.chunk == 0 {
        return Err(parse_err("--chunk must be > 0"));
    }
    let format = WavFormat::new(a.rate, a.format).map_err(parse_err)?;
    let max_samples = match a.duration {
        Some(d) if d.is_finite() && d >= 0.0 => Some((d * f64::from(a.rate)).ceil() as u64),
        Some(d) => return Err(parse_err(format!("--duration {d} must be >= 0"))),
        None => None,
    };
    let config = ServiceConfig {
        sample_rate_hz: a.rate,
        chunk_size: a.chunk,
        envelope: load_envelope(&a.envelope)?.unwrap_or_default(),
        mode: if a.reject {
            UpdateMode::Reject
        } else {
            UpdateMode::Clamp
        },
        ..ServiceConfig::default()
    };
    let core = ServiceCore::new(config)
        .map_err(|r| Failure::Safety(format!("initial parameters rejected by the envelope\n{r}")))?;

    let kind = match a.sink {
        SinkChoice::Device => SinkKind::Device("default".into()),
        SinkChoice::File => SinkKind::File(a.out.clone().ok_or_else(|| parse_err("--out is required"))?),
        SinkChoice::Null => SinkKind::Null,
        SinkChoice::Stdout => SinkKind::Stdout,
    };
    let sink = open_sink(&SinkConfig {
        kind,
        format,
        realtime: true,
        queue_chunks: 4,
    })
    .map_err(|e| Failure::Io(e.to_string()))?;

    let handle = service::spawn(core, sink, a.bind, ServeLimits { max_samples })
        .map_err(|e| Failure::Io(format!("bind {}: {e}", a.bind)))?;
    eprintln!("listening on {}", handle.local_addr());
    let summary = handle.wait().map_err(|e| Failure::Io(e.to_string()))?;
    eprintln!(
        "streamed {} samples ({} requests, {} underruns)",
        summary.samples_emitted, summary.requests, summary.sink.underruns
    );
    Ok(())
}

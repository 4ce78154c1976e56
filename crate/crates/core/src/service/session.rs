//! Session state machine. One [`ServiceCore`] owns the state and the live
//! renderer; control requests are handled between chunks.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::sink::Chunk;
use crate::program::live::{apply_update, Change, Event, LiveRenderer, LiveUpdate, UpdateMode, DEFAULT_TRAIN};
use crate::safety::{self, SafetyEnvelope, ValidationReport};
use crate::waveform::{Shape, Stimulus, Voice, WaveformSpec};

use super::protocol::{ErrorCode, HelloInfo, Kind, Reply, Request, Role, PROTOCOL_VERSION};

pub const DEFAULT_CHUNK_SIZE: usize = 256;
pub const DEFAULT_SERVE_RATE_HZ: u32 = 48_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Idle,
    Running,
    StoppedEmergency,
}

/// Immutable snapshot for status replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub run_state: RunState,
    pub params: LiveUpdate,
    pub envelope: SafetyEnvelope,
    pub uptime_s: f64,
    pub samples_emitted: u64,
    pub last_validation: ValidationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub sample_rate_hz: u32,
    pub chunk_size: usize,
    pub envelope: SafetyEnvelope,
    pub mode: UpdateMode,
    /// Parameters in force before the first `set_params`.
    pub initial: Stimulus,
    /// Keep the log of stream changes, for [`crate::program::live::render_history`].
    pub record_history: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SERVE_RATE_HZ,
            chunk_size: DEFAULT_CHUNK_SIZE,
            envelope: SafetyEnvelope::default(),
            mode: UpdateMode::Clamp,
            initial: Stimulus::train(WaveformSpec::biphasic(Shape::Square), DEFAULT_TRAIN),
            record_history: false,
        }
    }
}

#[derive(Debug)]
pub struct ServiceCore {
    config: ServiceConfig,
    run_state: RunState,
    stimulus: Stimulus,
    last_validation: ValidationReport,
    last_error: Option<String>,
    renderer: LiveRenderer,
    samples_emitted: u64,
    seq: u64,
    history: Vec<Event>,
}

impl ServiceCore {
    /// Fails when the initial parameters do not pass the envelope.
    pub fn new(config: ServiceConfig) -> Result<Self, ValidationReport> {
        let report = safety::validate(&config.initial, &config.envelope);
        if report.is_reject() {
            return Err(report);
        }
        Ok(Self {
            renderer: LiveRenderer::new(config.sample_rate_hz),
            run_state: RunState::Idle,
            stimulus: config.initial.clone(),
            last_validation: report,
            last_error: None,
            samples_emitted: 0,
            seq: 0,
            history: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn run_state(&self) -> RunState {
        self.run_state
    }

    pub fn stimulus(&self) -> &Stimulus {
        &self.stimulus
    }

    pub fn samples_emitted(&self) -> u64 {
        self.samples_emitted
    }

    pub fn history(&self) -> &[Event] {
        &self.history
    }

    pub fn snapshot(&self) -> SessionState {
        SessionState {
            run_state: self.run_state,
            params: LiveUpdate::from_stimulus(&self.stimulus),
            envelope: self.config.envelope.clone(),
            uptime_s: self.samples_emitted as f64 / f64::from(self.config.sample_rate_hz),
            samples_emitted: self.samples_emitted,
            last_validation: self.last_validation.clone(),
            last_error: self.last_error.clone(),
        }
    }

    /// Parses and handles one frame; always returns exactly one reply.
    pub fn handle_line(&mut self, line: &str, role: Role) -> Reply {
        match Request::parse(line.trim(), self.samples_emitted) {
            Ok(req) => self.handle(&req, role),
            Err(reply) => reply,
        }
    }

    pub fn handle(&mut self, req: &Request, role: Role) -> Reply {
        let at = self.samples_emitted;
        let id = req.id.clone();
        let fail = |code, msg: String| Reply::error(id.clone(), Some(req.kind), at, code, msg);
        if role == Role::Observer && !req.kind.is_read_only() {
            return fail(
                ErrorCode::ReadOnly,
                "another client holds control; this connection is read-only".into(),
            );
        }
        let mut reply = Reply::ok(req.id.clone(), req.kind, at);
        match req.kind {
            Kind::Hello => {
                reply.hello = Some(HelloInfo {
                    protocol: PROTOCOL_VERSION,
                    role,
                    sample_rate_hz: self.config.sample_rate_hz,
                    chunk_size: self.config.chunk_size,
                    mode: self.config.mode,
                    envelope: self.config.envelope.clone(),
                });
            }
            Kind::Status => {}
            Kind::SetParams => {
                if self.run_state == RunState::StoppedEmergency {
                    return fail(ErrorCode::Latched, "emergency stop is latched; send rearm first".into());
                }
                let update = req.params.clone().unwrap_or_default();
                let applied = match apply_update(&self.stimulus, &update, &self.config.envelope, self.config.mode) {
                    Ok(a) => a,
                    Err(report) => {
                        let mut r = fail(
                            ErrorCode::Refused,
                            format!("rejected by the safety envelope ({})", report.verdict),
                        );
                        r.report = Some(report);
                        return r;
                    }
                };
                let scheduled = if self.run_state == RunState::Running {
                    self.renderer.schedule(Some(&applied.stimulus))
                } else {
                    Voice::new(&applied.stimulus, self.config.sample_rate_hz).map(|_| ())
                };
                if let Err(e) = scheduled {
                    return fail(ErrorCode::Synthesis, e.to_string());
                }
                if self.run_state == RunState::Running {
                    self.record(at, Change::Set(applied.stimulus.clone()));
                }
                self.stimulus = applied.stimulus;
                self.last_validation = applied.report.clone();
                reply.applied = Some(LiveUpdate::from_stimulus(&self.stimulus));
                reply.report = Some(applied.report);
                reply.clamped_from = applied.clamped_from;
            }
            Kind::Start => match self.run_state {
                RunState::StoppedEmergency => {
                    return fail(ErrorCode::Latched, "emergency stop is latched; send rearm first".into());
                }
                RunState::Running => {
                    reply.applied = Some(LiveUpdate::from_stimulus(&self.stimulus));
                }
                RunState::Idle => {
                    if let Err(e) = self.renderer.schedule(Some(&self.stimulus)) {
                        self.last_error = Some(e.to_string());
                        return fail(ErrorCode::Synthesis, e.to_string());
                    }
                    self.record(at, Change::Set(self.stimulus.clone()));
                    self.run_state = RunState::Running;
                    self.last_error = None;
                    reply.applied = Some(LiveUpdate::from_stimulus(&self.stimulus));
                    reply.report = Some(self.last_validation.clone());
                }
            },
            Kind::Stop => {
                if self.run_state == RunState::Running {
                    // silence is always constructible
                    let _ = self.renderer.schedule(None);
                    self.record(at, Change::Silence);
                    self.run_state = RunState::Idle;
                }
            }
            Kind::EmergencyStop => {
                self.renderer.halt();
                self.record(at, Change::Halt);
                if self.run_state != RunState::StoppedEmergency {
                    log::warn!("emergency stop at sample {at}");
                }
                self.run_state = RunState::StoppedEmergency;
            }
            Kind::Rearm => {
                if self.run_state == RunState::StoppedEmergency {
                    self.run_state = RunState::Idle;
                }
            }
        }
        reply.state = Some(self.snapshot());
        reply
    }

    fn record(&mut self, at_sample: u64, change: Change) {
        if self.config.record_history {
            self.history.push(Event { at_sample, change });
        }
    }

    /// Renders the next chunk of the stream. Silence is streamed while idle.
    pub fn next_chunk(&mut self) -> Chunk {
        let mut samples = vec![0.0; self.config.chunk_size];
        self.renderer.render(&mut samples);
        self.samples_emitted += samples.len() as u64;
        let chunk = Chunk { seq: self.seq, samples };
        self.seq += 1;
        chunk
    }
}

/// Reply helper for frames that are handled outside a core, e.g. when the
/// render loop has already finished.
pub fn shutdown_reply(line: &str) -> Reply {
    let id = serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("id").cloned())
        .filter(|id| id.is_number() || id.is_string())
        .unwrap_or(Value::Null);
    Reply::error(id, None, 0, ErrorCode::Synthesis, "service is shutting down")
}

//! Wire format: one JSON object per line in each direction.
//!
//! ```text
//! > {"id":1,"kind":"set_params","params":{"shape":"square","frequency_hz":160,"pulse_width_us":120}}
//! < {"id":1,"ok":true,"kind":"set_params","at_sample":0,"applied":{...},"report":{...},"state":{...}}
//! ```
//!
//! Every request gets exactly one reply carrying its `id`. A line that is
//! not an object with an `id` gets an error reply with `"id":null`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::program::live::{LiveUpdate, UpdateMode};
use crate::safety::{SafetyEnvelope, ValidationReport};
use crate::waveform::{Shape, SignalParams, Stimulus};

use super::session::SessionState;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    SetParams,
    Start,
    Stop,
    EmergencyStop,
    Rearm,
    Status,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Hello,
        Kind::SetParams,
        Kind::Start,
        Kind::Stop,
        Kind::EmergencyStop,
        Kind::Rearm,
        Kind::Status,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::SetParams => "set_params",
            Kind::Start => "start",
            Kind::Stop => "stop",
            Kind::EmergencyStop => "emergency_stop",
            Kind::Rearm => "rearm",
            Kind::Status => "status",
        }
    }

    /// Kinds an observer (non-controller) connection may send.
    pub fn is_read_only(self) -> bool {
        matches!(self, Kind::Hello | Kind::Status)
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown kind `{s}`"))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Value,
    pub kind: Kind,
    pub params: Option<LiveUpdate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadFrame,
    UnknownKind,
    BadParams,
    ReadOnly,
    Refused,
    Latched,
    Synthesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloInfo {
    pub protocol: u32,
    pub role: Role,
    pub sample_rate_hz: u32,
    pub chunk_size: usize,
    pub mode: UpdateMode,
    pub envelope: SafetyEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    /// Stream position when the request was handled.
    pub at_sample: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hello: Option<HelloInfo>,
    /// Parameters in force after the request (set_params, start).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied: Option<LiveUpdate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
    /// Report for the requested values when they were clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped_from: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SessionState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Reply {
    pub fn ok(id: Value, kind: Kind, at_sample: u64) -> Self {
        Self {
            id,
            ok: true,
            kind: Some(kind),
            at_sample,
            hello: None,
            applied: None,
            report: None,
            clamped_from: None,
            state: None,
            error: None,
        }
    }

    pub fn error(id: Value, kind: Option<Kind>, at_sample: u64, code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            kind,
            error: Some(ErrorBody {
                code,
                message: message.into(),
            }),
            ..Self::ok(id, Kind::Status, at_sample)
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("reply serializes");
        s.push('\n');
        s
    }
}

fn valid_id(id: &Value) -> bool {
    id.is_number() || id.is_string()
}

impl Request {
    /// Parses one frame. On failure the error reply is returned instead,
    /// with the request's id when one could be read.
    #[allow(clippy::result_large_err)]
    pub fn parse(line: &str, at_sample: u64) -> Result<Self, Reply> {
        let bad = |id: Value, code, msg: String| Reply::error(id, None, at_sample, code, msg);
        let value: Value =
            serde_json::from_str(line).map_err(|e| bad(Value::Null, ErrorCode::BadFrame, format!("not JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(bad(
                Value::Null,
                ErrorCode::BadFrame,
                "frame must be a JSON object".into(),
            ));
        };
        let id = obj.remove("id").unwrap_or(Value::Null);
        if !valid_id(&id) {
            return Err(bad(
                Value::Null,
                ErrorCode::BadFrame,
                "`id` must be a number or string".into(),
            ));
        }
        let kind = match obj.remove("kind") {
            Some(Value::String(k)) => k
                .parse::<Kind>()
                .map_err(|e| bad(id.clone(), ErrorCode::UnknownKind, e))?,
            _ => return Err(bad(id, ErrorCode::BadFrame, "`kind` must be a string".into())),
        };
        let params =
            match obj.remove("params") {
                None | Some(Value::Null) => None,
                Some(p) => Some(serde_json::from_value::<LiveUpdate>(p).map_err(|e| {
                    Reply::error(id.clone(), Some(kind), at_sample, ErrorCode::BadParams, e.to_string())
                })?),
            };
        if kind == Kind::SetParams && params.is_none() {
            return Err(Reply::error(
                id,
                Some(kind),
                at_sample,
                ErrorCode::BadParams,
                "set_params needs `params`",
            ));
        }
        Ok(Self { id, kind, params })
    }

    pub fn to_line(&self) -> String {
        let mut obj = serde_json::json!({ "id": self.id, "kind": self.kind });
        if let Some(p) = &self.params {
            obj["params"] = serde_json::to_value(p).expect("params serialize");
        }
        let mut s = obj.to_string();
        s.push('\n');
        s
    }
}

impl LiveUpdate {
    /// Every field of `stimulus`, in update form.
    pub fn from_stimulus(stimulus: &Stimulus) -> Self {
        let mut u = LiveUpdate {
            shape: Some(stimulus.spec.shape),
            amplitude: Some(stimulus.params.amplitude()),
            gain_db: Some(stimulus.params.gain_db()),
            ..Default::default()
        };
        match stimulus.params {
            SignalParams::Russian(p) => {
                u.carrier_hz = Some(p.carrier_hz);
                u.burst_ms = Some(p.burst_ms);
                u.interburst_ms = Some(p.interburst_ms);
            }
            SignalParams::Train(p) => {
                u.polarity = Some(stimulus.spec.polarity);
                u.interphase_gap_us = Some(stimulus.spec.interphase_gap_us);
                u.frequency_hz = Some(p.frequency_hz);
                u.pulse_width_us = Some(p.pulse_width_us);
                if stimulus.spec.shape == Shape::Arbitrary {
                    u.table = stimulus.spec.table.clone();
                }
            }
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{PulseTrainParams, RussianParams, WaveformSpec};

    #[test]
    fn parses_set_params() {
        let r = Request::parse(
            r#"{"id":7,"kind":"set_params","params":{"frequency_hz":160,"pulse_width_us":120}}"#,
            0,
        )
        .unwrap();
        assert_eq!(r.id, Value::from(7));
        assert_eq!(r.kind, Kind::SetParams);
        assert_eq!(r.params.unwrap().frequency_hz, Some(160.0));
    }

    #[test]
    fn bad_frames_get_null_id() {
        for line in [
            "",
            "nonsense",
            "[1,2]",
            r#"{"kind":"status"}"#,
            r#"{"id":null,"kind":"status"}"#,
        ] {
            let e = Request::parse(line, 5).unwrap_err();
            assert_eq!(e.id, Value::Null, "{line}");
            assert!(!e.ok);
            assert_eq!(e.error.unwrap().code, ErrorCode::BadFrame);
            assert_eq!(e.at_sample, 5);
        }
    }

    #[test]
    fn unknown_kind_keeps_id() {
        let e = Request::parse(r#"{"id":"a","kind":"explode"}"#, 0).unwrap_err();
        assert_eq!(e.id, Value::from("a"));
        assert_eq!(e.error.unwrap().code, ErrorCode::UnknownKind);
    }

    #[test]
    fn params_are_checked() {
        let e = Request::parse(r#"{"id":1,"kind":"set_params","params":{"voltage":9}}"#, 0).unwrap_err();
        assert_eq!(e.error.unwrap().code, ErrorCode::BadParams);
        let e = Request::parse(r#"{"id":1,"kind":"set_params"}"#, 0).unwrap_err();
        assert_eq!(e.error.unwrap().code, ErrorCode::BadParams);
    }

    #[test]
    fn request_line_round_trip() {
        let req = Request {
            id: Value::from(3),
            kind: Kind::SetParams,
            params: Some(LiveUpdate {
                amplitude: Some(0.5),
                ..Default::default()
            }),
        };
        let line = req.to_line();
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        assert_eq!(Request::parse(&line, 0).unwrap(), req);
    }

    #[test]
    fn full_update_reproduces_stimulus() {
        let stimuli = [
            Stimulus::train(
                WaveformSpec::biphasic(Shape::Triangle).with_gap_us(40.0),
                PulseTrainParams::new(33.0, 250.0, 0.6).with_gain_db(-1.5),
            ),
            Stimulus::russian(RussianParams {
                burst_ms: 2.0,
                interburst_ms: 4.25,
                ..Default::default()
            }),
            Stimulus::train(
                WaveformSpec::arbitrary(vec![0.0, 1.0, -1.0]),
                PulseTrainParams::new(12.0, 0.0, 1.0),
            ),
        ];
        let other = Stimulus::russian(RussianParams::default());
        for s in &stimuli {
            assert_eq!(&LiveUpdate::from_stimulus(s).merge(&other), s);
            assert_eq!(&LiveUpdate::from_stimulus(s).merge(&stimuli[0]), s);
        }
    }
}

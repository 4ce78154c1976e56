use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::Duration;

use emsynth::audio::wav::decode_wav;
use emsynth::program::live::{render_history, Change, Event, LiveUpdate};
use emsynth::service::{Reply, RunState};
use emsynth::waveform::{RussianParams, Stimulus};

fn emsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emsynth"))
        .args(args)
        .output()
        .expect("run emsynth")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn reference_settings_render_passes_analyzer() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out.wav");
    let r = emsynth(&[
        "render",
        "--shape",
        "square",
        "--polarity",
        "biphasic",
        "--freq",
        "160",
        "--width",
        "120",
        "--dur",
        "1",
        "-o",
        &out,
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout(&r).contains("verdict: pass_with_warnings"));

    let a = emsynth(&["analyze", &out]);
    assert_eq!(a.status.code(), Some(0));
    let report = stdout(&a);
    let f: f64 = field(&report, "detected_frequency_hz").parse().unwrap();
    assert!((f - 160.0).abs() <= 1.6);
    assert_eq!(field(&report, "detected_pulse_width_samples"), "23");
    assert!(field(&report, "dc_offset").parse::<f64>().unwrap().abs() <= 1e-4);
}

#[test]
fn out_of_envelope_render_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out.wav");
    let r = emsynth(&[
        "render", "--shape", "square", "--freq", "1000", "--width", "100", "--dur", "1", "-o", &out,
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stdout(&r).contains("verdict: reject"));
    assert!(!Path::new(&out).exists());
}

#[test]
fn clamped_render_runs_at_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out.wav");
    let r = emsynth(&[
        "render", "--shape", "square", "--freq", "1000", "--width", "100", "--dur", "1", "--clamp", "-o", &out,
    ]);
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stderr).contains("warning: clamped"));
    let a = stdout(&emsynth(&["analyze", &out]));
    let f: f64 = field(&a, "detected_frequency_hz").parse().unwrap();
    assert!((f - 500.0).abs() <= 5.0, "{f}");
}

#[test]
fn silence_and_russian_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let silent = path(dir.path(), "silence.wav");
    let r = emsynth(&[
        "render", "--shape", "sine", "--freq", "50", "--width", "200", "--amp", "0", "--dur", "0.5", "-o", &silent,
    ]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(field(&stdout(&emsynth(&["analyze", &silent])), "pulse_count"), "0");

    let russian = path(dir.path(), "russian.wav");
    let r = emsynth(&[
        "render", "--shape", "russian", "--dur", "1", "--rate", "48000", "--format", "pcm16", "-o", &russian,
    ]);
    assert_eq!(r.status.code(), Some(0));
    let csv = stdout(&emsynth(&["analyze", "--csv", &russian]));
    let lines: Vec<&str> = csv.lines().collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert!((col("dominant_spectral_hz").parse::<f64>().unwrap() - 2500.0).abs() <= 1.0);
    assert_eq!(col("pulse_count"), "50");
}

#[test]
fn analyze_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        emsynth(&["analyze", &path(dir.path(), "missing.wav")]).status.code(),
        Some(4)
    );
    let junk = path(dir.path(), "junk.wav");
    std::fs::write(&junk, b"not a wav file at all").unwrap();
    assert_eq!(emsynth(&["analyze", &junk]).status.code(), Some(3));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = path(dir.path(), "good.toml");
    std::fs::write(
        &good,
        "version = 1\n[[segments]]\nshape = \"square\"\npolarity = \"biphasic\"\nfrequency_hz = 100\npulse_width_us = 200\nduration_s = 10\n",
    )
    .unwrap();
    let r = emsynth(&["validate", &good]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).contains("verdict: pass"));

    let wide = path(dir.path(), "wide.toml");
    std::fs::write(&wide, std::fs::read_to_string(&good).unwrap().replace("= 200", "= 900")).unwrap();
    assert_eq!(emsynth(&["validate", &wide]).status.code(), Some(2));
    assert_eq!(emsynth(&["validate", "--clamp", &wide]).status.code(), Some(0));

    let broken = path(dir.path(), "broken.toml");
    std::fs::write(&broken, "version = 1\n[[segments]\n").unwrap();
    let r = emsynth(&["validate", &broken]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 2"));

    let empty = path(dir.path(), "empty.toml");
    std::fs::write(&empty, "version = 1\n").unwrap();
    let r = emsynth(&["validate", &empty]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("program has no segments"));
}

#[test]
fn program_render_and_envelope_file() {
    let dir = tempfile::tempdir().unwrap();
    let program = path(dir.path(), "p.toml");
    std::fs::write(
        &program,
        "version = 1\n[[segments]]\nshape = \"triangle\"\nfrequency_hz = 40\npulse_width_us = 300\nduration_s = 0.5\nramp_in_s = 0.25\n",
    )
    .unwrap();
    let out = path(dir.path(), "p.wav");
    assert_eq!(
        emsynth(&["render", "--program", &program, "--rate", "48000", "-o", &out])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(field(&stdout(&emsynth(&["analyze", &out])), "samples"), "24000");

    // a tighter envelope file turns the same program into a reject
    let env = path(dir.path(), "env.toml");
    std::fs::write(&env, "width_hard = [30, 250]\n").unwrap();
    let r = emsynth(&["render", "--program", &program, "--envelope", &env, "-o", &out]);
    assert_eq!(r.status.code(), Some(2));
    std::fs::write(&env, "width_hard = [30, \n").unwrap();
    assert_eq!(
        emsynth(&["validate", "--envelope", &env, &program]).status.code(),
        Some(3)
    );
}

#[test]
fn sd_curve_has_chronaxie_row() {
    let r = emsynth(&["sd-curve", "--rheobase", "5", "--chronaxie", "200"]);
    assert_eq!(r.status.code(), Some(0));
    let out = stdout(&r);
    assert_eq!(out.lines().next(), Some("duration_us,threshold"));
    assert!(out.lines().any(|l| l == "200,10"), "{out}");
}

#[test]
fn sd_curve_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "points.csv");
    // exact samples of rheobase 2, chronaxie 400
    std::fs::write(&data, "duration_us,threshold\n100,10\n200,6\n400,4\n800,3\n").unwrap();
    let r = emsynth(&[
        "sd-curve", "--fit", &data, "--from", "400", "--to", "400", "--points", "2",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rheobase 2"));
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(emsynth(&["render", "--bogus"]).status.code(), Some(3));
    assert_eq!(
        emsynth(&["render", "--freq", "10", "-o", "x.wav", "--dur", "1"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(emsynth(&["serve", "--bind", "0.0.0.0:0"]).status.code(), Some(3));
    assert_eq!(
        emsynth(&["serve", "--sink", "device", "--bind", "127.0.0.1:0"])
            .status
            .code(),
        Some(4)
    );
}

fn send(writer: &mut TcpStream, reader: &mut BufReader<TcpStream>, line: &str) -> Reply {
    writer.write_all(line.as_bytes()).unwrap();
    writer.write_all(b"\n").unwrap();
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    serde_json::from_str(&reply).unwrap()
}

#[test]
fn served_capture_matches_offline_history() {
    let dir = tempfile::tempdir().unwrap();
    let capture = path(dir.path(), "capture.wav");
    let mut child = Command::new(env!("CARGO_BIN_EXE_emsynth"))
        .args([
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--sink",
            "file",
            "--out",
            &capture,
            "--rate",
            "48000",
            "--duration",
            "1",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect(&line).to_string();

    let mut w = TcpStream::connect(&addr).unwrap();
    let mut r = BufReader::new(w.try_clone().unwrap());
    let script = [
        r#"{"id":1,"kind":"hello"}"#,
        r#"{"id":2,"kind":"start"}"#,
        r#"{"id":3,"kind":"set_params","params":{"shape":"square","polarity":"biphasic","frequency_hz":160,"pulse_width_us":120}}"#,
        r#"{"id":4,"kind":"set_params","params":{"shape":"russian","amplitude":0.5}}"#,
        r#"{"id":5,"kind":"stop"}"#,
    ];
    let mut events = Vec::new();
    let base = Stimulus::russian(RussianParams::default());
    for (i, msg) in script.iter().enumerate() {
        let reply = send(&mut w, &mut r, msg);
        assert!(reply.ok, "{reply:?}");
        assert_eq!(reply.id, serde_json::Value::from(i as u64 + 1));
        let state = reply.state.unwrap();
        let change = match (i, reply.applied) {
            (4, _) => Some(Change::Silence),
            (_, Some(applied)) if state.run_state == RunState::Running => {
                Some(Change::Set(LiveUpdate::merge(&applied, &base)))
            }
            _ => None,
        };
        if let Some(change) = change {
            events.push(Event {
                at_sample: reply.at_sample,
                change,
            });
        }
        thread::sleep(Duration::from_millis(120));
    }
    drop(w);
    let mut rest = String::new();
    let _ = std::io::Read::read_to_string(&mut stderr, &mut rest);
    assert!(child.wait().unwrap().success(), "{rest}");
    assert_eq!(events.len(), 4);

    let (captured, _) = decode_wav(&std::fs::read(&capture).unwrap()).unwrap();
    assert!(captured.len() >= 48_000);
    let offline = render_history(&events, captured.len(), 48_000).unwrap();
    let expected: Vec<f64> = offline.samples().iter().map(|&v| f64::from(v as f32)).collect();
    assert_eq!(captured.samples(), &expected[..]);
    // the stream actually carried signal
    assert!(captured.peak() > 0.4);
}

//! Audio sinks: where streamed chunks end up.
//!
//! A sink takes chunks from exactly one producer, in order. Every chunk
//! carries a sequence number and a gap or repeat in the sequence is a
//! contract violation. [`QueuedSink`] puts a bounded queue and a
//! consumer thread, paced like a sound card, in front of any other sink: a
//! full queue blocks the producer and an empty queue at a deadline is an
//! underrun event.

use std::fs::File;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wav::WavFormat;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("audio device unavailable: {0}")]
    DeviceUnavailable(String),
    #[error("chunk {got} submitted where chunk {expected} was due (single-producer rule)")]
    ContractViolation { expected: u64, got: u64 },
    #[error("sink already closed")]
    Closed,
    #[error("sink I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub seq: u64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SinkStats {
    pub chunks: u64,
    pub samples: u64,
    pub underruns: u64,
}

pub trait AudioSink: Send {
    fn write(&mut self, chunk: Chunk) -> Result<(), SinkError>;

    fn stats(&self) -> SinkStats;

    /// Flushes and closes. Further writes fail.
    fn finish(&mut self) -> Result<SinkStats, SinkError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SinkKind {
    Null,
    File(PathBuf),
    /// Raw little-endian f32 on stdout, for piping into a player.
    Stdout,
    Device(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkConfig {
    pub kind: SinkKind,
    pub format: WavFormat,
    /// Consume at wall-clock pace through a bounded queue.
    pub realtime: bool,
    pub queue_chunks: usize,
}

impl SinkConfig {
    pub fn new(kind: SinkKind, format: WavFormat) -> Self {
        Self {
            kind,
            format,
            realtime: false,
            queue_chunks: 8,
        }
    }
}

pub fn open_sink(config: &SinkConfig) -> Result<Box<dyn AudioSink>, SinkError> {
    let inner: Box<dyn AudioSink> = match &config.kind {
        SinkKind::Null => Box::new(NullSink::default()),
        SinkKind::File(path) => Box::new(FileSink::create(path.clone(), config.format)?),
        SinkKind::Stdout => Box::new(WriterSink::new(io::stdout())),
        SinkKind::Device(name) => {
            return Err(SinkError::DeviceUnavailable(format!(
                "no device backend is built in (requested `{name}`); pipe the stdout sink into a player instead"
            )))
        }
    };
    if config.realtime {
        Ok(Box::new(QueuedSink::new(
            inner,
            config.format.sample_rate_hz(),
            config.queue_chunks,
        )))
    } else {
        Ok(inner)
    }
}

#[derive(Debug, Default)]
struct Sequencer {
    next: u64,
    closed: bool,
}

impl Sequencer {
    fn admit(&mut self, chunk: &Chunk) -> Result<(), SinkError> {
        if self.closed {
            return Err(SinkError::Closed);
        }
        if chunk.seq != self.next {
            return Err(SinkError::ContractViolation {
                expected: self.next,
                got: chunk.seq,
            });
        }
        self.next += 1;
        Ok(())
    }
}

/// Discards samples and counts them.
#[derive(Debug, Default)]
pub struct NullSink {
    seq: Sequencer,
    stats: SinkStats,
}

impl AudioSink for NullSink {
    fn write(&mut self, chunk: Chunk) -> Result<(), SinkError> {
        self.seq.admit(&chunk)?;
        self.stats.chunks += 1;
        self.stats.samples += chunk.samples.len() as u64;
        Ok(())
    }

    fn stats(&self) -> SinkStats {
        self.stats
    }

    fn finish(&mut self) -> Result<SinkStats, SinkError> {
        self.seq.closed = true;
        Ok(self.stats)
    }
}

/// Appends to a WAV file. The header is rewritten after every chunk, so the
/// file is complete at all times and ends up byte-identical to encoding the
/// whole stream at once.
pub struct FileSink {
    file: BufWriter<File>,
    format: WavFormat,
    seq: Sequencer,
    stats: SinkStats,
    scratch: Vec<u8>,
}

impl FileSink {
    pub fn create(path: PathBuf, format: WavFormat) -> Result<Self, SinkError> {
        let mut file = BufWriter::new(File::create(&path)?);
        file.write_all(&format.header(0))?;
        file.flush()?;
        Ok(Self {
            file,
            format,
            seq: Sequencer::default(),
            stats: SinkStats::default(),
            scratch: Vec::new(),
        })
    }

    fn patch_header(&mut self) -> io::Result<()> {
        let header = self.format.header(self.stats.samples as usize);
        self.file.seek(SeekFrom::Start(0))?;
        self.file.write_all(&header)?;
        self.file.seek(SeekFrom::End(0))?;
        self.file.flush()
    }
}

impl AudioSink for FileSink {
    fn write(&mut self, chunk: Chunk) -> Result<(), SinkError> {
        self.seq.admit(&chunk)?;
        self.scratch.clear();
        self.format.encode_samples(&chunk.samples, &mut self.scratch);
        self.file.write_all(&self.scratch)?;
        self.stats.chunks += 1;
        self.stats.samples += chunk.samples.len() as u64;
        self.patch_header()?;
        Ok(())
    }

    fn stats(&self) -> SinkStats {
        self.stats
    }

    fn finish(&mut self) -> Result<SinkStats, SinkError> {
        if !self.seq.closed {
            self.seq.closed = true;
            self.patch_header()?;
        }
        Ok(self.stats)
    }
}

/// Raw little-endian f32 samples to any writer.
pub struct WriterSink<W: Write + Send> {
    out: W,
    seq: Sequencer,
    stats: SinkStats,
}

impl<W: Write + Send> WriterSink<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            seq: Sequencer::default(),
            stats: SinkStats::default(),
        }
    }
}

impl<W: Write + Send> AudioSink for WriterSink<W> {
    fn write(&mut self, chunk: Chunk) -> Result<(), SinkError> {
        self.seq.admit(&chunk)?;
        let bytes: Vec<u8> = chunk.samples.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        self.out.write_all(&bytes)?;
        self.out.flush()?;
        self.stats.chunks += 1;
        self.stats.samples += chunk.samples.len() as u64;
        Ok(())
    }

    fn stats(&self) -> SinkStats {
        self.stats
    }

    fn finish(&mut self) -> Result<SinkStats, SinkError> {
        self.seq.closed = true;
        self.out.flush()?;
        Ok(self.stats)
    }
}

struct Shared {
    stats: SinkStats,
    error: Option<SinkError>,
}

/// Bounded queue in front of another sink, drained at the sample rate by a
/// consumer thread.
pub struct QueuedSink {
    tx: Option<SyncSender<Chunk>>,
    shared: Arc<Mutex<Shared>>,
    consumer: Option<JoinHandle<Box<dyn AudioSink>>>,
    seq: Sequencer,
}

impl QueuedSink {
    pub fn new(inner: Box<dyn AudioSink>, sample_rate_hz: u32, queue_chunks: usize) -> Self {
        let (tx, rx) = mpsc::sync_channel::<Chunk>(queue_chunks.max(1));
        let shared = Arc::new(Mutex::new(Shared {
            stats: SinkStats::default(),
            error: None,
        }));
        let consumer_shared = Arc::clone(&shared);
        let consumer = std::thread::Builder::new()
            .name("sink-consumer".into())
            .spawn(move || {
                let mut inner = inner;
                let rate = f64::from(sample_rate_hz);
                // the clock starts with the first chunk
                let mut due: Option<Instant> = None;
                let mut last_len = 0usize;
                loop {
                    let received = match due {
                        None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                        Some(at) => {
                            let grace = Duration::from_secs_f64(last_len as f64 / rate);
                            rx.recv_timeout(at.saturating_duration_since(Instant::now()) + grace)
                        }
                    };
                    match received {
                        Ok(chunk) => {
                            let len = chunk.samples.len();
                            let result = inner.write(chunk);
                            let mut s = consumer_shared.lock().unwrap();
                            match result {
                                Ok(()) => {
                                    s.stats.chunks += 1;
                                    s.stats.samples += len as u64;
                                }
                                Err(e) => s.error = Some(e),
                            }
                            drop(s);
                            let play = Duration::from_secs_f64(len as f64 / rate);
                            let next = due.map_or_else(Instant::now, |d| d.max(Instant::now() - play)) + play;
                            due = Some(next);
                            last_len = len;
                            std::thread::sleep(next.saturating_duration_since(Instant::now()));
                        }
                        Err(RecvTimeoutError::Timeout) => {
                            consumer_shared.lock().unwrap().stats.underruns += 1;
                            log::warn!("sink underrun: no chunk ready when the device needed one");
                            due = None;
                        }
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
                inner
            })
            .expect("spawn sink consumer");
        Self {
            tx: Some(tx),
            shared,
            consumer: Some(consumer),
            seq: Sequencer::default(),
        }
    }
}

impl AudioSink for QueuedSink {
    fn write(&mut self, chunk: Chunk) -> Result<(), SinkError> {
        self.seq.admit(&chunk)?;
        if let Some(e) = self.shared.lock().unwrap().error.take() {
            return Err(e);
        }
        let tx = self.tx.as_ref().ok_or(SinkError::Closed)?;
        tx.send(chunk).map_err(|_| SinkError::Closed)
    }

    fn stats(&self) -> SinkStats {
        self.shared.lock().unwrap().stats
    }

    fn finish(&mut self) -> Result<SinkStats, SinkError> {
        self.seq.closed = true;
        self.tx = None;
        if let Some(handle) = self.consumer.take() {
            let mut inner = handle.join().map_err(|_| SinkError::Closed)?;
            inner.finish()?;
        }
        if let Some(e) = self.shared.lock().unwrap().error.take() {
            return Err(e);
        }
        Ok(self.stats())
    }
}

impl Drop for QueuedSink {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

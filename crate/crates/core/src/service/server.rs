//! TCP front end and render loop.
//!
//! Connection threads turn lines into requests on one ordered queue; the
//! render loop owns the [`ServiceCore`], drains the queue between chunks and
//! answers each request on the connection's reply channel. The first
//! connection to arrive is the controller; others are observers until it
//! disconnects.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::audio::sink::{AudioSink, SinkError, SinkStats};

use super::protocol::{Reply, Role};
use super::session::{shutdown_reply, ServiceCore};

/// One request line on its way to the render loop.
pub struct Envelope {
    pub line: String,
    pub role: Role,
    pub reply: Sender<Reply>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServeLimits {
    /// Stop once this many samples have been emitted.
    pub max_samples: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServeSummary {
    pub samples_emitted: u64,
    pub requests: u64,
    pub sink: SinkStats,
}

/// Renders chunks into `sink` until the limit is reached, `stop` is set,
/// or the request channel closes; requests are drained before each chunk.
pub fn stream_loop(
    core: &mut ServiceCore,
    sink: &mut dyn AudioSink,
    requests: &Receiver<Envelope>,
    stop: &AtomicBool,
    limits: ServeLimits,
) -> Result<ServeSummary, SinkError> {
    let mut handled = 0;
    loop {
        while let Ok(env) = requests.try_recv() {
            let reply = core.handle_line(&env.line, env.role);
            handled += 1;
            // a client that hung up does not need its reply
            let _ = env.reply.send(reply);
        }
        if stop.load(Ordering::Relaxed) || limits.max_samples.is_some_and(|m| core.samples_emitted() >= m) {
            break;
        }
        sink.write(core.next_chunk())?;
    }
    // answer anything that raced the shutdown
    while let Ok(env) = requests.try_recv() {
        let _ = env.reply.send(shutdown_reply(&env.line));
    }
    Ok(ServeSummary {
        samples_emitted: core.samples_emitted(),
        requests: handled,
        sink: sink.finish()?,
    })
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    render: Option<JoinHandle<Result<ServeSummary, SinkError>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub fn is_finished(&self) -> bool {
        self.render.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Waits for the render loop to end (limit reached or shutdown).
    pub fn wait(mut self) -> Result<ServeSummary, SinkError> {
        let result = self
            .render
            .take()
            .expect("render thread")
            .join()
            .unwrap_or(Err(SinkError::Closed));
        self.stop.store(true, Ordering::Relaxed);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Binds `bind` and starts the acceptor and render threads.
pub fn spawn(
    core: ServiceCore,
    mut sink: Box<dyn AudioSink>,
    bind: SocketAddr,
    limits: ServeLimits,
) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Envelope>();

    let render_stop = Arc::clone(&stop);
    let render = thread::Builder::new().name("render".into()).spawn(move || {
        let mut core = core;
        let result = stream_loop(&mut core, sink.as_mut(), &rx, &render_stop, limits);
        render_stop.store(true, Ordering::Relaxed);
        result
    })?;

    let accept_stop = Arc::clone(&stop);
    let acceptor = thread::Builder::new()
        .name("accept".into())
        .spawn(move || accept_loop(listener, tx, &accept_stop))?;

    Ok(ServerHandle {
        addr,
        stop,
        render: Some(render),
        acceptor: Some(acceptor),
    })
}

/// Runs a server to completion on the calling thread's behalf.
pub fn serve(
    core: ServiceCore,
    sink: Box<dyn AudioSink>,
    bind: SocketAddr,
    limits: ServeLimits,
) -> Result<ServeSummary, SinkError> {
    let handle = spawn(core, sink, bind, limits)?;
    log::info!("listening on {}", handle.local_addr());
    handle.wait()
}

fn accept_loop(listener: TcpListener, requests: Sender<Envelope>, stop: &AtomicBool) {
    // id of the connection holding control, 0 when free
    let controller = Arc::new(Mutex::new(0u64));
    let next_id = AtomicU64::new(1);
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                let role = {
                    let mut c = controller.lock().unwrap();
                    if *c == 0 {
                        *c = id;
                        Role::Controller
                    } else {
                        Role::Observer
                    }
                };
                log::info!("connection from {peer} as {role:?}");
                let requests = requests.clone();
                let controller = Arc::clone(&controller);
                let _ = thread::Builder::new().name(format!("conn-{id}")).spawn(move || {
                    if let Err(e) = connection(stream, role, &requests) {
                        log::debug!("connection {peer}: {e}");
                    }
                    let mut c = controller.lock().unwrap();
                    if *c == id {
                        *c = 0;
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn connection(stream: TcpStream, role: Role, requests: &Sender<Envelope>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let (reply_tx, reply_rx) = mpsc::channel();
        let reply = match requests.send(Envelope {
            line: line.clone(),
            role,
            reply: reply_tx,
        }) {
            Ok(()) => reply_rx.recv().unwrap_or_else(|_| shutdown_reply(&line)),
            Err(_) => shutdown_reply(&line),
        };
        writer.write_all(reply.to_line().as_bytes())?;
        writer.flush()?;
    }
}

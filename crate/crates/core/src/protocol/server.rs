use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::wire::{DetectReply, ErrorReply, InitRequest, SamplePush, WireMessage};
use crate::clock::now_ns;
use crate::cusum::CvCache;
use crate::detector::{DetectorKind, DetectorSpec, OnlineDetector};
use crate::error::Result;
use crate::metrics::ThreadGroup;
use crate::series::Sample;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: String,
    pub max_sessions: usize,
    /// Critical-value cache file shared by all sessions.
    pub cv_cache: Option<PathBuf>,
    /// Caps how many samples are processed at once across all sessions,
    /// emulating a node with that many cores.
    pub compute_slots: Option<usize>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1:0".into(), max_sessions: 64, cv_cache: None, compute_slots: None }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(Option<&'a Slots>);

impl Slots {
    fn acquire(slots: Option<&Slots>) -> SlotGuard<'_> {
        if let Some(s) = slots {
            let mut free = s.free.lock().unwrap();
            while *free == 0 {
                free = s.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        SlotGuard(slots)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        if let Some(s) = self.0 {
            *s.free.lock().unwrap() += 1;
            s.cv.notify_one();
        }
    }
}

struct Shared {
    cache: CvCache,
    max_sessions: usize,
    active: AtomicUsize,
    slots: Option<Slots>,
    threads: Arc<ThreadGroup>,
    shutdown: AtomicBool,
    conns: Mutex<Vec<(TcpStream, JoinHandle<()>)>>,
    samples: AtomicU64,
}

impl Shared {
    fn try_open_session(&self) -> bool {
        self.active
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.max_sessions).then_some(n + 1))
            .is_ok()
    }
}

/// A running detection server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// CPU time consumed by the server's own threads so far.
    pub fn cpu_ns(&self) -> u64 {
        self.shared.threads.cpu_ns()
    }

    pub fn thread_group(&self) -> Arc<ThreadGroup> {
        Arc::clone(&self.shared.threads)
    }

    pub fn active_sessions(&self) -> usize {
        self.shared.active.load(Ordering::SeqCst)
    }

    pub fn samples_processed(&self) -> u64 {
        self.shared.samples.load(Ordering::Relaxed)
    }

    /// Blocks until the accept loop ends (never, unless shut down).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let conns = std::mem::take(&mut *self.shared.conns.lock().unwrap());
        for (stream, handle) in conns {
            let _ = stream.shutdown(Shutdown::Both);
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn serve(config: ServerConfig) -> Result<ServerHandle> {
    if config.max_sessions == 0 {
        return Err(crate::Error::Config("max_sessions must be at least 1".into()));
    }
    if config.compute_slots == Some(0) {
        return Err(crate::Error::Config("compute_slots must be at least 1".into()));
    }
    let cache = match &config.cv_cache {
        Some(p) => CvCache::open(p)?,
        None => CvCache::in_memory(),
    };
    let listener = TcpListener::bind(&config.bind)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        cache,
        max_sessions: config.max_sessions,
        active: AtomicUsize::new(0),
        slots: config.compute_slots.map(|n| Slots { free: Mutex::new(n), cv: Condvar::new() }),
        threads: Arc::default(),
        shutdown: AtomicBool::new(false),
        conns: Mutex::new(Vec::new()),
        samples: AtomicU64::new(0),
    });
    let accept_shared = Arc::clone(&shared);
    let accept = std::thread::Builder::new()
        .name("edgecpd-accept".into())
        .spawn(move || accept_loop(listener, accept_shared))?;
    log::info!("serving on {addr}");
    Ok(ServerHandle { addr, shared, accept: Some(accept) })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let Ok(clone) = stream.try_clone() else { continue };
        let conn_shared = Arc::clone(&shared);
        let spawned = std::thread::Builder::new()
            .name("edgecpd-conn".into())
            .spawn(move || {
                let _guard = conn_shared.threads.enter();
                if let Err(e) = handle_connection(stream, &conn_shared) {
                    log::debug!("connection ended: {e}");
                }
            });
        match spawned {
            Ok(handle) => {
                let mut conns = shared.conns.lock().unwrap();
                conns.retain(|(_, h)| !h.is_finished());
                conns.push((clone, handle));
            }
            Err(e) => log::warn!("cannot spawn connection thread: {e}"),
        }
    }
}

struct Session {
    detector: OnlineDetector,
    last_seq: Option<u64>,
}

struct Connection<'a> {
    shared: &'a Shared,
    sessions: HashMap<String, Session>,
}

impl Drop for Connection<'_> {
    fn drop(&mut self) {
        self.shared.active.fetch_sub(self.sessions.len(), Ordering::SeqCst);
    }
}

enum Action {
    Reply(WireMessage),
    Silent,
    Close(WireMessage),
}

fn error(session_id: Option<&str>, seq: Option<u64>, msg: impl Into<String>) -> WireMessage {
    WireMessage::Error(ErrorReply { session_id: session_id.map(str::to_string), seq, error: msg.into() })
}

impl Connection<'_> {
    fn init(&mut self, req: InitRequest) -> Action {
        let sid = req.session_id.as_str();
        let kind: DetectorKind = match req.detector.parse() {
            Ok(k) => k,
            Err(e) => return Action::Close(error(Some(sid), None, e.to_string())),
        };
        if self.sessions.contains_key(sid) {
            return Action::Reply(error(Some(sid), None, "session already initialized"));
        }
        let detector = match DetectorSpec::new(kind, req.params).build(&self.shared.cache) {
            Ok(d) => d,
            Err(e) => return Action::Reply(error(Some(sid), None, e.to_string())),
        };
        if !self.shared.try_open_session() {
            return Action::Reply(error(
                Some(sid),
                None,
                format!("session limit reached ({})", self.shared.max_sessions),
            ));
        }
        self.sessions.insert(req.session_id, Session { detector, last_seq: None });
        Action::Silent
    }

    fn sample(&mut self, req: SamplePush, recv_ns: u64) -> Action {
        let sid = req.session_id.as_str();
        let Some(session) = self.sessions.get_mut(sid) else {
            return Action::Reply(error(Some(sid), Some(req.seq), "unknown session"));
        };
        if session.last_seq.is_some_and(|s| req.seq <= s) {
            return Action::Reply(error(Some(sid), Some(req.seq), "seq not increasing"));
        }
        if !req.value.is_finite() {
            return Action::Reply(error(Some(sid), Some(req.seq), "non-finite value"));
        }
        session.last_seq = Some(req.seq);
        let slot = Slots::acquire(self.shared.slots.as_ref());
        let start = now_ns();
        let outcome = session.detector.push(Sample { seq: req.seq, value: req.value });
        let processing_ns = now_ns() - start;
        drop(slot);
        self.shared.samples.fetch_add(1, Ordering::Relaxed);
        match outcome {
            Ok(event) => Action::Reply(WireMessage::Reply(DetectReply {
                session_id: req.session_id,
                seq: req.seq,
                detected: event.is_some(),
                cp_index: event.map(|e| e.cp_estimate),
                server_recv_ns: recv_ns,
                server_send_ns: 0,
                processing_ns,
            })),
            Err(e) => Action::Reply(error(Some(sid), Some(req.seq), e.to_string())),
        }
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut conn = Connection { shared, sessions: HashMap::new() };
    let mut line = String::new();
    loop {
        line.clear();
        let n = match reader.read_line(&mut line) {
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                // Not UTF-8: skip to the next newline.
                let mut junk = Vec::new();
                reader.read_until(b'\n', &mut junk)?;
                send(&mut writer, error(None, None, "line is not valid UTF-8"))?;
                continue;
            }
            Err(e) => return Err(e),
        };
        if n == 0 || shared.shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        let recv_ns = now_ns();
        if line.trim().is_empty() {
            continue;
        }
        let action = match WireMessage::decode(&line) {
            Ok(WireMessage::Init(req)) => conn.init(req),
            Ok(WireMessage::Sample(req)) => conn.sample(req, recv_ns),
            Ok(other) => Action::Reply(error(None, None, format!("unexpected {} message", other.type_name()))),
            Err(e) => Action::Reply(error(None, None, e.to_string())),
        };
        match action {
            Action::Silent => {}
            Action::Reply(msg) => send(&mut writer, msg)?,
            Action::Close(msg) => {
                send(&mut writer, msg)?;
                // The accept loop holds a clone, so dropping ours is not enough.
                return writer.get_ref().shutdown(Shutdown::Both);
            }
        }
    }
}

fn send(writer: &mut BufWriter<TcpStream>, mut msg: WireMessage) -> std::io::Result<()> {
    if let WireMessage::Reply(r) = &mut msg {
        r.server_send_ns = now_ns();
    }
    let mut line = msg.encode();
    line.push('\n');
    writer.write_all(line.as_bytes())?;
    writer.flush()
}

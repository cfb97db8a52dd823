use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{InitRequest, SamplePush, WireMessage};
use crate::clock::{instant_at, now_ns};
use crate::detector::{DetectorKind, DetectorSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub target: String,
    pub session_id: String,
    pub detector: DetectorSpec,
    pub pacing_ms: f64,
    /// Defaults to ten pacing intervals, and never less than one second.
    pub reply_timeout: Option<Duration>,
    /// Stop sending once a detection arrives at or after this seq.
    pub stop_after_cp: Option<u64>,
}

impl ClientConfig {
    pub fn new(target: impl Into<String>, detector: DetectorSpec, pacing_ms: f64) -> Self {
        ClientConfig {
            target: target.into(),
            session_id: "s1".into(),
            detector,
            pacing_ms,
            reply_timeout: None,
            stop_after_cp: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        self.reply_timeout
            .unwrap_or_else(|| Duration::from_secs_f64((10.0 * self.pacing_ms / 1e3).max(1.0)))
    }
}

/// One pushed sample and what came back for it. Client timestamps use the
/// client clock; `server_*` and `processing_ns` use the server clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seq: u64,
    pub client_send_ns: u64,
    pub reply_recv_ns: Option<u64>,
    pub detected: bool,
    pub cp_index: Option<u64>,
    pub server_recv_ns: Option<u64>,
    pub server_send_ns: Option<u64>,
    pub processing_ns: Option<u64>,
    pub timed_out: bool,
    pub error: Option<String>,
}

impl SampleRecord {
    fn sent(seq: u64, client_send_ns: u64) -> Self {
        SampleRecord {
            seq,
            client_send_ns,
            reply_recv_ns: None,
            detected: false,
            cp_index: None,
            server_recv_ns: None,
            server_send_ns: None,
            processing_ns: None,
            timed_out: false,
            error: None,
        }
    }

    /// Reply receipt minus send, on the client clock.
    pub fn response_ns(&self) -> Option<u64> {
        self.reply_recv_ns.map(|r| r - self.client_send_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLog {
    pub session_id: String,
    pub detector: DetectorKind,
    pub pacing_ms: f64,
    pub records: Vec<SampleRecord>,
    /// Errors not tied to a sample, such as a rejected init.
    pub errors: Vec<String>,
    /// Connection lost or session refused before every reply arrived.
    pub incomplete: bool,
    pub early_stopped: bool,
}

impl ClientLog {
    pub fn record(&self, seq: u64) -> Option<&SampleRecord> {
        let idx = seq.checked_sub(1)? as usize;
        self.records.get(idx).filter(|r| r.seq == seq)
    }

    pub fn detections(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.detected)
    }

    pub fn timeouts(&self) -> usize {
        self.records.iter().filter(|r| r.timed_out).count()
    }

    /// Last send minus first send.
    pub fn send_duration_ns(&self) -> u64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.client_send_ns - a.client_send_ns,
            _ => 0,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "seq",
            "client_send_ns",
            "reply_recv_ns",
            "response_ns",
            "detected",
            "cp_index",
            "server_recv_ns",
            "server_send_ns",
            "processing_ns",
            "timed_out",
            "error",
        ])?;
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.seq.to_string(),
                r.client_send_ns.to_string(),
                opt(r.reply_recv_ns),
                opt(r.response_ns()),
                r.detected.to_string(),
                opt(r.cp_index),
                opt(r.server_recv_ns),
                opt(r.server_send_ns),
                opt(r.processing_ns),
                r.timed_out.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Incoming {
    Line(u64, Result<WireMessage>),
    Closed,
}

fn spawn_reader(stream: TcpStream) -> Result<Receiver<Incoming>> {
    let (tx, rx) = mpsc::channel();
    std::thread::Builder::new().name("edgecpd-client-rx".into()).spawn(move || {
        let mut reader = BufReader::new(stream);
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => {
                    let _ = tx.send(Incoming::Closed);
                    return;
                }
                Ok(_) => {
                    let at = now_ns();
                    if tx.send(Incoming::Line(at, WireMessage::decode(&line))).is_err() {
                        return;
                    }
                }
            }
        }
    })?;
    Ok(rx)
}

struct Run<'a> {
    config: &'a ClientConfig,
    log: ClientLog,
    closed: bool,
    pending: usize,
    timeout_ns: u64,
}

impl Run<'_> {
    fn absorb(&mut self, msg: Incoming) {
        let (at, msg) = match msg {
            Incoming::Closed => {
                self.closed = true;
                return;
            }
            Incoming::Line(at, msg) => (at, msg),
        };
        match msg {
            Ok(WireMessage::Reply(r)) if r.session_id == self.config.session_id => {
                let Some(rec) = r.seq.checked_sub(1).and_then(|i| self.log.records.get_mut(i as usize)) else {
                    self.log.errors.push(format!("reply for unsent seq {}", r.seq));
                    return;
                };
                if rec.reply_recv_ns.is_some() {
                    self.log.errors.push(format!("duplicate reply for seq {}", r.seq));
                    return;
                }
                rec.reply_recv_ns = Some(at);
                rec.detected = r.detected;
                rec.cp_index = r.cp_index;
                rec.server_recv_ns = Some(r.server_recv_ns);
                rec.server_send_ns = Some(r.server_send_ns);
                rec.processing_ns = Some(r.processing_ns);
                rec.timed_out = at - rec.client_send_ns > self.timeout_ns;
                self.pending -= 1;
                if r.detected && self.config.stop_after_cp.is_some_and(|cp| r.seq >= cp) {
                    self.log.early_stopped = true;
                }
            }
            Ok(WireMessage::Error(e)) => {
                let rec = e.seq.and_then(|s| s.checked_sub(1)).and_then(|i| self.log.records.get_mut(i as usize));
                match rec {
                    Some(rec) if rec.reply_recv_ns.is_none() => {
                        rec.reply_recv_ns = Some(at);
                        rec.error = Some(e.error);
                        self.pending -= 1;
                    }
                    _ => {
                        self.log.errors.push(e.error);
                        self.log.incomplete = true;
                    }
                }
            }
            Ok(other) => self.log.errors.push(format!("unexpected {} message", other.type_name())),
            Err(e) => self.log.errors.push(e.to_string()),
        }
    }

    fn absorb_until(&mut self, rx: &Receiver<Incoming>, deadline_ns: u64) {
        while !self.closed {
            let now = now_ns();
            if now >= deadline_ns {
                match rx.try_recv() {
                    Ok(m) => self.absorb(m),
                    Err(_) => return,
                }
                continue;
            }
            match rx.recv_timeout(Duration::from_nanos(deadline_ns - now)) {
                Ok(m) => self.absorb(m),
                Err(RecvTimeoutError::Timeout) => return,
                Err(RecvTimeoutError::Disconnected) => self.closed = true,
            }
        }
    }
}

/// Streams `values` as seq 1..=len on an absolute-deadline schedule and
/// records every reply. Only a failed connect is an error; later failures are
/// flagged in the log.
pub fn run_client(config: &ClientConfig, values: &[f64]) -> Result<ClientLog> {
    if !(config.pacing_ms >= 0.0 && config.pacing_ms.is_finite()) {
        return Err(Error::Config(format!("pacing {} ms must be non-negative", config.pacing_ms)));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("cannot send non-finite value {v}")));
    }
    let stream = TcpStream::connect(&config.target)?;
    stream.set_nodelay(true)?;
    let rx = spawn_reader(stream.try_clone()?)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut run = Run {
        config,
        log: ClientLog {
            session_id: config.session_id.clone(),
            detector: config.detector.kind,
            pacing_ms: config.pacing_ms,
            records: Vec::with_capacity(values.len()),
            errors: Vec::new(),
            incomplete: false,
            early_stopped: false,
        },
        closed: false,
        pending: 0,
        timeout_ns: config.timeout().as_nanos() as u64,
    };

    let init = WireMessage::Init(InitRequest {
        session_id: config.session_id.clone(),
        detector: config.detector.kind.as_str().into(),
        params: config.detector.params.clone(),
        expected_length: Some(values.len() as u64),
    });
    let mut write_line = |msg: &WireMessage| -> std::io::Result<()> {
        let mut line = msg.encode();
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()
    };
    if write_line(&init).is_err() {
        run.log.incomplete = true;
        return Ok(run.log);
    }

    let pacing_ns = (config.pacing_ms * 1e6).round() as u64;
    let start = now_ns();
    for (i, &value) in values.iter().enumerate() {
        let deadline = start + i as u64 * pacing_ns;
        run.absorb_until(&rx, deadline);
        if let Some(wait) = instant_at(deadline).checked_duration_since(std::time::Instant::now()) {
            std::thread::sleep(wait);
        }
        if run.closed || run.log.early_stopped || run.log.incomplete {
            break;
        }
        let seq = i as u64 + 1;
        let send_ns = now_ns();
        let msg = WireMessage::Sample(SamplePush {
            session_id: config.session_id.clone(),
            seq,
            value,
            client_send_ns: send_ns,
        });
        run.log.records.push(SampleRecord::sent(seq, send_ns));
        run.pending += 1;
        if write_line(&msg).is_err() {
            run.closed = true;
            break;
        }
    }

    // Outstanding replies get the timeout measured from the last send.
    let last_send = run.log.records.last().map_or(now_ns(), |r| r.client_send_ns);
    while run.pending > 0 && !run.closed {
        let before = run.pending;
        run.absorb_until(&rx, last_send + run.timeout_ns);
        if run.pending == before {
            break;
        }
    }
    drop(write_line);
    let _ = stream.shutdown(std::net::Shutdown::Both);
    for rec in run.log.records.iter_mut().filter(|r| r.reply_recv_ns.is_none()) {
        rec.timed_out = true;
    }
    if run.pending > 0 && run.closed {
        run.log.incomplete = true;
    }
    Ok(run.log)
}

//! Planner to supervisor message bus.
//!
//! Frames are a 4-byte big-endian length followed by canonical JSON (sorted
//! keys, floats printed with 17 significant digits). The same frame goes into
//! a UDP datagram unchanged. Datasets are JSON lines of
//! `{"kind", "offset_ns", "payload"}` records replayed against a [`Clock`].

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{Nanos, ObjectSet, Trajectory, Verdict};
use crate::timing::Clock;

pub const SCHEMA_VERSION: u32 = 1;
/// Largest frame accepted into a single UDP datagram.
pub const MAX_DATAGRAM_BYTES: usize = 60 * 1024;
pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("unsupported message kind {0:?}")]
    UnsupportedKind(String),
    #[error("schema version mismatch: expected {expected}, found {found:?}")]
    Version { expected: u32, found: Option<u64> },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("frame of {size} bytes exceeds the {limit} byte datagram limit")]
    Oversized { size: usize, limit: usize },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("sink closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Trajectory,
    Objects,
    Verdict,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Trajectory => "trajectory",
            Self::Objects => "objects",
            Self::Verdict => "verdict",
        }
    }

    pub fn parse(label: &str) -> Result<Self, TransportError> {
        match label {
            "trajectory" => Ok(Self::Trajectory),
            "objects" => Ok(Self::Objects),
            "verdict" => Ok(Self::Verdict),
            other => Err(TransportError::UnsupportedKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Trajectory(Trajectory),
    Objects(ObjectSet),
    Verdict(Verdict),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Trajectory(_) => MessageKind::Trajectory,
            Self::Objects(_) => MessageKind::Objects,
            Self::Verdict(_) => MessageKind::Verdict,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Self::Trajectory(t) => serde_json::to_value(t),
            Self::Objects(o) => serde_json::to_value(o),
            Self::Verdict(v) => serde_json::to_value(v),
        };
        v.expect("domain types always serialize")
    }

    fn from_value(kind: MessageKind, value: Value) -> Result<Self, TransportError> {
        let decode = |e: serde_json::Error| {
            TransportError::Decode(format!("{} payload: {e}", kind.as_str()))
        };
        Ok(match kind {
            MessageKind::Trajectory => {
                Self::Trajectory(serde_json::from_value(value).map_err(decode)?)
            }
            MessageKind::Objects => Self::Objects(serde_json::from_value(value).map_err(decode)?),
            MessageKind::Verdict => Self::Verdict(serde_json::from_value(value).map_err(decode)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub schema_version: u32,
    pub send_timestamp: Nanos,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(payload: Payload, send_timestamp: Nanos) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            send_timestamp,
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        match &self.payload {
            Payload::Trajectory(t) => Some(t),
            _ => None,
        }
    }
}

/// Serializes a JSON value with sorted object keys and 17-significant-digit
/// floats. Integers stay integers.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let f = n.as_f64().expect("json numbers are finite");
                out.push_str(&format!("{f:.16e}"));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escapes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string escapes"));
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}

fn message_value(msg: &WireMessage) -> Value {
    let mut map = Map::new();
    map.insert("kind".into(), Value::from(msg.kind().as_str()));
    map.insert("payload".into(), msg.payload.to_value());
    map.insert("schema_version".into(), Value::from(msg.schema_version));
    map.insert("send_timestamp".into(), Value::from(msg.send_timestamp));
    Value::Object(map)
}

/// Length-prefixed canonical frame.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = canonical_json(&message_value(msg));
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(body.as_bytes());
    frame
}

/// Decodes exactly one frame; trailing bytes are a framing error.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, TransportError> {
    let Some(prefix) = bytes.get(..4) else {
        return Err(TransportError::Framing(format!(
            "frame of {} bytes is shorter than the length prefix",
            bytes.len()
        )));
    };
    let declared = u32::from_be_bytes(prefix.try_into().expect("4 bytes")) as usize;
    let body = &bytes[4..];
    if body.len() < declared {
        return Err(TransportError::Framing(format!(
            "declared length {declared} exceeds the {} available bytes",
            body.len()
        )));
    }
    if body.len() > declared {
        return Err(TransportError::Framing(format!(
            "{} trailing bytes after a {declared} byte frame",
            body.len() - declared
        )));
    }
    let value: Value =
        serde_json::from_slice(body).map_err(|e| TransportError::Decode(format!("json: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(TransportError::Decode(
            "frame body is not a JSON object".into(),
        ));
    };
    let kind = match map.get("kind") {
        Some(Value::String(s)) => MessageKind::parse(s)?,
        Some(other) => return Err(TransportError::UnsupportedKind(other.to_string())),
        None => return Err(TransportError::Decode("missing kind".into())),
    };
    let version = map.get("schema_version").and_then(Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(TransportError::Version {
            expected: SCHEMA_VERSION,
            found: version,
        });
    }
    let send_timestamp = map
        .get("send_timestamp")
        .and_then(Value::as_u64)
        .ok_or_else(|| TransportError::Decode("missing or invalid send_timestamp".into()))?;
    let payload = map
        .remove("payload")
        .ok_or_else(|| TransportError::Decode("missing payload".into()))?;
    Ok(WireMessage {
        schema_version: SCHEMA_VERSION,
        send_timestamp,
        payload: Payload::from_value(kind, payload)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub offset: Nanos,
    pub message: WireMessage,
}

/// Messages with their delivery offsets from the start of a replay.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySchedule {
    entries: Vec<ScheduleEntry>,
}

impl ReplaySchedule {
    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self, TransportError> {
        if let Some(k) = entries.windows(2).position(|w| w[1].offset < w[0].offset) {
            return Err(TransportError::Decode(format!(
                "schedule offsets decrease at entry {}",
                k + 1
            )));
        }
        Ok(Self { entries })
    }

    /// Builds a schedule from `(offset, payload)` pairs; the send timestamp of
    /// each message is its offset.
    pub fn from_payloads(
        items: impl IntoIterator<Item = (Nanos, Payload)>,
    ) -> Result<Self, TransportError> {
        Self::new(
            items
                .into_iter()
                .map(|(offset, payload)| ScheduleEntry {
                    offset,
                    message: WireMessage::new(payload, offset),
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_offset(&self) -> Nanos {
        self.entries.last().map_or(0, |e| e.offset)
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter().filter_map(|e| e.message.trajectory())
    }

    /// Reads a JSON-lines dataset. Blank lines are skipped.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, TransportError> {
        let mut entries = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: TransportError| match e {
                TransportError::Decode(m) => {
                    TransportError::Decode(format!("line {}: {m}", lineno + 1))
                }
                other => other,
            };
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| TransportError::Decode(format!("line {}: {e}", lineno + 1)))?;
            let Value::Object(mut map) = value else {
                return Err(at(TransportError::Decode("record is not an object".into())));
            };
            let offset = map
                .get("offset_ns")
                .and_then(Value::as_u64)
                .ok_or_else(|| at(TransportError::Decode("missing offset_ns".into())))?;
            let kind = match map.get("kind") {
                Some(Value::String(s)) => MessageKind::parse(s)?,
                _ => return Err(at(TransportError::Decode("missing kind".into()))),
            };
            let payload = map
                .remove("payload")
                .ok_or_else(|| at(TransportError::Decode("missing payload".into())))?;
            let payload = Payload::from_value(kind, payload).map_err(at)?;
            entries.push(ScheduleEntry {
                offset,
                message: WireMessage::new(payload, offset),
            });
        }
        Self::new(entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            let mut map = Map::new();
            map.insert("kind".into(), Value::from(e.message.kind().as_str()));
            map.insert("offset_ns".into(), Value::from(e.offset));
            map.insert("payload".into(), e.message.payload.to_value());
            writeln!(w, "{}", canonical_json(&Value::Object(map)))?;
        }
        w.flush()
    }
}

pub trait MessageSink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError>;
}

impl MessageSink for Vec<WireMessage> {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError> {
        self.push(msg.clone());
        Ok(())
    }
}

#[derive(Debug)]
pub enum SourcePoll {
    Message(WireMessage),
    /// Nothing available right now.
    Empty,
    /// End of stream; no further messages will arrive.
    Closed,
    Error(TransportError),
}

/// Non-blocking message intake.
pub trait MessageSource {
    fn poll(&mut self, now: Nanos) -> SourcePoll;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplaySummary {
    pub delivered: usize,
    pub finished_at: Nanos,
}

/// Pushes every scheduled message into `sink` once `clock` reaches
/// `start + offset`, where `start` is the clock reading at the call.
///
/// On a sink failure the error is returned together with the count delivered
/// so far.
pub fn replay<C: Clock, S: MessageSink>(
    schedule: &ReplaySchedule,
    clock: &C,
    sink: &mut S,
) -> Result<ReplaySummary, (ReplaySummary, TransportError)> {
    let start = clock.now();
    let mut delivered = 0;
    for entry in &schedule.entries {
        clock.sleep_until(start + entry.offset);
        let mut msg = entry.message.clone();
        msg.send_timestamp = clock.now();
        if let Err(e) = sink.send(&msg) {
            let summary = ReplaySummary {
                delivered,
                finished_at: clock.now(),
            };
            return Err((summary, e));
        }
        delivered += 1;
    }
    Ok(ReplaySummary {
        delivered,
        finished_at: clock.now(),
    })
}

/// Pull-based replay: messages become available once `now` reaches
/// `start + offset`. The stream closes after the last message plus `tail`.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    schedule: ReplaySchedule,
    start: Nanos,
    next: usize,
    tail: Nanos,
}

impl ReplaySource {
    pub fn new(schedule: ReplaySchedule, start: Nanos) -> Self {
        Self {
            schedule,
            start,
            next: 0,
            tail: 0,
        }
    }

    /// Keep the stream open for `tail` after the final message.
    pub fn with_tail(mut self, tail: Nanos) -> Self {
        self.tail = tail;
        self
    }
}

impl MessageSource for ReplaySource {
    fn poll(&mut self, now: Nanos) -> SourcePoll {
        match self.schedule.entries.get(self.next) {
            Some(entry) if self.start + entry.offset <= now => {
                self.next += 1;
                let mut msg = entry.message.clone();
                msg.send_timestamp = self.start + entry.offset;
                SourcePoll::Message(msg)
            }
            Some(_) => SourcePoll::Empty,
            None if now >= self.start + self.schedule.last_offset() + self.tail => {
                SourcePoll::Closed
            }
            None => SourcePoll::Empty,
        }
    }
}

/// Bounded FIFO between an intake context and the supervisor loop. When full,
/// the oldest element is discarded and counted.
#[derive(Debug)]
pub struct HandoffQueue<T> {
    inner: Mutex<VecDeque<T>>,
    capacity: usize,
    overflow: AtomicU64,
}

impl<T> HandoffQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            inner: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity,
            overflow: AtomicU64::new(0),
        }
    }

    pub fn push(&self, item: T) {
        let mut q = self.inner.lock().expect("queue lock poisoned");
        if q.len() == self.capacity {
            q.pop_front();
            self.overflow.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(item);
    }

    pub fn pop(&self) -> Option<T> {
        self.inner.lock().expect("queue lock poisoned").pop_front()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items dropped because the queue was full.
    pub fn overflow_count(&self) -> u64 {
        self.overflow.load(Ordering::Relaxed)
    }
}

struct ChannelShared {
    queue: HandoffQueue<WireMessage>,
    closed: AtomicBool,
}

/// Sending half of the in-process bus. Dropping it closes the stream.
pub struct InProcSink {
    shared: Arc<ChannelShared>,
}

pub struct InProcSource {
    shared: Arc<ChannelShared>,
}

pub fn in_process(capacity: usize) -> (InProcSink, InProcSource) {
    let shared = Arc::new(ChannelShared {
        queue: HandoffQueue::new(capacity),
        closed: AtomicBool::new(false),
    });
    (
        InProcSink {
            shared: Arc::clone(&shared),
        },
        InProcSource { shared },
    )
}

impl MessageSink for InProcSink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError> {
        self.shared.queue.push(msg.clone());
        Ok(())
    }
}

impl Drop for InProcSink {
    fn drop(&mut self) {
        self.shared.closed.store(true, Ordering::SeqCst);
    }
}

impl InProcSource {
    pub fn overflow_count(&self) -> u64 {
        self.shared.queue.overflow_count()
    }
}

impl MessageSource for InProcSource {
    fn poll(&mut self, _now: Nanos) -> SourcePoll {
        // read the flag first so a message pushed just before close is not lost
        let closed = self.shared.closed.load(Ordering::SeqCst);
        match self.shared.queue.pop() {
            Some(m) => SourcePoll::Message(m),
            None if closed => SourcePoll::Closed,
            None => SourcePoll::Empty,
        }
    }
}

fn bind_socket(addr: SocketAddr) -> Result<UdpSocket, TransportError> {
    UdpSocket::bind(addr).map_err(|source| TransportError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Sends one frame per datagram. No retries.
#[derive(Debug)]
pub struct UdpSink {
    socket: UdpSocket,
    peer: SocketAddr,
}

impl UdpSink {
    pub fn connect(bind: SocketAddr, peer: SocketAddr) -> Result<Self, TransportError> {
        Ok(Self {
            socket: bind_socket(bind)?,
            peer,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }
}

impl MessageSink for UdpSink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), TransportError> {
        let frame = encode(msg);
        if frame.len() > MAX_DATAGRAM_BYTES {
            return Err(TransportError::Oversized {
                size: frame.len(),
                limit: MAX_DATAGRAM_BYTES,
            });
        }
        self.socket.send_to(&frame, self.peer)?;
        Ok(())
    }
}

/// Receives datagrams on a background thread and hands decoded messages to
/// the supervisor through a [`HandoffQueue`].
///
/// With an idle timeout set, the stream reports closed once that much wall
/// time passes without a message, counted from the first message (or from
/// creation when none ever arrived).
pub struct UdpSource {
    queue: Arc<HandoffQueue<Result<WireMessage, TransportError>>>,
    stop: Arc<AtomicBool>,
    decode_errors: Arc<AtomicU64>,
    worker: Option<JoinHandle<()>>,
    local: SocketAddr,
    idle_timeout: Option<Duration>,
    last_activity: Instant,
}

impl UdpSource {
    pub fn bind(
        bind: SocketAddr,
        capacity: usize,
        idle_timeout: Option<Duration>,
    ) -> Result<Self, TransportError> {
        let socket = bind_socket(bind)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let local = socket.local_addr()?;
        let queue = Arc::new(HandoffQueue::new(capacity));
        let stop = Arc::new(AtomicBool::new(false));
        let decode_errors = Arc::new(AtomicU64::new(0));

        let worker = {
            let queue = Arc::clone(&queue);
            let stop = Arc::clone(&stop);
            let decode_errors = Arc::clone(&decode_errors);
            std::thread::Builder::new()
                .name("udp-intake".into())
                .spawn(move || {
                    let mut buf = vec![0u8; 64 * 1024];
                    while !stop.load(Ordering::Relaxed) {
                        match socket.recv_from(&mut buf) {
                            Ok((n, _)) => {
                                let item = decode(&buf[..n]);
                                if item.is_err() {
                                    decode_errors.fetch_add(1, Ordering::Relaxed);
                                }
                                queue.push(item);
                            }
                            Err(e)
                                if matches!(
                                    e.kind(),
                                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                                ) => {}
                            Err(e) => queue.push(Err(TransportError::Io(e))),
                        }
                    }
                })?
        };

        Ok(Self {
            queue,
            stop,
            decode_errors,
            worker: Some(worker),
            local,
            idle_timeout,
            last_activity: Instant::now(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn decode_errors(&self) -> u64 {
        self.decode_errors.load(Ordering::Relaxed)
    }

    pub fn overflow_count(&self) -> u64 {
        self.queue.overflow_count()
    }

    /// Blocking receive with a wall-clock timeout; convenience for tests and
    /// tools that do not run a supervisor loop.
    pub fn recv_timeout(
        &mut self,
        timeout: Duration,
    ) -> Option<Result<WireMessage, TransportError>> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(item) = self.queue.pop() {
                return Some(item);
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }
}

impl MessageSource for UdpSource {
    fn poll(&mut self, _now: Nanos) -> SourcePoll {
        match self.queue.pop() {
            Some(Ok(m)) => {
                self.last_activity = Instant::now();
                SourcePoll::Message(m)
            }
            Some(Err(e)) => {
                self.last_activity = Instant::now();
                SourcePoll::Error(e)
            }
            None => match self.idle_timeout {
                Some(idle) if self.last_activity.elapsed() >= idle => SourcePoll::Closed,
                _ => SourcePoll::Empty,
            },
        }
    }
}

impl Drop for UdpSource {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UdpRole {
    Send,
    Receive,
}

pub enum UdpEndpoint {
    Source(UdpSource),
    Sink(UdpSink),
}

/// Opens a UDP endpoint. Senders need a peer; receivers ignore it.
pub fn udp_endpoint(
    bind: SocketAddr,
    peer: Option<SocketAddr>,
    role: UdpRole,
) -> Result<UdpEndpoint, TransportError> {
    match role {
        UdpRole::Send => {
            let peer = peer.ok_or_else(|| TransportError::Bind {
                addr: bind.to_string(),
                source: io::Error::new(io::ErrorKind::InvalidInput, "sender needs a peer address"),
            })?;
            Ok(UdpEndpoint::Sink(UdpSink::connect(bind, peer)?))
        }
        UdpRole::Receive => Ok(UdpEndpoint::Source(UdpSource::bind(
            bind,
            DEFAULT_QUEUE_CAPACITY,
            None,
        )?)),
    }
}

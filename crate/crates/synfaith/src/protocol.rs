//! Newline-delimited JSON value-function protocol.
//!
//! The server speaks first with a handshake line. After that the client sends
//! one request object per line and the server answers each with a response
//! carrying the same id, in any order:
//!
//! ```text
//! <- {"protocol":"synfaith-vf","version":1,"concurrent":false}
//! -> {"id":1,"instance":"img7","visual_mask":[1,0,1],"text_mask":[1,1]}
//! <- {"id":1,"score":"0.8125"}
//! <- {"id":2,"error":"backend unavailable"}
//! ```
//!
//! The same framing runs over a subprocess's stdio or a TCP stream.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use synfaith_core::game::{check_score, Concurrency, ValueFunction};
use synfaith_core::mask::{MultimodalInstance, MultimodalMask};
use synfaith_core::EvalError;

use crate::error::{AppError, Result};

pub const PROTOCOL_NAME: &str = "synfaith-vf";
pub const PROTOCOL_VERSION: u32 = 1;

/// Where a remote value function lives.
///
/// In configuration files an endpoint is a string or an argument array. A
/// string of the form `host:port` (or `tcp://host:port`) is a TCP address;
/// any other string is a command line split with shell quoting rules.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawEndpoint", into = "RawEndpoint")]
pub enum Endpoint {
    Tcp(String),
    Command(Vec<String>),
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEndpoint {
    Text(String),
    Argv(Vec<String>),
}

impl TryFrom<RawEndpoint> for Endpoint {
    type Error = String;

    fn try_from(raw: RawEndpoint) -> std::result::Result<Self, String> {
        match raw {
            RawEndpoint::Text(s) => s.parse(),
            RawEndpoint::Argv(argv) if argv.is_empty() => Err("endpoint command is empty".into()),
            RawEndpoint::Argv(argv) => Ok(Endpoint::Command(argv)),
        }
    }
}

impl From<Endpoint> for RawEndpoint {
    fn from(e: Endpoint) -> Self {
        match e {
            Endpoint::Tcp(addr) => RawEndpoint::Text(format!("tcp://{addr}")),
            Endpoint::Command(argv) => RawEndpoint::Argv(argv),
        }
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let looks_like_address = !s.contains(char::is_whitespace)
            && !s.contains('/')
            && s.rsplit_once(':').is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if looks_like_address {
            return Ok(Endpoint::Tcp(s.to_string()));
        }
        let argv = shlex::split(s).ok_or_else(|| format!("unbalanced quotes in endpoint {s:?}"))?;
        if argv.is_empty() {
            Err("endpoint is empty".into())
        } else {
            Ok(Endpoint::Command(argv))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Command(argv) => match shlex::try_join(argv.iter().map(String::as_str)) {
                Ok(line) => f.write_str(&line),
                Err(_) => write!(f, "{}", argv.join(" ")),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub concurrent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub id: u64,
    pub instance: String,
    pub visual_mask: Vec<u8>,
    pub text_mask: Vec<u8>,
}

/// Decoded response line.
#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub id: u64,
    pub outcome: std::result::Result<f64, String>,
}

/// Formats a score so that parsing it back yields the identical `f64`.
pub fn format_score(score: f64) -> String {
    format!("{score:?}")
}

/// Parses one response line. Scores may be JSON numbers or decimal strings;
/// range checking is left to the caller.
pub fn parse_response(line: &str) -> std::result::Result<Response, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed response line: {e}"))?;
    let obj = value.as_object().ok_or("response is not a JSON object")?;
    let id = obj.get("id").and_then(Value::as_u64).ok_or("response lacks an unsigned integer id")?;
    if let Some(key) = obj.keys().find(|k| !matches!(k.as_str(), "id" | "score" | "error")) {
        return Err(format!("response {id} has unexpected field {key:?}"));
    }
    let outcome = match (obj.get("score"), obj.get("error")) {
        (Some(score), None) => {
            let parsed = match score {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            };
            Ok(parsed.ok_or_else(|| format!("response {id} score {score} is not a decimal"))?)
        }
        (None, Some(Value::String(msg))) => Err(msg.clone()),
        (None, Some(_)) => return Err(format!("response {id} error is not a string")),
        _ => return Err(format!("response {id} must carry exactly one of score and error")),
    };
    Ok(Response { id, outcome })
}

/// Client-side limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClientOptions {
    pub timeout: Duration,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 1,
            max_in_flight: 16,
        }
    }
}

type Reply = std::result::Result<f64, EvalError>;

#[derive(Default)]
struct State {
    pending: HashMap<u64, mpsc::Sender<Reply>>,
    /// Requests given up on after a timeout; a late answer is dropped.
    abandoned: HashSet<u64>,
    poisoned: Option<String>,
    in_flight: usize,
    /// Set when the client shuts the connection down itself.
    closing: bool,
}

struct Shared {
    state: Mutex<State>,
    slots: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    // Marks the connection unusable and fails every waiting request.
    fn poison(&self, reason: String) {
        let mut st = self.lock();
        if st.poisoned.is_none() {
            if !st.closing {
                log::warn!("value-function connection poisoned: {reason}");
            }
            st.poisoned = Some(reason.clone());
        }
        for (_, tx) in st.pending.drain() {
            let _ = tx.send(Err(EvalError::Protocol(reason.clone())));
        }
        drop(st);
        self.slots.notify_all();
    }

    fn release(&self) {
        self.lock().in_flight -= 1;
        self.slots.notify_one();
    }
}

/// A value function served over the wire protocol.
pub struct RemoteValueFunction {
    shared: Arc<Shared>,
    writer: Mutex<Box<dyn Write + Send>>,
    next_id: AtomicU64,
    concurrent: bool,
    serial: Mutex<()>,
    options: ClientOptions,
    child: Mutex<Option<Child>>,
    tcp: Option<TcpStream>,
}

impl fmt::Debug for RemoteValueFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteValueFunction")
            .field("concurrent", &self.concurrent)
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

impl RemoteValueFunction {
    /// Spawns or dials the endpoint and completes the handshake.
    pub fn connect(endpoint: &Endpoint, options: ClientOptions) -> Result<Self> {
        match endpoint {
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| AppError::Protocol(format!("cannot start {endpoint}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut client = Self::from_streams(stdout, stdin, options)?;
                client.child = Mutex::new(Some(child));
                Ok(client)
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr.as_str())
                    .map_err(|e| AppError::Protocol(format!("cannot connect to {addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let io_err = |e: io::Error| AppError::Protocol(format!("{addr}: {e}"));
                let reader = stream.try_clone().map_err(io_err)?;
                let control = stream.try_clone().map_err(io_err)?;
                let mut client = Self::from_streams(reader, stream, options)?;
                client.tcp = Some(control);
                Ok(client)
            }
        }
    }

    /// Runs the protocol over an arbitrary stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, options: ClientOptions) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            slots: Condvar::new(),
        });
        let (hello_tx, hello_rx) = mpsc::sync_channel::<std::result::Result<String, String>>(1);
        let reader_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("synfaith-vf-reader".into())
            .spawn(move || read_loop(BufReader::new(reader), reader_shared, hello_tx))
            .map_err(|e| AppError::Protocol(format!("cannot start reader thread: {e}")))?;

        let line = match hello_rx.recv_timeout(options.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(AppError::Protocol(format!("no handshake: {e}"))),
            Err(_) => return Err(AppError::Protocol("timed out waiting for handshake".into())),
        };
        let hello: Handshake = serde_json::from_str(&line)
            .map_err(|e| AppError::Protocol(format!("malformed handshake {line:?}: {e}")))?;
        if hello.protocol != PROTOCOL_NAME || hello.version != PROTOCOL_VERSION {
            return Err(AppError::Protocol(format!(
                "unsupported handshake {}/{}; expected {PROTOCOL_NAME}/{PROTOCOL_VERSION}",
                hello.protocol, hello.version
            )));
        }
        Ok(Self {
            shared,
            writer: Mutex::new(Box::new(writer)),
            next_id: AtomicU64::new(1),
            concurrent: hello.concurrent,
            serial: Mutex::new(()),
            options,
            child: Mutex::new(None),
            tcp: None,
        })
    }

    /// Whether the server advertised concurrent request handling.
    pub fn is_concurrent(&self) -> bool {
        self.concurrent
    }

    fn attempt(&self, request: &mut Request) -> Option<Reply> {
        let rx = {
            let mut st = self.shared.lock();
            while st.in_flight >= self.options.max_in_flight && st.poisoned.is_none() {
                st = self.shared.slots.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            if let Some(reason) = &st.poisoned {
                return Some(Err(EvalError::Protocol(reason.clone())));
            }
            st.in_flight += 1;
            request.id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let (tx, rx) = mpsc::channel();
            st.pending.insert(request.id, tx);
            rx
        };
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        let written = {
            let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.shared.poison(format!("write failed: {e}"));
        }
        let reply = match rx.recv_timeout(self.options.timeout) {
            Ok(reply) => Some(reply),
            Err(RecvTimeoutError::Timeout) => {
                let mut st = self.shared.lock();
                if st.pending.remove(&request.id).is_some() {
                    st.abandoned.insert(request.id);
                    None
                } else {
                    // Answered between the timeout and taking the lock.
                    drop(st);
                    rx.try_recv().ok()
                }
            }
            Err(RecvTimeoutError::Disconnected) => {
                let reason = self.shared.lock().poisoned.clone().unwrap_or_else(|| "connection lost".into());
                Some(Err(EvalError::Protocol(reason)))
            }
        };
        self.shared.release();
        reply
    }
}

fn read_loop<R: BufRead>(mut reader: R, shared: Arc<Shared>, hello: mpsc::SyncSender<std::result::Result<String, String>>) {
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                if first {
                    let _ = hello.send(Err("connection closed before handshake".into()));
                }
                shared.poison("server closed the connection".into());
                return;
            }
            Ok(_) => {}
            Err(e) => {
                if first {
                    let _ = hello.send(Err(e.to_string()));
                }
                shared.poison(format!("read failed: {e}"));
                return;
            }
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if first {
            first = false;
            let _ = hello.send(Ok(text.to_string()));
            continue;
        }
        let response = match parse_response(text) {
            Ok(r) => r,
            Err(e) => {
                shared.poison(e);
                return;
            }
        };
        let mut st = shared.lock();
        if let Some(tx) = st.pending.remove(&response.id) {
            let reply = match response.outcome {
                Ok(score) => check_score(score),
                Err(msg) => Err(EvalError::Backend(msg)),
            };
            let _ = tx.send(reply);
        } else if !st.abandoned.remove(&response.id) {
            drop(st);
            shared.poison(format!("response id {} matches no outstanding request", response.id));
            return;
        }
    }
}

impl ValueFunction for RemoteValueFunction {
    fn evaluate(&self, instance: &MultimodalInstance, mask: &MultimodalMask) -> std::result::Result<f64, EvalError> {
        let _serial = (!self.concurrent).then(|| self.serial.lock().unwrap_or_else(|e| e.into_inner()));
        let mut request = Request {
            id: 0,
            instance: instance.id().to_string(),
            visual_mask: mask.visual.to_flags(),
            text_mask: mask.textual.to_flags(),
        };
        for _ in 0..=self.options.retries {
            if let Some(reply) = self.attempt(&mut request) {
                return reply;
            }
        }
        Err(EvalError::Timeout {
            millis: self.options.timeout.as_millis() as u64,
        })
    }

    fn concurrency(&self) -> Concurrency {
        if self.concurrent {
            Concurrency::Concurrent
        } else {
            Concurrency::Serialized
        }
    }
}

impl Drop for RemoteValueFunction {
    fn drop(&mut self) {
        self.shared.lock().closing = true;
        // Closing our end signals end-of-stream to a well-behaved server.
        *self.writer.lock().unwrap_or_else(|e| e.into_inner()) = Box::new(io::sink());
        if let Some(tcp) = &self.tcp {
            let _ = tcp.shutdown(Shutdown::Both);
        }
        if let Some(mut child) = self.child.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    _ => {
                        let _ = child.kill();
                        let _ = child.wait();
                        break;
                    }
                }
            }
        }
    }
}

/// Behaviour of the echo test double.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EchoOptions {
    /// Sent verbatim for every request, even when outside `[0, 1]`.
    pub score: f64,
    pub concurrent: bool,
    /// Known instance shapes; when present, unknown ids and wrong mask
    /// lengths get error responses.
    pub shapes: Option<HashMap<String, (usize, usize)>>,
}

/// Serves the echo double on one stream pair until end-of-stream.
pub fn serve_echo<R: BufRead, W: Write>(mut input: R, mut output: W, options: &EchoOptions) -> io::Result<()> {
    let hello = Handshake {
        protocol: PROTOCOL_NAME.into(),
        version: PROTOCOL_VERSION,
        concurrent: options.concurrent,
    };
    writeln!(output, "{}", serde_json::to_string(&hello).expect("handshake serializes"))?;
    output.flush()?;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if text.is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(text) {
            Ok(req) => {
                let outcome = echo_check(&req, options);
                match outcome {
                    Ok(()) => serde_json::json!({"id": req.id, "score": format_score(options.score)}),
                    Err(msg) => serde_json::json!({"id": req.id, "error": msg}),
                }
            }
            Err(e) => match serde_json::from_str::<Value>(text).ok().and_then(|v| v.get("id").and_then(Value::as_u64)) {
                Some(id) => serde_json::json!({"id": id, "error": format!("malformed request: {e}")}),
                None => {
                    eprintln!("serve-echo: dropping malformed line: {e}");
                    continue;
                }
            },
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
}

fn echo_check(req: &Request, options: &EchoOptions) -> std::result::Result<(), String> {
    if req.visual_mask.iter().chain(&req.text_mask).any(|b| *b > 1) {
        return Err("mask entries must be 0 or 1".into());
    }
    if let Some(shapes) = &options.shapes {
        let (m, n) = shapes
            .get(&req.instance)
            .ok_or_else(|| format!("unknown instance {:?}", req.instance))?;
        if req.visual_mask.len() != *m || req.text_mask.len() != *n {
            return Err(format!(
                "instance {} expects masks of length ({m}, {n}), got ({}, {})",
                req.instance,
                req.visual_mask.len(),
                req.text_mask.len()
            ));
        }
    }
    Ok(())
}

/// Accepts TCP connections forever, one thread per connection. The bound
/// address is reported through `on_bound` before the first accept.
pub fn serve_echo_tcp(addr: &str, options: EchoOptions, on_bound: impl FnOnce(std::net::SocketAddr)) -> io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    on_bound(listener.local_addr()?);
    let options = Arc::new(options);
    for stream in listener.incoming() {
        let stream = stream?;
        let options = Arc::clone(&options);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => return eprintln!("serve-echo: {e}"),
            };
            if let Err(e) = serve_echo(reader, stream, &options) {
                eprintln!("serve-echo: connection ended: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("localhost:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("localhost:9000".into()));
        assert_eq!("tcp://[::1]:80".parse::<Endpoint>().unwrap(), Endpoint::Tcp("[::1]:80".into()));
        assert_eq!(
            "python3 server.py --port 1".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec!["python3".into(), "server.py".into(), "--port".into(), "1".into()])
        );
        assert_eq!("./srv".parse::<Endpoint>().unwrap(), Endpoint::Command(vec!["./srv".into()]));
        let e: Endpoint = serde_json::from_str(r#"["a b", "c"]"#).unwrap();
        assert_eq!(e, Endpoint::Command(vec!["a b".into(), "c".into()]));
        let back: Endpoint = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"id":3,"score":"0.25"}"#).unwrap().outcome, Ok(0.25));
        assert_eq!(parse_response(r#"{"id":3,"score":0.5}"#).unwrap().outcome, Ok(0.5));
        assert_eq!(parse_response(r#"{"id":3,"error":"x"}"#).unwrap().outcome, Err("x".into()));
        assert!(parse_response(r#"{"id":3}"#).is_err());
        assert!(parse_response(r#"{"id":3,"score":0.5,"error":"x"}"#).is_err());
        assert!(parse_response(r#"{"id":-1,"score":0.5}"#).is_err());
        assert!(parse_response(r#"{"id":1,"score":"abc"}"#).is_err());
        assert!(parse_response("not json").is_err());
    }

    #[test]
    fn score_strings_round_trip() {
        for s in [0.1, 1.0 / 3.0, 0.0, 1.0, 5e-324, 0.30000000000000004] {
            assert_eq!(format_score(s).parse::<f64>().unwrap().to_bits(), f64::to_bits(s));
        }
    }

    #[test]
    fn echo_server_replies_in_order() {
        let input = b"{\"id\":4,\"instance\":\"a\",\"visual_mask\":[1,0],\"text_mask\":[1]}\n\
                      {\"id\":5,\"instance\":\"b\",\"visual_mask\":[1],\"text_mask\":[1]}\n\
                      {\"id\":6,\"nonsense\":true}\n";
        let shapes = HashMap::from([("a".to_string(), (2, 1))]);
        let opts = EchoOptions { score: 0.5, concurrent: false, shapes: Some(shapes) };
        let mut out = Vec::new();
        serve_echo(&input[..], &mut out, &opts).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"protocol":"synfaith-vf","version":1}"#);
        assert_eq!(lines[1], r#"{"id":4,"score":"0.5"}"#);
        assert!(lines[2].contains("unknown instance"));
        assert!(lines[3].starts_with(r#"{"error":"malformed request"#) || lines[3].contains(r#""id":6"#));
    }
}

//! Newline-delimited JSON bridge to an out-of-process policy/value model.
//!
//! ```text
//! > {"type":"hello","env":"csg2d","sigma_small":2}
//! < {"type":"ready"}
//! > {"type":"policy","tokens":[...],"current_png":"<b64>","target_png":"<b64>","k":4}
//! < {"type":"proposals","items":[{"pos":3,"replacement":["(","Circle","1","2","3",")"],"score":-0.2}]}
//! > {"type":"value","a_png":"<b64>","b_png":"<b64>"}
//! < {"type":"value","estimate":3.5}
//! ```
//!
//! One request is in flight per connection. Every returned edit is
//! re-validated here; rejected edits are counted, never applied.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{resolve_edit, EditProposal, Policy, PolicyError, PolicyQuery, Render, Value, ValueQuery};
use crate::env::Env;
use crate::grammar::{Grammar, SyntaxTree};
use crate::render::Canvas;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExternalError {
    #[error("endpoint i/o: {0}")]
    Io(String),
    #[error("endpoint did not answer within {0:?}")]
    Timeout(Duration),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("endpoint closed the connection")]
    Closed,
    #[error("bad endpoint `{0}` (expected host:port, tcp://host:port or stdio:<command>)")]
    BadEndpoint(String),
}

impl From<io::Error> for ExternalError {
    fn from(e: io::Error) -> Self {
        ExternalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Command(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = ExternalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err(ExternalError::BadEndpoint(s.into()));
            }
            return Ok(Endpoint::Command(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok()) {
            Ok(Endpoint::Tcp(addr.into()))
        } else {
            Err(ExternalError::BadEndpoint(s.into()))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello { env: Env, sigma_small: u32 },
    Policy {
        tokens: Vec<String>,
        current_png: String,
        target_png: String,
        k: usize,
    },
    Value { a_png: String, b_png: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WireEdit {
    pub pos: usize,
    pub replacement: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    Ready,
    Proposals { items: Vec<WireEdit> },
    Value { estimate: f64 },
}

pub fn png_base64(c: &Canvas) -> String {
    B64.encode(c.to_png())
}

pub fn canvas_from_base64(s: &str) -> Result<Canvas, ExternalError> {
    let bytes = B64
        .decode(s)
        .map_err(|e| ExternalError::Protocol(format!("base64: {e}")))?;
    Canvas::from_png(&bytes).map_err(|e| ExternalError::Protocol(e.to_string()))
}

/// Counters surfaced in search results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalStats {
    pub queries: u64,
    pub failures: u64,
    pub accepted_proposals: u64,
    pub rejected_proposals: u64,
    pub total_latency_ms: f64,
    pub mean_latency_ms: f64,
}

#[derive(Default)]
struct Counters {
    queries: AtomicU64,
    failures: AtomicU64,
    accepted: AtomicU64,
    rejected: AtomicU64,
    latency_us: AtomicU64,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    /// Answers still owed for requests that timed out.
    stale: usize,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(r: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(r).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, ExternalError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let lines = spawn_reader(stream.try_clone()?);
                Ok(Connection {
                    writer: Box::new(stream),
                    lines,
                    stale: 0,
                    child: None,
                })
            }
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    stale: 0,
                    child: Some(child),
                })
            }
        }
    }

    fn receive(&mut self, timeout: Duration) -> Result<String, ExternalError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(ExternalError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ExternalError::Closed),
        }
    }

    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response, ExternalError> {
        while self.stale > 0 {
            self.receive(timeout)?;
            self.stale -= 1;
        }
        let mut line = serde_json::to_string(req).expect("requests serialize");
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let answer = match self.receive(timeout) {
            Err(ExternalError::Timeout(t)) => {
                self.stale += 1;
                return Err(ExternalError::Timeout(t));
            }
            other => other?,
        };
        serde_json::from_str(&answer).map_err(|e| ExternalError::Protocol(format!("{e}: {answer}")))
    }
}

/// A connected, handshaken endpoint. Requests are serialized.
pub struct ExternalClient {
    conn: Mutex<Connection>,
    counters: Counters,
    timeout: Duration,
    sigma_small: u32,
}

impl ExternalClient {
    pub fn connect(endpoint: &Endpoint, env: Env, sigma_small: u32, timeout: Duration) -> Result<Self, ExternalError> {
        let mut conn = Connection::open(endpoint)?;
        match conn.request(&Request::Hello { env, sigma_small }, timeout)? {
            Response::Ready => {}
            other => return Err(ExternalError::Protocol(format!("expected ready, got {other:?}"))),
        }
        Ok(ExternalClient {
            conn: Mutex::new(conn),
            counters: Counters::default(),
            timeout,
            sigma_small,
        })
    }

    fn call(&self, req: &Request) -> Result<Response, ExternalError> {
        let start = Instant::now();
        let result = self.conn.lock().unwrap_or_else(|p| p.into_inner()).request(req, self.timeout);
        self.counters.queries.fetch_add(1, Ordering::Relaxed);
        self.counters
            .latency_us
            .fetch_add(start.elapsed().as_micros() as u64, Ordering::Relaxed);
        if result.is_err() {
            self.counters.failures.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    fn raw_edits(&self, tokens: Vec<String>, current: &Canvas, target: &Canvas, k: usize) -> Result<Vec<WireEdit>, ExternalError> {
        let req = Request::Policy {
            tokens,
            current_png: png_base64(current),
            target_png: png_base64(target),
            k,
        };
        match self.call(&req)? {
            Response::Proposals { items } => Ok(items),
            other => {
                self.counters.failures.fetch_add(1, Ordering::Relaxed);
                Err(ExternalError::Protocol(format!("expected proposals, got {other:?}")))
            }
        }
    }

    /// Up to `k` validated edits for `program`.
    pub fn policy(
        &self,
        g: &Grammar,
        program: &SyntaxTree,
        current: &Canvas,
        target: &Canvas,
        k: usize,
    ) -> Result<Vec<EditProposal>, ExternalError> {
        let texts = g.serialize(program).texts(g);
        let items = self.raw_edits(texts, current, target, k)?;
        let mut out = Vec::new();
        for item in items {
            match resolve_edit(g, program, item.pos, &item.replacement, item.score, self.sigma_small) {
                Ok(p) => {
                    self.counters.accepted.fetch_add(1, Ordering::Relaxed);
                    out.push(p);
                }
                Err(_) => {
                    self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(out)
    }

    /// Whole programs proposed from an empty program and a blank image.
    pub fn initial_programs(&self, g: &Grammar, blank: &Canvas, target: &Canvas, k: usize) -> Result<Vec<SyntaxTree>, ExternalError> {
        let items = self.raw_edits(Vec::new(), blank, target, k)?;
        let mut out = Vec::new();
        for item in items {
            let parsed = item
                .replacement
                .iter()
                .map(|t| g.token_id(t))
                .collect::<Option<Vec<_>>>()
                .and_then(|toks| g.parse(&toks).ok());
            match parsed {
                Some(t) if item.pos == 0 => {
                    self.counters.accepted.fetch_add(1, Ordering::Relaxed);
                    out.push(t);
                }
                _ => {
                    self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(out)
    }

    pub fn value(&self, a: &Canvas, b: &Canvas) -> Result<f64, ExternalError> {
        let req = Request::Value {
            a_png: png_base64(a),
            b_png: png_base64(b),
        };
        match self.call(&req)? {
            Response::Value { estimate } if estimate.is_finite() => Ok(estimate),
            other => {
                self.counters.failures.fetch_add(1, Ordering::Relaxed);
                Err(ExternalError::Protocol(format!("expected a finite value, got {other:?}")))
            }
        }
    }

    pub fn stats(&self) -> ExternalStats {
        let queries = self.counters.queries.load(Ordering::Relaxed);
        let total = self.counters.latency_us.load(Ordering::Relaxed) as f64 / 1000.0;
        ExternalStats {
            queries,
            failures: self.counters.failures.load(Ordering::Relaxed),
            accepted_proposals: self.counters.accepted.load(Ordering::Relaxed),
            rejected_proposals: self.counters.rejected.load(Ordering::Relaxed),
            total_latency_ms: total,
            mean_latency_ms: if queries == 0 { 0.0 } else { total / queries as f64 },
        }
    }
}

pub struct ExternalPolicy {
    pub client: Arc<ExternalClient>,
}

impl Policy for ExternalPolicy {
    fn propose(
        &self,
        q: &PolicyQuery<'_>,
        _render: &mut dyn Render,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EditProposal>, PolicyError> {
        Ok(self.client.policy(q.grammar, q.program, q.image, q.target, q.k)?)
    }

    fn stats(&self) -> Option<ExternalStats> {
        Some(self.client.stats())
    }
}

pub struct ExternalValue {
    pub client: Arc<ExternalClient>,
}

impl Value for ExternalValue {
    fn estimate(&self, q: &ValueQuery<'_>) -> Result<f64, PolicyError> {
        Ok(self.client.value(q.image, q.target)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_forms() {
        assert_eq!("127.0.0.1:9000".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9000".into()));
        assert_eq!("tcp://localhost:1".parse::<Endpoint>().unwrap(), Endpoint::Tcp("localhost:1".into()));
        assert_eq!(
            "stdio:python serve.py --ckpt x".parse::<Endpoint>().unwrap(),
            Endpoint::Command(vec!["python".into(), "serve.py".into(), "--ckpt".into(), "x".into()])
        );
        assert!("nowhere".parse::<Endpoint>().is_err());
        assert!("stdio:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn message_shapes() {
        let hello = serde_json::to_string(&Request::Hello {
            env: Env::Csg2d,
            sigma_small: 2,
        })
        .unwrap();
        assert_eq!(hello, r#"{"type":"hello","env":"csg2d","sigma_small":2}"#);
        let r: Response = serde_json::from_str(r#"{"type":"value","estimate":1.5}"#).unwrap();
        assert_eq!(r, Response::Value { estimate: 1.5 });
        let r: Response =
            serde_json::from_str(r#"{"type":"proposals","items":[{"pos":0,"replacement":["+"],"score":0.0}]}"#).unwrap();
        assert!(matches!(r, Response::Proposals { items } if items.len() == 1));
    }
}

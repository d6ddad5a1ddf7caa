//! Client for out-of-process scorers.
//!
//! Newline-delimited JSON over TCP or a child process's stdio. The server
//! first sends `{"ready": true, "tag": "..."}`; each request line
//!
//! ```text
//! {"id": 7, "kind": "mono", "query": "...", "doc": "..."}
//! {"id": 8, "kind": "duo", "query": "...", "doc": "...", "doc_b": "..."}
//! ```
//!
//! is answered by `{"id": 7, "score": 0.83}`, possibly out of order. A
//! server that cannot handle a line answers `{"id": ..., "error": "..."}`.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::scorer::{PairwiseScorer, PointwiseScorer, ScorerError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port` or bare `host:port`.
    Tcp(String),
    /// `stdio:program arg ...`, spawned with piped stdin/stdout.
    Stdio(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(ScorerError::Unreachable("empty stdio command".into()));
            }
            return Ok(Endpoint::Stdio(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
            return Err(ScorerError::Unreachable(format!("bad endpoint {s:?}")));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Mono,
    Duo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub kind: RequestKind,
    pub query: String,
    pub doc: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_b: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreResponse {
    pub id: u64,
    pub score: f64,
}

#[derive(Deserialize)]
struct Handshake {
    ready: bool,
    #[serde(default)]
    tag: String,
}

#[derive(Deserialize)]
struct RawResponse {
    #[serde(default)]
    id: Option<u64>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    /// Ids of requests from failed batches; late answers to them are dropped.
    abandoned: HashSet<u64>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A connected external scorer. Safe to share between threads; batches are
/// serialized over the single connection.
pub struct ExternalScorer {
    conn: Mutex<Connection>,
    next_id: AtomicU64,
    timeout: Duration,
    tag: String,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("tag", &self.tag)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl ExternalScorer {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, ScorerError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| ScorerError::Unreachable(format!("{addr}: {e}")))?
                    .next()
                    .ok_or_else(|| ScorerError::Unreachable(format!("{addr}: no address")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)
                    .map_err(|e| ScorerError::Unreachable(format!("{addr}: {e}")))?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Self::from_streams(reader, stream, timeout)
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| ScorerError::Unreachable(format!("{}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut scorer = Self::from_streams(stdout, stdin, timeout);
                match scorer.as_mut() {
                    Ok(s) => s.conn.get_mut().expect("fresh mutex").child = Some(child),
                    Err(_) => {
                        let _ = child.kill();
                        let _ = child.wait();
                    }
                }
                scorer
            }
        }
    }

    /// Wrap an already-open byte stream pair and wait for the handshake.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self, ScorerError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let lines = spawn_line_reader(reader);
        let first = match lines.recv_timeout(timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(ScorerError::Unreachable("no handshake within timeout".into()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScorerError::Unreachable("closed before handshake".into()))
            }
        };
        let hs: Handshake = serde_json::from_str(&first)
            .map_err(|e| ScorerError::Protocol(format!("bad handshake {first:?}: {e}")))?;
        if !hs.ready {
            return Err(ScorerError::Protocol("server reported ready=false".into()));
        }
        Ok(Self {
            conn: Mutex::new(Connection {
                writer: Box::new(writer),
                lines,
                abandoned: HashSet::new(),
                child: None,
            }),
            next_id: AtomicU64::new(1),
            timeout,
            tag: hs.tag,
        })
    }

    /// Tag announced in the server handshake.
    pub fn tag(&self) -> &str {
        &self.tag
    }

    fn fresh_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    /// Send every request, then collect one response per request id.
    /// Responses are returned in request order.
    pub fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut position: HashMap<u64, usize> = HashMap::with_capacity(requests.len());
        for (i, r) in requests.iter().enumerate() {
            if position.insert(r.id, i).is_some() {
                return Err(ScorerError::Protocol(format!("duplicate request id {}", r.id)));
            }
        }
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let result = Self::exchange(&mut conn, requests, &position, self.timeout);
        if result.is_err() {
            conn.abandoned.extend(position.keys().copied());
        }
        result
    }

    fn exchange(
        conn: &mut Connection,
        requests: &[ScoreRequest],
        position: &HashMap<u64, usize>,
        timeout: Duration,
    ) -> Result<Vec<ScoreResponse>, ScorerError> {
        let mut payload = Vec::new();
        for r in requests {
            serde_json::to_writer(&mut payload, r).map_err(std::io::Error::other)?;
            payload.push(b'\n');
        }
        conn.writer
            .write_all(&payload)
            .and_then(|()| conn.writer.flush())
            .map_err(|e| ScorerError::Unreachable(format!("write failed: {e}")))?;

        let mut scores: Vec<Option<f64>> = vec![None; requests.len()];
        let mut answered = 0;
        let deadline = Instant::now() + timeout;
        while answered < requests.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match conn.lines.recv_timeout(left) {
                Ok(line) => line?,
                Err(RecvTimeoutError::Timeout) => {
                    let pending = requests
                        .iter()
                        .zip(&scores)
                        .filter(|(_, s)| s.is_none())
                        .map(|(r, _)| r.id)
                        .collect();
                    return Err(ScorerError::Timeout { pending, answered });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ScorerError::Unreachable(format!(
                        "connection closed with {} requests unanswered",
                        requests.len() - answered
                    )))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawResponse = serde_json::from_str(&line)
                .map_err(|e| ScorerError::Protocol(format!("malformed response {line:?}: {e}")))?;
            let id = raw
                .id
                .ok_or_else(|| ScorerError::Protocol(format!("response without id: {line:?}")))?;
            if conn.abandoned.remove(&id) {
                continue;
            }
            let &slot = position
                .get(&id)
                .ok_or_else(|| ScorerError::Protocol(format!("response for unknown id {id}")))?;
            if let Some(err) = raw.error {
                return Err(ScorerError::Protocol(format!("server error for id {id}: {err}")));
            }
            let score = raw
                .score
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| ScorerError::Protocol(format!("missing or out-of-range score: {line:?}")))?;
            if scores[slot].replace(score).is_some() {
                return Err(ScorerError::Protocol(format!("duplicate response for id {id}")));
            }
            answered += 1;
        }
        Ok(requests
            .iter()
            .zip(scores)
            .map(|(r, s)| ScoreResponse {
                id: r.id,
                score: s.expect("all answered"),
            })
            .collect())
    }
}

/// Free-function form of [`ExternalScorer::score_batch`].
pub fn external_score_batch(
    scorer: &ExternalScorer,
    requests: &[ScoreRequest],
) -> Result<Vec<ScoreResponse>, ScorerError> {
    scorer.score_batch(requests)
}

impl PointwiseScorer for ExternalScorer {
    fn score(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, ScorerError> {
        let requests: Vec<ScoreRequest> = docs
            .iter()
            .map(|d| ScoreRequest {
                id: self.fresh_id(),
                kind: RequestKind::Mono,
                query: query.to_string(),
                doc: d.to_string(),
                doc_b: None,
            })
            .collect();
        Ok(self.score_batch(&requests)?.into_iter().map(|r| r.score).collect())
    }
}

impl PairwiseScorer for ExternalScorer {
    fn score_pairs(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        let requests: Vec<ScoreRequest> = pairs
            .iter()
            .map(|(a, b)| ScoreRequest {
                id: self.fresh_id(),
                kind: RequestKind::Duo,
                query: query.to_string(),
                doc: a.to_string(),
                doc_b: Some(b.to_string()),
            })
            .collect();
        Ok(self.score_batch(&requests)?.into_iter().map(|r| r.score).collect())
    }
}

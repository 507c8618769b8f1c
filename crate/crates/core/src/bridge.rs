//! Host side of the JSON-lines protocol used to drive out-of-process
//! explainers.
//!
//! The host spawns the bridge executable with the explainer name as its
//! last argument, exchanges `hello` messages, then sends one
//! `explain_request`. While the bridge works it may send `predict_request`
//! messages, which the host answers from the model. The exchange ends with
//! an `attributions` or `error` message. Numbers travel as decimal strings
//! with 17 significant digits, which round-trips every `f64` exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::explainers::Attribution;
use crate::labelers::fmt_f64;
use crate::models::Predictor;

pub const PROTOCOL_VERSION: u32 = 1;
const STDERR_TAIL: usize = 4096;

/// A float carried as a decimal string.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decimal(pub f64);

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_f64(self.0))
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Decimal(v)),
            Raw::Text(s) => s
                .trim()
                .parse::<f64>()
                .map(Decimal)
                .map_err(|_| serde::de::Error::custom(format!("'{s}' is not a decimal number"))),
        }
    }
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<Vec<Decimal>> {
    (0..m.nrows()).map(|r| m.row(r).iter().map(|v| Decimal(*v)).collect()).collect()
}

pub fn encode_vector(v: &[f64]) -> Vec<Decimal> {
    v.iter().map(|x| Decimal(*x)).collect()
}

pub fn decode_matrix(rows: &[Vec<Decimal>], cols: usize) -> Result<DMatrix<f64>> {
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != cols) {
        return Err(Error::Bridge(format!("row {r} has {} entries, expected {cols}", row.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c].0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
    },
    ExplainRequest {
        id: u64,
        train: Vec<Vec<Decimal>>,
        train_labels: Vec<Decimal>,
        test: Vec<Vec<Decimal>>,
        #[serde(default)]
        config: serde_json::Value,
    },
    PredictRequest {
        id: u64,
        rows: Vec<Vec<Decimal>>,
    },
    PredictResponse {
        id: u64,
        predictions: Vec<Decimal>,
    },
    Attributions {
        id: u64,
        weights: Vec<Vec<Decimal>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        baseline: Option<Vec<Decimal>>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        traceback: Option<String>,
    },
}

impl Message {
    pub fn to_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Bridge(format!("malformed line ({e}): {}", truncate(line, 200))))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Converts an `attributions` payload into per-datapoint attributions.
pub fn to_attributions(
    explainer: &str,
    weights: &[Vec<Decimal>],
    baseline: Option<&[Decimal]>,
    rows: usize,
    dim: usize,
) -> Result<Vec<Attribution>> {
    if weights.len() != rows {
        return Err(Error::Bridge(format!("expected {rows} attribution rows, got {}", weights.len())));
    }
    if let Some(b) = baseline {
        if b.len() != rows {
            return Err(Error::Bridge(format!("expected {rows} baseline values, got {}", b.len())));
        }
    }
    let m = decode_matrix(weights, dim)?;
    (0..rows)
        .map(|r| {
            let a = Attribution::new(explainer, r, m.row(r).iter().copied().collect())
                .map_err(|e| Error::Bridge(format!("datapoint {r}: {e}")))?;
            Ok(match baseline {
                Some(b) => a.with_baseline(b[r].0),
                None => a,
            })
        })
        .collect()
}

/// How to launch a bridge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Deadline for the whole session, handshake included.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    600.0
}

impl BridgeCommand {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Self {
        BridgeCommand { program: program.into(), args, timeout_secs: timeout.as_secs_f64() }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

/// A running bridge subprocess after a successful handshake.
pub struct BridgeSession {
    explainer: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    deadline: Instant,
    timeout: Duration,
    next_id: u64,
}

impl BridgeSession {
    pub fn spawn(cmd: &BridgeCommand, explainer: &str) -> Result<Self> {
        let timeout = cmd.timeout();
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .arg(explainer)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start '{}': {e}", cmd.program)))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        if let Some(mut err) = child.stderr.take() {
            let sink = stderr.clone();
            std::thread::spawn(move || {
                let mut buf = [0u8; 1024];
                while let Ok(n) = err.read(&mut buf) {
                    if n == 0 {
                        break;
                    }
                    let mut s = sink.lock().unwrap_or_else(|p| p.into_inner());
                    s.push_str(&String::from_utf8_lossy(&buf[..n]));
                    if s.len() > STDERR_TAIL {
                        let cut = s.len() - STDERR_TAIL;
                        let cut = (cut..s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
                        s.drain(..cut);
                    }
                }
            });
        }
        let stdin = child.stdin.take();
        let mut session = BridgeSession {
            explainer: explainer.to_string(),
            child,
            stdin,
            lines,
            stderr,
            deadline: Instant::now() + timeout,
            timeout,
            next_id: 1,
        };
        session.handshake()?;
        Ok(session)
    }

    fn handshake(&mut self) -> Result<()> {
        self.send(&Message::Hello { version: PROTOCOL_VERSION })?;
        match self.recv()? {
            Message::Hello { version } if version == PROTOCOL_VERSION => Ok(()),
            Message::Hello { version } => Err(self.fail(format!(
                "protocol version mismatch: host speaks {PROTOCOL_VERSION}, bridge replied {version}"
            ))),
            Message::Error { message, traceback, .. } => Err(self.fail(join_error(&message, traceback.as_deref()))),
            other => Err(self.fail(format!("expected hello, got {}", kind(&other)))),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let line = msg.to_line()?;
        let stdin = self.stdin.as_mut().ok_or_else(|| Error::Bridge("bridge stdin is closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Bridge(format!("write to bridge failed: {e}{}", self.stderr_note())))
    }

    fn recv(&mut self) -> Result<Message> {
        let remaining = self.deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(remaining) {
            Ok(Ok(line)) => Message::from_line(&line),
            Ok(Err(e)) => Err(Error::Bridge(format!("read from bridge failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(Error::Timeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let _ = self.child.wait();
                Err(Error::Bridge(format!("bridge exited before replying{}", self.stderr_note())))
            }
        }
    }

    fn stderr_note(&self) -> String {
        let s = self.stderr.lock().unwrap_or_else(|p| p.into_inner());
        if s.trim().is_empty() {
            String::new()
        } else {
            format!("; stderr: {}", s.trim())
        }
    }

    fn fail(&mut self, msg: String) -> Error {
        self.kill();
        Error::Bridge(msg)
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Requests attributions for every test row, answering prediction
    /// callbacks from `model` until the reply arrives.
    pub fn explain(
        &mut self,
        model: &dyn Predictor,
        train: &DMatrix<f64>,
        train_labels: &[f64],
        test: &DMatrix<f64>,
        config: serde_json::Value,
    ) -> Result<Vec<Attribution>> {
        let dim = test.ncols();
        if model.dim() != dim || train.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: model.dim().min(train.ncols()) });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::ExplainRequest {
            id,
            train: encode_matrix(train),
            train_labels: encode_vector(train_labels),
            test: encode_matrix(test),
            config,
        })?;
        let name = format!("bridge:{}", self.explainer);
        loop {
            match self.recv()? {
                Message::PredictRequest { id: pid, rows } => {
                    let x = decode_matrix(&rows, dim).map_err(|e| self.fail(format!("predict_request {pid}: {e}")))?;
                    let preds = model.predict_batch(&x);
                    self.send(&Message::PredictResponse { id: pid, predictions: encode_vector(&preds) })?;
                }
                Message::Attributions { id: rid, weights, baseline } if rid == id => {
                    return to_attributions(&name, &weights, baseline.as_deref(), test.nrows(), dim);
                }
                Message::Error { message, traceback, .. } => {
                    return Err(self.fail(join_error(&message, traceback.as_deref())));
                }
                other => return Err(self.fail(format!("unexpected {} message", kind(&other)))),
            }
        }
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let grace = Instant::now() + Duration::from_millis(200);
        while Instant::now() < grace {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }
}

fn join_error(message: &str, traceback: Option<&str>) -> String {
    match traceback {
        Some(t) if !t.trim().is_empty() => format!("bridge error: {message}\n{}", t.trim_end()),
        _ => format!("bridge error: {message}"),
    }
}

fn kind(m: &Message) -> &'static str {
    match m {
        Message::Hello { .. } => "hello",
        Message::ExplainRequest { .. } => "explain_request",
        Message::PredictRequest { .. } => "predict_request",
        Message::PredictResponse { .. } => "predict_response",
        Message::Attributions { .. } => "attributions",
        Message::Error { .. } => "error",
    }
}

/// Spawns a bridge, explains `test`, and shuts the bridge down.
pub fn host_invoke_bridge(
    cmd: &BridgeCommand,
    explainer: &str,
    model: &dyn Predictor,
    train: &DMatrix<f64>,
    train_labels: &[f64],
    test: &DMatrix<f64>,
    config: serde_json::Value,
) -> Result<Vec<Attribution>> {
    BridgeSession::spawn(cmd, explainer)?.explain(model, train, train_labels, test, config)
}

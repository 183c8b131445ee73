//! Client side of the guest runner: a child process that executes
//! guest-language code models and speaks newline-delimited JSON on
//! stdin/stdout.
//!
//! Requests and responses carry `"v": 1`. Non-finite prediction values may
//! arrive as the strings `"NaN"`, `"Infinity"`, `"-Infinity"`, as `null`,
//! or as bare `NaN`/`Infinity` tokens; all of them decode to non-finite
//! floats so validation can classify them.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest response line accepted from the runner.
pub const MAX_RESPONSE_BYTES: usize = 1 << 20;
/// Extra wall-clock allowance on top of a request's own time limit before
/// the client gives up on the child and kills it.
pub const CLIENT_GRACE: Duration = Duration::from_secs(2);
/// Allowance for `load`, which carries no time limit of its own.
pub const LOAD_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { program: program.into(), args: args.into_iter().map(Into::into).collect() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("failed to start guest runner `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
}

#[derive(Debug, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op<'a> {
    Load { source: &'a str },
    Predict { rows: &'a [Map<String, Value>], time_limit_ms: u64 },
    Shutdown,
}

#[derive(Debug, Serialize)]
struct Envelope<'a, 'b> {
    v: u32,
    #[serde(flatten)]
    op: &'b Op<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerStatus {
    Ok,
    ParseFailure,
    RuntimeFailure,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    v: Option<u32>,
    status: RunnerStatus,
    #[serde(default)]
    values: Option<Vec<Value>>,
    #[serde(default)]
    detail: Option<String>,
}

/// A decoded runner reply.
#[derive(Debug, Clone, PartialEq)]
pub struct RunnerResponse {
    pub status: RunnerStatus,
    pub values: Vec<f64>,
    pub detail: String,
}

impl RunnerResponse {
    fn runtime(detail: impl Into<String>) -> Self {
        Self { status: RunnerStatus::RuntimeFailure, values: Vec::new(), detail: detail.into() }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunnerStatus::Ok
    }
}

/// Decodes one response line. Malformed lines and non-numeric values come
/// back as runtime failures.
pub fn decode_response(line: &str) -> RunnerResponse {
    let cleaned = quote_bare_non_finite(line);
    let wire: WireResponse = match serde_json::from_str(&cleaned) {
        Ok(w) => w,
        Err(e) => return RunnerResponse::runtime(format!("malformed runner response: {e}")),
    };
    if let Some(v) = wire.v.filter(|&v| v != PROTOCOL_VERSION) {
        return RunnerResponse::runtime(format!("unsupported protocol version {v}"));
    }
    let mut values = Vec::new();
    for (i, value) in wire.values.unwrap_or_default().iter().enumerate() {
        match decode_number(value) {
            Some(x) => values.push(x),
            None => return RunnerResponse::runtime(format!("non-numeric output at row {i}: {value}")),
        }
    }
    RunnerResponse { status: wire.status, values, detail: wire.detail.unwrap_or_default() }
}

fn decode_number(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::Null => Some(f64::NAN),
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "nan" => Some(f64::NAN),
            "inf" | "infinity" | "+inf" | "+infinity" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        // a one-element list, e.g. numpy scalar arrays serialised per row
        Value::Array(items) if items.len() == 1 => decode_number(&items[0]),
        _ => None,
    }
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` tokens (as emitted by
/// Python's `json.dumps`) into strings, leaving string contents alone.
fn quote_bare_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"].into_iter().find(|t| rest.starts_with(t));
        match token {
            Some(t) => {
                out.push('"');
                out.push_str(t);
                out.push('"');
                rest = &rest[t.len()..];
            }
            None => {
                out.push(c);
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    out
}

enum Line {
    Text(String),
    TooLong,
}

/// One live runner process. Requests are strictly sequential.
pub struct GuestRunner {
    command: RunnerCommand,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<Line>,
    alive: bool,
}

impl GuestRunner {
    pub fn spawn(command: &RunnerCommand) -> Result<Self, RunnerError> {
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| RunnerError::Spawn { program: command.program.clone(), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = Vec::new();
                let limit = (MAX_RESPONSE_BYTES + 1) as u64;
                match (&mut reader).take(limit).read_until(b'\n', &mut buf) {
                    Ok(0) | Err(_) => return,
                    Ok(_) if buf.len() > MAX_RESPONSE_BYTES && buf.last() != Some(&b'\n') => {
                        // discard the remainder of the oversized line
                        let mut sink = Vec::new();
                        if reader.read_until(b'\n', &mut sink).is_err() || tx.send(Line::TooLong).is_err() {
                            return;
                        }
                    }
                    Ok(_) => {
                        let text = String::from_utf8_lossy(&buf).trim_end().to_string();
                        if tx.send(Line::Text(text)).is_err() {
                            return;
                        }
                    }
                }
            }
        });
        Ok(Self { command: command.clone(), child, stdin, lines: rx, alive: true })
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Sends `source` to the runner, replacing a dead process first.
    pub fn load(&mut self, source: &str) -> RunnerResponse {
        if !self.alive {
            match GuestRunner::spawn(&self.command) {
                Ok(fresh) => *self = fresh,
                Err(e) => return RunnerResponse::runtime(e.to_string()),
            }
        }
        self.round_trip(&Op::Load { source }, LOAD_TIMEOUT)
    }

    /// Runs the loaded model on rows given as feature-name → value maps.
    pub fn predict(&mut self, feature_names: &[String], rows: &[&[f64]], time_limit_ms: u64) -> RunnerResponse {
        let maps: Vec<Map<String, Value>> = rows
            .iter()
            .map(|row| {
                feature_names
                    .iter()
                    .zip(row.iter())
                    .map(|(name, &v)| (name.clone(), Value::from(v)))
                    .collect()
            })
            .collect();
        let wait = Duration::from_millis(time_limit_ms) + CLIENT_GRACE;
        self.round_trip(&Op::Predict { rows: &maps, time_limit_ms }, wait)
    }

    pub fn shutdown(mut self) {
        if self.alive {
            let _ = self.send(&Op::Shutdown);
            let _ = self.lines.recv_timeout(Duration::from_millis(500));
        }
        self.kill();
    }

    fn send(&mut self, op: &Op<'_>) -> std::io::Result<()> {
        let mut line = serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, op })
            .map_err(std::io::Error::other)?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()
    }

    fn round_trip(&mut self, op: &Op<'_>, wait: Duration) -> RunnerResponse {
        if !self.alive {
            return RunnerResponse::runtime("guest runner is not running");
        }
        if let Err(e) = self.send(op) {
            self.kill();
            return RunnerResponse::runtime(format!("guest runner exited: {e}"));
        }
        match self.lines.recv_timeout(wait) {
            Ok(Line::Text(text)) => decode_response(&text),
            Ok(Line::TooLong) => RunnerResponse::runtime("runner response exceeds the output cap"),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                RunnerResponse::runtime(format!("guest runner did not answer within {} ms", wait.as_millis()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                RunnerResponse::runtime("guest runner exited (end of stream)")
            }
        }
    }

    fn kill(&mut self) {
        self.alive = false;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for GuestRunner {
    fn drop(&mut self) {
        if self.alive {
            self.kill();
        }
    }
}

/// Up to `capacity` runner processes shared between concurrent callers.
pub struct RunnerPool {
    command: RunnerCommand,
    idle: Mutex<Vec<GuestRunner>>,
}

impl RunnerPool {
    pub fn new(command: RunnerCommand) -> Self {
        Self { command, idle: Mutex::new(Vec::new()) }
    }

    pub fn command(&self) -> &RunnerCommand {
        &self.command
    }

    /// Borrows an idle runner or starts a new one. The runner returns to
    /// the pool when the guard drops, unless it died.
    pub fn checkout(&self) -> Result<PooledRunner<'_>, RunnerError> {
        let idle = self.idle.lock().expect("pool lock").pop();
        let runner = match idle {
            Some(r) => r,
            None => GuestRunner::spawn(&self.command)?,
        };
        Ok(PooledRunner { pool: self, runner: Some(runner) })
    }
}

pub struct PooledRunner<'a> {
    pool: &'a RunnerPool,
    runner: Option<GuestRunner>,
}

impl std::ops::Deref for PooledRunner<'_> {
    type Target = GuestRunner;
    fn deref(&self) -> &GuestRunner {
        self.runner.as_ref().expect("present until drop")
    }
}

impl std::ops::DerefMut for PooledRunner<'_> {
    fn deref_mut(&mut self) -> &mut GuestRunner {
        self.runner.as_mut().expect("present until drop")
    }
}

impl Drop for PooledRunner<'_> {
    fn drop(&mut self) {
        if let Some(runner) = self.runner.take() {
            if runner.is_alive() {
                self.pool.idle.lock().expect("pool lock").push(runner);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_format() {
        let rows = vec![[("a".to_string(), Value::from(0.5))].into_iter().collect::<Map<_, _>>()];
        let load = serde_json::to_string(&Envelope { v: 1, op: &Op::Load { source: "x" } }).unwrap();
        assert_eq!(load, r#"{"v":1,"op":"load","source":"x"}"#);
        let predict =
            serde_json::to_string(&Envelope { v: 1, op: &Op::Predict { rows: &rows, time_limit_ms: 5000 } }).unwrap();
        assert_eq!(predict, r#"{"v":1,"op":"predict","rows":[{"a":0.5}],"time_limit_ms":5000}"#);
        let stop = serde_json::to_string(&Envelope { v: 1, op: &Op::Shutdown }).unwrap();
        assert_eq!(stop, r#"{"v":1,"op":"shutdown"}"#);
    }

    #[test]
    fn decodes_responses() {
        let ok = decode_response(r#"{"v":1,"status":"ok","values":[0.5, 1]}"#);
        assert_eq!(ok, RunnerResponse { status: RunnerStatus::Ok, values: vec![0.5, 1.0], detail: String::new() });
        let failed = decode_response(r#"{"v":1,"status":"runtime_failure","detail":"ZeroDivisionError"}"#);
        assert_eq!(failed.status, RunnerStatus::RuntimeFailure);
        assert_eq!(failed.detail, "ZeroDivisionError");
        let parse = decode_response(r#"{"v":1,"status":"parse_failure","detail":"forbidden import: sklearn"}"#);
        assert_eq!(parse.status, RunnerStatus::ParseFailure);
    }

    #[test]
    fn non_finite_encodings() {
        let r = decode_response(r#"{"v":1,"status":"ok","values":[NaN, Infinity, -Infinity, "NaN", null, [0.25]]}"#);
        assert!(r.is_ok());
        assert!(r.values[0].is_nan());
        assert_eq!(r.values[1], f64::INFINITY);
        assert_eq!(r.values[2], f64::NEG_INFINITY);
        assert!(r.values[3].is_nan() && r.values[4].is_nan());
        assert_eq!(r.values[5], 0.25);
        // tokens inside strings are untouched
        let r = decode_response(r#"{"v":1,"status":"runtime_failure","detail":"got NaN \"Infinity\""}"#);
        assert_eq!(r.detail, "got NaN \"Infinity\"");
    }

    #[test]
    fn malformed_and_non_numeric() {
        assert_eq!(decode_response("not json").status, RunnerStatus::RuntimeFailure);
        assert_eq!(decode_response(r#"{"v":2,"status":"ok"}"#).status, RunnerStatus::RuntimeFailure);
        let r = decode_response(r#"{"v":1,"status":"ok","values":[[0.1, 0.2]]}"#);
        assert_eq!(r.status, RunnerStatus::RuntimeFailure);
        assert!(r.detail.contains("non-numeric"));
    }

    #[test]
    fn spawn_failure_is_reported() {
        let err = GuestRunner::spawn(&RunnerCommand::new("/nonexistent/runner", Vec::<String>::new()));
        assert!(matches!(err, Err(RunnerError::Spawn { .. })));
    }
}

//! Newline-delimited JSON transport for out-of-process providers.
//!
//! Requests: `{"id": 7, "kind": "embed", "payload": {"units": [...], "role": "reference"}}`.
//! Responses carry the same `id`; many requests may be in flight at once and
//! responses may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    BackendError, Provider, ProviderDescriptor, Request, Response, Span,
    TokenEmbeddings, TokenLogProbs,
};

#[derive(Debug, Serialize, Deserialize)]
struct RequestEnvelope {
    id: u64,
    #[serde(flatten)]
    request: Request,
}

/// Serializes a provider answer to its wire object.
pub fn encode_response(id: u64, result: &Result<Response, BackendError>) -> Value {
    match result {
        Ok(Response::Describe(d)) => json!({
            "id": id,
            "provider_id": d.provider_id,
            "max_tokens": d.max_tokens,
            "embedding_dim": d.embedding_dim,
            "supports": d.supports,
        }),
        Ok(Response::Count(n)) => json!({"id": id, "count": n}),
        Ok(Response::Embed(e)) => {
            let tokens: Vec<Vec<f64>> = e.vectors().rows().into_iter().map(|r| r.to_vec()).collect();
            let spans: Vec<[usize; 2]> = e.unit_spans().iter().map(|s| [s.start, s.end]).collect();
            let mut value = json!({
                "id": id,
                "dim": e.dim(),
                "tokens": tokens,
                "unit_spans": spans,
            });
            if let Some(pieces) = e.pieces() {
                value["pieces"] = json!(pieces);
            }
            value
        }
        Ok(Response::SeqScore(lp)) => json!({"id": id, "logprobs": lp.logprobs()}),
        Err(e) => json!({
            "id": id,
            "error": {"code": e.code(), "message": e.to_string()},
        }),
    }
}

#[derive(Deserialize)]
struct EmbedBody {
    dim: usize,
    tokens: Vec<Vec<f64>>,
    unit_spans: Vec<[usize; 2]>,
    #[serde(default)]
    pieces: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

/// Parses a wire response object, given the kind of request it answers.
pub fn decode_response(kind: &str, value: Value) -> Result<Response, BackendError> {
    let protocol = |e: serde_json::Error| BackendError::Protocol(format!("malformed {kind} response: {e}"));
    if let Some(error) = value.get("error") {
        let body: ErrorBody = serde_json::from_value(error.clone()).map_err(protocol)?;
        return Err(BackendError::Remote {
            code: body.code,
            message: body.message,
        });
    }
    match kind {
        "describe" => {
            let d: ProviderDescriptor = serde_json::from_value(value).map_err(protocol)?;
            Ok(Response::Describe(d))
        }
        "count" => {
            let n = value
                .get("count")
                .and_then(Value::as_u64)
                .ok_or_else(|| BackendError::Protocol("count response lacks `count`".to_string()))?;
            Ok(Response::Count(n as usize))
        }
        "embed" => {
            let body: EmbedBody = serde_json::from_value(value).map_err(protocol)?;
            let rows = body.tokens.len();
            if let Some(row) = body.tokens.iter().position(|r| r.len() != body.dim) {
                return Err(BackendError::InvalidResponse(format!(
                    "token {row} has {} values, expected dim {}",
                    body.tokens[row].len(),
                    body.dim
                )));
            }
            let flat: Vec<f64> = body.tokens.into_iter().flatten().collect();
            let vectors = Array2::from_shape_vec((rows, body.dim), flat)
                .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
            let spans = body.unit_spans.iter().map(|[s, e]| Span::new(*s, *e)).collect();
            Ok(Response::Embed(TokenEmbeddings::new(vectors, spans, body.pieces)?))
        }
        "seqscore" => {
            #[derive(Deserialize)]
            struct Body {
                logprobs: Vec<f64>,
            }
            let body: Body = serde_json::from_value(value).map_err(protocol)?;
            Ok(Response::SeqScore(TokenLogProbs::new(body.logprobs)?))
        }
        other => Err(BackendError::Protocol(format!("unknown request kind `{other}`"))),
    }
}

/// Answers wire requests from `reader` with `provider` until end of input.
pub fn serve<P, R, W>(provider: &P, reader: R, mut writer: W) -> std::io::Result<()>
where
    P: Provider + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<RequestEnvelope>(&line) {
            Ok(envelope) => encode_response(envelope.id, &provider.handle(&envelope.request)),
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                json!({"id": id, "error": {"code": "invalid_request", "message": e.to_string()}})
            }
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

type Pending = HashMap<u64, mpsc::Sender<Result<Value, BackendError>>>;

#[derive(Default)]
struct Router {
    pending: Pending,
    closed: Option<String>,
}

/// Client side of the wire protocol.
pub struct WireProvider {
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    router: Arc<Mutex<Router>>,
    next_id: AtomicU64,
    child: Mutex<Option<Child>>,
    reader_thread: Option<thread::JoinHandle<()>>,
}

impl WireProvider {
    pub fn from_streams<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let router = Arc::new(Mutex::new(Router::default()));
        let routes = Arc::clone(&router);
        let reader_thread = thread::spawn(move || read_loop(BufReader::new(reader), &routes));
        Self {
            writer: Mutex::new(Some(Box::new(writer))),
            router,
            next_id: AtomicU64::new(1),
            child: Mutex::new(None),
            reader_thread: Some(reader_thread),
        }
    }

    /// Launches `command` (program and whitespace-separated arguments) on standard pipes.
    pub fn spawn(command: &str) -> Result<Self, BackendError> {
        let mut words = command.split_whitespace();
        let program = words
            .next()
            .ok_or_else(|| BackendError::Transport("empty provider command".to_string()))?;
        let mut child = Command::new(program)
            .args(words)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Transport(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let provider = Self::from_streams(stdout, stdin);
        *provider.child.lock().expect("child lock") = Some(child);
        Ok(provider)
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, BackendError> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| BackendError::Transport(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self::from_streams(reader, stream))
    }

    #[cfg(unix)]
    pub fn connect_unix(path: &str) -> Result<Self, BackendError> {
        let stream = std::os::unix::net::UnixStream::connect(path)
            .map_err(|e| BackendError::Transport(format!("cannot connect to {path}: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self::from_streams(reader, stream))
    }

    #[cfg(not(unix))]
    pub fn connect_unix(path: &str) -> Result<Self, BackendError> {
        Err(BackendError::Transport(format!(
            "unix sockets are unavailable on this platform ({path})"
        )))
    }

    fn roundtrip(&self, request: &Request) -> Result<Value, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        {
            let mut router = self.router.lock().expect("router lock");
            if let Some(reason) = &router.closed {
                return Err(BackendError::Transport(reason.clone()));
            }
            router.pending.insert(id, tx);
        }
        let mut line = serde_json::to_vec(&RequestEnvelope {
            id,
            request: request.clone(),
        })
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push(b'\n');
        let written = {
            let mut writer = self.writer.lock().expect("writer lock");
            match writer.as_mut() {
                Some(w) => w.write_all(&line).and_then(|_| w.flush()),
                None => Err(std::io::Error::other("provider connection closed")),
            }
        };
        if let Err(e) = written {
            self.router.lock().expect("router lock").pending.remove(&id);
            return Err(BackendError::Transport(format!("write failed: {e}")));
        }
        rx.recv()
            .map_err(|_| BackendError::Transport("provider connection dropped".to_string()))?
    }
}

fn read_loop<R: BufRead>(reader: R, router: &Mutex<Router>) {
    let mut reason = "provider closed the connection".to_string();
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                reason = format!("read failed: {e}");
                break;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<Value, _> = serde_json::from_str(&line);
        let Ok(value) = parsed else {
            reason = format!("unparseable response line: {line}");
            break;
        };
        let Some(id) = value.get("id").and_then(Value::as_u64) else {
            reason = format!("response without a numeric id: {line}");
            break;
        };
        let sender = router.lock().expect("router lock").pending.remove(&id);
        if let Some(sender) = sender {
            let _ = sender.send(Ok(value));
        }
    }
    let mut router = router.lock().expect("router lock");
    for (_, sender) in router.pending.drain() {
        let _ = sender.send(Err(BackendError::Transport(reason.clone())));
    }
    router.closed = Some(reason);
}

impl Provider for WireProvider {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        let value = self.roundtrip(request)?;
        decode_response(request.kind(), value)
    }
}

impl Drop for WireProvider {
    fn drop(&mut self) {
        // Closing our end tells the provider to exit.
        self.writer.lock().map(|mut w| w.take()).ok();
        if let Some(mut child) = self.child.lock().ok().and_then(|mut c| c.take()) {
            let _ = child.wait();
        }
        // A socket's read half may outlive the write half; the reader thread is left detached.
        drop(self.reader_thread.take());
    }
}

impl std::fmt::Debug for WireProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireProvider").finish_non_exhaustive()
    }
}

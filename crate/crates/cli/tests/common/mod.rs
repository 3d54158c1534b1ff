//! Minimal blocking HTTP completions server for CLI tests. Wraps the
//! scripted transport so online subcommands can be exercised end to end
//! over a real socket.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use scout_core::driver::{
    BranchScript, GenerationRequest, RequestKind, ScriptedTransport, Transport,
};

pub struct StubServer {
    addr: SocketAddr,
    transport: Arc<ScriptedTransport>,
    bearer_tokens: Arc<Mutex<Vec<String>>>,
}

impl StubServer {
    /// Starts the server on an ephemeral local port. The accept loop
    /// runs on a detached thread for the life of the test process.
    pub fn start(scripts: HashMap<u64, BranchScript>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().expect("stub server addr");
        let transport = Arc::new(ScriptedTransport::new(scripts));
        let bearer_tokens = Arc::new(Mutex::new(Vec::new()));
        let first_prompts: Arc<Mutex<HashMap<u64, String>>> = Arc::new(Mutex::new(HashMap::new()));
        let delivered: Arc<Mutex<HashMap<u64, u64>>> = Arc::new(Mutex::new(HashMap::new()));
        {
            let transport = Arc::clone(&transport);
            let bearer_tokens = Arc::clone(&bearer_tokens);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { break };
                    let transport = Arc::clone(&transport);
                    let bearer_tokens = Arc::clone(&bearer_tokens);
                    let first_prompts = Arc::clone(&first_prompts);
                    let delivered = Arc::clone(&delivered);
                    std::thread::spawn(move || {
                        serve_connection(stream, &transport, &bearer_tokens, &first_prompts, &delivered);
                    });
                }
            });
        }
        StubServer {
            addr,
            transport,
            bearer_tokens,
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn transport(&self) -> &ScriptedTransport {
        &self.transport
    }

    /// Distinct bearer tokens presented by clients so far.
    pub fn bearer_tokens(&self) -> Vec<String> {
        let mut tokens = self.bearer_tokens.lock().expect("bearer lock").clone();
        tokens.sort();
        tokens.dedup();
        tokens
    }
}

/// Keep-alive request loop for one client connection.
fn serve_connection(
    stream: TcpStream,
    transport: &ScriptedTransport,
    bearer_tokens: &Mutex<Vec<String>>,
    first_prompts: &Mutex<HashMap<u64, String>>,
    delivered: &Mutex<HashMap<u64, u64>>,
) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    loop {
        let Some((headers, body)) = read_request(&mut reader) else {
            return;
        };
        if let Some(token) = headers
            .iter()
            .find_map(|h| h.to_ascii_lowercase().strip_prefix("authorization: bearer ").map(str::to_string))
        {
            bearer_tokens.lock().expect("bearer lock").push(token.trim().to_string());
        }
        let response = match parse_generation_request(&body) {
            Some(request) => {
                reset_on_fresh_run(&request, transport, first_prompts, delivered);
                match transport.complete(&request) {
                    Ok(reply) => {
                        if request.kind == RequestKind::Continuation {
                            let granted = reply.tokens.unwrap_or(0);
                            *delivered
                                .lock()
                                .expect("delivered lock")
                                .entry(request.seed)
                                .or_insert(0) += granted;
                        }
                        let finish_reason = if reply.finished { "stop" } else { "length" };
                        let payload = serde_json::json!({
                            "choices": [{"text": reply.text, "finish_reason": finish_reason}],
                            "usage": {"completion_tokens": reply.tokens},
                        });
                        http_response(200, &payload.to_string())
                    }
                    Err(e) => http_response(500, &format!("scripted transport error: {e}")),
                }
            }
            None => http_response(400, "unparseable completion request"),
        };
        if writer.write_all(response.as_bytes()).is_err() || writer.flush().is_err() {
            return;
        }
    }
}

/// A continuation that repeats a branch's very first prompt after tokens
/// were already delivered marks a fresh run of the same command; the
/// script state is rewound so the replay sees identical service behavior.
fn reset_on_fresh_run(
    request: &GenerationRequest,
    transport: &ScriptedTransport,
    first_prompts: &Mutex<HashMap<u64, String>>,
    delivered: &Mutex<HashMap<u64, u64>>,
) {
    if request.kind != RequestKind::Continuation {
        return;
    }
    let mut first = first_prompts.lock().expect("first prompt lock");
    match first.get(&request.seed) {
        None => {
            first.insert(request.seed, request.prompt.clone());
        }
        Some(initial) if *initial == request.prompt => {
            let mut delivered = delivered.lock().expect("delivered lock");
            if delivered.get(&request.seed).copied().unwrap_or(0) > 0 {
                transport.reset_seed(request.seed);
                delivered.insert(request.seed, 0);
            }
        }
        Some(_) => {}
    }
}

/// Reads one HTTP request; returns None on EOF or malformed framing.
fn read_request(reader: &mut BufReader<TcpStream>) -> Option<(Vec<String>, Vec<u8>)> {
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().ok()?;
        }
        headers.push(line);
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some((headers, body))
}

/// Maps a completions request body back onto the transport request type.
/// A `stop` field marks a forced-answer probe; plain continuations never
/// carry one.
fn parse_generation_request(body: &[u8]) -> Option<GenerationRequest> {
    let value: serde_json::Value = serde_json::from_slice(body).ok()?;
    let kind = if value.get("stop").is_some() {
        RequestKind::Probe
    } else {
        RequestKind::Continuation
    };
    let stop = value
        .get("stop")
        .and_then(|s| s.as_array())
        .map(|items| {
            items
                .iter()
                .filter_map(|i| i.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    Some(GenerationRequest {
        kind,
        prompt: value.get("prompt")?.as_str()?.to_string(),
        max_new_tokens: value.get("max_tokens")?.as_u64()?,
        stop,
        temperature: value.get("temperature")?.as_f64()?,
        top_p: value.get("top_p")?.as_f64()?,
        seed: value.get("seed")?.as_u64()?,
    })
}

fn http_response(status: u16, body: &str) -> String {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        _ => "Internal Server Error",
    };
    format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: keep-alive\r\n\r\n{body}",
        body.len()
    )
}

/// Runs the scout binary with the given arguments and environment
/// overrides, returning (exit code, stdout, stderr).
pub fn run_scout(args: &[&str], env: &[(&str, Option<&str>)]) -> (i32, String, String) {
    let mut command = std::process::Command::new(env!("CARGO_BIN_EXE_scout"));
    command.args(args);
    for (key, value) in env {
        match value {
            Some(v) => {
                command.env(key, v);
            }
            None => {
                command.env_remove(key);
            }
        }
    }
    let output = command.output().expect("run scout binary");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

/// Extracts the run directory path printed by a successful command.
pub fn run_dir_from(stdout: &str) -> std::path::PathBuf {
    let line = stdout
        .lines()
        .find(|l| l.starts_with("run dir: "))
        .expect("stdout names the run directory");
    std::path::PathBuf::from(line.trim_start_matches("run dir: "))
}

/// Path to the bundled three-problem fixture pool.
pub fn fixture_pool() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/mini_pool.jsonl")
        .canonicalize()
        .expect("fixture pool exists")
}

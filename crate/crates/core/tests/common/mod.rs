//! Minimal HTTP/1.1 server standing in for a chat-completions endpoint.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct Request {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub json: Value,
    pub at: Instant,
}

impl Request {
    pub fn n(&self) -> usize {
        self.json["n"].as_u64().unwrap_or(1) as usize
    }

    pub fn temperature(&self) -> f64 {
        self.json["temperature"].as_f64().unwrap_or(f64::NAN)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    pub fn choices<S: AsRef<str>>(texts: &[S]) -> Self {
        let choices: Vec<Value> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| json!({"index": i, "message": {"role": "assistant", "content": t.as_ref()}}))
            .collect();
        Response {
            status: 200,
            body: json!({ "choices": choices }).to_string(),
        }
    }

    /// `n` copies of `text`, as many as the request asked for.
    pub fn echo(req: &Request, text: &str) -> Self {
        Self::choices(&vec![text; req.n()])
    }

    pub fn status(code: u16) -> Self {
        Response {
            status: code,
            body: json!({"error": {"message": "mock failure"}}).to_string(),
        }
    }
}

type Handler = dyn Fn(usize, &Request) -> Response + Send + Sync;

struct Shared {
    requests: Mutex<Vec<Request>>,
    inflight: AtomicUsize,
    max_inflight: AtomicUsize,
    delay: Duration,
    stop: AtomicBool,
    handler: Box<Handler>,
}

pub struct MockServer {
    pub url: String,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
    addr: std::net::SocketAddr,
}

impl MockServer {
    /// `handler` receives the 0-based request index and the parsed request.
    pub fn start(handler: impl Fn(usize, &Request) -> Response + Send + Sync + 'static) -> Self {
        Self::with_delay(Duration::ZERO, handler)
    }

    pub fn with_delay(
        delay: Duration,
        handler: impl Fn(usize, &Request) -> Response + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let shared = Arc::new(Shared {
            requests: Mutex::new(Vec::new()),
            inflight: AtomicUsize::new(0),
            max_inflight: AtomicUsize::new(0),
            delay,
            stop: AtomicBool::new(false),
            handler: Box::new(handler),
        });
        let s = Arc::clone(&shared);
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let s = Arc::clone(&s);
                thread::spawn(move || serve(stream, &s));
            }
        });
        MockServer {
            url: format!("http://{addr}"),
            shared,
            accept: Some(accept),
            addr,
        }
    }

    pub fn requests(&self) -> Vec<Request> {
        self.shared.requests.lock().unwrap().clone()
    }

    pub fn max_inflight(&self) -> usize {
        self.shared.max_inflight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, s: &Shared) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 {
            return;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let req = Request {
        path,
        headers,
        json: serde_json::from_slice(&body).unwrap_or(Value::Null),
        body,
        at: Instant::now(),
    };

    let now = s.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    s.max_inflight.fetch_max(now, Ordering::SeqCst);
    let index = {
        let mut reqs = s.requests.lock().unwrap();
        reqs.push(req.clone());
        reqs.len() - 1
    };
    if !s.delay.is_zero() {
        thread::sleep(s.delay);
    }
    let resp = (s.handler)(index, &req);
    s.inflight.fetch_sub(1, Ordering::SeqCst);

    let reason = if resp.status == 200 { "OK" } else { "Mock" };
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        resp.status,
        reason,
        resp.body.len(),
        resp.body
    );
    let _ = out.flush();
}

/// An address nothing listens on.
pub fn dead_endpoint() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Writes a few bytes that start like a PNG.
pub fn fake_png(dir: &std::path::Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, b"\x89PNG\r\n\x1a\nfake").unwrap();
    p
}
